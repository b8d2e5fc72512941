#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emae/checkpoint.hpp"
#include "emae/dataset.hpp"
#include "emae/errors.hpp"
#include "emae/eval.hpp"
#include "emae/gradcheck.hpp"
#include "emae/mask.hpp"
#include "emae/trainer.hpp"

namespace {

using namespace emae;

// Loads the architecture from the file, then restores weights and optimizer
// state into fresh objects.
struct LoadedModel {
    ModelConfig config;
    Model model;
    AdamW optim;

    explicit LoadedModel(const std::string& path)
        : config(peek_checkpoint_config(path)), model(config), optim(model, {}) {
        load_checkpoint(path, model, optim);
    }
};

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (!value.empty()) set_config_key(cfg, key, value);
}

int cmd_gen_data(const std::string& out, int n, int size, int classes, uint64_t seed,
                 const std::string& kind) {
    SynthSpec spec;
    spec.n_images = n;
    spec.h = size;
    spec.w = size;
    spec.c = 3;
    spec.n_classes = classes;
    spec.seed = seed;
    spec.kind = kind;
    generate_dataset(spec, out);
    std::printf("wrote %d %dx%dx3 images (%d classes, kind %s) to %s\n", n, size, size, classes,
                kind.c_str(), out.c_str());
    return 0;
}

int cmd_pretrain(const TrainConfig& cfg) {
    TrainResult res = train(cfg);
    std::printf("run dir:    %s\n", res.run_dir.c_str());
    std::printf("checkpoint: %s\n", res.checkpoint_path.c_str());
    std::printf("metrics:    %s\n", res.metrics_path.c_str());
    std::printf("steps: %lld  final l_total %.6f (whole %.6f, consistency %.6f)\n",
                static_cast<long long>(res.steps), res.final_l_total, res.final_l_whole,
                res.final_l_consistency);
    std::printf("encoder inputs per image per epoch: %.2f\n", res.visible_tokens_per_image);
    return 0;
}

int cmd_probe(const std::string& ckpt, const std::string& train_path,
              const std::string& test_path, int epochs, double lr, uint64_t seed) {
    LoadedModel lm(ckpt);
    Dataset train_ds = load_dataset(train_path);
    Dataset test_ds = load_dataset(test_path);
    ProbeResult res = linear_probe(lm.model, train_ds, test_ds, epochs, lr, seed);
    std::printf("{\"train_accuracy\": %.6f, \"test_accuracy\": %.6f}\n", res.train_accuracy,
                res.test_accuracy);
    return 0;
}

int cmd_eval_consistency(const std::string& ckpt, const std::string& ds_path, int k,
                         int n_images, uint64_t seed, const std::string& out) {
    LoadedModel lm(ckpt);
    Dataset ds = load_dataset(ds_path);
    ConsistencyReport rep = measure_consistency(lm.model, ds, k, n_images, seed);
    const std::string json = rep.to_json();
    std::printf("%s\n", json.c_str());
    if (!out.empty()) {
        std::ofstream os(out, std::ios::trunc);
        os << json << "\n";
        if (!os) throw IoError("cannot write report " + out);
    }
    return 0;
}

int cmd_reconstruct(const std::string& ckpt, const std::string& ds_path, size_t index, int k,
                    uint64_t seed, const std::string& out_dir, bool normalize) {
    LoadedModel lm(ckpt);
    Dataset ds = load_dataset(ds_path);
    auto written = reconstruct(lm.model, ds, index, k, seed, out_dir, normalize);
    for (const std::string& p : written) std::printf("%s\n", p.c_str());
    return 0;
}

int cmd_mask_demo(int n_patches, int k, uint64_t seed, const std::string& strategy_name,
                  int times, double ratio) {
    MaskStrategy strategy = strategy_name == "parallel"
                                ? MaskStrategy::parallel(k)
                                : MaskStrategy::parse(strategy_name, times, ratio);
    if (strategy.kind == MaskStrategy::Kind::Parallel) {
        MaskPartition part = generate_partition(n_patches, k, seed);
        // part index of each patch, as a grid when N is square
        std::vector<int> owner(n_patches, -1);
        for (int i = 0; i < k; ++i) {
            for (int p : part.parts[i]) owner[p] = i;
        }
        int side = 1;
        while (side * side < n_patches) ++side;
        const int cols = side * side == n_patches ? side : n_patches;
        std::printf("part assignment (%d patches, K=%d, seed %llu):\n", n_patches, k,
                    static_cast<unsigned long long>(seed));
        for (int p = 0; p < n_patches; ++p) {
            std::printf("%2d%s", owner[p], (p + 1) % cols == 0 ? "\n" : " ");
        }
        std::printf("mask ratio per part: %.6f\n", mask_ratio(part));
        for (int i = 0; i < k; ++i) {
            for (int j = i + 1; j < k; ++j) {
                OverlapSet ov = overlap(part, i, j);
                std::printf("overlap(%d,%d): %d positions\n", i, j, ov.count());
            }
        }
        return 0;
    }
    auto draws = generate_ablation_masks(strategy, n_patches, seed);
    std::vector<std::vector<int>> visible;
    for (const MaskDraw& d : draws) visible.push_back(d.visible);
    CoverageStats stats = coverage_stats(visible, n_patches);
    std::printf("strategy %s: %zu draws over %d patches\n", strategy.name().c_str(),
                draws.size(), n_patches);
    for (size_t d = 0; d < draws.size(); ++d) {
        std::printf("draw %zu: %zu visible, %zu masked\n", d, draws[d].visible.size(),
                    static_cast<size_t>(n_patches) - draws[d].visible.size());
    }
    std::printf("coverage: %.6f of patches seen at least once\n", stats.coverage);
    return 0;
}

int cmd_grad_check(const std::string& scope, double tol, uint64_t seed) {
    if (tol <= 0) throw ConfigError("--tol must be positive");
    bool ok = true;
    if (scope == "op") {
        for (const CheckOutcome& oc : check_ops(10, tol, seed)) {
            std::printf("%-14s max rel err %.3e  %s\n", oc.name.c_str(), oc.max_rel_error,
                        oc.pass ? "pass" : "FAIL");
            ok = ok && oc.pass;
        }
    } else if (scope == "model") {
        CheckOutcome oc = check_model(ModelConfig{}, 3, tol, seed);
        std::printf("%-14s max rel err %.3e  %s\n", oc.name.c_str(), oc.max_rel_error,
                    oc.pass ? "pass" : "FAIL");
        ok = oc.pass;
    } else if (scope == "loss") {
        CheckOutcome oc = check_total_loss(ModelConfig{}, 4, 3, tol, seed);
        std::printf("%-14s max rel err %.3e  %s\n", oc.name.c_str(), oc.max_rel_error,
                    oc.pass ? "pass" : "FAIL");
        ok = oc.pass;
    } else {
        throw ConfigError("unknown scope '" + scope + "' (expected op, model, loss)");
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-autoencoder pretraining workbench"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
    std::string gen_out, gen_kind = "shapes";
    int gen_n = 128, gen_size = 32, gen_classes = 4;
    uint64_t gen_seed = 1;
    gen->add_option("--out", gen_out, "output file")->required();
    gen->add_option("--n", gen_n, "image count");
    gen->add_option("--size", gen_size, "square image side");
    gen->add_option("--classes", gen_classes, "class count");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--kind", gen_kind, "shapes | gradients | textures");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "run masked-autoencoder pretraining");
    std::string pre_config;
    std::vector<std::string> pre_sets;
    std::string pre_dataset, pre_mode, pre_strategy, pre_out_dir, pre_deterministic;
    std::string pre_k, pre_times, pre_ratio, pre_epochs, pre_batch, pre_lr, pre_seed;
    pre->add_option("--config", pre_config, "key = value config file");
    pre->add_option("--set", pre_sets, "extra key=value overrides")->take_all();
    pre->add_option("--dataset", pre_dataset, "dataset path");
    pre->add_option("--mode", pre_mode, "full | pixel-only | consistency-only");
    pre->add_option("--strategy", pre_strategy,
                    "parallel | single-random | pure-random | complementary");
    pre->add_option("--out-dir", pre_out_dir, "base directory for run artifacts");
    pre->add_option("--k", pre_k, "part count for the parallel strategy");
    pre->add_option("--times", pre_times, "draw count for pure-random");
    pre->add_option("--ratio", pre_ratio, "mask ratio (or first-visible fraction)");
    pre->add_option("--epochs", pre_epochs, "training epochs");
    pre->add_option("--batch", pre_batch, "batch size");
    pre->add_option("--base-lr", pre_lr, "peak learning rate");
    pre->add_option("--seed", pre_seed, "training seed");
    pre->add_option("--deterministic", pre_deterministic, "true | false");

    // probe
    auto* probe = app.add_subcommand("probe", "linear probe on frozen encoder features");
    std::string probe_ckpt, probe_train, probe_test;
    int probe_epochs = 50;
    double probe_lr = 1e-2;
    uint64_t probe_seed = 0;
    probe->add_option("--checkpoint", probe_ckpt)->required();
    probe->add_option("--train-set", probe_train)->required();
    probe->add_option("--test-set", probe_test)->required();
    probe->add_option("--epochs", probe_epochs, "probe training epochs");
    probe->add_option("--lr", probe_lr, "probe learning rate");
    probe->add_option("--seed", probe_seed, "probe init seed");

    // eval-consistency
    auto* cons = app.add_subcommand("eval-consistency",
                                    "agreement of overlapping part predictions");
    std::string cons_ckpt, cons_ds, cons_out;
    int cons_k = 4, cons_n = 16;
    uint64_t cons_seed = 0;
    cons->add_option("--checkpoint", cons_ckpt)->required();
    cons->add_option("--dataset", cons_ds)->required();
    cons->add_option("--k", cons_k, "parts per partition");
    cons->add_option("--n-images", cons_n, "images to evaluate");
    cons->add_option("--seed", cons_seed);
    cons->add_option("--out", cons_out, "also write the JSON report here");

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "write per-part reconstruction images");
    std::string rec_ckpt, rec_ds, rec_out;
    size_t rec_index = 0;
    int rec_k = 4;
    uint64_t rec_seed = 0;
    bool rec_norm = true;
    rec->add_option("--checkpoint", rec_ckpt)->required();
    rec->add_option("--dataset", rec_ds)->required();
    rec->add_option("--index", rec_index, "image index");
    rec->add_option("--k", rec_k, "parts per partition");
    rec->add_option("--seed", rec_seed);
    rec->add_option("--out-dir", rec_out, "output directory")->required();
    rec->add_option("--normalize-target", rec_norm,
                    "model was trained on per-patch normalized targets");

    // mask-demo
    auto* demo = app.add_subcommand("mask-demo", "show partitions and mask statistics");
    int demo_n = 0, demo_k = 4, demo_times = 4;
    uint64_t demo_seed = 0;
    std::string demo_strategy = "parallel";
    double demo_ratio = 0.75;
    demo->add_option("--n-patches", demo_n)->required();
    demo->add_option("--k", demo_k, "part count");
    demo->add_option("--seed", demo_seed);
    demo->add_option("--strategy", demo_strategy,
                     "parallel | single-random | pure-random | complementary");
    demo->add_option("--times", demo_times, "draw count for pure-random");
    demo->add_option("--ratio", demo_ratio, "mask ratio (or first-visible fraction)");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
    std::string gc_scope = "op";
    double gc_tol = 0;
    uint64_t gc_seed = 0;
    gc->add_option("--scope", gc_scope, "op | model | loss");
    gc->add_option("--tol", gc_tol, "relative error tolerance")->required();
    gc->add_option("--seed", gc_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen) return cmd_gen_data(gen_out, gen_n, gen_size, gen_classes, gen_seed, gen_kind);
        if (*pre) {
            TrainConfig cfg =
                pre_config.empty() ? TrainConfig{} : parse_config_file(pre_config);
            for (const std::string& kv : pre_sets) {
                size_t eq = kv.find('=');
                if (eq == std::string::npos) {
                    throw ConfigError("--set wants key=value, got '" + kv + "'");
                }
                set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
            }
            apply_override(cfg, "dataset", pre_dataset);
            apply_override(cfg, "loss_mode", pre_mode);
            apply_override(cfg, "mask_strategy", pre_strategy);
            apply_override(cfg, "out_dir", pre_out_dir);
            apply_override(cfg, "k_parts", pre_k);
            apply_override(cfg, "mask_times", pre_times);
            apply_override(cfg, "mask_ratio", pre_ratio);
            apply_override(cfg, "epochs", pre_epochs);
            apply_override(cfg, "batch_size", pre_batch);
            apply_override(cfg, "base_lr", pre_lr);
            apply_override(cfg, "seed", pre_seed);
            apply_override(cfg, "deterministic", pre_deterministic);
            return cmd_pretrain(cfg);
        }
        if (*probe) {
            return cmd_probe(probe_ckpt, probe_train, probe_test, probe_epochs, probe_lr,
                             probe_seed);
        }
        if (*cons) {
            return cmd_eval_consistency(cons_ckpt, cons_ds, cons_k, cons_n, cons_seed, cons_out);
        }
        if (*rec) {
            return cmd_reconstruct(rec_ckpt, rec_ds, rec_index, rec_k, rec_seed, rec_out,
                                   rec_norm);
        }
        if (*demo) {
            return cmd_mask_demo(demo_n, demo_k, demo_seed, demo_strategy, demo_times,
                                 demo_ratio);
        }
        if (*gc) return cmd_grad_check(gc_scope, gc_tol, gc_seed);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return 3;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 4;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 4;
    }
    return 0;
}
