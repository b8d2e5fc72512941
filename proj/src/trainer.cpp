#include "emae/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "emae/checkpoint.hpp"
#include "emae/errors.hpp"
#include "emae/rng.hpp"

namespace emae {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs) {
        throw ConfigError("warmup_epochs must be in [0, epochs)");
    }
    if (base_lr <= 0) throw ConfigError("base_lr must be positive");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1) {
        throw ConfigError("betas must lie in (0, 1)");
    }
    if (eps <= 0) throw ConfigError("eps must be positive");
    if (k_parts < 2) throw ConfigError("k_parts must be >= 2");
    if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be >= 1");
    parse_loss_mode(loss_mode);
    strategy();  // validates the name
}

ModelConfig TrainConfig::model_config(const Dataset& ds) const {
    ModelConfig mc;
    mc.img_h = ds.h;
    mc.img_w = ds.w;
    mc.channels = ds.c;
    mc.patch = patch;
    mc.d_enc = d_enc;
    mc.enc_blocks = enc_blocks;
    mc.enc_heads = enc_heads;
    mc.d_dec = d_dec;
    mc.dec_blocks = dec_blocks;
    mc.dec_heads = dec_heads;
    mc.validate();
    return mc;
}

MaskStrategy TrainConfig::strategy() const {
    if (mask_strategy == "parallel") return MaskStrategy::parallel(k_parts);
    return MaskStrategy::parse(mask_strategy, mask_times, mask_ratio);
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' wants true/false, got '" + v + "'");
}

int parse_int(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' wants an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' wants a number, got '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' wants a non-negative integer, got '" + v +
                          "'");
    }
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void set_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "patch") cfg.patch = parse_int(value, key);
    else if (key == "d_enc") cfg.d_enc = parse_int(value, key);
    else if (key == "enc_blocks") cfg.enc_blocks = parse_int(value, key);
    else if (key == "enc_heads") cfg.enc_heads = parse_int(value, key);
    else if (key == "d_dec") cfg.d_dec = parse_int(value, key);
    else if (key == "dec_blocks") cfg.dec_blocks = parse_int(value, key);
    else if (key == "dec_heads") cfg.dec_heads = parse_int(value, key);
    else if (key == "k_parts") cfg.k_parts = parse_int(value, key);
    else if (key == "batch_size") cfg.batch_size = parse_int(value, key);
    else if (key == "epochs") cfg.epochs = parse_int(value, key);
    else if (key == "warmup_epochs") cfg.warmup_epochs = parse_int(value, key);
    else if (key == "base_lr") cfg.base_lr = parse_double(value, key);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(value, key);
    else if (key == "beta1") cfg.beta1 = parse_double(value, key);
    else if (key == "beta2") cfg.beta2 = parse_double(value, key);
    else if (key == "eps") cfg.eps = parse_double(value, key);
    else if (key == "grad_clip") cfg.grad_clip = parse_double(value, key);
    else if (key == "seed") cfg.seed = parse_u64(value, key);
    else if (key == "loss_mode") cfg.loss_mode = value;
    else if (key == "coeff_whole") cfg.coeff_whole = parse_double(value, key);
    else if (key == "coeff_consistency") cfg.coeff_consistency = parse_double(value, key);
    else if (key == "normalize_target") cfg.normalize_target = parse_bool(value, key);
    else if (key == "mask_strategy") cfg.mask_strategy = value;
    else if (key == "mask_times") cfg.mask_times = parse_int(value, key);
    else if (key == "mask_ratio") cfg.mask_ratio = parse_double(value, key);
    else if (key == "deterministic") cfg.deterministic = parse_bool(value, key);
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "checkpoint_interval") cfg.checkpoint_interval = parse_int(value, key);
    else throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    TrainConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
        }
        try {
            set_config_key(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

std::string canonical_config(const TrainConfig& c) {
    std::ostringstream os;
    os << "patch = " << c.patch << "\n";
    os << "d_enc = " << c.d_enc << "\n";
    os << "enc_blocks = " << c.enc_blocks << "\n";
    os << "enc_heads = " << c.enc_heads << "\n";
    os << "d_dec = " << c.d_dec << "\n";
    os << "dec_blocks = " << c.dec_blocks << "\n";
    os << "dec_heads = " << c.dec_heads << "\n";
    os << "k_parts = " << c.k_parts << "\n";
    os << "batch_size = " << c.batch_size << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "warmup_epochs = " << c.warmup_epochs << "\n";
    os << "base_lr = " << fmt_double(c.base_lr) << "\n";
    os << "weight_decay = " << fmt_double(c.weight_decay) << "\n";
    os << "beta1 = " << fmt_double(c.beta1) << "\n";
    os << "beta2 = " << fmt_double(c.beta2) << "\n";
    os << "eps = " << fmt_double(c.eps) << "\n";
    os << "grad_clip = " << fmt_double(c.grad_clip) << "\n";
    os << "seed = " << c.seed << "\n";
    os << "loss_mode = " << c.loss_mode << "\n";
    os << "coeff_whole = " << fmt_double(c.coeff_whole) << "\n";
    os << "coeff_consistency = " << fmt_double(c.coeff_consistency) << "\n";
    os << "normalize_target = " << (c.normalize_target ? "true" : "false") << "\n";
    os << "mask_strategy = " << c.mask_strategy << "\n";
    os << "mask_times = " << c.mask_times << "\n";
    os << "mask_ratio = " << fmt_double(c.mask_ratio) << "\n";
    os << "deterministic = " << (c.deterministic ? "true" : "false") << "\n";
    os << "dataset = " << c.dataset << "\n";
    os << "out_dir = " << c.out_dir << "\n";
    os << "checkpoint_interval = " << c.checkpoint_interval << "\n";
    return os.str();
}

uint64_t config_hash(const TrainConfig& cfg) {
    const std::string s = canonical_config(cfg);
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::string hex16(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<size_t> epoch_order(size_t count, uint64_t seed, int epoch) {
    std::vector<size_t> order(count);
    for (size_t i = 0; i < count; ++i) order[i] = i;
    CounterRng rng(CounterRng::derive(seed, 0x73687566, static_cast<uint64_t>(epoch)));
    for (size_t i = count; i > 1; --i) {
        size_t j = static_cast<size_t>(rng.next_below(i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.dataset.empty()) throw ConfigError("no dataset path configured");
    Dataset ds = load_dataset(cfg.dataset);
    if (ds.count() == 0) throw ConfigError("dataset " + cfg.dataset + " is empty");

    const ModelConfig mc = cfg.model_config(ds);
    const int n = mc.n_patches();
    const MaskStrategy strategy = cfg.strategy();
    const LossMode mode = parse_loss_mode(cfg.loss_mode);
    if (strategy.kind == MaskStrategy::Kind::Parallel && n % cfg.k_parts != 0) {
        throw ConfigError("k_parts " + std::to_string(cfg.k_parts) +
                          " does not divide the patch count " + std::to_string(n));
    }

    Model model(mc);
    model.init_params(cfg.seed);
    AdamW optim(model, {cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, cfg.grad_clip});
    const ScheduleConfig sched{cfg.base_lr, cfg.warmup_epochs, cfg.epochs};

    const uint64_t run_hash = config_hash(cfg);
    namespace fs = std::filesystem;
    TrainResult res;
    res.run_dir = (fs::path(cfg.out_dir) / ("run-" + hex16(run_hash))).string();
    std::error_code ec;
    fs::create_directories(res.run_dir, ec);
    if (ec) throw IoError("cannot create run directory " + res.run_dir + ": " + ec.message());
    res.checkpoint_path = (fs::path(res.run_dir) / "checkpoint.emae").string();
    res.metrics_path = (fs::path(res.run_dir) / "metrics.jsonl").string();

    {
        std::ofstream os(fs::path(res.run_dir) / "config.txt", std::ios::trunc);
        os << canonical_config(cfg);
        if (!os) throw IoError("cannot write config into " + res.run_dir);
    }
    std::ofstream metrics(res.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics " + res.metrics_path);

    const size_t count = ds.count();
    const int64_t spe = static_cast<int64_t>((count + cfg.batch_size - 1) / cfg.batch_size);
    int64_t step = 0;
    bool have_checkpoint = false;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<size_t> order = epoch_order(count, cfg.seed, epoch);
        for (size_t start = 0; start < count; start += cfg.batch_size) {
            const auto t0 = std::chrono::steady_clock::now();
            const size_t stop = std::min(count, start + cfg.batch_size);
            Graph g;
            std::vector<Tensor> image_losses;
            double sum_whole = 0, sum_cons = 0;
            for (size_t pos = start; pos < stop; ++pos) {
                const size_t idx = order[pos];
                const PatchGrid grid = patchify(ds.image_unit(idx), mc);
                const uint64_t sample_seed =
                    CounterRng::derive(cfg.seed, static_cast<uint64_t>(epoch),
                                       static_cast<uint64_t>(idx));
                std::vector<PartPrediction> preds;
                if (strategy.kind == MaskStrategy::Kind::Parallel) {
                    MaskPartition part = generate_partition(n, cfg.k_parts, sample_seed);
                    preds = model.forward_all_parts(g, grid, part);
                } else {
                    auto draws = generate_ablation_masks(strategy, n, sample_seed);
                    for (size_t d = 0; d < draws.size(); ++d) {
                        preds.push_back(
                            model.forward_draw(g, grid, draws[d], static_cast<int>(d)));
                    }
                }
                Tensor target = reconstruction_target(g, grid, cfg.normalize_target);
                LossBreakdown lb = total_loss(g, preds, target, mode, cfg.coeff_whole,
                                              cfg.coeff_consistency);
                sum_whole += lb.l_whole.item();
                sum_cons += lb.l_consistency.item();
                image_losses.push_back(lb.l_total);
            }
            Tensor batch_loss = image_losses[0];
            for (size_t i = 1; i < image_losses.size(); ++i) {
                batch_loss = g.add(batch_loss, image_losses[i]);
            }
            const double inv_b = 1.0 / static_cast<double>(image_losses.size());
            batch_loss = g.scale(batch_loss, inv_b);

            const double l_total = batch_loss.item();
            if (!std::isfinite(l_total)) {
                throw NumericError(
                    "loss is not finite at step " + std::to_string(step) +
                        (have_checkpoint ? "; last checkpoint kept at " + res.checkpoint_path
                                         : "; no checkpoint written yet"),
                    "l_total");
            }
            g.backward(batch_loss);
            std::vector<const Values*> grads;
            grads.reserve(model.params().size());
            for (const NamedParam& prm : model.params()) {
                grads.push_back(g.has_param(prm.data) ? &g.grad_for(prm.data) : nullptr);
            }
            const double lr = lr_at(step, sched, spe);
            optim.step(model, grads, lr);

            double wall_ms = 0.0;
            if (!cfg.deterministic) {
                wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
            }
            nlohmann::ordered_json rec;
            rec["step"] = step;
            rec["epoch"] = epoch;
            rec["lr"] = lr;
            rec["l_whole"] = sum_whole * inv_b;
            rec["l_consistency"] = sum_cons * inv_b;
            rec["l_total"] = l_total;
            rec["wall_ms"] = wall_ms;
            metrics << rec.dump() << "\n";

            res.final_l_total = l_total;
            res.final_l_whole = sum_whole * inv_b;
            res.final_l_consistency = sum_cons * inv_b;
            ++step;
        }
        if ((epoch + 1) % cfg.checkpoint_interval == 0 || epoch + 1 == cfg.epochs) {
            save_checkpoint(res.checkpoint_path, model, optim, step, run_hash);
            have_checkpoint = true;
        }
    }
    metrics.flush();
    if (!metrics) throw IoError("write failed for metrics " + res.metrics_path);

    res.steps = step;
    res.visible_tokens_per_image =
        static_cast<double>(model.visible_tokens_seen) /
        (static_cast<double>(cfg.epochs) * static_cast<double>(count));
    return res;
}

}  // namespace emae
