#include "emae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "emae/errors.hpp"
#include "emae/losses.hpp"
#include "emae/rng.hpp"

namespace emae {

std::string ConsistencyReport::to_json() const {
    nlohmann::ordered_json j;
    j["mean_pairwise_l1"] = mean_pairwise_l1;
    j["per_position_variance"] = per_position_variance;
    j["across_seed_l1"] = across_seed_l1;
    j["n_images"] = n_images;
    j["n_draws"] = n_draws;
    return j.dump();
}

namespace {

PatchGrid grid_for(const Dataset& ds, const Model& model, size_t i) {
    return patchify(ds.image_unit(i), model.config());
}

}  // namespace

ConsistencyReport measure_consistency(Model& model, const Dataset& ds, int k_parts,
                                      int n_images, uint64_t seed) {
    if (k_parts < 3) {
        throw ConfigError("consistency needs k_parts >= 3 for non-empty overlaps, got " +
                          std::to_string(k_parts));
    }
    const int n = model.config().n_patches();
    if (n % k_parts != 0) {
        throw ConfigError("k_parts " + std::to_string(k_parts) +
                          " does not divide the patch count " + std::to_string(n));
    }
    const int take = std::min<int>(n_images, static_cast<int>(ds.count()));
    if (take <= 0) throw ConfigError("no images to evaluate");

    const int s = model.config().patch_dim();
    double sum_l1 = 0;
    int64_t n_l1 = 0;
    double sum_var = 0;
    int64_t n_var = 0;
    double sum_seed_l1 = 0;
    int64_t n_seed_l1 = 0;

    for (int i = 0; i < take; ++i) {
        const PatchGrid grid = grid_for(ds, model, static_cast<size_t>(i));
        Graph g;
        MaskPartition part =
            generate_partition(n, k_parts, CounterRng::derive(seed, 0x636f6e73, i));
        auto preds = model.forward_all_parts(g, grid, part);

        for (int a = 0; a < k_parts; ++a) {
            for (int b = a + 1; b < k_parts; ++b) {
                OverlapSet ov = overlap(part, a, b);
                const Values& pa = preds[a].pred.values();
                const Values& pb = preds[b].pred.values();
                for (int p : ov.indices()) {
                    for (int q = 0; q < s; ++q) {
                        sum_l1 += std::abs(pa[static_cast<int64_t>(p) * s + q] -
                                           pb[static_cast<int64_t>(p) * s + q]);
                        ++n_l1;
                    }
                }
            }
        }

        // variance of the masked-part predictions at each position
        for (int p = 0; p < n; ++p) {
            std::vector<const Values*> rows;
            for (int a = 0; a < k_parts; ++a) {
                if (part.masks[a][p]) rows.push_back(&preds[a].pred.values());
            }
            if (rows.size() < 2) continue;
            for (int q = 0; q < s; ++q) {
                double mean = 0;
                for (const Values* r : rows) mean += (*r)[static_cast<int64_t>(p) * s + q];
                mean /= static_cast<double>(rows.size());
                double var = 0;
                for (const Values* r : rows) {
                    double d = (*r)[static_cast<int64_t>(p) * s + q] - mean;
                    var += d * d;
                }
                sum_var += var / static_cast<double>(rows.size());
                ++n_var;
            }
        }

        // secondary: part 0 of an independently seeded partition
        Graph g2;
        MaskPartition part2 =
            generate_partition(n, k_parts, CounterRng::derive(seed, 0x78736565, i));
        PartPrediction other = model.forward_part(g2, grid, part2, 0);
        auto both = mask_intersection(part.masks[0], part2.masks[0]);
        const Values& p0 = preds[0].pred.values();
        const Values& q0 = other.pred.values();
        for (int p = 0; p < n; ++p) {
            if (!both[p]) continue;
            for (int q = 0; q < s; ++q) {
                sum_seed_l1 += std::abs(p0[static_cast<int64_t>(p) * s + q] -
                                        q0[static_cast<int64_t>(p) * s + q]);
                ++n_seed_l1;
            }
        }
    }

    ConsistencyReport rep;
    rep.mean_pairwise_l1 = n_l1 ? sum_l1 / static_cast<double>(n_l1) : 0.0;
    rep.per_position_variance = n_var ? sum_var / static_cast<double>(n_var) : 0.0;
    rep.across_seed_l1 = n_seed_l1 ? sum_seed_l1 / static_cast<double>(n_seed_l1) : 0.0;
    rep.n_images = take;
    rep.n_draws = k_parts;
    return rep;
}

double eval_recon_loss(Model& model, const Dataset& ds, double mask_ratio_eval,
                       int n_images, uint64_t seed, bool normalize_target) {
    const int take = std::min<int>(n_images, static_cast<int>(ds.count()));
    if (take <= 0) throw ConfigError("no images to evaluate");
    const int n = model.config().n_patches();
    const MaskStrategy strat = MaskStrategy::single_random(mask_ratio_eval);
    double sum = 0;
    for (int i = 0; i < take; ++i) {
        const PatchGrid grid = grid_for(ds, model, static_cast<size_t>(i));
        Graph g;
        MaskDraw draw =
            generate_ablation_masks(strat, n, CounterRng::derive(seed, 0x6576616c, i))[0];
        PartPrediction pred = model.forward_draw(g, grid, draw);
        Tensor target = reconstruction_target(g, grid, normalize_target);
        sum += part_recon_loss(g, pred, target).item();
    }
    return sum / static_cast<double>(take);
}

std::vector<Values> extract_features(Model& model, const Dataset& ds) {
    const int n = model.config().n_patches();
    const int d = model.config().d_enc;
    std::vector<Values> feats;
    feats.reserve(ds.count());
    for (size_t i = 0; i < ds.count(); ++i) {
        Graph g;
        Tensor f = model.encode_features(g, grid_for(ds, model, i));
        Values pooled(d, 0.0);
        const Values& v = f.values();
        for (int p = 0; p < n; ++p) {
            for (int q = 0; q < d; ++q) pooled[q] += v[static_cast<int64_t>(p) * d + q];
        }
        for (double& x : pooled) x /= n;
        feats.push_back(std::move(pooled));
    }
    return feats;
}

namespace {

double probe_accuracy(const Values& logits, const std::vector<uint32_t>& labels, int classes) {
    int hits = 0;
    const size_t rows = labels.size();
    for (size_t r = 0; r < rows; ++r) {
        int best = 0;
        for (int cc = 1; cc < classes; ++cc) {
            if (logits[r * classes + cc] > logits[r * classes + best]) best = cc;
        }
        if (best == static_cast<int>(labels[r])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(rows);
}

Values flatten_features(const std::vector<Values>& feats) {
    Values flat;
    flat.reserve(feats.size() * feats[0].size());
    for (const Values& f : feats) flat.insert(flat.end(), f.begin(), f.end());
    return flat;
}

}  // namespace

ProbeResult linear_probe(Model& model, const Dataset& train, const Dataset& test,
                         int epochs, double lr, uint64_t seed) {
    if (train.n_classes != test.n_classes) {
        throw ConfigError("probe class counts differ: train " + std::to_string(train.n_classes) +
                          " vs test " + std::to_string(test.n_classes));
    }
    if (epochs < 1 || lr <= 0) throw ConfigError("probe needs epochs >= 1 and lr > 0");
    const int classes = train.n_classes;
    const int d = model.config().d_enc;
    const int n_train = static_cast<int>(train.count());
    const int n_test = static_cast<int>(test.count());

    std::vector<Values> train_feats = extract_features(model, train);
    std::vector<Values> test_feats = extract_features(model, test);
    Values x_train = flatten_features(train_feats);
    Values x_test = flatten_features(test_feats);

    Values onehot(static_cast<size_t>(n_train) * classes, 0.0);
    for (int r = 0; r < n_train; ++r) onehot[static_cast<size_t>(r) * classes + train.labels[r]] = 1.0;

    auto w = std::make_shared<Values>(static_cast<size_t>(d) * classes);
    auto b = std::make_shared<Values>(classes, 0.0);
    CounterRng rng(CounterRng::derive(seed, 0x70726f62));
    for (double& v : *w) v = rng.next_trunc_normal(0.01);

    for (int e = 0; e < epochs; ++e) {
        Graph g;
        Tensor wt = g.param({d, classes}, w);
        Tensor bt = g.param({classes}, b);
        Tensor logits = g.add(g.matmul(g.constant({n_train, d}, x_train), wt), bt);
        Tensor picked = g.mul(g.softmax(logits), g.constant({n_train, classes}, onehot));
        Tensor py = g.matmul(picked, g.constant({classes, 1}, Values(classes, 1.0)));
        Tensor loss = g.scale(g.mean(g.log(py)), -1.0);
        g.backward(loss);
        const Values& gw = g.grad(wt);
        const Values& gb = g.grad(bt);
        for (size_t q = 0; q < w->size(); ++q) (*w)[q] -= lr * gw[q];
        for (size_t q = 0; q < b->size(); ++q) (*b)[q] -= lr * gb[q];
    }

    auto logits_of = [&](const Values& x, int rows) {
        Graph g;
        Tensor out = g.add(g.matmul(g.constant({rows, d}, x), g.constant({d, classes}, *w)),
                           g.constant({classes}, *b));
        return out.values();
    };
    ProbeResult res;
    res.train_accuracy = probe_accuracy(logits_of(x_train, n_train), train.labels, classes);
    res.test_accuracy = probe_accuracy(logits_of(x_test, n_test), test.labels, classes);
    return res;
}

namespace {

uint8_t to_byte(double unit) {
    double v = std::lround(std::clamp(unit, 0.0, 1.0) * 255.0);
    return static_cast<uint8_t>(v);
}

// pred row -> pixel bytes for one patch, undoing target normalization with
// the source patch's own statistics.
void paste_patch(std::vector<uint8_t>& img, const PatchGrid& grid, const Values& pred, int p,
                 bool denormalize) {
    const int s = grid.patch_dim;
    const double* row = pred.data() + static_cast<int64_t>(p) * s;
    double mean = 0, var = 0;
    if (denormalize) {
        const double* src = grid.patches.data() + static_cast<int64_t>(p) * s;
        for (int q = 0; q < s; ++q) mean += src[q];
        mean /= s;
        for (int q = 0; q < s; ++q) var += (src[q] - mean) * (src[q] - mean);
        var /= s;
    }
    const double sd = std::sqrt(var + 1e-6);
    const int gw = grid.img_w / grid.patch;
    const int py = (p / gw) * grid.patch;
    const int px = (p % gw) * grid.patch;
    int q = 0;
    for (int dy = 0; dy < grid.patch; ++dy) {
        for (int dx = 0; dx < grid.patch; ++dx) {
            for (int ch = 0; ch < grid.channels; ++ch, ++q) {
                double unit = denormalize ? row[q] * sd + mean : row[q];
                img[(static_cast<size_t>(py + dy) * grid.img_w + (px + dx)) * grid.channels +
                    ch] = to_byte(unit);
            }
        }
    }
}

}  // namespace

std::vector<std::string> reconstruct(Model& model, const Dataset& ds, size_t image_index,
                                     int k_parts, uint64_t seed, const std::string& out_dir,
                                     bool normalize_target) {
    if (image_index >= ds.count()) {
        throw ConfigError("image index " + std::to_string(image_index) +
                          " out of range for dataset of " + std::to_string(ds.count()));
    }
    if (ds.c != 3) throw ConfigError("reconstruction output is P6, needs 3-channel images");
    const int n = model.config().n_patches();
    if (n % k_parts != 0) {
        throw ConfigError("k_parts " + std::to_string(k_parts) +
                          " does not divide the patch count " + std::to_string(n));
    }

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    const PatchGrid grid = grid_for(ds, model, image_index);
    const std::vector<uint8_t>& original = ds.images[image_index];
    Graph g;
    MaskPartition part =
        generate_partition(n, k_parts, CounterRng::derive(seed, 0x7265636f, image_index));
    auto preds = model.forward_all_parts(g, grid, part);

    std::vector<std::string> written;
    for (int i = 0; i < k_parts; ++i) {
        const Values& pred = preds[i].pred.values();
        // composite: source bytes everywhere, predictions at masked positions
        std::vector<uint8_t> composite = original;
        for (int p = 0; p < n; ++p) {
            if (part.masks[i][p]) paste_patch(composite, grid, pred, p, normalize_target);
        }
        // raw prediction at every position
        std::vector<uint8_t> predicted(original.size());
        for (int p = 0; p < n; ++p) paste_patch(predicted, grid, pred, p, normalize_target);

        std::string comp_path =
            (fs::path(out_dir) / ("part" + std::to_string(i) + "_composite.ppm")).string();
        std::string pred_path =
            (fs::path(out_dir) / ("part" + std::to_string(i) + "_prediction.ppm")).string();
        write_ppm(comp_path, grid.img_w, grid.img_h, composite);
        write_ppm(pred_path, grid.img_w, grid.img_h, predicted);
        written.push_back(comp_path);
        written.push_back(pred_path);
    }
    return written;
}

void write_ppm(const std::string& path, int w, int h, const std::vector<uint8_t>& rgb) {
    if (rgb.size() != static_cast<size_t>(w) * h * 3) {
        throw ShapeError("ppm buffer has " + std::to_string(rgb.size()) + " bytes for " +
                         std::to_string(w) + "x" + std::to_string(h));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    os.flush();
    if (!os) throw IoError("write failed for " + path);
}

PpmImage read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw FormatError(path + ": not a P6 file");
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (!in || w <= 0 || h <= 0 || maxval != 255) {
        throw FormatError(path + ": bad P6 header");
    }
    in.get();  // single whitespace after maxval
    PpmImage img;
    img.w = w;
    img.h = h;
    img.rgb.resize(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
        throw FormatError(path + ": truncated pixel data");
    }
    return img;
}

}  // namespace emae
