#include "emae/losses.hpp"

#include <cmath>
#include <cstdio>

#include "emae/errors.hpp"

namespace emae {

LossMode parse_loss_mode(const std::string& name) {
    if (name == "full") return LossMode::Full;
    if (name == "pixel-only") return LossMode::PixelOnly;
    if (name == "consistency-only") return LossMode::ConsistencyOnly;
    throw ConfigError("unknown loss mode '" + name +
                      "' (expected full, pixel-only, consistency-only)");
}

std::string loss_mode_name(LossMode mode) {
    switch (mode) {
        case LossMode::Full: return "full";
        case LossMode::PixelOnly: return "pixel-only";
        case LossMode::ConsistencyOnly: return "consistency-only";
    }
    return "?";
}

Tensor reconstruction_target(Graph& g, const PatchGrid& grid, bool normalize_per_patch) {
    const int n = grid.n_patches;
    const int s = grid.patch_dim;
    if (!normalize_per_patch) {
        return g.constant({n, s}, grid.patches);
    }
    Values out(grid.patches.size());
    for (int r = 0; r < n; ++r) {
        const double* row = grid.patches.data() + static_cast<int64_t>(r) * s;
        double mean = 0;
        for (int q = 0; q < s; ++q) mean += row[q];
        mean /= s;
        double var = 0;
        for (int q = 0; q < s; ++q) var += (row[q] - mean) * (row[q] - mean);
        var /= s;
        const double rstd = 1.0 / std::sqrt(var + 1e-6);
        for (int q = 0; q < s; ++q) {
            out[static_cast<int64_t>(r) * s + q] = (row[q] - mean) * rstd;
        }
    }
    return g.constant({n, s}, std::move(out));
}

namespace {

std::vector<int> mask_positions(const std::vector<uint8_t>& mask) {
    std::vector<int> out;
    for (int q = 0; q < static_cast<int>(mask.size()); ++q) {
        if (mask[q]) out.push_back(q);
    }
    return out;
}

Tensor mean_over_scalars(Graph& g, const std::vector<Tensor>& terms) {
    Tensor acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
    return g.scale(acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Tensor part_recon_loss(Graph& g, const PartPrediction& pred, const Tensor& target) {
    std::vector<int> rows = mask_positions(pred.valid_mask);
    if (rows.empty()) {
        throw ConfigError("part " + std::to_string(pred.part_index) +
                          " masks no positions; reconstruction loss undefined");
    }
    Tensor d = g.sub(g.gather_rows(pred.pred, rows), g.gather_rows(target, rows));
    return g.mean(g.square(d));
}

Tensor whole_loss(Graph& g, const std::vector<PartPrediction>& preds, const Tensor& target) {
    if (preds.empty()) throw ConfigError("whole_loss needs at least one part");
    std::vector<Tensor> terms;
    terms.reserve(preds.size());
    for (const PartPrediction& pr : preds) terms.push_back(part_recon_loss(g, pr, target));
    return mean_over_scalars(g, terms);
}

Tensor pair_consistency_loss(Graph& g, const PartPrediction& pred_i,
                             const PartPrediction& pred_j,
                             const std::vector<uint8_t>& overlap_positions) {
    std::vector<int> rows = mask_positions(overlap_positions);
    if (rows.empty()) {
        static bool warned = false;
        if (!warned) {
            warned = true;
            std::fprintf(stderr,
                         "warning: empty overlap between parts %d and %d; "
                         "consistency term is 0\n",
                         pred_i.part_index, pred_j.part_index);
        }
        return g.scalar(0.0);
    }
    Tensor a = g.gather_rows(pred_i.pred, rows);
    Tensor b = g.gather_rows(pred_j.pred, rows);
    Tensor pull_b = g.mean(g.abs(g.sub(g.stop_gradient(a), b)));
    Tensor pull_a = g.mean(g.abs(g.sub(a, g.stop_gradient(b))));
    return g.add(pull_b, pull_a);
}

Tensor consistency_loss(Graph& g, const std::vector<PartPrediction>& preds) {
    if (preds.size() < 2) return g.scalar(0.0);
    std::vector<Tensor> terms;
    for (size_t i = 0; i < preds.size(); ++i) {
        for (size_t j = i + 1; j < preds.size(); ++j) {
            auto ov = mask_intersection(preds[i].valid_mask, preds[j].valid_mask);
            terms.push_back(pair_consistency_loss(g, preds[i], preds[j], ov));
        }
    }
    return mean_over_scalars(g, terms);
}

LossBreakdown total_loss(Graph& g, const std::vector<PartPrediction>& preds,
                         const Tensor& target, LossMode mode, double coeff_whole,
                         double coeff_consistency) {
    LossBreakdown out;
    std::vector<Tensor> part_terms;
    part_terms.reserve(preds.size());
    for (const PartPrediction& pr : preds) {
        Tensor t = part_recon_loss(g, pr, target);
        out.part_losses.push_back(t.item());
        part_terms.push_back(t);
    }
    out.l_whole = mean_over_scalars(g, part_terms);

    std::vector<Tensor> pair_terms;
    for (size_t i = 0; i < preds.size(); ++i) {
        for (size_t j = i + 1; j < preds.size(); ++j) {
            auto ov = mask_intersection(preds[i].valid_mask, preds[j].valid_mask);
            Tensor t = pair_consistency_loss(g, preds[i], preds[j], ov);
            out.pair_losses.push_back(t.item());
            pair_terms.push_back(t);
        }
    }
    out.l_consistency = pair_terms.empty() ? g.scalar(0.0) : mean_over_scalars(g, pair_terms);

    switch (mode) {
        case LossMode::Full:
            out.l_total = g.add(g.scale(out.l_whole, coeff_whole),
                                g.scale(out.l_consistency, coeff_consistency));
            break;
        case LossMode::PixelOnly:
            out.l_total = out.l_whole;
            break;
        case LossMode::ConsistencyOnly:
            out.l_total = out.l_consistency;
            break;
    }
    return out;
}

}  // namespace emae
