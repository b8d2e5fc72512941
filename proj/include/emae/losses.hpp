#ifndef EMAE_LOSSES_HPP
#define EMAE_LOSSES_HPP

#include <string>
#include <vector>

#include "emae/model.hpp"
#include "emae/tensor.hpp"

namespace emae {

enum class LossMode { Full, PixelOnly, ConsistencyOnly };

LossMode parse_loss_mode(const std::string& name);
std::string loss_mode_name(LossMode mode);

// Scalar loss tensors plus their forward values. l_total is the tensor to
// backprop; the other components are always populated for reporting.
struct LossBreakdown {
    Tensor l_whole;
    Tensor l_consistency;
    Tensor l_total;
    std::vector<double> part_losses;  // per part, forward values
    std::vector<double> pair_losses;  // per unordered pair (i<j)
};

// Patch rows, optionally standardized per patch: (x - mean) / sqrt(var + 1e-6)
// over each row's values. Constant; gradients never flow into the target.
Tensor reconstruction_target(Graph& g, const PatchGrid& grid, bool normalize_per_patch);

// Mean squared error over the positions the part was masked on, all feature
// dims. Visible rows never contribute.
Tensor part_recon_loss(Graph& g, const PartPrediction& pred, const Tensor& target);

// Mean of the per-part reconstruction losses.
Tensor whole_loss(Graph& g, const std::vector<PartPrediction>& preds, const Tensor& target);

// Symmetric stop-gradient L1 on the positions both parts predict:
// mean |sg(a) - b| + mean |a - sg(b)|, so the forward value is twice the
// plain mean absolute difference. An empty overlap yields 0 (warned once).
Tensor pair_consistency_loss(Graph& g, const PartPrediction& pred_i,
                             const PartPrediction& pred_j,
                             const std::vector<uint8_t>& overlap_positions);

// Mean of pair_consistency_loss over all unordered part pairs; overlaps come
// from intersecting the parts' masks.
Tensor consistency_loss(Graph& g, const std::vector<PartPrediction>& preds);

// Combined objective. Full sums both components (unit coefficients unless
// overridden); PixelOnly and ConsistencyOnly train one term but the breakdown
// still reports both.
LossBreakdown total_loss(Graph& g, const std::vector<PartPrediction>& preds,
                         const Tensor& target, LossMode mode, double coeff_whole = 1.0,
                         double coeff_consistency = 1.0);

}  // namespace emae

#endif  // EMAE_LOSSES_HPP
