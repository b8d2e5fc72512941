#ifndef EMAE_GRADCHECK_HPP
#define EMAE_GRADCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "emae/model.hpp"

namespace emae {

struct CheckOutcome {
    std::string name;
    double max_rel_error = 0.0;
    bool pass = false;
};

// Central-difference checks of every differentiable op against its backward
// rule, `draws` random instances each. Inputs near kinks (abs) are nudged
// away before probing.
std::vector<CheckOutcome> check_ops(int draws, double tol, uint64_t seed);

// Finite differences through the full network on random parameter
// coordinates. The scalar under test is the mean part prediction.
CheckOutcome check_model(const ModelConfig& cfg, int draws, double tol, uint64_t seed);

// Same probing, scalar = combined training loss (both terms) with K parts.
CheckOutcome check_total_loss(const ModelConfig& cfg, int k_parts, int draws, double tol,
                              uint64_t seed);

}  // namespace emae

#endif  // EMAE_GRADCHECK_HPP
