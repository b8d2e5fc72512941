#ifndef EMAE_EVAL_HPP
#define EMAE_EVAL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "emae/dataset.hpp"
#include "emae/mask.hpp"
#include "emae/model.hpp"

namespace emae {

// How tightly the K parts of one partition agree where their predictions
// overlap. across_seed_l1 compares predictions from two independent draws of
// the masks instead (secondary view of the same question).
struct ConsistencyReport {
    double mean_pairwise_l1 = 0.0;
    double per_position_variance = 0.0;
    double across_seed_l1 = 0.0;
    int n_images = 0;
    int n_draws = 0;  // k

    std::string to_json() const;
};

// One partition per image (seeded per index), forward all parts, accumulate
// pairwise L1 over overlap positions and the per-position prediction
// variance. Deterministic in (model, dataset, seed).
ConsistencyReport measure_consistency(Model& model, const Dataset& ds, int k_parts,
                                      int n_images, uint64_t seed);

// Mean masked reconstruction error of single mask draws (seeded per image)
// against the per-patch normalized target. A fixed eval protocol for
// comparing checkpoints trained under different strategies.
double eval_recon_loss(Model& model, const Dataset& ds, double mask_ratio_eval,
                       int n_images, uint64_t seed, bool normalize_target = true);

// Mean-pooled frozen encoder features, one row per image.
std::vector<Values> extract_features(Model& model, const Dataset& ds);

struct ProbeResult {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

// Single linear layer on frozen mean-pooled features, softmax cross-entropy,
// full-batch gradient descent. Returns top-1 accuracies.
ProbeResult linear_probe(Model& model, const Dataset& train, const Dataset& test,
                         int epochs, double lr, uint64_t seed);

// For each part of one partition: compose original pixels at visible
// positions with de-normalized predictions at masked ones, write P6 images
// (composite and raw prediction per part). Returns the written paths.
std::vector<std::string> reconstruct(Model& model, const Dataset& ds, size_t image_index,
                                     int k_parts, uint64_t seed, const std::string& out_dir,
                                     bool normalize_target = true);

void write_ppm(const std::string& path, int w, int h, const std::vector<uint8_t>& rgb);
struct PpmImage {
    int w = 0, h = 0;
    std::vector<uint8_t> rgb;
};
PpmImage read_ppm(const std::string& path);

}  // namespace emae

#endif  // EMAE_EVAL_HPP
