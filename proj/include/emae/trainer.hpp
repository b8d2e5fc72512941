#ifndef EMAE_TRAINER_HPP
#define EMAE_TRAINER_HPP

#include <cstdint>
#include <string>

#include "emae/dataset.hpp"
#include "emae/losses.hpp"
#include "emae/mask.hpp"
#include "emae/model.hpp"
#include "emae/optim.hpp"

namespace emae {

struct TrainConfig {
    // model (image dims come from the dataset)
    int patch = 8;
    int d_enc = 64;
    int enc_blocks = 2;
    int enc_heads = 4;
    int d_dec = 32;
    int dec_blocks = 1;
    int dec_heads = 2;

    // optimization
    int k_parts = 4;
    int batch_size = 64;
    int epochs = 30;
    int warmup_epochs = 2;
    double base_lr = 1.5e-3;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double grad_clip = 0.0;
    uint64_t seed = 0;

    // objective
    std::string loss_mode = "full";
    double coeff_whole = 1.0;
    double coeff_consistency = 1.0;
    bool normalize_target = true;

    // masking
    std::string mask_strategy = "parallel";
    int mask_times = 4;
    double mask_ratio = 0.75;

    // run plumbing
    bool deterministic = true;
    std::string dataset;
    std::string out_dir = "runs";
    int checkpoint_interval = 10;  // epochs

    void validate() const;
    ModelConfig model_config(const Dataset& ds) const;
    MaskStrategy strategy() const;
};

// Line-oriented `key = value` text; '#' starts a comment; unknown keys are
// errors. set_config_key applies one assignment (also used for flag
// overrides).
TrainConfig parse_config_file(const std::string& path);
void set_config_key(TrainConfig& cfg, const std::string& key, const std::string& value);

// Every config field in a fixed order, one `key = value` per line. The run
// hash is FNV-1a over this string.
std::string canonical_config(const TrainConfig& cfg);
uint64_t config_hash(const TrainConfig& cfg);

struct TrainResult {
    std::string run_dir;
    std::string checkpoint_path;
    std::string metrics_path;
    int64_t steps = 0;
    double final_l_total = 0.0;
    double final_l_whole = 0.0;
    double final_l_consistency = 0.0;
    // encoder inputs per image per epoch; N for the parallel strategy
    double visible_tokens_per_image = 0.0;
};

// Full pretraining run: per image draw masks, forward all parts in one graph,
// backprop the combined loss, Adam step, append one metrics line per step.
// Checkpoints land in a run directory named from the config hash.
TrainResult train(const TrainConfig& cfg);

}  // namespace emae

#endif  // EMAE_TRAINER_HPP
