#ifndef EMAE_MODEL_HPP
#define EMAE_MODEL_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "emae/mask.hpp"
#include "emae/tensor.hpp"

namespace emae {

struct ModelConfig {
    int img_h = 32;
    int img_w = 32;
    int channels = 3;
    int patch = 8;

    int d_enc = 64;
    int enc_blocks = 2;
    int enc_heads = 4;

    int d_dec = 32;
    int dec_blocks = 1;
    int dec_heads = 2;

    int n_patches() const { return (img_h / patch) * (img_w / patch); }
    int patch_dim() const { return patch * patch * channels; }

    // Throws ConfigError on indivisible dims, bad head counts, or widths
    // incompatible with the 2-d sincos tables (divisible by 4).
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Image cut into N non-overlapping patch rows. Patch rows follow raster order
// of the patch grid; within a patch, pixel order is raster (row, col, channel).
struct PatchGrid {
    int img_h = 0, img_w = 0, channels = 0, patch = 0;
    int n_patches = 0;
    int patch_dim = 0;
    Values patches;  // [n_patches * patch_dim]
};

PatchGrid patchify(const Values& image, const ModelConfig& cfg);
Values unpatchify(const PatchGrid& grid);

// Fixed 2-d sincos table, [grid_h*grid_w, dim] in raster order. Half of dim
// encodes the row coordinate, half the column. dim must be divisible by 4.
Values sincos_pos_table(int grid_h, int grid_w, int dim);

// Predictions of one part at every patch position. Downstream losses read
// pred only where valid_mask = 1 (the positions this part was masked on).
struct PartPrediction {
    int part_index = -1;
    Tensor pred;                      // [N, S]
    std::vector<uint8_t> valid_mask;  // length N, 1 = masked
};

struct NamedParam {
    std::string name;
    Shape shape;
    ValuesPtr data;
};

// Asymmetric encoder-decoder over patch tokens. The encoder runs on visible
// patches only; the decoder fills masked positions with a learned mask token
// and predicts pixels at every position. Pre-norm blocks, affine layer norm,
// fixed sincos positions, no class token.
class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    const std::vector<NamedParam>& params() const { return params_; }
    NamedParam& param(const std::string& name);
    const NamedParam& param(const std::string& name) const;

    // Truncated-normal 0.02 weights and mask token, zero biases, unit norm
    // scales. Deterministic in (seed, registration order).
    void init_params(uint64_t seed);

    int64_t param_count() const;
    // Closed-form count; param_count() must equal this for any valid config.
    static int64_t expected_param_count(const ModelConfig& cfg);

    PartPrediction forward_part(Graph& g, const PatchGrid& grid,
                                const MaskPartition& partition, int i);
    std::vector<PartPrediction> forward_all_parts(Graph& g, const PatchGrid& grid,
                                                  const MaskPartition& partition);
    // Same network on an arbitrary visible set (ablation mask strategies).
    PartPrediction forward_draw(Graph& g, const PatchGrid& grid, const MaskDraw& draw,
                                int draw_index = 0);

    // Encoder over all N patches, no masking. [N, d_enc]; evaluation only.
    Tensor encode_features(Graph& g, const PatchGrid& grid);

    // Visible tokens fed to the encoder since construction (utilization
    // instrumentation; the parallel strategy totals N per image per iteration).
    int64_t visible_tokens_seen = 0;

private:
    Tensor p(Graph& g, const std::string& name);
    Tensor affine_norm(Graph& g, const Tensor& x, const std::string& prefix);
    Tensor attention(Graph& g, const Tensor& x, const std::string& prefix, int heads);
    Tensor block(Graph& g, const Tensor& x, const std::string& prefix, int heads);
    Tensor encode_tokens(Graph& g, const Tensor& patch_rows, const std::vector<int>& ids);
    void register_param(const std::string& name, Shape shape);
    void register_block(const std::string& prefix, int dim);
    void check_grid(const PatchGrid& grid) const;

    ModelConfig cfg_;
    std::vector<NamedParam> params_;
    std::unordered_map<std::string, int> index_;
    Values enc_pos_;  // [N, d_enc] constant
    Values dec_pos_;  // [N, d_dec] constant
};

}  // namespace emae

#endif  // EMAE_MODEL_HPP
