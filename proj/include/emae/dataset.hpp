#ifndef EMAE_DATASET_HPP
#define EMAE_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "emae/tensor.hpp"

namespace emae {

// In-memory labeled image set. Pixels stay u8; image_unit scales to [0,1]
// reals (255 -> 1.0 exactly).
struct Dataset {
    int h = 0, w = 0, c = 0;
    int n_classes = 0;
    std::vector<std::vector<uint8_t>> images;  // each h*w*c, raster order
    std::vector<uint32_t> labels;

    size_t count() const { return images.size(); }
    Values image_unit(size_t i) const;
};

struct SynthSpec {
    int n_images = 128;
    int h = 32, w = 32, c = 3;
    int n_classes = 4;
    uint64_t seed = 1;
    std::string kind = "shapes";  // shapes | gradients | textures
};

// Procedural class-conditional images, deterministic per (seed, index).
// Labels cycle through the classes, so counts are balanced within 1.
Dataset synth_dataset(const SynthSpec& spec);

// Binary file: magic "EMAEDS1\n", then count/H/W/C/classes as u32 LE
// (28-byte header), count images of H*W*C u8 pixels, count u32 labels.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

void generate_dataset(const SynthSpec& spec, const std::string& path);

}  // namespace emae

#endif  // EMAE_DATASET_HPP
