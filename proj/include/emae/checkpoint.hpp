#ifndef EMAE_CHECKPOINT_HPP
#define EMAE_CHECKPOINT_HPP

#include <cstdint>
#include <string>

#include "emae/model.hpp"
#include "emae/optim.hpp"

namespace emae {

// Binary layout, all integers little-endian:
//   magic "EMAECKPT", version u32 = 1
//   parameter table, then optimizer-state table, each:
//     count u32, entries of (name-len u32, name bytes, rank u32,
//     dims u32 x rank, payload f64 x numel)
//   footer: step u64, config-hash u64
// The optimizer table carries m.<name> / v.<name> moments plus a
// "model.dims" entry recording the architecture, so a file identifies the
// model it fits.
void save_checkpoint(const std::string& path, const Model& model, const AdamW& optim,
                     int64_t step, uint64_t config_hash);

struct LoadedCheckpoint {
    ModelConfig config;
    int64_t step = 0;
    uint64_t config_hash = 0;
};

// Restores parameters and optimizer state in place. The model must have been
// built with the same architecture; mismatched dims, names, or shapes raise
// IncompatibleCheckpoint.
LoadedCheckpoint load_checkpoint(const std::string& path, Model& model, AdamW& optim);

// Reads only the architecture entry, for constructing a matching model.
ModelConfig peek_checkpoint_config(const std::string& path);

}  // namespace emae

#endif  // EMAE_CHECKPOINT_HPP
