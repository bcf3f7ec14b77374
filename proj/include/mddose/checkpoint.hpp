#pragma once

// Training checkpoint container:
//   "MDCK" | u32 version | config JSON | u64 epoch | u64 global_step |
//   rng state | u64 adam_step | u32 count | count x { name | tensor | m | v }
// Strings are u32-length-prefixed; tensors are u32 rank, rank x u64 extent,
// then f64 values. All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mddose/tensor.hpp"

namespace mddose {

struct CheckpointEntry {
  std::string name;
  Tensor value;
  Tensor adam_m;
  Tensor adam_v;
};

struct Checkpoint {
  std::string config_json;
  std::uint64_t epoch = 0;        // completed epochs
  std::uint64_t global_step = 0;  // completed optimizer steps
  std::string rng_state;
  std::uint64_t adam_step = 0;
  std::vector<CheckpointEntry> params;
};

/// Atomic: the file is either the previous checkpoint or the new one.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mddose
