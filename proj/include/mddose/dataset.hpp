#pragma once

// On-disk phantom dataset:
//
//   <dir>/manifest.json      version, phantom spec, split lists, checksums
//   <dir>/samples/NNNN.bin   one sample per file
//
// Sample files hold named, shape-tagged little-endian float64 arrays:
//   "MDDS" | u32 version | u32 count | count x { u32 name_len | name |
//   u32 rank | rank x u64 extent | prod(extent) x f64 }

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mddose/phantom.hpp"

namespace mddose {

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct SplitCounts {
  std::size_t train = 50;
  std::size_t val = 5;
  std::size_t test = 20;
};

/// Seed offsets that keep the three splits on disjoint seed ranges.
inline constexpr std::uint64_t kSplitSeedStride = 1'000'000;

struct SampleEntry {
  std::size_t index;  // global sample number
  std::string file;   // relative to the dataset directory
  std::uint64_t seed;
  std::uint32_t crc32;
};

struct DatasetInfo {
  int version = 1;
  PhantomSpec spec;  // seed field unused
  std::uint64_t base_seed = 0;
  std::array<std::vector<SampleEntry>, 3> splits;

  const std::vector<SampleEntry>& entries(Split s) const { return splits[static_cast<std::size_t>(s)]; }
  std::size_t total() const { return splits[0].size() + splits[1].size() + splits[2].size(); }
};

/// Writes a named-array file atomically (temp file, then rename).
void write_arrays(const std::filesystem::path& path, const std::vector<std::pair<std::string, const Tensor*>>& arrays);
std::vector<std::pair<std::string, Tensor>> read_arrays(const std::filesystem::path& path);
std::uint32_t file_crc32(const std::filesystem::path& path);

/// Generates and persists a dataset. The whole directory is assembled under a
/// temporary name and renamed into place, so a failure never leaves a partial
/// dataset behind. Throws if `dir` exists and `overwrite` is false.
DatasetInfo build_dataset(const std::filesystem::path& dir, const SplitCounts& counts, std::uint64_t base_seed,
                          const PhantomSpec& spec_template, bool overwrite);

DatasetInfo read_manifest(const std::filesystem::path& dir);

/// Loads sample `index` (global numbering), verifying its checksum.
Phantom load_sample(const std::filesystem::path& dir, std::size_t index);
Phantom load_sample(const std::filesystem::path& dir, const DatasetInfo& info, Split split, std::size_t i);

}  // namespace mddose
