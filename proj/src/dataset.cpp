#include "mddose/dataset.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"
#include "json.hpp"

namespace mddose {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;
using detail::put;
using detail::take;

namespace {

constexpr char kMagic[4] = {'M', 'D', 'D', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

std::string sample_file(std::size_t index) {
  std::ostringstream os;
  os << "samples/" << std::setw(4) << std::setfill('0') << index << ".bin";
  return os.str();
}

json spec_to_json(const PhantomSpec& s) {
  return {{"height", s.height}, {"width", s.width}, {"falloff", s.falloff},
          {"ptv_min_axis", s.ptv_min_axis}, {"ptv_max_axis", s.ptv_max_axis}};
}

PhantomSpec spec_from_json(const json& j) {
  PhantomSpec s;
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.falloff = j.at("falloff").get<double>();
  s.ptv_min_axis = j.at("ptv_min_axis").get<double>();
  s.ptv_max_axis = j.at("ptv_max_axis").get<double>();
  return s;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
}

void write_arrays(const fs::path& path, const std::vector<std::pair<std::string, const Tensor*>>& arrays) {
  std::string buf(kMagic, 4);
  put<std::uint32_t>(buf, kFormatVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) put<std::uint64_t>(buf, d);
    buf.append(reinterpret_cast<const char*>(t->data().data()), t->size() * sizeof(double));
  }
  detail::write_file_atomic(path, buf);
}

std::vector<std::pair<std::string, Tensor>> read_arrays(const fs::path& path) {
  const std::string buf = detail::read_file(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw std::runtime_error(path.string() + ": not an array file");
  }
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(buf, pos);
  if (version != kFormatVersion) throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));
  const auto count = take<std::uint32_t>(buf, pos);
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::uint32_t a = 0; a < count; ++a) {
    const auto len = take<std::uint32_t>(buf, pos);
    if (pos + len > buf.size()) throw std::runtime_error(path.string() + ": truncated name");
    std::string name = buf.substr(pos, len);
    pos += len;
    const auto rank = take<std::uint32_t>(buf, pos);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(take<std::uint64_t>(buf, pos));
    const std::size_t n = numel(shape);
    if (pos + n * sizeof(double) > buf.size()) throw std::runtime_error(path.string() + ": truncated data for " + name);
    std::vector<double> data(n);
    std::memcpy(data.data(), buf.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

std::uint32_t file_crc32(const fs::path& path) {
  const std::string buf = detail::read_file(path);
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
}

DatasetInfo build_dataset(const fs::path& dir, const SplitCounts& counts, std::uint64_t base_seed,
                          const PhantomSpec& spec_template, bool overwrite) {
  if (counts.train < 1 || counts.val < 1 || counts.test < 1) {
    throw std::invalid_argument("build_dataset: every split needs at least one sample");
  }
  if (fs::exists(dir) && !overwrite) {
    throw std::runtime_error("build_dataset: " + dir.string() + " already exists (pass --force to overwrite)");
  }
  fs::path staging = dir;
  staging += ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging / "samples");

  DatasetInfo info;
  info.spec = spec_template;
  info.base_seed = base_seed;
  const std::size_t sizes[3] = {counts.train, counts.val, counts.test};
  std::size_t index = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < sizes[s]; ++i, ++index) {
      PhantomSpec spec = spec_template;
      spec.seed = base_seed + s * kSplitSeedStride + i;
      const Phantom ph = generate_phantom(spec);
      const std::string file = sample_file(index);
      write_arrays(staging / file, {{"structure", &ph.structure}, {"dose", &ph.dose}});
      info.splits[s].push_back({index, file, spec.seed, file_crc32(staging / file)});
    }
  }

  json manifest;
  manifest["format"] = "mddose-phantoms";
  manifest["version"] = info.version;
  manifest["base_seed"] = base_seed;
  manifest["spec"] = spec_to_json(spec_template);
  for (std::size_t s = 0; s < 3; ++s) {
    json list = json::array();
    for (const auto& e : info.splits[s]) {
      list.push_back({{"index", e.index}, {"file", e.file}, {"seed", e.seed}, {"crc32", e.crc32}});
    }
    manifest["splits"][split_name(static_cast<Split>(s))] = list;
  }
  detail::write_file_atomic(staging / "manifest.json", manifest.dump(2) + "\n");

  if (fs::exists(dir)) fs::remove_all(dir);
  fs::rename(staging, dir);
  return info;
}

DatasetInfo read_manifest(const fs::path& dir) {
  const json j = json::parse(detail::read_file(dir / "manifest.json"));
  if (j.value("format", "") != "mddose-phantoms") throw std::runtime_error(dir.string() + ": not a phantom dataset");
  DatasetInfo info;
  info.version = j.at("version").get<int>();
  if (info.version != 1) throw std::runtime_error(dir.string() + ": unsupported dataset version");
  info.base_seed = j.at("base_seed").get<std::uint64_t>();
  info.spec = spec_from_json(j.at("spec"));
  for (std::size_t s = 0; s < 3; ++s) {
    for (const auto& e : j.at("splits").at(split_name(static_cast<Split>(s)))) {
      info.splits[s].push_back({e.at("index").get<std::size_t>(), e.at("file").get<std::string>(),
                                e.at("seed").get<std::uint64_t>(), e.at("crc32").get<std::uint32_t>()});
    }
  }
  return info;
}

namespace {

Phantom load_entry(const fs::path& dir, const SampleEntry& e) {
  const fs::path path = dir / e.file;
  const std::uint32_t crc = file_crc32(path);
  if (crc != e.crc32) {
    throw std::runtime_error("load_sample: checksum mismatch for " + path.string() + " (corrupted sample " +
                             std::to_string(e.index) + ")");
  }
  auto arrays = read_arrays(path);
  Phantom out;
  bool has_structure = false, has_dose = false;
  for (auto& [name, t] : arrays) {
    if (name == "structure") {
      out.structure = std::move(t);
      has_structure = true;
    } else if (name == "dose") {
      out.dose = std::move(t);
      has_dose = true;
    }
  }
  if (!has_structure || !has_dose) throw std::runtime_error("load_sample: " + path.string() + " lacks structure/dose arrays");
  return out;
}

}  // namespace

Phantom load_sample(const fs::path& dir, std::size_t index) {
  const DatasetInfo info = read_manifest(dir);
  for (const auto& split : info.splits)
    for (const auto& e : split)
      if (e.index == index) return load_entry(dir, e);
  throw std::out_of_range("load_sample: index " + std::to_string(index) + " not in dataset (" +
                          std::to_string(info.total()) + " samples)");
}

Phantom load_sample(const fs::path& dir, const DatasetInfo& info, Split split, std::size_t i) {
  const auto& entries = info.entries(split);
  if (i >= entries.size()) {
    throw std::out_of_range("load_sample: index " + std::to_string(i) + " outside " + split_name(split) + " split of " +
                            std::to_string(entries.size()));
  }
  return load_entry(dir, entries[i]);
}

}  // namespace mddose
