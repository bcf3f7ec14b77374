#include "mddose/checkpoint.hpp"

#include <stdexcept>

#include "binary_io.hpp"

namespace mddose {

using detail::put;
using detail::put_string;
using detail::take;
using detail::take_string;

namespace {

constexpr char kMagic[4] = {'M', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_tensor(std::string& buf, const Tensor& t) {
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(buf, d);
  for (double v : t.data()) put<double>(buf, v);
}

Tensor take_tensor(const std::string& buf, std::size_t& pos) {
  const auto rank = take<std::uint32_t>(buf, pos);
  Shape shape(rank);
  for (auto& d : shape) d = take<std::uint64_t>(buf, pos);
  const std::size_t n = numel(shape);
  if (pos + n * sizeof(double) > buf.size()) throw std::runtime_error("checkpoint: truncated tensor");
  std::vector<double> data(n);
  for (auto& v : data) v = take<double>(buf, pos);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string buf(kMagic, 4);
  put<std::uint32_t>(buf, kVersion);
  put_string(buf, ckpt.config_json);
  put<std::uint64_t>(buf, ckpt.epoch);
  put<std::uint64_t>(buf, ckpt.global_step);
  put_string(buf, ckpt.rng_state);
  put<std::uint64_t>(buf, ckpt.adam_step);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& e : ckpt.params) {
    put_string(buf, e.name);
    put_tensor(buf, e.value);
    put_tensor(buf, e.adam_m);
    put_tensor(buf, e.adam_v);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::write_file_atomic(path, buf);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = detail::read_file(path);
  if (buf.size() < 8 || buf.compare(0, 4, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: " + path.string() + " is not a checkpoint file");
  }
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(buf, pos);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_json = take_string(buf, pos);
  ckpt.epoch = take<std::uint64_t>(buf, pos);
  ckpt.global_step = take<std::uint64_t>(buf, pos);
  ckpt.rng_state = take_string(buf, pos);
  ckpt.adam_step = take<std::uint64_t>(buf, pos);
  const auto count = take<std::uint32_t>(buf, pos);
  ckpt.params.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = take_string(buf, pos);
    e.value = take_tensor(buf, pos);
    e.adam_m = take_tensor(buf, pos);
    e.adam_v = take_tensor(buf, pos);
    ckpt.params.push_back(std::move(e));
  }
  if (pos != buf.size()) throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
  return ckpt;
}

}  // namespace mddose
