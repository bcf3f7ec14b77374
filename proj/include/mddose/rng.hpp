#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "mddose/tensor.hpp"

namespace mddose {

/// Seeded random source. Distributions are constructed per call so the
/// engine state alone (see state()/restore()) determines all future draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal();
  void fill_normal(Tensor& t);
  Tensor normal_like(const Shape& shape);
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi].
  std::size_t uniform_index(std::size_t lo, std::size_t hi);
  std::mt19937_64& engine() noexcept { return engine_; }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace mddose
