#pragma once

#include <cstdint>
#include <vector>

#include "mddose/ops.hpp"
#include "mddose/rng.hpp"
#include "mddose/tape.hpp"

namespace testutil {

using mddose::Rng;
using mddose::Shape;
using mddose::Tape;
using mddose::Tensor;
using mddose::Var;

inline Tensor uniform(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor trainable(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = uniform(shape, rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

/// sum(w * v) with fixed random weights, so every output entry carries a
/// distinct cotangent.
inline Var weighted_sum(Tape& tape, const Var& v, std::uint64_t seed) {
  Rng rng(seed);
  return mddose::ops::sum(mddose::ops::mul(v, tape.constant(uniform(v.shape(), rng))));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
