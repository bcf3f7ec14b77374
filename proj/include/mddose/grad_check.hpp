#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>

#include "mddose/tape.hpp"

namespace mddose {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. For each checked scalar entry the error is
/// |analytic - numeric| / (|numeric| + 1e-8); the maximum is reported.
///
/// `f` records its graph on the tape it is given and returns the scalar loss;
/// it must be deterministic. Every tensor in `params` must require grad.
/// When a parameter has more than `max_entries_per_param` entries, an evenly
/// spaced subset is checked.
///
/// Throws std::invalid_argument for eps outside [1e-6, 1e-3] and
/// std::runtime_error naming the parameter index on a non-finite evaluation.
GradCheckReport grad_check(const std::function<Var(Tape&)>& f, std::span<Tensor* const> params, double eps,
                           std::size_t max_entries_per_param = std::numeric_limits<std::size_t>::max());

}  // namespace mddose
