#pragma once

#include <span>
#include <vector>

#include "mddose/tape.hpp"

namespace mddose {

/// Per-stage structure features; empty means unconditional.
using StructureFeatures = std::vector<Var>;

/// Noise predictor eps_hat(x_t, t, c) used by the diffusion engine.
class NoiseModel {
 public:
  virtual ~NoiseModel() = default;

  /// Encodes the condition once; the result is reused for every time step.
  virtual StructureFeatures encode(Tape& tape, const Var& cond) = 0;

  /// x_t is [B, 1, H, W]; steps holds one index in [0, T) per sample.
  virtual Var predict(Tape& tape, const Var& x_t, std::span<const std::size_t> steps,
                      const StructureFeatures& features) = 0;
};

}  // namespace mddose
