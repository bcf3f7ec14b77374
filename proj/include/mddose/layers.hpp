#pragma once

#include <string>
#include <vector>

#include "mddose/rng.hpp"
#include "mddose/tape.hpp"

namespace mddose {

struct NamedParam {
  std::string name;
  Tensor* tensor;
};
using ParamList = std::vector<NamedParam>;

/// Trainable tensor filled uniformly in [-bound, bound].
Tensor make_param(Shape shape, double bound, Rng& rng);
Tensor make_param(Shape shape, double fill);

std::size_t count_parameters(const ParamList& params);

struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out], empty when bias-free

  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng);

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  Var operator()(Tape& tape, const Var& x);
  void collect(ParamList& out, const std::string& prefix);
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t features);

  Var operator()(Tape& tape, const Var& x);
  void collect(ParamList& out, const std::string& prefix);
};

}  // namespace mddose
