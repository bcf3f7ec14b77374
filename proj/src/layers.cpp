#include "mddose/layers.hpp"

#include <cmath>

#include "mddose/ops.hpp"

namespace mddose {

Tensor make_param(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

Tensor make_param(Shape shape, double fill) {
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor->size();
  return n;
}

Linear::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = make_param({out, in}, bound, rng);
  if (with_bias) bias = make_param({out}, 0.0);
}

Var Linear::operator()(Tape& tape, const Var& x) {
  if (bias.size() == 0) return ops::linear(x, tape.param(weight));
  return ops::linear(x, tape.param(weight), tape.param(bias));
}

void Linear::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", &weight});
  if (bias.size()) out.push_back({prefix + ".bias", &bias});
}

LayerNorm::LayerNorm(std::size_t features) : gamma(make_param({features}, 1.0)), beta(make_param({features}, 0.0)) {}

Var LayerNorm::operator()(Tape& tape, const Var& x) {
  return ops::layer_norm(x, tape.param(gamma), tape.param(beta));
}

void LayerNorm::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".gamma", &gamma});
  out.push_back({prefix + ".beta", &beta});
}

}  // namespace mddose
