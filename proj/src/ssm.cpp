#include "mddose/ssm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mddose/ops.hpp"
#include "mddose/zoh.hpp"

namespace mddose::ssm {

bool DiscreteSsm::token_constant() const {
  for (std::size_t t = 1; t < length; ++t) {
    for (std::size_t n = 0; n < state; ++n) {
      if (p_bar[t * state + n] != p_bar[n] || q_bar[t * state + n] != q_bar[n]) return false;
    }
  }
  return true;
}

namespace {

std::vector<double> diagonal_of(const Tensor& p) {
  if (p.rank() == 1) return {p.data().begin(), p.data().end()};
  if (p.rank() == 2 && p.dim(0) == p.dim(1)) {
    const std::size_t n = p.dim(0);
    std::vector<double> diag(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j && p[i * n + j] != 0.0) {
          throw std::invalid_argument("discretize: state matrix must be diagonal (entry (" + std::to_string(i) + ", " +
                                      std::to_string(j) + ") is nonzero)");
        }
      }
      diag[i] = p[i * n + i];
    }
    return diag;
  }
  throw std::invalid_argument("discretize: state matrix must be [N] or [N, N], got " + shape_str(p.shape()));
}

}  // namespace

DiscreteSsm discretize(std::span<const double> delta, const Tensor& p, const Tensor& q) {
  const std::vector<double> diag = diagonal_of(p);
  const std::size_t n = diag.size();
  const std::size_t len = delta.size();
  if (len == 0) throw std::invalid_argument("discretize: no time scales given");
  const bool q_per_token = q.size() == len * n && q.rank() == 2;
  if (!q_per_token && q.size() != n) {
    throw std::invalid_argument("discretize: input matrix " + shape_str(q.shape()) + " does not match state size " +
                                std::to_string(n));
  }
  DiscreteSsm d{len, n, std::vector<double>(len * n), std::vector<double>(len * n)};
  for (std::size_t t = 0; t < len; ++t) {
    if (!(delta[t] > 0.0)) {
      throw std::invalid_argument("discretize: time scale at token " + std::to_string(t) + " is not positive");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double qi = q_per_token ? q[t * n + i] : q[i];
      d.p_bar[t * n + i] = std::exp(delta[t] * diag[i]);
      d.q_bar[t * n + i] = zoh::input_gain(delta[t], diag[i]) * qi;
    }
  }
  return d;
}

std::vector<double> scan(const DiscreteSsm& d, std::span<const double> r, std::span<const double> u) {
  const std::size_t len = u.size();
  const std::size_t n = d.state;
  if (len == 0) throw std::invalid_argument("ssm_scan: empty input sequence");
  if (d.length != len && d.length != 1) {
    throw std::invalid_argument("ssm_scan: parameters cover " + std::to_string(d.length) + " tokens, input has " +
                                std::to_string(len));
  }
  const bool r_per_token = r.size() == len * n && len > 1;
  if (!r_per_token && r.size() != n) {
    throw std::invalid_argument("ssm_scan: output projection of size " + std::to_string(r.size()) +
                                " does not match state size " + std::to_string(n));
  }
  std::vector<double> state(n, 0.0);
  std::vector<double> x(len);
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t row = d.length == 1 ? 0 : t;
    double out = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      state[i] = d.p_bar[row * n + i] * state[i] + d.q_bar[row * n + i] * u[t];
      out += (r_per_token ? r[t * n + i] : r[i]) * state[i];
    }
    x[t] = out;
  }
  return x;
}

std::vector<double> conv_kernel(const DiscreteSsm& d, std::span<const double> r, std::size_t n_taps) {
  if (!d.token_constant()) {
    throw std::invalid_argument(
        "ssm_conv_kernel: parameters vary across tokens; the convolution form needs time invariance, use ssm_scan");
  }
  const std::size_t n = d.state;
  if (r.size() != n) throw std::invalid_argument("ssm_conv_kernel: output projection does not match state size");
  std::vector<double> power(d.q_bar.begin(), d.q_bar.begin() + static_cast<std::ptrdiff_t>(n));  // Pbar^k Qbar
  std::vector<double> kernel(n_taps);
  for (std::size_t k = 0; k < n_taps; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += r[i] * power[i];
    kernel[k] = acc;
    for (std::size_t i = 0; i < n; ++i) power[i] *= d.p_bar[i];
  }
  return kernel;
}

std::vector<double> conv_apply(std::span<const double> kernel, std::span<const double> u) {
  if (kernel.size() != u.size()) {
    throw std::invalid_argument("ssm_conv_apply: kernel length " + std::to_string(kernel.size()) +
                                " != sequence length " + std::to_string(u.size()));
  }
  std::vector<double> x(u.size(), 0.0);
  for (std::size_t t = 0; t < u.size(); ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k <= t; ++k) acc += kernel[k] * u[t - k];
    x[t] = acc;
  }
  return x;
}

SsmParams::SsmParams(std::size_t channels, std::size_t state, Rng& rng)
    : log_decay(make_param({state}, 0.0)),
      input_proj(channels, state, false, rng),
      output_proj(channels, state, false, rng),
      delta_proj(channels, channels, true, rng) {
  for (std::size_t n = 0; n < state; ++n) log_decay[n] = std::log(static_cast<double>(n + 1));
  for (double& b : delta_proj.bias.data()) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    b = dt + std::log(-std::expm1(-dt));  // softplus^-1
  }
}

std::vector<double> SsmParams::state_matrix() const {
  std::vector<double> p(log_decay.size());
  for (std::size_t n = 0; n < p.size(); ++n) p[n] = -std::exp(log_decay[n]);
  return p;
}

void SsmParams::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".log_decay", &log_decay});
  input_proj.collect(out, prefix + ".input_proj");
  output_proj.collect(out, prefix + ".output_proj");
  delta_proj.collect(out, prefix + ".delta_proj");
}

Var selective_ssm(Tape& tape, const Var& u, SsmParams& params) {
  if (u.shape().size() != 3 || u.shape()[2] != params.channels()) {
    throw std::invalid_argument("selective_ssm: input " + shape_str(u.shape()) + " does not match " +
                                std::to_string(params.channels()) + " channels");
  }
  const Var dt = ops::softplus(params.delta_proj(tape, u));
  const Var q = params.input_proj(tape, u);
  const Var r = params.output_proj(tape, u);
  const Var p = ops::neg(ops::exp(tape.param(params.log_decay)));
  return ops::selective_scan(u, dt, p, q, r);
}

}  // namespace mddose::ssm
