#pragma once

// Structured state-space core.
//
// Notation: u is the input sequence, y the hidden state and x the output,
//   y'(t) = P y(t) + Q u(t),   x(t) = R y(t),
// with P diagonal. Zero-order-hold discretization with time scale dt gives
//   Pbar = exp(dt P),  Qbar = (dt P)^-1 (exp(dt P) - I) dt Q,
// the recurrence y_t = Pbar y_{t-1} + Qbar u_t, x_t = R y_t, and, when the
// parameters do not vary over tokens, the equivalent causal convolution with
// kernel Hbar_k = R Pbar^k Qbar.

#include <cstddef>
#include <span>
#include <vector>

#include "mddose/layers.hpp"

namespace mddose::ssm {

/// Per-token discrete parameters, row-major [length, state].
struct DiscreteSsm {
  std::size_t length = 0;
  std::size_t state = 0;
  std::vector<double> p_bar;
  std::vector<double> q_bar;

  bool token_constant() const;
};

/// `delta` holds one positive time scale per token. `p` is the diagonal of
/// the state matrix, given either as a vector [N] or as an [N, N] matrix that
/// must be diagonal. `q` is [N] (shared by all tokens) or [length, N].
DiscreteSsm discretize(std::span<const double> delta, const Tensor& p, const Tensor& q);

/// Runs the recurrence from a zero state. `r` is [N] or [length, N]; `u`
/// has one value per token. A DiscreteSsm of length 1 is broadcast over u.
std::vector<double> scan(const DiscreteSsm& d, std::span<const double> r, std::span<const double> u);

/// Kernel (R Qbar, R Pbar Qbar, ..., R Pbar^{n-1} Qbar). Requires
/// token-constant parameters.
std::vector<double> conv_kernel(const DiscreteSsm& d, std::span<const double> r, std::size_t n);

/// Causal convolution x_t = sum_{k<=t} kernel_k u_{t-k}; lengths must match.
std::vector<double> conv_apply(std::span<const double> kernel, std::span<const double> u);

/// Parameters of one selective SSM layer acting on D channels with an
/// N-dimensional diagonal state.
struct SsmParams {
  Tensor log_decay;  // [N]; state matrix diagonal is -exp(log_decay)
  Linear input_proj;   // D -> N, yields the token-dependent Q
  Linear output_proj;  // D -> N, yields the token-dependent R
  Linear delta_proj;   // D -> D with bias; dt = softplus(.)

  SsmParams() = default;
  /// Initializes the state matrix to P_n = -(n + 1) and the time-scale bias
  /// so that softplus(bias) is log-uniform in [1e-3, 1e-1].
  SsmParams(std::size_t channels, std::size_t state, Rng& rng);

  std::size_t channels() const { return delta_proj.in_features(); }
  std::size_t state() const { return log_decay.size(); }
  /// Current diagonal of P.
  std::vector<double> state_matrix() const;
  void collect(ParamList& out, const std::string& prefix);
};

/// Input-dependent SSM over u[B, L, D]: per token dt = softplus(delta_proj u),
/// Q = input_proj u, R = output_proj u, discretized per token and scanned per
/// channel. Differentiable in u and every parameter.
Var selective_ssm(Tape& tape, const Var& u, SsmParams& params);

}  // namespace mddose::ssm
