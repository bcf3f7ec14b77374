#pragma once

// Differentiable primitives. Every primitive checks operand shapes and throws
// std::invalid_argument naming itself and the offending shapes. No implicit
// broadcasting: the only broadcast is add_per_sample, over token positions.

#include <vector>

#include "mddose/tape.hpp"

namespace mddose::ops {

inline constexpr double kLayerNormEps = 1e-5;

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Hadamard product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var neg(const Var& a);
/// Throws std::domain_error when the result overflows.
Var exp(const Var& a);
Var silu(const Var& a);
/// log(1 + e^x), evaluated without overflow for large |x|.
Var softplus(const Var& a);
Var square(const Var& a);

/// Sum of all elements, shape {1}.
Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of squared differences, shape {1}.
Var sum_squared_error(const Var& a, const Var& b);

/// x[..., K] w[N, K]^T (+ b[N]) -> [..., N].
Var linear(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& b);
/// Plain 2-D product a[M, K] b[K, N].
Var matmul(const Var& a, const Var& b);

/// Normalizes over the last axis, then applies gamma[C], beta[C].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = kLayerNormEps);

/// Depthwise causal convolution along tokens: x[B, L, C], w[C, K], b[C].
/// The sequence is zero-padded on the left; requires K <= L.
Var causal_conv1d(const Var& x, const Var& w, const Var& b);

Var reshape(const Var& x, Shape shape);
/// Output axis i is input axis perm[i].
Var permute(const Var& x, const std::vector<std::size_t>& perm);
/// Concatenates along the last axis; leading axes must match.
Var concat_last(const Var& a, const Var& b);
/// x[B, ..., C] + v[B, C], broadcast over the middle axes.
Var add_per_sample(const Var& x, const Var& v);

/// Selective state-space scan with zero-order-hold discretization.
///   u, dt: [B, L, D] (dt > 0); p: [N] diagonal state matrix;
///   bm, cm: [B, L, N] token-dependent input/output projections.
/// Per channel d: h_t = exp(dt p) h_{t-1} + (exp(dt p) - 1)/p * bm_t u_t,
/// y_t = <cm_t, h_t>, with h_{-1} = 0.
Var selective_scan(const Var& u, const Var& dt, const Var& p, const Var& bm, const Var& cm);

}  // namespace mddose::ops
