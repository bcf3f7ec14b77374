#pragma once

#include <cmath>

namespace mddose::zoh {

/// Below this |dt * p| the closed forms switch to series expansions.
inline constexpr double kSeriesThreshold = 1e-6;

/// (exp(z) - 1) / z, continuous at z = 0.
inline double phi(double z) {
  if (std::abs(z) < kSeriesThreshold) return 1.0 + 0.5 * z;
  return std::expm1(z) / z;
}

/// (z exp(z) - exp(z) + 1) / z^2, i.e. d(phi)/dz; series near 0 where the
/// closed form cancels.
inline double psi(double z) {
  if (std::abs(z) < 0.1) {
    // sum_k z^k (k+1)/(k+2)!
    double acc = 0.0;
    double zk = 1.0;
    double fact = 2.0;
    for (int k = 0; k < 10; ++k) {
      acc += static_cast<double>(k + 1) / fact * zk;
      zk *= z;
      fact *= static_cast<double>(k + 3);
    }
    return acc;
  }
  return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

/// Discrete input gain for a diagonal entry: Qbar = gain(dt, p) * Q with
/// gain = (exp(dt p) - 1) / p = dt * phi(dt p).
inline double input_gain(double dt, double p) { return dt * phi(dt * p); }

/// d(gain)/d(dt) = exp(dt p).
inline double input_gain_ddt(double dt, double p) { return std::exp(dt * p); }

/// d(gain)/d(p) = dt^2 * psi(dt p).
inline double input_gain_dp(double dt, double p) { return dt * dt * psi(dt * p); }

}  // namespace mddose::zoh
