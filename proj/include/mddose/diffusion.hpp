#pragma once

// Variance-preserving score-based diffusion with an epsilon-parameterized
// score, score(x_t, t) = -eps_hat / sqrt(1 - alpha_bar_t).
//
// Step indices: schedule arrays, q_sample and the model use t in [0, T);
// reverse_step takes the 1-based step t in [1, T] and moves x_t to x_{t-1}.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mddose/noise_model.hpp"
#include "mddose/rng.hpp"

namespace mddose {

struct DiffusionSchedule {
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  /// Forward SDE drift and diffusion coefficients of the discrete chain:
  /// x_t = sqrt(1 - beta) x_{t-1} + sqrt(beta) z.
  double drift_scale(std::size_t t) const;
  double diffusion(std::size_t t) const;
  double snr(std::size_t t) const { return alpha_bar[t] / (1.0 - alpha_bar[t]); }
};

/// Linear beta ramp from beta_min to beta_max (beta_min for T = 1).
DiffusionSchedule make_schedule(std::size_t steps, double beta_min, double beta_max);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, one step per
/// sample along the leading axis of x0.
Tensor q_sample(const Tensor& x0, std::span<const std::size_t> steps, const Tensor& eps, const DiffusionSchedule& sched);
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& sched);

struct LossTerms {
  Var loss;                         // scalar on the caller's tape
  std::vector<std::size_t> steps;   // drawn time steps
};

/// Simplified denoising objective with unit weighting:
/// (1/B) sum_b ||eps_b - eps_hat(x_t, t_b, c_b)||^2 (sum over pixels).
/// Throws std::runtime_error with diagnostics if the loss is not finite.
LossTerms training_loss(NoiseModel& model, Tape& tape, const Tensor& x0, const Tensor& cond, Rng& rng,
                        const DiffusionSchedule& sched);

/// Range for the denoised estimate x0_hat = (x_t - sqrt(1 - alpha_bar_t)
/// eps_hat) / sqrt(alpha_bar_t) before it enters the posterior mean.
struct ClipRange {
  double lo;
  double hi;
};

/// Ancestral update from step `t` (1-based) to `t_prev` (< t) given the
/// predicted noise. Noise variance is 1 - alpha_bar_t / alpha_bar_{t_prev};
/// no noise is injected when t_prev = 0. Without `clip` this is
/// (x_t - beta / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha) + sigma z; with
/// it, the same posterior mean is formed from the clipped x0_hat.
Tensor ancestral_update(const Tensor& x_t, const Tensor& eps_hat, std::size_t t, std::size_t t_prev, Rng& rng,
                        const DiffusionSchedule& sched, std::optional<ClipRange> clip = std::nullopt);

/// One reverse step of the model: predicts eps_hat with precomputed structure
/// features and applies ancestral_update.
Tensor reverse_step(NoiseModel& model, const Tensor& x_t, std::size_t t, const std::vector<Tensor>& features, Rng& rng,
                    const DiffusionSchedule& sched, std::size_t t_prev, std::optional<ClipRange> clip = std::nullopt);
Tensor reverse_step(NoiseModel& model, const Tensor& x_t, std::size_t t, const std::vector<Tensor>& features, Rng& rng,
                    const DiffusionSchedule& sched);

struct SampleOptions {
  /// Evaluate every stride-th step (1 = full chain).
  std::size_t stride = 1;
  std::optional<ClipRange> clip;
};

struct StepStats {
  std::size_t step;
  double mean;
  double std;
};

/// Draws x_T ~ N(0, I) shaped like cond's spatial extent, encodes cond once,
/// and iterates reverse steps down to x_0. Returns [B, 1, H, W].
Tensor sample(NoiseModel& model, const Tensor& cond, const DiffusionSchedule& sched, Rng& rng,
              const SampleOptions& options = {}, std::vector<StepStats>* diagnostics = nullptr);

/// Values of features computed on `tape`, for reuse across reverse steps.
std::vector<Tensor> detach(const StructureFeatures& features);

}  // namespace mddose
