#include "mddose/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mddose/ops.hpp"

namespace mddose {

double DiffusionSchedule::drift_scale(std::size_t t) const { return std::sqrt(1.0 - beta.at(t)); }
double DiffusionSchedule::diffusion(std::size_t t) const { return std::sqrt(beta.at(t)); }

DiffusionSchedule make_schedule(std::size_t steps, double beta_min, double beta_max) {
  if (steps < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw std::invalid_argument("make_schedule: need 0 < beta_min <= beta_max < 1");
  }
  DiffusionSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
    s.beta[t] = beta_min + (beta_max - beta_min) * frac;
    prod *= 1.0 - s.beta[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

Tensor q_sample(const Tensor& x0, std::span<const std::size_t> steps, const Tensor& eps, const DiffusionSchedule& sched) {
  if (x0.shape() != eps.shape()) {
    throw std::invalid_argument("q_sample: noise " + shape_str(eps.shape()) + " vs data " + shape_str(x0.shape()));
  }
  const std::size_t nb = x0.rank() > 0 ? x0.dim(0) : 1;
  if (steps.size() != nb) throw std::invalid_argument("q_sample: need one step per sample");
  const std::size_t per = x0.size() / nb;
  Tensor out(x0.shape());
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t t = steps[b];
    if (t >= sched.steps) {
      throw std::out_of_range("q_sample: step " + std::to_string(t) + " outside [0, " + std::to_string(sched.steps) + ")");
    }
    const double signal = std::sqrt(sched.alpha_bar[t]);
    const double noise = std::sqrt(1.0 - sched.alpha_bar[t]);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = signal * x0[i] + noise * eps[i];
  }
  return out;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& sched) {
  const std::vector<std::size_t> steps(x0.rank() > 0 ? x0.dim(0) : 1, t);
  return q_sample(x0, steps, eps, sched);
}

LossTerms training_loss(NoiseModel& model, Tape& tape, const Tensor& x0, const Tensor& cond, Rng& rng,
                        const DiffusionSchedule& sched) {
  const std::size_t nb = x0.dim(0);
  LossTerms terms;
  terms.steps.resize(nb);
  for (auto& t : terms.steps) t = rng.uniform_index(0, sched.steps - 1);
  Tensor eps = rng.normal_like(x0.shape());
  const Tensor x_t = q_sample(x0, terms.steps, eps, sched);

  const StructureFeatures feats = model.encode(tape, tape.constant(cond));
  const Var eps_hat = model.predict(tape, tape.constant(x_t), terms.steps, feats);
  const Var target = tape.constant(std::move(eps));
  terms.loss = ops::scale(ops::sum_squared_error(eps_hat, target), 1.0 / static_cast<double>(nb));

  const double value = terms.loss.value().item();
  if (!std::isfinite(value)) {
    double pred_norm = 0.0;
    for (double v : eps_hat.value().data()) pred_norm += v * v;
    std::ostringstream os;
    os << "training_loss: non-finite loss; steps =";
    for (auto t : terms.steps) os << ' ' << t;
    os << "; ||eps_hat|| = " << std::sqrt(pred_norm);
    throw std::runtime_error(os.str());
  }
  return terms;
}

std::vector<Tensor> detach(const StructureFeatures& features) {
  std::vector<Tensor> out;
  out.reserve(features.size());
  for (const Var& f : features) out.push_back(Tensor(f.shape(), f.value().storage()));
  return out;
}

Tensor ancestral_update(const Tensor& x_t, const Tensor& eps_hat, std::size_t t, std::size_t t_prev, Rng& rng,
                        const DiffusionSchedule& sched, std::optional<ClipRange> clip) {
  if (t < 1 || t > sched.steps) {
    throw std::out_of_range("reverse_step: step " + std::to_string(t) + " outside [1, " + std::to_string(sched.steps) + "]");
  }
  if (t_prev >= t) throw std::invalid_argument("reverse_step: target step must precede the current step");
  if (eps_hat.shape() != x_t.shape()) {
    throw std::runtime_error("reverse_step: model output " + shape_str(eps_hat.shape()) + " vs state " +
                             shape_str(x_t.shape()));
  }

  const double ab_t = sched.alpha_bar[t - 1];
  const double ab_prev = t_prev == 0 ? 1.0 : sched.alpha_bar[t_prev - 1];
  const double alpha = ab_t / ab_prev;  // effective 1 - beta over the jump
  const double beta = 1.0 - alpha;
  const double sigma = t_prev == 0 ? 0.0 : std::sqrt(beta);

  Tensor out(x_t.shape());
  if (!clip) {
    const double coef = beta / std::sqrt(1.0 - ab_t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double z = sigma > 0.0 ? rng.normal() : 0.0;
      out[i] = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]) + sigma * z;
    }
  } else {
    const double sqrt_ab = std::sqrt(ab_t), sqrt_1m_ab = std::sqrt(1.0 - ab_t);
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
    const double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double x0 = std::clamp((x_t[i] - sqrt_1m_ab * eps_hat[i]) / sqrt_ab, clip->lo, clip->hi);
      const double z = sigma > 0.0 ? rng.normal() : 0.0;
      out[i] = c0 * x0 + ct * x_t[i] + sigma * z;
    }
  }
  if (!out.all_finite()) throw std::runtime_error("reverse_step: non-finite state at step " + std::to_string(t));
  return out;
}

Tensor reverse_step(NoiseModel& model, const Tensor& x_t, std::size_t t, const std::vector<Tensor>& features, Rng& rng,
                    const DiffusionSchedule& sched, std::size_t t_prev, std::optional<ClipRange> clip) {
  if (t < 1 || t > sched.steps) {
    throw std::out_of_range("reverse_step: step " + std::to_string(t) + " outside [1, " + std::to_string(sched.steps) + "]");
  }
  Tape tape;
  StructureFeatures feats;
  for (const Tensor& f : features) feats.push_back(tape.constant(f));
  const std::vector<std::size_t> steps(x_t.dim(0), t - 1);
  const Var eps_hat = model.predict(tape, tape.constant(x_t), steps, feats);
  return ancestral_update(x_t, eps_hat.value(), t, t_prev, rng, sched, clip);
}

Tensor reverse_step(NoiseModel& model, const Tensor& x_t, std::size_t t, const std::vector<Tensor>& features, Rng& rng,
                    const DiffusionSchedule& sched) {
  return reverse_step(model, x_t, t, features, rng, sched, t - 1);
}

Tensor sample(NoiseModel& model, const Tensor& cond, const DiffusionSchedule& sched, Rng& rng,
              const SampleOptions& options, std::vector<StepStats>* diagnostics) {
  if (cond.rank() != 4) throw std::invalid_argument("sample: condition must be (B, C, H, W), got " + shape_str(cond.shape()));
  if (options.stride < 1) throw std::invalid_argument("sample: stride must be >= 1");
  std::vector<Tensor> features;
  {
    Tape tape;
    features = detach(model.encode(tape, tape.constant(cond)));
  }
  Tensor x = rng.normal_like({cond.dim(0), 1, cond.dim(2), cond.dim(3)});
  std::size_t t = sched.steps;
  while (t > 0) {
    const std::size_t t_prev = t > options.stride ? t - options.stride : 0;
    x = reverse_step(model, x, t, features, rng, sched, t_prev, options.clip);
    if (diagnostics) {
      double m = 0.0, sq = 0.0;
      for (double v : x.data()) m += v;
      m /= static_cast<double>(x.size());
      for (double v : x.data()) sq += (v - m) * (v - m);
      diagnostics->push_back({t_prev, m, std::sqrt(sq / static_cast<double>(x.size()))});
    }
    t = t_prev;
  }
  return x;
}

}  // namespace mddose
