#include "mddose/grad_check.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace mddose {

namespace {

double evaluate(const std::function<Var(Tape&)>& f, std::size_t param_index, std::size_t entry) {
  Tape tape;
  double v;
  try {
    v = f(tape).value().item();
  } catch (const std::domain_error& e) {
    throw std::runtime_error("grad_check: non-finite value while perturbing parameter " + std::to_string(param_index) +
                             " entry " + std::to_string(entry) + ": " + e.what());
  }
  if (!std::isfinite(v)) {
    throw std::runtime_error("grad_check: non-finite loss while perturbing parameter " + std::to_string(param_index) +
                             " entry " + std::to_string(entry));
  }
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Var(Tape&)>& f, std::span<Tensor* const> params, double eps,
                           std::size_t max_entries_per_param) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3], got " + std::to_string(eps));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->requires_grad()) {
      throw std::invalid_argument("grad_check: parameter " + std::to_string(i) + " does not require grad");
    }
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Var loss = f(tape);
    if (!std::isfinite(loss.value().item())) throw std::runtime_error("grad_check: non-finite loss at the base point");
    tape.backward(loss);
    for (Tensor* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const std::size_t n = p.size();
    const std::size_t count = std::min(n, max_entries_per_param);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t j = count == n ? c : (c * n) / count;
      const double saved = p[j];
      p[j] = saved + eps;
      const double up = evaluate(f, pi, j);
      p[j] = saved - eps;
      const double down = evaluate(f, pi, j);
      p[j] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double rel = std::abs(analytic[pi][j] - numeric) / (std::abs(numeric) + 1e-8);
      ++report.entries_checked;
      if (rel > report.max_rel_error || report.entries_checked == 1) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_index = j;
      }
    }
  }
  return report;
}

}  // namespace mddose
