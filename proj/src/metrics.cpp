#include "mddose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mddose/phantom.hpp"

namespace mddose {

namespace {

std::vector<double> masked_values(std::span<const double> dose, std::span<const double> mask, const char* who) {
  if (dose.size() != mask.size()) {
    throw std::invalid_argument(std::string(who) + ": dose has " + std::to_string(dose.size()) + " voxels, mask " +
                                std::to_string(mask.size()));
  }
  std::vector<double> v;
  for (std::size_t i = 0; i < dose.size(); ++i)
    if (mask[i] > 0.5) v.push_back(dose[i]);
  if (v.empty()) throw std::invalid_argument(std::string(who) + ": empty structure mask");
  return v;
}

// Inclusive linear-interpolation quantile of sorted data.
double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double percent_dose(const std::vector<double>& sorted, double percent) {
  return quantile_sorted(sorted, 1.0 - percent / 100.0);
}

}  // namespace

double dose_score(std::span<const double> pred, std::span<const double> gt, std::span<const double> body_mask) {
  if (pred.size() != gt.size() || pred.size() != body_mask.size()) {
    throw std::invalid_argument("dose_score: prediction, ground truth and mask sizes differ");
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (body_mask[i] <= 0.5) continue;
    acc += std::abs(pred[i] - gt[i]);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("dose_score: empty body mask");
  return acc / static_cast<double>(n);
}

double dose_at_volume(std::span<const double> dose, std::span<const double> mask, double percent) {
  if (!(percent > 0.0 && percent <= 100.0)) throw std::invalid_argument("dose_at_volume: percent must be in (0, 100]");
  auto v = masked_values(dose, mask, "dose_at_volume");
  std::sort(v.begin(), v.end());
  return percent_dose(v, percent);
}

DvhCurve dvh_curve(std::span<const double> dose, std::span<const double> mask, double max_dose) {
  auto v = masked_values(dose, mask, "dvh_curve");
  std::sort(v.begin(), v.end());
  if (max_dose < 0.0) max_dose = std::max(0.0, *std::max_element(dose.begin(), dose.end()));
  DvhCurve c;
  c.thresholds.resize(kDvhLevels);
  c.volume_fraction.resize(kDvhLevels);
  const double n = static_cast<double>(v.size());
  for (std::size_t k = 0; k < kDvhLevels; ++k) {
    // Endpoints exact: the last level is the maximum itself.
    const double d =
        k + 1 == kDvhLevels ? max_dose : max_dose * static_cast<double>(k) / static_cast<double>(kDvhLevels - 1);
    c.thresholds[k] = d;
    const auto first_at_least = std::lower_bound(v.begin(), v.end(), d);
    c.volume_fraction[k] = static_cast<double>(v.end() - first_at_least) / n;
  }
  return c;
}

std::vector<DvhMetric> dvh_metrics(std::span<const double> dose, std::span<const double> mask, StructureKind kind) {
  auto v = masked_values(dose, mask, "dvh_metrics");
  // Mean accumulated in voxel order, before sorting.
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  std::sort(v.begin(), v.end());
  if (kind == StructureKind::kTarget) {
    return {{"D1", percent_dose(v, 1.0)}, {"D95", percent_dose(v, 95.0)}, {"D99", percent_dose(v, 99.0)}};
  }
  return {{"mean", mean}, {"D1", percent_dose(v, 1.0)}};
}

namespace {

std::vector<double> structure_differences(std::span<const double> pred, std::span<const double> gt,
                                          const StructureMask& s) {
  const auto mp = dvh_metrics(pred, s.mask, s.kind);
  const auto mg = dvh_metrics(gt, s.mask, s.kind);
  std::vector<double> diffs;
  for (std::size_t i = 0; i < mp.size(); ++i) diffs.push_back(std::abs(mp[i].value - mg[i].value));
  return diffs;
}

}  // namespace

double dvh_score(std::span<const double> pred, std::span<const double> gt, const std::vector<StructureMask>& structures) {
  if (structures.empty()) throw std::invalid_argument("dvh_score: no structures given");
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& s : structures) {
    for (double d : structure_differences(pred, gt, s)) {
      acc += d;
      ++n;
    }
  }
  return acc / static_cast<double>(n);
}

double homogeneity_index(std::span<const double> dose, std::span<const double> ptv_mask) {
  auto v = masked_values(dose, ptv_mask, "homogeneity_index");
  std::sort(v.begin(), v.end());
  const double d50 = percent_dose(v, 50.0);
  if (d50 == 0.0) throw std::domain_error("homogeneity_index: D50 is zero, index undefined");
  return (percent_dose(v, 2.0) - percent_dose(v, 98.0)) / d50;
}

std::vector<StructureMask> standard_structures(const Tensor& structure) {
  std::vector<StructureMask> out;
  out.push_back({"PTV", channel(structure, kPtvChannel), StructureKind::kTarget});
  const std::pair<const char*, std::size_t> oars[] = {
      {"Heart", kHeartChannel}, {"Lung", kLungChannel}, {"SpinalCord", kCordChannel}};
  for (const auto& [name, ch] : oars) {
    auto m = channel(structure, ch);
    if (std::any_of(m.begin(), m.end(), [](double v) { return v > 0.5; })) {
      out.push_back({name, std::move(m), StructureKind::kOar});
    }
  }
  return out;
}

MetricReport evaluate_sample(std::span<const double> pred, std::span<const double> gt, const Tensor& structure) {
  MetricReport r;
  const auto body = body_mask(structure);
  const auto structures = standard_structures(structure);
  r.dose_score = dose_score(pred, gt, body);
  r.dvh_score = dvh_score(pred, gt, structures);
  try {
    r.hi = homogeneity_index(pred, structures.front().mask);
  } catch (const std::domain_error&) {
    r.hi = std::numeric_limits<double>::quiet_NaN();
  }
  for (const auto& s : structures) {
    const auto diffs = structure_differences(pred, gt, s);
    double m = 0.0;
    for (double d : diffs) m += d;
    r.per_structure.emplace_back(s.name, m / static_cast<double>(diffs.size()));
  }
  return r;
}

}  // namespace mddose
