#pragma once

// Dose-prediction metrics. Conventions:
//   Dose Score  mean |pred - gt| over body voxels.
//   D_x         minimum dose received by the hottest x% of a structure, i.e.
//               the (1 - x/100) quantile of its voxel doses with linear
//               interpolation between order statistics (inclusive).
//   DVH Score   mean |metric(pred) - metric(gt)| over all DVH metrics of all
//               structures; targets use {D1, D95, D99}, OARs {mean, D1}.
//   HI          (D2 - D98) / D50 over the PTV.

#include <span>
#include <string>
#include <vector>

#include "mddose/tensor.hpp"

namespace mddose {

inline constexpr std::size_t kDvhLevels = 256;

struct DvhCurve {
  std::vector<double> thresholds;       // ascending, from 0
  std::vector<double> volume_fraction;  // fraction of voxels with dose >= threshold
};

enum class StructureKind { kTarget, kOar };

struct StructureMask {
  std::string name;
  std::vector<double> mask;
  StructureKind kind;
};

struct DvhMetric {
  std::string name;
  double value;
};

struct MetricReport {
  double dose_score = 0.0;
  double dvh_score = 0.0;
  double hi = 0.0;
  /// Mean |metric difference| per structure, in structure order.
  std::vector<std::pair<std::string, double>> per_structure;
};

double dose_score(std::span<const double> pred, std::span<const double> gt, std::span<const double> body_mask);

/// D_x for x in percent (0, 100].
double dose_at_volume(std::span<const double> dose, std::span<const double> mask, double percent);

/// Thresholds are kDvhLevels uniform levels from 0 to max_dose; a negative
/// max_dose means the maximum of `dose` over the whole map.
DvhCurve dvh_curve(std::span<const double> dose, std::span<const double> mask, double max_dose = -1.0);

std::vector<DvhMetric> dvh_metrics(std::span<const double> dose, std::span<const double> mask, StructureKind kind);

double dvh_score(std::span<const double> pred, std::span<const double> gt, const std::vector<StructureMask>& structures);

double homogeneity_index(std::span<const double> dose, std::span<const double> ptv_mask);

/// PTV (target) and the three OARs of a structure image; empty OAR masks are
/// skipped.
std::vector<StructureMask> standard_structures(const Tensor& structure);

/// Dose Score, DVH Score and HI (of the prediction) for one sample. HI is
/// NaN when the prediction's PTV median dose is 0.
MetricReport evaluate_sample(std::span<const double> pred, std::span<const double> gt, const Tensor& structure);

}  // namespace mddose
