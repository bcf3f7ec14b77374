#pragma once

// Synthetic thoracic phantoms: a CT-like intensity channel, a PTV mask and
// three organ-at-risk masks (heart, lungs, spinal cord), plus an analytic
// dose that is 1 inside the PTV and decays as exp(-d / falloff) with the
// Euclidean distance d to the PTV, zero outside the body.

#include <cstdint>
#include <vector>

#include "mddose/tensor.hpp"

namespace mddose {

enum StructureChannel : std::size_t {
  kCtChannel = 0,
  kPtvChannel = 1,
  kHeartChannel = 2,
  kLungChannel = 3,
  kCordChannel = 4,
  kStructureChannels = 5,
};

struct PhantomSpec {
  std::uint64_t seed = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  /// Dose falloff length as a fraction of the image width.
  double falloff = 0.1;
  /// PTV semi-axis range as a fraction of the half-width.
  double ptv_min_axis = 0.10;
  double ptv_max_axis = 0.22;

  double falloff_pixels() const { return falloff * static_cast<double>(width); }
};

struct Phantom {
  Tensor structure;  // [5, H, W]
  Tensor dose;       // [1, H, W]
};

/// Deterministic in spec (including seed). Rejected geometries are redrawn
/// from a perturbed seed; throws std::runtime_error after 10 attempts.
Phantom generate_phantom(const PhantomSpec& spec);

/// Squared Euclidean distance from every pixel center to the nearest pixel
/// with mask > 0.5 (exact, separable transform). Returns +inf everywhere for
/// an empty mask.
std::vector<double> squared_distance_transform(const std::vector<double>& mask, std::size_t height, std::size_t width);

/// 1 inside the PTV, exp(-d / falloff_pixels) elsewhere inside the body,
/// 0 outside the body.
std::vector<double> analytic_dose(const std::vector<double>& ptv, const std::vector<double>& body, std::size_t height,
                                  std::size_t width, double falloff_pixels);

/// Body mask recovered from the structure image (CT channel > 0).
std::vector<double> body_mask(const Tensor& structure);
/// One channel of a [C, H, W] structure image as a flat mask.
std::vector<double> channel(const Tensor& structure, std::size_t c);

}  // namespace mddose
