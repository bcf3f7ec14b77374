#include "mddose/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "mddose/rng.hpp"

namespace mddose {

namespace {

struct Ellipse {
  double cx, cy, ax, ay;  // normalized coordinates in [-1, 1], y pointing down
  bool contains(double x, double y) const {
    const double dx = (x - cx) / ax, dy = (y - cy) / ay;
    return dx * dx + dy * dy <= 1.0;
  }
};

std::vector<double> rasterize(const Ellipse& e, std::size_t h, std::size_t w) {
  std::vector<double> m(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(h) * 2.0 - 1.0;
    for (std::size_t j = 0; j < w; ++j) {
      const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(w) * 2.0 - 1.0;
      if (e.contains(x, y)) m[i * w + j] = 1.0;
    }
  }
  return m;
}

bool overlaps(const std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] > 0.5 && b[i] > 0.5) return true;
  return false;
}

bool inside(const std::vector<double>& inner, const std::vector<double>& outer) {
  for (std::size_t i = 0; i < inner.size(); ++i)
    if (inner[i] > 0.5 && outer[i] < 0.5) return false;
  return true;
}

bool empty(const std::vector<double>& m) {
  return std::none_of(m.begin(), m.end(), [](double v) { return v > 0.5; });
}

// Separable Gaussian blur with clamped borders.
std::vector<double> blur(const std::vector<double>& img, std::size_t h, std::size_t w, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= norm;
  auto at = [](int v, std::size_t n) { return static_cast<std::size_t>(std::clamp(v, 0, static_cast<int>(n) - 1)); };
  std::vector<double> tmp(h * w), out(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) acc += k[d + radius] * img[i * w + at(static_cast<int>(j) + d, w)];
      tmp[i * w + j] = acc;
    }
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) acc += k[d + radius] * tmp[at(static_cast<int>(i) + d, h) * w + j];
      out[i * w + j] = acc;
    }
  return out;
}

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) on one line.
void distance_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q) {
    if (std::isfinite(f[q])) {
      first = q;
      break;
    }
  }
  if (first == n) {
    std::fill(d, d + n, inf);
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double qd = static_cast<double>(q);
    double s;
    while (true) {
      const double vk = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const double diff = qd - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

std::uint64_t perturbed_seed(std::uint64_t seed, int attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(attempt), 0x9e3779b9u};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

std::vector<double> squared_distance_transform(const std::vector<double>& mask, std::size_t height, std::size_t width) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(height * width);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = mask[i] > 0.5 ? 0.0 : inf;
  std::vector<std::size_t> v;
  std::vector<double> z;
  std::vector<double> line(std::max(height, width)), out(std::max(height, width));
  for (std::size_t j = 0; j < width; ++j) {
    for (std::size_t i = 0; i < height; ++i) line[i] = grid[i * width + j];
    distance_1d(line.data(), out.data(), height, v, z);
    for (std::size_t i = 0; i < height; ++i) grid[i * width + j] = out[i];
  }
  for (std::size_t i = 0; i < height; ++i) {
    distance_1d(grid.data() + i * width, out.data(), width, v, z);
    std::copy_n(out.data(), width, grid.data() + i * width);
  }
  return grid;
}

std::vector<double> analytic_dose(const std::vector<double>& ptv, const std::vector<double>& body, std::size_t height,
                                  std::size_t width, double falloff_pixels) {
  const std::vector<double> d2 = squared_distance_transform(ptv, height, width);
  std::vector<double> dose(height * width, 0.0);
  for (std::size_t i = 0; i < dose.size(); ++i) {
    if (body[i] < 0.5) continue;
    dose[i] = ptv[i] > 0.5 ? 1.0 : std::exp(-std::sqrt(d2[i]) / falloff_pixels);
  }
  return dose;
}

std::vector<double> channel(const Tensor& structure, std::size_t c) {
  const std::size_t plane = structure.dim(1) * structure.dim(2);
  const auto begin = structure.data().begin() + static_cast<std::ptrdiff_t>(c * plane);
  return {begin, begin + static_cast<std::ptrdiff_t>(plane)};
}

std::vector<double> body_mask(const Tensor& structure) {
  std::vector<double> m = channel(structure, kCtChannel);
  for (double& v : m) v = v > 0.0 ? 1.0 : 0.0;
  return m;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  const std::size_t h = spec.height, w = spec.width;
  if (h < 32 || w < 32) throw std::invalid_argument("generate_phantom: grid must be at least 32x32");
  if (!(spec.falloff > 0.0)) throw std::invalid_argument("generate_phantom: falloff must be positive");

  for (int attempt = 0; attempt < 10; ++attempt) {
    Rng rng(attempt == 0 ? spec.seed : perturbed_seed(spec.seed, attempt));
    auto jit = [&rng](double amp) { return rng.uniform(-amp, amp); };

    const Ellipse body{jit(0.03), 0.05 + jit(0.03), rng.uniform(0.80, 0.90), rng.uniform(0.58, 0.68)};
    const double lung_y = body.cy - 0.08 + jit(0.03);
    const Ellipse lung_l{body.cx - 0.40 + jit(0.03), lung_y, rng.uniform(0.22, 0.28), rng.uniform(0.32, 0.40)};
    const Ellipse lung_r{body.cx + 0.40 + jit(0.03), lung_y, rng.uniform(0.22, 0.28), rng.uniform(0.32, 0.40)};
    const Ellipse heart{body.cx + 0.06 + jit(0.04), body.cy + 0.10 + jit(0.03), rng.uniform(0.17, 0.23),
                        rng.uniform(0.14, 0.19)};
    const double cord_r = rng.uniform(0.05, 0.07);
    const Ellipse cord{body.cx + jit(0.02), body.cy + body.ay - 0.16 + jit(0.02), cord_r, cord_r};
    const Ellipse ptv{rng.uniform(-0.45, 0.45) + body.cx, rng.uniform(-0.30, 0.25) + body.cy,
                      rng.uniform(spec.ptv_min_axis, spec.ptv_max_axis), rng.uniform(spec.ptv_min_axis, spec.ptv_max_axis)};

    const auto body_m = rasterize(body, h, w);
    const auto heart_m = rasterize(heart, h, w);
    auto lung_m = rasterize(lung_l, h, w);
    const auto lung_r_m = rasterize(lung_r, h, w);
    for (std::size_t i = 0; i < lung_m.size(); ++i) {
      lung_m[i] = std::max(lung_m[i], lung_r_m[i]);
      if (heart_m[i] > 0.5) lung_m[i] = 0.0;
    }
    const auto cord_m = rasterize(cord, h, w);
    const auto ptv_m = rasterize(ptv, h, w);

    if (empty(ptv_m) || empty(heart_m) || empty(lung_m) || empty(cord_m)) continue;
    if (!inside(ptv_m, body_m) || !inside(heart_m, body_m) || !inside(lung_m, body_m) || !inside(cord_m, body_m)) continue;
    if (overlaps(ptv_m, cord_m)) continue;
    if (static_cast<int>(overlaps(ptv_m, heart_m)) + static_cast<int>(overlaps(ptv_m, lung_m)) > 1) continue;

    // CT-like density: soft tissue, low-density lungs, denser heart and cord.
    std::vector<double> density(h * w, 0.0);
    for (std::size_t i = 0; i < density.size(); ++i) {
      if (body_m[i] < 0.5) continue;
      double d = 0.55;
      if (lung_m[i] > 0.5) d = 0.12;
      if (heart_m[i] > 0.5) d = 0.68;
      if (cord_m[i] > 0.5) d = 0.95;
      density[i] = d;
    }
    density = blur(density, h, w, 0.8);
    for (std::size_t i = 0; i < density.size(); ++i) {
      density[i] = body_m[i] > 0.5 ? std::clamp(density[i], 0.05, 1.0) : 0.0;
    }

    Phantom out{Tensor({kStructureChannels, h, w}), Tensor({1, h, w})};
    const std::size_t plane = h * w;
    const std::vector<double>* channels[kStructureChannels] = {&density, &ptv_m, &heart_m, &lung_m, &cord_m};
    for (std::size_t c = 0; c < kStructureChannels; ++c) {
      std::copy(channels[c]->begin(), channels[c]->end(), out.structure.data().begin() + static_cast<std::ptrdiff_t>(c * plane));
    }
    const auto dose = analytic_dose(ptv_m, body_m, h, w, spec.falloff_pixels());
    std::copy(dose.begin(), dose.end(), out.dose.data().begin());
    return out;
  }
  throw std::runtime_error("generate_phantom: no valid geometry for seed " + std::to_string(spec.seed) +
                           " after 10 attempts");
}

}  // namespace mddose
