// Serial reference kernels vs their OpenMP counterparts at the shapes of the
// first UNet stage (batch 16, 16x16 tokens, 16 channels, expansion 2).

#include <benchmark/benchmark.h>

#include <vector>

#include "mddose/kernels.hpp"
#include "mddose/rng.hpp"

namespace k = mddose::kernels;

namespace {

constexpr std::size_t kBatch = 16, kLen = 256, kChannels = 16, kInner = 32, kState = 8, kKernel = 4;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  mddose::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

template <bool Omp>
void BM_LinearForward(benchmark::State& state) {
  const std::size_t m = kBatch * kLen, kk = kChannels, n = 2 * kInner;
  auto x = random_vec(m * kk, 1), w = random_vec(n * kk, 2), b = random_vec(n, 3);
  std::vector<double> y(m * n);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::linear_forward(x, w, b, y, m, kk, n);
    else k::ref::linear_forward(x, w, b, y, m, kk, n);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Omp>
void BM_LinearBackward(benchmark::State& state) {
  const std::size_t m = kBatch * kLen, kk = kChannels, n = 2 * kInner;
  auto x = random_vec(m * kk, 1), w = random_vec(n * kk, 2), dy = random_vec(m * n, 3);
  std::vector<double> dx(m * kk), dw(n * kk), db(n);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::linear_backward(dy, x, w, dx, dw, db, m, kk, n);
    else k::ref::linear_backward(dy, x, w, dx, dw, db, m, kk, n);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Omp>
void BM_ConvForward(benchmark::State& state) {
  auto x = random_vec(kBatch * kLen * kInner, 1), w = random_vec(kInner * kKernel, 2), b = random_vec(kInner, 3);
  std::vector<double> y(x.size());
  for (auto _ : state) {
    if constexpr (Omp) k::omp::conv_forward(x, w, b, y, kBatch, kLen, kInner, kKernel);
    else k::ref::conv_forward(x, w, b, y, kBatch, kLen, kInner, kKernel);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Omp>
void BM_LayerNormForward(benchmark::State& state) {
  const std::size_t rows = kBatch * kLen;
  auto x = random_vec(rows * kChannels, 1), g = random_vec(kChannels, 2), b = random_vec(kChannels, 3);
  std::vector<double> y(x.size()), mean(rows), rstd(rows);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::layer_norm_forward(x, g, b, y, mean, rstd, rows, kChannels, 1e-5);
    else k::ref::layer_norm_forward(x, g, b, y, mean, rstd, rows, kChannels, 1e-5);
    benchmark::DoNotOptimize(y.data());
  }
}

struct ScanData {
  k::ScanDims dims{kBatch, kLen, kInner, kState};
  std::vector<double> u = random_vec(kBatch * kLen * kInner, 1);
  std::vector<double> dt = random_vec(kBatch * kLen * kInner, 2, 1e-3, 1e-1);
  std::vector<double> p = random_vec(kState, 3, -8.0, -1.0);
  std::vector<double> bm = random_vec(kBatch * kLen * kState, 4);
  std::vector<double> cm = random_vec(kBatch * kLen * kState, 5);
  std::vector<double> y = std::vector<double>(kBatch * kLen * kInner);
  std::vector<double> states = std::vector<double>(kBatch * kLen * kInner * kState);
};

template <bool Omp>
void BM_ScanForward(benchmark::State& state) {
  ScanData d;
  for (auto _ : state) {
    if constexpr (Omp) k::omp::scan_forward(d.u, d.dt, d.p, d.bm, d.cm, d.y, d.states, d.dims);
    else k::ref::scan_forward(d.u, d.dt, d.p, d.bm, d.cm, d.y, d.states, d.dims);
    benchmark::DoNotOptimize(d.y.data());
  }
}

template <bool Omp>
void BM_ScanBackward(benchmark::State& state) {
  ScanData d;
  k::ref::scan_forward(d.u, d.dt, d.p, d.bm, d.cm, d.y, d.states, d.dims);
  auto dy = random_vec(d.y.size(), 6);
  std::vector<double> du(d.u.size()), ddt(d.dt.size()), dp(d.p.size()), dbm(d.bm.size()), dcm(d.cm.size());
  for (auto _ : state) {
    if constexpr (Omp) k::omp::scan_backward(dy, d.u, d.dt, d.p, d.bm, d.cm, d.states, du, ddt, dp, dbm, dcm, d.dims);
    else k::ref::scan_backward(dy, d.u, d.dt, d.p, d.bm, d.cm, d.states, du, ddt, dp, dbm, dcm, d.dims);
    benchmark::DoNotOptimize(du.data());
  }
}

}  // namespace

BENCHMARK(BM_LinearForward<false>)->Name("linear_forward/ref");
BENCHMARK(BM_LinearForward<true>)->Name("linear_forward/omp");
BENCHMARK(BM_LinearBackward<false>)->Name("linear_backward/ref");
BENCHMARK(BM_LinearBackward<true>)->Name("linear_backward/omp");
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/ref");
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/omp");
BENCHMARK(BM_LayerNormForward<false>)->Name("layer_norm_forward/ref");
BENCHMARK(BM_LayerNormForward<true>)->Name("layer_norm_forward/omp");
BENCHMARK(BM_ScanForward<false>)->Name("scan_forward/ref");
BENCHMARK(BM_ScanForward<true>)->Name("scan_forward/omp");
BENCHMARK(BM_ScanBackward<false>)->Name("scan_backward/ref");
BENCHMARK(BM_ScanBackward<true>)->Name("scan_backward/omp");

BENCHMARK_MAIN();
