#pragma once

// Raw compute kernels behind the differentiable primitives.
//
// Every kernel exists twice: `ref` is a plain serial loop nest kept as the
// testing reference, `omp` is the OpenMP version the primitives dispatch to.
// Both produce deterministic results; they may differ by summation order.
// Backward kernels accumulate (+=) into any non-empty output span.

#include <cstddef>
#include <span>

namespace mddose::kernels {

struct ScanDims {
  std::size_t batch;
  std::size_t length;
  std::size_t channels;
  std::size_t state;
};

#define MDDOSE_KERNEL_DECLS                                                                                     \
  /* y[M,N] = x[M,K] w[N,K]^T + b[N] (b may be empty) */                                                        \
  void linear_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,          \
                      std::span<double> y, std::size_t m, std::size_t k, std::size_t n);                         \
  void linear_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> w,        \
                       std::span<double> dx, std::span<double> dw, std::span<double> db, std::size_t m,          \
                       std::size_t k, std::size_t n);                                                            \
  /* c[M,N] = a[M,K] b[K,N] */                                                                                  \
  void matmul_forward(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, \
                      std::size_t k, std::size_t n);                                                             \
  void matmul_backward(std::span<const double> dc, std::span<const double> a, std::span<const double> b,        \
                       std::span<double> da, std::span<double> db, std::size_t m, std::size_t k, std::size_t n); \
  /* depthwise causal conv over tokens: x,y [B,L,C], w [C,K], b [C]; w[c,K-1] hits the current token */        \
  void conv_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,            \
                    std::span<double> y, std::size_t batch, std::size_t len, std::size_t ch, std::size_t ksize); \
  void conv_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> w,          \
                     std::span<double> dx, std::span<double> dw, std::span<double> db, std::size_t batch,        \
                     std::size_t len, std::size_t ch, std::size_t ksize);                                        \
  /* rows of length C normalized independently */                                                              \
  void layer_norm_forward(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta, \
                          std::span<double> y, std::span<double> mean, std::span<double> rstd, std::size_t rows, \
                          std::size_t cols, double eps);                                                         \
  void layer_norm_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> gamma, \
                           std::span<const double> mean, std::span<const double> rstd, std::span<double> dx,     \
                           std::span<double> dgamma, std::span<double> dbeta, std::size_t rows,                  \
                           std::size_t cols);                                                                    \
  /* selective scan: u,dt,y [B,L,D]; p [N]; bm,cm [B,L,N]; states [B,L,D,N] */                                 \
  void scan_forward(std::span<const double> u, std::span<const double> dt, std::span<const double> p,           \
                    std::span<const double> bm, std::span<const double> cm, std::span<double> y,                 \
                    std::span<double> states, const ScanDims& dims);                                             \
  void scan_backward(std::span<const double> dy, std::span<const double> u, std::span<const double> dt,         \
                     std::span<const double> p, std::span<const double> bm, std::span<const double> cm,          \
                     std::span<const double> states, std::span<double> du, std::span<double> ddt,                \
                     std::span<double> dp, std::span<double> dbm, std::span<double> dcm, const ScanDims& dims);

namespace ref {
MDDOSE_KERNEL_DECLS
}  // namespace ref

namespace omp {
MDDOSE_KERNEL_DECLS
}  // namespace omp

#undef MDDOSE_KERNEL_DECLS

}  // namespace mddose::kernels
