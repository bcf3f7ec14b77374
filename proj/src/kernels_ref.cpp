// Serial reference kernels: the most direct loop nests, used as the oracle
// for the OpenMP kernels.

#include <algorithm>
#include <cmath>
#include <vector>

#include "mddose/kernels.hpp"
#include "mddose/zoh.hpp"

namespace mddose::kernels::ref {

void linear_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::span<double> y, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = b.empty() ? 0.0 : b[j];
      for (std::size_t l = 0; l < k; ++l) acc += x[i * k + l] * w[j * k + l];
      y[i * n + j] = acc;
    }
  }
}

void linear_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> w,
                     std::span<double> dx, std::span<double> dw, std::span<double> db, std::size_t m,
                     std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dy[i * n + j];
      if (!db.empty()) db[j] += g;
      for (std::size_t l = 0; l < k; ++l) {
        if (!dx.empty()) dx[i * k + l] += g * w[j * k + l];
        if (!dw.empty()) dw[j * k + l] += g * x[i * k + l];
      }
    }
  }
}

void matmul_forward(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += a[i * k + l] * b[l * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_backward(std::span<const double> dc, std::span<const double> a, std::span<const double> b,
                     std::span<double> da, std::span<double> db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dc[i * n + j];
      for (std::size_t l = 0; l < k; ++l) {
        if (!da.empty()) da[i * k + l] += g * b[l * n + j];
        if (!db.empty()) db[l * n + j] += g * a[i * k + l];
      }
    }
  }
}

void conv_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                  std::span<double> y, std::size_t batch, std::size_t len, std::size_t ch, std::size_t ksize) {
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = b.empty() ? 0.0 : b[c];
        for (std::size_t j = 0; j < ksize; ++j) {
          // source token t - (ksize - 1) + j, zero-padded on the left
          if (t + j + 1 < ksize) continue;
          const std::size_t s = t + j + 1 - ksize;
          acc += w[c * ksize + j] * x[(bi * len + s) * ch + c];
        }
        y[(bi * len + t) * ch + c] = acc;
      }
    }
  }
}

void conv_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> w,
                   std::span<double> dx, std::span<double> dw, std::span<double> db, std::size_t batch,
                   std::size_t len, std::size_t ch, std::size_t ksize) {
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double g = dy[(bi * len + t) * ch + c];
        if (!db.empty()) db[c] += g;
        for (std::size_t j = 0; j < ksize; ++j) {
          if (t + j + 1 < ksize) continue;
          const std::size_t s = t + j + 1 - ksize;
          if (!dx.empty()) dx[(bi * len + s) * ch + c] += g * w[c * ksize + j];
          if (!dw.empty()) dw[c * ksize + j] += g * x[(bi * len + s) * ch + c];
        }
      }
    }
  }
}

void layer_norm_forward(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta,
                        std::span<double> y, std::span<double> mean, std::span<double> rstd, std::size_t rows,
                        std::size_t cols, double eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = (xr[c] - mu) * rs * gamma[c] + beta[c];
  }
}

void layer_norm_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> gamma,
                         std::span<const double> mean, std::span<const double> rstd, std::span<double> dx,
                         std::span<double> dgamma, std::span<double> dbeta, std::size_t rows, std::size_t cols) {
  const double inv_n = 1.0 / static_cast<double>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xhat = (x[r * cols + c] - mean[r]) * rstd[r];
      const double g = dy[r * cols + c] * gamma[c];
      sum_g += g;
      sum_gx += g * xhat;
      if (!dgamma.empty()) dgamma[c] += dy[r * cols + c] * xhat;
      if (!dbeta.empty()) dbeta[c] += dy[r * cols + c];
    }
    if (dx.empty()) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xhat = (x[r * cols + c] - mean[r]) * rstd[r];
      const double g = dy[r * cols + c] * gamma[c];
      dx[r * cols + c] += rstd[r] * (g - sum_g * inv_n - xhat * sum_gx * inv_n);
    }
  }
}

void scan_forward(std::span<const double> u, std::span<const double> dt, std::span<const double> p,
                  std::span<const double> bm, std::span<const double> cm, std::span<double> y,
                  std::span<double> states, const ScanDims& d) {
  const auto [nb, nl, nd, ns] = d;
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t ch = 0; ch < nd; ++ch) {
      for (std::size_t t = 0; t < nl; ++t) {
        const std::size_t tok = b * nl + t;
        const double delta = dt[tok * nd + ch];
        double out = 0.0;
        for (std::size_t n = 0; n < ns; ++n) {
          const double prev = t == 0 ? 0.0 : states[((tok - 1) * nd + ch) * ns + n];
          const double h = std::exp(delta * p[n]) * prev + zoh::input_gain(delta, p[n]) * bm[tok * ns + n] * u[tok * nd + ch];
          states[(tok * nd + ch) * ns + n] = h;
          out += cm[tok * ns + n] * h;
        }
        y[tok * nd + ch] = out;
      }
    }
  }
}

void scan_backward(std::span<const double> dy, std::span<const double> u, std::span<const double> dt,
                   std::span<const double> p, std::span<const double> bm, std::span<const double> cm,
                   std::span<const double> states, std::span<double> du, std::span<double> ddt,
                   std::span<double> dp, std::span<double> dbm, std::span<double> dcm, const ScanDims& d) {
  const auto [nb, nl, nd, ns] = d;
  std::vector<double> dh(ns);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t ch = 0; ch < nd; ++ch) {
      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t t = nl; t-- > 0;) {
        const std::size_t tok = b * nl + t;
        const double delta = dt[tok * nd + ch];
        const double g_y = dy[tok * nd + ch];
        const double ui = u[tok * nd + ch];
        for (std::size_t n = 0; n < ns; ++n) {
          const double h = states[(tok * nd + ch) * ns + n];
          const double prev = t == 0 ? 0.0 : states[((tok - 1) * nd + ch) * ns + n];
          const double a = std::exp(delta * p[n]);
          const double gain = zoh::input_gain(delta, p[n]);
          if (!dcm.empty()) dcm[tok * ns + n] += g_y * h;
          dh[n] += cm[tok * ns + n] * g_y;
          const double d_a = dh[n] * prev;
          const double d_gain = dh[n] * bm[tok * ns + n] * ui;
          if (!du.empty()) du[tok * nd + ch] += dh[n] * gain * bm[tok * ns + n];
          if (!dbm.empty()) dbm[tok * ns + n] += dh[n] * gain * ui;
          if (!ddt.empty()) ddt[tok * nd + ch] += d_a * p[n] * a + d_gain * zoh::input_gain_ddt(delta, p[n]);
          if (!dp.empty()) dp[n] += d_a * delta * a + d_gain * zoh::input_gain_dp(delta, p[n]);
          dh[n] *= a;
        }
      }
    }
  }
}

}  // namespace mddose::kernels::ref
