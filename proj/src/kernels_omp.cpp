// OpenMP kernels. Work is split only over independent outputs; reductions
// that span threads go through per-item partial buffers summed in a fixed
// order, so results do not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mddose/kernels.hpp"
#include "mddose/zoh.hpp"

namespace mddose::kernels::omp {

namespace {

using Index = std::int64_t;

// Only fork when there is enough work to pay for it.
constexpr std::size_t kMinParallelWork = 1 << 14;

std::vector<double> transpose(std::span<const double> a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void linear_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                    std::span<double> y, std::size_t m, std::size_t k, std::size_t n) {
  const std::vector<double> wt = transpose(w, n, k);
  const bool par = m * n * k >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* yr = y.data() + i * n;
    if (b.empty()) {
      std::fill(yr, yr + n, 0.0);
    } else {
      std::copy(b.begin(), b.end(), yr);
    }
    const double* xr = x.data() + i * k;
    for (std::size_t l = 0; l < k; ++l) {
      if (xr[l] != 0.0) axpy(xr[l], wt.data() + l * n, yr, n);
    }
  }
}

void linear_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> w,
                     std::span<double> dx, std::span<double> dw, std::span<double> db, std::size_t m,
                     std::size_t k, std::size_t n) {
  const bool par = m * n * k >= kMinParallelWork;
  if (!dx.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
      const double* gr = dy.data() + i * n;
      double* dxr = dx.data() + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        if (gr[j] != 0.0) axpy(gr[j], w.data() + j * k, dxr, k);
      }
    }
  }
  if (!dw.empty() || !db.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (Index j = 0; j < static_cast<Index>(n); ++j) {
      double bias_acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double g = dy[i * n + j];
        bias_acc += g;
        if (!dw.empty() && g != 0.0) axpy(g, x.data() + i * k, dw.data() + j * k, k);
      }
      if (!db.empty()) db[j] += bias_acc;
    }
  }
}

void matmul_forward(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                    std::size_t k, std::size_t n) {
  const bool par = m * n * k >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* cr = c.data() + i * n;
    std::fill(cr, cr + n, 0.0);
    for (std::size_t l = 0; l < k; ++l) axpy(a[i * k + l], b.data() + l * n, cr, n);
  }
}

void matmul_backward(std::span<const double> dc, std::span<const double> a, std::span<const double> b,
                     std::span<double> da, std::span<double> db, std::size_t m, std::size_t k, std::size_t n) {
  const bool par = m * n * k >= kMinParallelWork;
  if (!da.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
      for (std::size_t l = 0; l < k; ++l) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += dc[i * n + j] * b[l * n + j];
        da[i * k + l] += acc;
      }
    }
  }
  if (!db.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (Index l = 0; l < static_cast<Index>(k); ++l) {
      for (std::size_t i = 0; i < m; ++i) axpy(a[i * k + l], dc.data() + i * n, db.data() + l * n, n);
    }
  }
}

void conv_forward(std::span<const double> x, std::span<const double> w, std::span<const double> b,
                  std::span<double> y, std::size_t batch, std::size_t len, std::size_t ch, std::size_t ksize) {
  const std::vector<double> wt = transpose(w, ch, ksize);  // [K, C]
  const Index tokens = static_cast<Index>(batch * len);
  const bool par = batch * len * ch * ksize >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index tok = 0; tok < tokens; ++tok) {
    const std::size_t t = static_cast<std::size_t>(tok) % len;
    double* yr = y.data() + tok * ch;
    if (b.empty()) {
      std::fill(yr, yr + ch, 0.0);
    } else {
      std::copy(b.begin(), b.end(), yr);
    }
    for (std::size_t j = 0; j < ksize; ++j) {
      if (t + j + 1 < ksize) continue;
      const std::size_t back = ksize - 1 - j;
      const double* xr = x.data() + (tok - static_cast<Index>(back)) * static_cast<Index>(ch);
      const double* wr = wt.data() + j * ch;
      for (std::size_t c = 0; c < ch; ++c) yr[c] += wr[c] * xr[c];
    }
  }
}

void conv_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> w,
                   std::span<double> dx, std::span<double> dw, std::span<double> db, std::size_t batch,
                   std::size_t len, std::size_t ch, std::size_t ksize) {
  const std::vector<double> wt = transpose(w, ch, ksize);
  const Index tokens = static_cast<Index>(batch * len);
  const bool par = batch * len * ch * ksize >= kMinParallelWork;
  if (!dx.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (Index tok = 0; tok < tokens; ++tok) {
      const std::size_t s = static_cast<std::size_t>(tok) % len;
      double* dxr = dx.data() + tok * ch;
      for (std::size_t j = 0; j < ksize; ++j) {
        const std::size_t back = ksize - 1 - j;  // output token s + back
        if (s + back >= len) continue;
        const double* gr = dy.data() + (tok + static_cast<Index>(back)) * static_cast<Index>(ch);
        const double* wr = wt.data() + j * ch;
        for (std::size_t c = 0; c < ch; ++c) dxr[c] += wr[c] * gr[c];
      }
    }
  }
  if (!dw.empty()) {
    std::vector<double> dwt(ksize * ch, 0.0);
#pragma omp parallel for schedule(static) if (par)
    for (Index j = 0; j < static_cast<Index>(ksize); ++j) {
      const std::size_t back = ksize - 1 - static_cast<std::size_t>(j);
      double* acc = dwt.data() + j * ch;
      for (std::size_t bi = 0; bi < batch; ++bi) {
        for (std::size_t t = back; t < len; ++t) {
          const double* gr = dy.data() + (bi * len + t) * ch;
          const double* xr = x.data() + (bi * len + t - back) * ch;
          for (std::size_t c = 0; c < ch; ++c) acc[c] += gr[c] * xr[c];
        }
      }
    }
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t j = 0; j < ksize; ++j) dw[c * ksize + j] += dwt[j * ch + c];
  }
  if (!db.empty()) {
    for (Index tok = 0; tok < tokens; ++tok) {
      const double* gr = dy.data() + tok * ch;
      for (std::size_t c = 0; c < ch; ++c) db[c] += gr[c];
    }
  }
}

void layer_norm_forward(std::span<const double> x, std::span<const double> gamma, std::span<const double> beta,
                        std::span<double> y, std::span<double> mean, std::span<double> rstd, std::size_t rows,
                        std::size_t cols, double eps) {
  const bool par = rows * cols >= kMinParallelWork;
  const double inv_n = 1.0 / static_cast<double>(cols);
#pragma omp parallel for schedule(static) if (par)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const double* xr = x.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu *= inv_n;
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var *= inv_n;
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    double* yr = y.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rs * gamma[c] + beta[c];
  }
}

void layer_norm_backward(std::span<const double> dy, std::span<const double> x, std::span<const double> gamma,
                         std::span<const double> mean, std::span<const double> rstd, std::span<double> dx,
                         std::span<double> dgamma, std::span<double> dbeta, std::size_t rows, std::size_t cols) {
  const bool par = rows * cols >= kMinParallelWork;
  const double inv_n = 1.0 / static_cast<double>(cols);
  if (!dx.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (Index r = 0; r < static_cast<Index>(rows); ++r) {
      const double* xr = x.data() + r * cols;
      const double* gr = dy.data() + r * cols;
      double sum_g = 0.0;
      double sum_gx = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double g = gr[c] * gamma[c];
        sum_g += g;
        sum_gx += g * (xr[c] - mean[r]) * rstd[r];
      }
      double* dxr = dx.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        const double xhat = (xr[c] - mean[r]) * rstd[r];
        dxr[c] += rstd[r] * (gr[c] * gamma[c] - sum_g * inv_n - xhat * sum_gx * inv_n);
      }
    }
  }
  if (!dgamma.empty() || !dbeta.empty()) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * cols;
      const double* gr = dy.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        if (!dgamma.empty()) dgamma[c] += gr[c] * (xr[c] - mean[r]) * rstd[r];
        if (!dbeta.empty()) dbeta[c] += gr[c];
      }
    }
  }
}

void scan_forward(std::span<const double> u, std::span<const double> dt, std::span<const double> p,
                  std::span<const double> bm, std::span<const double> cm, std::span<double> y,
                  std::span<double> states, const ScanDims& d) {
  const auto [nb, nl, nd, ns] = d;
  const Index lanes = static_cast<Index>(nb * nd);
  const bool par = nb * nl * nd * ns >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (Index lane = 0; lane < lanes; ++lane) {
    const std::size_t b = static_cast<std::size_t>(lane) / nd;
    const std::size_t ch = static_cast<std::size_t>(lane) % nd;
    for (std::size_t t = 0; t < nl; ++t) {
      const std::size_t tok = b * nl + t;
      const double delta = dt[tok * nd + ch];
      const double ui = u[tok * nd + ch];
      const double* br = bm.data() + tok * ns;
      const double* cr = cm.data() + tok * ns;
      double* h = states.data() + (tok * nd + ch) * ns;
      const double* prev = t == 0 ? nullptr : states.data() + ((tok - 1) * nd + ch) * ns;
      double out = 0.0;
      for (std::size_t n = 0; n < ns; ++n) {
        const double carry = prev ? std::exp(delta * p[n]) * prev[n] : 0.0;
        h[n] = carry + zoh::input_gain(delta, p[n]) * br[n] * ui;
        out += cr[n] * h[n];
      }
      y[tok * nd + ch] = out;
    }
  }
}

void scan_backward(std::span<const double> dy, std::span<const double> u, std::span<const double> dt,
                   std::span<const double> p, std::span<const double> bm, std::span<const double> cm,
                   std::span<const double> states, std::span<double> du, std::span<double> ddt,
                   std::span<double> dp, std::span<double> dbm, std::span<double> dcm, const ScanDims& d) {
  const auto [nb, nl, nd, ns] = d;
  const Index lanes = static_cast<Index>(nb * nd);
  const Index tokens = static_cast<Index>(nb * nl);
  const bool par = nb * nl * nd * ns >= kMinParallelWork;

  // dB contributions per (token, channel, state) and dP partials per lane,
  // reduced below in a fixed order.
  std::vector<double> db_part(dbm.empty() ? 0 : nb * nl * nd * ns);
  std::vector<double> dp_part(dp.empty() ? 0 : nb * nd * ns, 0.0);

#pragma omp parallel for schedule(static) if (par)
  for (Index lane = 0; lane < lanes; ++lane) {
    const std::size_t b = static_cast<std::size_t>(lane) / nd;
    const std::size_t ch = static_cast<std::size_t>(lane) % nd;
    std::vector<double> dh(ns, 0.0);
    double* dpl = dp_part.empty() ? nullptr : dp_part.data() + lane * ns;
    for (std::size_t t = nl; t-- > 0;) {
      const std::size_t tok = b * nl + t;
      const double delta = dt[tok * nd + ch];
      const double g_y = dy[tok * nd + ch];
      const double ui = u[tok * nd + ch];
      const double* br = bm.data() + tok * ns;
      const double* cr = cm.data() + tok * ns;
      const double* prev = t == 0 ? nullptr : states.data() + ((tok - 1) * nd + ch) * ns;
      double du_acc = 0.0;
      double ddt_acc = 0.0;
      for (std::size_t n = 0; n < ns; ++n) {
        const double a = std::exp(delta * p[n]);
        const double gain = zoh::input_gain(delta, p[n]);
        dh[n] += cr[n] * g_y;
        const double d_a = prev ? dh[n] * prev[n] : 0.0;
        const double d_gain = dh[n] * br[n] * ui;
        du_acc += dh[n] * gain * br[n];
        ddt_acc += d_a * p[n] * a + d_gain * a;
        if (!db_part.empty()) db_part[(tok * nd + ch) * ns + n] = dh[n] * gain * ui;
        if (dpl) dpl[n] += d_a * delta * a + d_gain * zoh::input_gain_dp(delta, p[n]);
        dh[n] *= a;
      }
      if (!du.empty()) du[tok * nd + ch] += du_acc;
      if (!ddt.empty()) ddt[tok * nd + ch] += ddt_acc;
    }
  }

  if (!dcm.empty() || !dbm.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (Index tok = 0; tok < tokens; ++tok) {
      for (std::size_t ch = 0; ch < nd; ++ch) {
        const std::size_t row = static_cast<std::size_t>(tok) * nd + ch;
        if (!dcm.empty()) axpy(dy[row], states.data() + row * ns, dcm.data() + tok * ns, ns);
        if (!dbm.empty()) {
          const double* src = db_part.data() + row * ns;
          double* dst = dbm.data() + tok * ns;
          for (std::size_t n = 0; n < ns; ++n) dst[n] += src[n];
        }
      }
    }
  }
  if (!dp.empty()) {
    for (Index lane = 0; lane < lanes; ++lane)
      for (std::size_t n = 0; n < ns; ++n) dp[n] += dp_part[lane * ns + n];
  }
}

}  // namespace mddose::kernels::omp
