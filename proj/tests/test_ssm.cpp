#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "mddose/grad_check.hpp"
#include "mddose/ssm.hpp"
#include "mddose/zoh.hpp"
#include "test_util.hpp"

using namespace mddose;
using namespace mddose::ssm;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("discretization closed forms") {
  SUBCASE("dt = ln 2, P = 1 gives Pbar = 2 and Qbar = Q") {
    const std::vector<double> dt{std::log(2.0)};
    const DiscreteSsm d = discretize(dt, Tensor({1}, 1.0), Tensor({1}, 0.7));
    CHECK(d.p_bar[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(d.q_bar[0] == doctest::Approx(0.7).epsilon(1e-15));
  }
  SUBCASE("dt = 0.5, P = -2 against a 40-digit evaluation") {
    // exp(-1) and (exp(-1) - 1) / -2 evaluated with mpmath at 40 digits.
    const std::vector<double> dt{0.5};
    const DiscreteSsm d = discretize(dt, Tensor({1}, -2.0), Tensor({1}, 1.0));
    CHECK(std::abs(d.p_bar[0] - 0.3678794411714423215955238) < 1e-15);
    CHECK(std::abs(d.q_bar[0] - 0.3160602794142788392022381) < 1e-15);
  }
  SUBCASE("P -> 0 limit") {
    const std::vector<double> dt{1.0};
    const DiscreteSsm d = discretize(dt, Tensor({1}, 0.0), Tensor({1}, 0.3));
    CHECK(d.p_bar[0] == 1.0);
    CHECK(d.q_bar[0] == 0.3);
  }
  SUBCASE("series branch against 40-digit evaluations") {
    // (dt, P, expm1(dt P) / P) from mpmath; all have |dt P| < 1e-6.
    const double cases[][3] = {{1e-8, -0.1, 9.999999995000000001666667e-9},
                               {3e-7, 2.5, 3.000001125000281250052734e-7},
                               {2e-7, -4.0, 1.999999200000213333290667e-7}};
    for (const auto& c : cases) {
      const std::vector<double> dt{c[0]};
      const DiscreteSsm d = discretize(dt, Tensor({1}, c[1]), Tensor({1}, 1.0));
      CHECK(std::abs(d.q_bar[0] - c[2]) / c[2] < 1e-9);
    }
  }
}

TEST_CASE("discretization limits as dt -> 0") {
  Rng rng(1);
  const Tensor p({4}, std::vector<double>{-0.5, -1.0, -3.0, -8.0});
  const Tensor q({4}, std::vector<double>{0.2, -1.0, 0.7, 1.5});
  for (double dt : {1e-4, 1e-6}) {
    const std::vector<double> delta{dt};
    const DiscreteSsm d = discretize(delta, p, q);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(std::abs(d.p_bar[i] - 1.0) < 10.0 * dt);
      CHECK(std::abs(d.q_bar[i] - dt * q[i]) < 10.0 * dt * dt);
    }
  }
}

TEST_CASE("discretization errors") {
  const std::vector<double> bad{0.1, 0.0};
  CHECK_THROWS_AS(discretize(bad, Tensor({2}, -1.0), Tensor({2}, 1.0)), std::invalid_argument);
  Tensor dense({2, 2}, std::vector<double>{-1.0, 0.5, 0.0, -2.0});
  const std::vector<double> dt{0.1};
  CHECK_THROWS_AS(discretize(dt, dense, Tensor({2}, 1.0)), std::invalid_argument);
  dense[1] = 0.0;  // now diagonal: accepted
  const DiscreteSsm d = discretize(dt, dense, Tensor({2}, 1.0));
  CHECK(d.p_bar[1] == doctest::Approx(std::exp(-0.2)));
}

TEST_CASE("stable state matrices give transitions in (0, 1)") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.uniform_index(1, 8);
    const auto delta = random_vec(rng, 5, 1e-4, 2.0);
    const DiscreteSsm d = discretize(delta, Tensor({n}, random_vec(rng, n, -10.0, -1e-3)), Tensor({n}, 1.0));
    for (double v : d.p_bar) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("bounded input keeps the state bounded") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = rng.uniform_index(1, 6), len = 200;
    const std::vector<double> delta{rng.uniform(0.01, 1.0)};
    const DiscreteSsm d = discretize(delta, Tensor({n}, random_vec(rng, n, -5.0, -0.05)),
                                     Tensor({n}, random_vec(rng, n, -1.0, 1.0)));
    double qmax = 0.0, pmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      qmax = std::max(qmax, std::abs(d.q_bar[i]));
      pmax = std::max(pmax, d.p_bar[i]);
    }
    const double bound = qmax / (1.0 - pmax);
    const auto u = random_vec(rng, len, -1.0, 1.0);
    // Probe each state coordinate through a unit output projection.
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> r(n, 0.0);
      r[i] = 1.0;
      for (double y : scan(d, r, u)) CHECK(std::abs(y) <= bound * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("scan special cases") {
  SUBCASE("single token") {
    const std::vector<double> dt{0.3}, r{0.5, -2.0}, u{1.7};
    const DiscreteSsm d = discretize(dt, Tensor({2}, std::vector<double>{-1.0, -2.0}), Tensor({2}, std::vector<double>{1.0, 0.5}));
    const auto x = scan(d, r, u);
    CHECK(x[0] == doctest::Approx(0.5 * d.q_bar[0] * 1.7 - 2.0 * d.q_bar[1] * 1.7).epsilon(1e-15));
  }
  SUBCASE("zero transition is memoryless") {
    DiscreteSsm d{3, 2, {0, 0, 0, 0, 0, 0}, {1, 2, 3, 4, 5, 6}};
    const std::vector<double> r{1.0, 1.0}, u{1.0, 2.0, 3.0};
    const auto x = scan(d, r, u);
    CHECK(x[0] == 3.0);
    CHECK(x[1] == 14.0);
    CHECK(x[2] == 33.0);
  }
  SUBCASE("shape mismatch") {
    DiscreteSsm d{2, 2, {0.5, 0.5, 0.5, 0.5}, {1, 1, 1, 1}};
    const std::vector<double> r{1.0, 1.0}, u{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(scan(d, r, u), std::invalid_argument);
    const std::vector<double> r3{1.0, 1.0, 1.0}, u2{1.0, 2.0};
    CHECK_THROWS_AS(scan(d, r3, u2), std::invalid_argument);
  }
}

TEST_CASE("convolution kernel closed forms") {
  SUBCASE("scalar geometric sequence") {
    DiscreteSsm d{1, 1, {0.5}, {3.0}};
    const std::vector<double> r{2.0};
    const auto k = conv_kernel(d, r, 4);
    CHECK(k == std::vector<double>{6.0, 3.0, 1.5, 0.75});
  }
  SUBCASE("unit parameters give a running sum") {
    DiscreteSsm d{1, 1, {1.0}, {1.0}};
    const std::vector<double> r{1.0};
    CHECK(conv_kernel(d, r, 3) == std::vector<double>{1.0, 1.0, 1.0});
    const std::vector<double> u{1.0, 2.0, 3.0};
    CHECK(conv_apply(conv_kernel(d, r, 3), u) == std::vector<double>{1.0, 3.0, 6.0});
  }
  SUBCASE("token-varying parameters are refused") {
    DiscreteSsm d{2, 1, {0.5, 0.6}, {1.0, 1.0}};
    const std::vector<double> r{1.0};
    try {
      conv_kernel(d, r, 2);
      FAIL("expected an error");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("ssm_scan") != std::string::npos);
    }
  }
  SUBCASE("impulse response") {
    Rng rng(4);
    const std::vector<double> delta{0.2};
    const DiscreteSsm d = discretize(delta, Tensor({4}, random_vec(rng, 4, -3.0, -0.1)), Tensor({4}, random_vec(rng, 4, -1, 1)));
    const auto r = random_vec(rng, 4, -1.0, 1.0);
    std::vector<double> impulse(10, 0.0);
    impulse[0] = 1.0;
    const auto k = conv_kernel(d, r, 10);
    CHECK(testutil::max_abs_diff(scan(d, r, impulse), k) == 0.0);
    CHECK(conv_apply(k, impulse) == k);
    std::vector<double> delta_kernel(10, 0.0);
    delta_kernel[0] = 1.0;
    const auto u = random_vec(rng, 10, -1.0, 1.0);
    CHECK(conv_apply(delta_kernel, u) == u);
    CHECK_THROWS_AS(conv_apply(k, std::vector<double>(9, 0.0)), std::invalid_argument);
  }
}

TEST_CASE("scan and convolution agree on 100 random token-constant instances") {
  Rng rng(5);
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = rng.uniform_index(1, 8), len = rng.uniform_index(1, 64);
    const std::vector<double> delta(len, rng.uniform(1e-3, 1.0));
    const DiscreteSsm d = discretize(delta, Tensor({n}, random_vec(rng, n, -4.0, -0.01)),
                                     Tensor({n}, random_vec(rng, n, -1.0, 1.0)));
    const auto r = random_vec(rng, n, -1.0, 1.0);
    const auto u = random_vec(rng, len, -1.0, 1.0);
    worst = std::max(worst, testutil::max_abs_diff(scan(d, r, u), conv_apply(conv_kernel(d, r, len), u)));
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(worst < 1e-10);
  CHECK(seconds < 5.0);
}

TEST_CASE("selective SSM against a per-token loop") {
  Rng rng(6);
  const std::size_t len = 8, ch = 4, ns = 3;
  SsmParams params(ch, ns, rng);
  for (double& b : params.delta_proj.bias.data()) b = rng.uniform(-1.0, 0.5);
  const Tensor u = testutil::uniform({1, len, ch}, rng);
  Tape tape;
  const Tensor y = selective_ssm(tape, tape.constant(u), params).value();

  const auto p = params.state_matrix();
  for (std::size_t i = 0; i < ns; ++i) CHECK(p[i] == doctest::Approx(-std::exp(params.log_decay[i])));
  std::vector<double> h(ch * ns, 0.0);
  auto dot = [&](const Tensor& w, std::size_t row, std::size_t t) {
    double acc = 0.0;
    for (std::size_t c = 0; c < ch; ++c) acc += w[row * ch + c] * u[t * ch + c];
    return acc;
  };
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double z = dot(params.delta_proj.weight, c, t) + params.delta_proj.bias[c];
      const double dt = std::log1p(std::exp(z));
      double out = 0.0;
      for (std::size_t n = 0; n < ns; ++n) {
        const double a = std::exp(dt * p[n]);
        h[c * ns + n] = a * h[c * ns + n] + (a - 1.0) / p[n] * dot(params.input_proj.weight, n, t) * u[t * ch + c];
        out += dot(params.output_proj.weight, n, t) * h[c * ns + n];
      }
      CHECK(std::abs(y[t * ch + c] - out) < 1e-10);
    }
  }
}

TEST_CASE("selective SSM zero input and initialization") {
  Rng rng(7);
  SsmParams params(4, 8, rng);
  for (double v : params.state_matrix()) CHECK(v < 0.0);
  for (std::size_t n = 0; n < 8; ++n) CHECK(params.state_matrix()[n] == doctest::Approx(-static_cast<double>(n + 1)));
  for (double b : params.delta_proj.bias.data()) {
    const double dt = std::log1p(std::exp(b));
    CHECK(dt >= 1e-3 * (1 - 1e-12));
    CHECK(dt <= 1e-1 * (1 + 1e-12));
  }
  for (double& b : params.delta_proj.bias.data()) b = 0.0;
  Tape tape;
  for (double v : selective_ssm(tape, tape.constant(Tensor({2, 5, 4})), params).value().data()) CHECK(v == 0.0);
}

TEST_CASE("selective SSM gradients, including the time-scale projection") {
  Rng rng(8);
  SsmParams params(4, 3, rng);
  for (double& b : params.delta_proj.bias.data()) b = rng.uniform(-1.0, 0.5);
  for (double& w : params.delta_proj.weight.data()) w = rng.uniform(-1.0, 1.0);
  Tensor u = testutil::trainable({1, 8, 4}, rng);
  ParamList list;
  params.collect(list, "ssm");
  std::vector<Tensor*> ptrs{&u};
  for (auto& p : list) ptrs.push_back(p.tensor);
  auto f = [&](Tape& t) { return testutil::weighted_sum(t, selective_ssm(t, t.param(u), params), 3); };
  CHECK(grad_check(f, ptrs, 1e-5).max_rel_error < 1e-4);

  Tensor* delta_only[] = {&params.delta_proj.weight};
  CHECK(grad_check(f, delta_only, 1e-5).max_rel_error < 1e-4);
}

TEST_CASE("input gain derivatives") {
  // d(gain)/d(p) against central differences on both sides of the series switch.
  for (double z : {-2.0, -0.3, -0.05, -1e-3, 1e-4, 0.07, 0.5}) {
    const double dt = 0.4, p = z / dt, h = 1e-6;
    const double numeric = (zoh::input_gain(dt, p + h) - zoh::input_gain(dt, p - h)) / (2 * h);
    CHECK(zoh::input_gain_dp(dt, p) == doctest::Approx(numeric).epsilon(1e-7));
    const double numeric_dt = (zoh::input_gain(dt + h, p) - zoh::input_gain(dt - h, p)) / (2 * h);
    CHECK(zoh::input_gain_ddt(dt, p) == doctest::Approx(numeric_dt).epsilon(1e-7));
  }
}
