#include <cmath>
#include <functional>
#include <limits>
#include <memory>

#include "doctest.h"
#include "mddose/grad_check.hpp"
#include "mddose/kernels.hpp"
#include "mddose/ops.hpp"
#include "gradcheck_cases.hpp"
#include "test_util.hpp"

using namespace mddose;
using testutil::trainable;
using testutil::uniform;
using testutil::weighted_sum;


TEST_CASE("tensor rejects zero extents and bad reshapes") {
  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  Tensor t({2, 3});
  CHECK_THROWS_AS(t.reshape({4, 2}), std::invalid_argument);
  t.reshape({3, 2});
  CHECK(t.dim(0) == 3);
}

TEST_CASE("backward of sum of squares") {
  Tensor p({2}, std::vector<double>{1.0, 2.0});
  p.set_requires_grad(true);
  Tape tape;
  tape.backward(ops::sum(ops::square(tape.param(p))));
  CHECK(p.grad()[0] == 2.0);
  CHECK(p.grad()[1] == 4.0);
}

TEST_CASE("backward of mean squared linear residual matches the hand derivative") {
  // loss = mean((W x - y)^2) over n = 2 outputs; dL/dW = 2 (W x - y) x^T / n.
  Tensor w({2, 3}, std::vector<double>{0.5, -1.0, 2.0, 1.5, 0.25, -0.75});
  w.set_requires_grad(true);
  const Tensor x({1, 3}, std::vector<double>{1.0, 2.0, -1.0});
  const Tensor y({1, 2}, std::vector<double>{0.3, -0.4});
  Tape tape;
  Var r = ops::sub(ops::linear(tape.constant(x), tape.param(w)), tape.constant(y));
  tape.backward(ops::mean(ops::square(r)));
  // W x = (0.5 - 2 - 2, 1.5 + 0.5 + 0.75) = (-3.5, 2.75); residual (-3.8, 3.15).
  const double res[2] = {-3.8, 3.15};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(w.grad()[i * 3 + j] == doctest::Approx(res[i] * x[j]).epsilon(1e-14));
}

TEST_CASE("tape misuse is reported") {
  Tensor p({3}, 1.0);
  p.set_requires_grad(true);
  Tensor unused({2}, 5.0);
  unused.set_requires_grad(true);
  unused.grad()[0] = 7.0;

  Tape tape;
  Var v = tape.param(p);
  tape.param(unused);
  CHECK_THROWS_AS(tape.backward(v), std::invalid_argument);  // not scalar
  Var loss = ops::sum(v);
  tape.backward(loss);
  CHECK(unused.grad()[0] == 0.0);  // off the loss path
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
  CHECK_THROWS(ops::sum(v));  // recording after backward
  tape.reset();
  tape.backward(ops::sum(tape.param(p)));
  CHECK(p.grad()[2] == 1.0);
}

TEST_CASE("shape mismatches name the primitive") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3, 2}));
  try {
    ops::add(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(ops::linear(a, b), std::invalid_argument);
}

TEST_CASE("grad_check on a cubic") {
  Tensor p({1}, 2.0);
  p.set_requires_grad(true);
  Tensor* params[] = {&p};
  auto f = [&](Tape& t) {
    Var v = t.param(p);
    return ops::sum(ops::mul(v, ops::square(v)));
  };
  CHECK(grad_check(f, params, 1e-5).max_rel_error < 1e-6);
  CHECK_THROWS_AS(grad_check(f, params, 1e-2), std::invalid_argument);
  CHECK_THROWS_AS(grad_check(f, params, 1e-7), std::invalid_argument);
}

TEST_CASE("grad_check names the parameter on non-finite evaluations") {
  Tensor a({1}, 0.0), b({1}, 700.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor* params[] = {&a, &b};
  // exp overflows only when b is nudged upward past ~709.78.
  b[0] = 709.78271289338397 - 5e-4;
  auto f = [&](Tape& t) { return ops::sum(ops::add(t.param(a), ops::exp(t.param(b)))); };
  try {
    grad_check(f, params, 1e-3);
    FAIL("expected a non-finite failure");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("parameter 1") != std::string::npos);
  }
}

TEST_CASE("every primitive passes randomized gradient checks") {
  for (const auto& c : gradcases::primitive_cases()) {
    CAPTURE(c.name);
    CHECK(gradcases::worst_over_seeds(c.make) < gradcases::kPrimitiveTol);
  }
}

TEST_CASE("causal convolution is causal and left padded") {
  Tape tape;
  // One channel, kernel (w0, w1): y_t = w0 x_{t-1} + w1 x_t + b.
  Var x = tape.constant(Tensor({1, 3, 1}, std::vector<double>{1.0, 2.0, 3.0}));
  Var w = tape.constant(Tensor({1, 2}, std::vector<double>{10.0, 1.0}));
  Var b = tape.constant(Tensor({1}, std::vector<double>{0.5}));
  const Tensor y = ops::causal_conv1d(x, w, b).value();
  CHECK(y[0] == 1.5);
  CHECK(y[1] == 12.5);
  CHECK(y[2] == 23.5);
  CHECK_THROWS_AS(ops::causal_conv1d(x, tape.constant(Tensor({1, 4})), b), std::invalid_argument);
}

TEST_CASE("permute moves axes") {
  Tape tape;
  std::vector<double> data(24);
  for (std::size_t i = 0; i < 24; ++i) data[i] = static_cast<double>(i);
  const Tensor y = ops::permute(tape.constant(Tensor({2, 3, 4}, data)), {2, 0, 1}).value();
  REQUIRE(y.shape() == Shape{4, 2, 3});
  // y[k, i, j] = x[i, j, k]
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) CHECK(y[(k * 2 + i) * 3 + j] == data[(i * 3 + j) * 4 + k]);
}

TEST_CASE("selective scan matches a scalar recurrence") {
  Rng rng(3);
  const std::size_t L = 5, N = 3;
  const Tensor u = uniform({1, L, 1}, rng), dt = uniform({1, L, 1}, rng, 0.1, 0.5), p = uniform({N}, rng, -2.0, -0.5),
               bm = uniform({1, L, N}, rng), cm = uniform({1, L, N}, rng);
  Tape tape;
  const Tensor y = ops::selective_scan(tape.constant(u), tape.constant(dt), tape.constant(p), tape.constant(bm),
                                       tape.constant(cm))
                       .value();
  std::vector<double> h(N, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    double out = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double a = std::exp(dt[t] * p[n]);
      h[n] = a * h[n] + (a - 1.0) / p[n] * bm[t * N + n] * u[t];
      out += cm[t * N + n] * h[n];
    }
    CHECK(y[t] == doctest::Approx(out).epsilon(1e-13));
  }
  Tensor bad_dt = dt;
  bad_dt[2] = 0.0;
  CHECK_THROWS_AS(ops::selective_scan(tape.constant(u), tape.constant(bad_dt), tape.constant(p), tape.constant(bm),
                                      tape.constant(cm)),
                  std::invalid_argument);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(21);
  Tensor w = trainable({3, 4}, rng);
  const Tensor x = uniform({2, 4}, rng);
  auto grads = [&](double a, double b) {
    Tape tape;
    Var y = ops::linear(tape.constant(x), tape.param(w));
    Var f = ops::sum(ops::silu(y));
    Var g = ops::sum(ops::square(y));
    tape.backward(ops::add(ops::scale(f, a), ops::scale(g, b)));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  const auto gf = grads(1.0, 0.0), gg = grads(0.0, 1.0), mix = grads(2.5, -0.75);
  for (std::size_t i = 0; i < mix.size(); ++i) CHECK(mix[i] == doctest::Approx(2.5 * gf[i] - 0.75 * gg[i]).epsilon(1e-13));
}

TEST_CASE("forward values are bit-identical across runs") {
  auto run = [] {
    Rng rng(99);
    Tensor x = uniform({2, 6, 4}, rng), w = uniform({4, 3}, rng), b = uniform({4}, rng);
    Tape tape;
    Var y = ops::layer_norm(ops::causal_conv1d(tape.constant(x), tape.constant(w), tape.constant(b)),
                            tape.constant(Tensor({4}, 1.0)), tape.constant(Tensor({4}, 0.0)));
    return y.value().storage();
  };
  CHECK(run() == run());
}

TEST_CASE("exp overflow and softplus extremes") {
  Tape tape;
  CHECK_THROWS_AS(ops::exp(tape.constant(Tensor({1}, 800.0))), std::domain_error);
  const Tensor s = ops::softplus(tape.constant(Tensor({3}, std::vector<double>{-800.0, 0.0, 800.0}))).value();
  CHECK(s[0] >= 0.0);
  CHECK(s[0] < 1e-300);
  CHECK(s[1] == doctest::Approx(std::log(2.0)));
  CHECK(s[2] == 800.0);
}

// ---------------------------------------------------------------------------
// Serial reference kernels vs OpenMP kernels

TEST_CASE("OpenMP kernels agree with the serial reference") {
  Rng rng(5);
  auto vec = [&](std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
  };
  const double tol = 1e-12;

  SUBCASE("linear") {
    const std::size_t m = 300, k = 40, n = 24;
    auto x = vec(m * k), w = vec(n * k), b = vec(n), dy = vec(m * n);
    std::vector<double> y1(m * n), y2(m * n);
    kernels::ref::linear_forward(x, w, b, y1, m, k, n);
    kernels::omp::linear_forward(x, w, b, y2, m, k, n);
    CHECK(testutil::max_abs_diff(y1, y2) < tol);
    std::vector<double> dx1(m * k), dw1(n * k), db1(n), dx2(m * k), dw2(n * k), db2(n);
    kernels::ref::linear_backward(dy, x, w, dx1, dw1, db1, m, k, n);
    kernels::omp::linear_backward(dy, x, w, dx2, dw2, db2, m, k, n);
    CHECK(testutil::max_abs_diff(dx1, dx2) < tol);
    CHECK(testutil::max_abs_diff(dw1, dw2) < tol);
    CHECK(testutil::max_abs_diff(db1, db2) < tol);
  }
  SUBCASE("matmul") {
    const std::size_t m = 70, k = 50, n = 60;
    auto a = vec(m * k), b = vec(k * n), dc = vec(m * n);
    std::vector<double> c1(m * n), c2(m * n), da1(m * k), da2(m * k), db1(k * n), db2(k * n);
    kernels::ref::matmul_forward(a, b, c1, m, k, n);
    kernels::omp::matmul_forward(a, b, c2, m, k, n);
    CHECK(testutil::max_abs_diff(c1, c2) < tol);
    kernels::ref::matmul_backward(dc, a, b, da1, db1, m, k, n);
    kernels::omp::matmul_backward(dc, a, b, da2, db2, m, k, n);
    CHECK(testutil::max_abs_diff(da1, da2) < tol);
    CHECK(testutil::max_abs_diff(db1, db2) < tol);
  }
  SUBCASE("conv") {
    const std::size_t bsz = 4, l = 200, c = 32, ks = 4;
    auto x = vec(bsz * l * c), w = vec(c * ks), b = vec(c), dy = vec(bsz * l * c);
    std::vector<double> y1(x.size()), y2(x.size());
    kernels::ref::conv_forward(x, w, b, y1, bsz, l, c, ks);
    kernels::omp::conv_forward(x, w, b, y2, bsz, l, c, ks);
    CHECK(testutil::max_abs_diff(y1, y2) < tol);
    std::vector<double> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size()), db1(c), db2(c);
    kernels::ref::conv_backward(dy, x, w, dx1, dw1, db1, bsz, l, c, ks);
    kernels::omp::conv_backward(dy, x, w, dx2, dw2, db2, bsz, l, c, ks);
    CHECK(testutil::max_abs_diff(dx1, dx2) < tol);
    CHECK(testutil::max_abs_diff(dw1, dw2) < tol);
    CHECK(testutil::max_abs_diff(db1, db2) < tol);
  }
  SUBCASE("layer norm") {
    const std::size_t rows = 1000, cols = 24;
    auto x = vec(rows * cols, -3.0, 3.0), g = vec(cols), b = vec(cols), dy = vec(rows * cols);
    std::vector<double> y1(x.size()), y2(x.size()), m1(rows), m2(rows), r1(rows), r2(rows);
    kernels::ref::layer_norm_forward(x, g, b, y1, m1, r1, rows, cols, 1e-5);
    kernels::omp::layer_norm_forward(x, g, b, y2, m2, r2, rows, cols, 1e-5);
    CHECK(testutil::max_abs_diff(y1, y2) < tol);
    std::vector<double> dx1(x.size()), dx2(x.size()), dg1(cols), dg2(cols), db1(cols), db2(cols);
    kernels::ref::layer_norm_backward(dy, x, g, m1, r1, dx1, dg1, db1, rows, cols);
    kernels::omp::layer_norm_backward(dy, x, g, m2, r2, dx2, dg2, db2, rows, cols);
    CHECK(testutil::max_abs_diff(dx1, dx2) < tol);
    CHECK(testutil::max_abs_diff(dg1, dg2) < tol);
    CHECK(testutil::max_abs_diff(db1, db2) < tol);
  }
  SUBCASE("scan") {
    const kernels::ScanDims d{3, 64, 16, 8};
    const std::size_t bld = d.batch * d.length * d.channels, bln = d.batch * d.length * d.state;
    auto u = vec(bld), dt = vec(bld, 0.01, 0.5), p = vec(d.state, -4.0, -0.5), bm = vec(bln), cm = vec(bln),
         dy = vec(bld);
    std::vector<double> y1(bld), y2(bld), s1(bld * d.state), s2(bld * d.state);
    kernels::ref::scan_forward(u, dt, p, bm, cm, y1, s1, d);
    kernels::omp::scan_forward(u, dt, p, bm, cm, y2, s2, d);
    CHECK(testutil::max_abs_diff(y1, y2) < tol);
    CHECK(testutil::max_abs_diff(s1, s2) < tol);
    std::vector<double> du1(bld), du2(bld), ddt1(bld), ddt2(bld), dp1(d.state), dp2(d.state), dbm1(bln), dbm2(bln),
        dcm1(bln), dcm2(bln);
    kernels::ref::scan_backward(dy, u, dt, p, bm, cm, s1, du1, ddt1, dp1, dbm1, dcm1, d);
    kernels::omp::scan_backward(dy, u, dt, p, bm, cm, s2, du2, ddt2, dp2, dbm2, dcm2, d);
    CHECK(testutil::max_abs_diff(du1, du2) < tol);
    CHECK(testutil::max_abs_diff(ddt1, ddt2) < tol);
    CHECK(testutil::max_abs_diff(dp1, dp2) < tol);
    CHECK(testutil::max_abs_diff(dbm1, dbm2) < tol);
    CHECK(testutil::max_abs_diff(dcm1, dcm2) < tol);
  }
}
