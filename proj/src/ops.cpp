#include "mddose/ops.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "mddose/kernels.hpp"

namespace mddose::ops {

namespace {

namespace kn = kernels::omp;

[[noreturn]] void shape_error(const char* prim, const std::string& what) {
  throw std::invalid_argument(std::string(prim) + ": " + what);
}

Tape& same_tape(const char* prim, const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) shape_error(prim, "operands recorded on different tapes");
  return a.tape();
}

void require_same_shape(const char* prim, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    shape_error(prim, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <class F, class DF>
Var unary(const char* prim, const Var& a, F f, DF df) {
  (void)prim;
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  const std::size_t ins[] = {ia};
  return a.tape().record(std::move(out), ins, [ia, df](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(self);
    auto ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& tape = same_tape("add", a, b);
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t ins[] = {ia, ib};
  return tape.record(std::move(out), ins, [ia, ib](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    for (auto id : {ia, ib}) {
      if (!tp.needs_grad(id)) continue;
      auto gi = tp.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = same_tape("sub", a, b);
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t ins[] = {ia, ib};
  return tape.record(std::move(out), ins, [ia, ib](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    if (tp.needs_grad(ia)) {
      auto ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = same_tape("mul", a, b);
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t ins[] = {ia, ib};
  return tape.record(std::move(out), ins, [ia, ib](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    if (tp.needs_grad(ia)) {
      auto ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!std::isfinite(std::exp(av[i]))) {
      throw std::domain_error("exp: overflow at element " + std::to_string(i) + " (x = " + std::to_string(av[i]) + ")");
    }
  }
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var silu(const Var& a) {
  return unary(
      "silu", a, [](double x) { return x * sigmoid(x); },
      [](double x, double) {
        const double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var softplus(const Var& a) {
  return unary(
      "softplus", a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return sigmoid(x); });
}

Var square(const Var& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  const Tensor& av = a.value();
  double acc = 0.0;
  for (double v : av.data()) acc += v;
  const std::size_t ia = a.id();
  const std::size_t ins[] = {ia};
  return a.tape().record(Tensor::scalar(acc), ins, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (double& v : tp.grad(ia)) v += g;
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_squared_error(const Var& a, const Var& b) {
  Tape& tape = same_tape("sum_squared_error", a, b);
  require_same_shape("sum_squared_error", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t ins[] = {ia, ib};
  return tape.record(Tensor::scalar(acc), ins, [ia, ib](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    if (tp.needs_grad(ia)) {
      auto ga = tp.grad(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * g * (av[i] - bv[i]);
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.grad(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= 2.0 * g * (av[i] - bv[i]);
    }
  });
}

namespace {

Var linear_impl(const Var& x, const Var& w, const Var* b) {
  Tape& tape = same_tape("linear", x, w);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.size() != 2) shape_error("linear", "weight must be rank 2, got " + shape_str(ws));
  if (xs.back() != ws[1]) {
    shape_error("linear", "inner dimension mismatch: input " + shape_str(xs) + " vs weight " + shape_str(ws));
  }
  if (b) {
    if (&b->tape() != &tape) shape_error("linear", "bias recorded on a different tape");
    if (b->shape() != Shape{ws[0]}) {
      shape_error("linear", "bias " + shape_str(b->shape()) + " does not match weight " + shape_str(ws));
    }
  }
  const std::size_t k = ws[1], n = ws[0], m = x.value().size() / k;
  Shape os = xs;
  os.back() = n;
  Tensor out(os);
  kn::linear_forward(x.value().data(), w.value().data(), b ? b->value().data() : std::span<const double>{},
                     out.data(), m, k, n);
  const std::size_t ix = x.id(), iw = w.id(), ib = b ? b->id() : x.id();
  const bool has_bias = b != nullptr;
  std::vector<std::size_t> ins{ix, iw};
  if (has_bias) ins.push_back(ib);
  return tape.record(std::move(out), ins, [=](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    std::span<double> gx, gw, gb;
    if (tp.needs_grad(ix)) gx = tp.grad(ix);
    if (tp.needs_grad(iw)) gw = tp.grad(iw);
    if (has_bias && tp.needs_grad(ib)) gb = tp.grad(ib);
    kn::linear_backward(g, tp.value(ix).data(), tp.value(iw).data(), gx, gw, gb, m, k, n);
  });
}

}  // namespace

Var linear(const Var& x, const Var& w) { return linear_impl(x, w, nullptr); }
Var linear(const Var& x, const Var& w, const Var& b) { return linear_impl(x, w, &b); }

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape("matmul", a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    shape_error("matmul", "inner dimension mismatch " + shape_str(as) + " vs " + shape_str(bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor out({m, n});
  kn::matmul_forward(a.value().data(), b.value().data(), out.data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t ins[] = {ia, ib};
  return tape.record(std::move(out), ins, [=](Tape& tp, std::size_t self) {
    std::span<double> ga, gb;
    if (tp.needs_grad(ia)) ga = tp.grad(ia);
    if (tp.needs_grad(ib)) gb = tp.grad(ib);
    kn::matmul_backward(tp.grad(self), tp.value(ia).data(), tp.value(ib).data(), ga, gb, m, k, n);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& tape = same_tape("layer_norm", x, gamma);
  same_tape("layer_norm", x, beta);
  const std::size_t cols = x.shape().back();
  if (gamma.shape() != Shape{cols} || beta.shape() != Shape{cols}) {
    shape_error("layer_norm", "affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                                  " do not match input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.value().size() / cols;
  Tensor out(x.shape());
  auto stats = std::make_shared<std::vector<double>>(2 * rows);
  std::span<double> mean(stats->data(), rows), rstd(stats->data() + rows, rows);
  kn::layer_norm_forward(x.value().data(), gamma.value().data(), beta.value().data(), out.data(), mean, rstd, rows,
                         cols, eps);
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const std::size_t ins[] = {ix, ig, ib};
  return tape.record(std::move(out), ins, [=](Tape& tp, std::size_t self) {
    std::span<double> gx, gg, gb;
    if (tp.needs_grad(ix)) gx = tp.grad(ix);
    if (tp.needs_grad(ig)) gg = tp.grad(ig);
    if (tp.needs_grad(ib)) gb = tp.grad(ib);
    std::span<const double> mu(stats->data(), rows), rs(stats->data() + rows, rows);
    kn::layer_norm_backward(tp.grad(self), tp.value(ix).data(), tp.value(ig).data(), mu, rs, gx, gg, gb, rows, cols);
  });
}

Var causal_conv1d(const Var& x, const Var& w, const Var& b) {
  Tape& tape = same_tape("causal_conv1d", x, w);
  same_tape("causal_conv1d", x, b);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3) shape_error("causal_conv1d", "input must be (B, L, C), got " + shape_str(xs));
  const std::size_t nb = xs[0], len = xs[1], ch = xs[2];
  if (ws.size() != 2 || ws[0] != ch) {
    shape_error("causal_conv1d", "kernel " + shape_str(ws) + " does not match input " + shape_str(xs));
  }
  if (b.shape() != Shape{ch}) shape_error("causal_conv1d", "bias " + shape_str(b.shape()) + " vs input " + shape_str(xs));
  const std::size_t ksize = ws[1];
  if (ksize > len) {
    shape_error("causal_conv1d", "kernel length " + std::to_string(ksize) + " exceeds sequence length " +
                                     std::to_string(len) + " for input " + shape_str(xs));
  }
  Tensor out(xs);
  kn::conv_forward(x.value().data(), w.value().data(), b.value().data(), out.data(), nb, len, ch, ksize);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  const std::size_t ins[] = {ix, iw, ib};
  return tape.record(std::move(out), ins, [=](Tape& tp, std::size_t self) {
    std::span<double> gx, gw, gb;
    if (tp.needs_grad(ix)) gx = tp.grad(ix);
    if (tp.needs_grad(iw)) gw = tp.grad(iw);
    if (tp.needs_grad(ib)) gb = tp.grad(ib);
    kn::conv_backward(tp.grad(self), tp.value(ix).data(), tp.value(iw).data(), gx, gw, gb, nb, len, ch, ksize);
  });
}

Var reshape(const Var& x, Shape shape) {
  if (numel(shape) != x.value().size()) {
    shape_error("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.value().storage());
  const std::size_t ix = x.id();
  const std::size_t ins[] = {ix};
  return x.tape().record(std::move(out), ins, [ix](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto gx = tp.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var permute(const Var& x, const std::vector<std::size_t>& perm) {
  const Shape& xs = x.shape();
  const std::size_t rank = xs.size();
  if (perm.size() != rank) {
    shape_error("permute", "permutation of length " + std::to_string(perm.size()) + " for shape " + shape_str(xs));
  }
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p >= rank || seen[p]) shape_error("permute", "invalid permutation for shape " + shape_str(xs));
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * xs[i + 1];
  Shape os(rank);
  for (std::size_t i = 0; i < rank; ++i) os[i] = xs[perm[i]];

  // gather map: out flat index -> in flat index
  const std::size_t total = x.value().size();
  auto index = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; ++o) {
    (*index)[o] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      src += in_stride[perm[ax]];
      if (counter[ax] < os[ax]) break;
      src -= in_stride[perm[ax]] * os[ax];
      counter[ax] = 0;
    }
  }
  Tensor out(os);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < total; ++o) out[o] = xv[(*index)[o]];
  const std::size_t ix = x.id();
  const std::size_t ins[] = {ix};
  return x.tape().record(std::move(out), ins, [ix, index](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto gx = tp.grad(ix);
    for (std::size_t o = 0; o < g.size(); ++o) gx[(*index)[o]] += g[o];
  });
}

Var concat_last(const Var& a, const Var& b) {
  Tape& tape = same_tape("concat_last", a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 1, bs.begin())) {
    shape_error("concat_last", "leading axes differ " + shape_str(as) + " vs " + shape_str(bs));
  }
  const std::size_t ca = as.back(), cb = bs.back(), rows = a.value().size() / ca;
  Shape os = as;
  os.back() = ca + cb;
  Tensor out(os);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data().data() + r * ca, ca, out.data().data() + r * (ca + cb));
    std::copy_n(bv.data().data() + r * cb, cb, out.data().data() + r * (ca + cb) + ca);
  }
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t ins[] = {ia, ib};
  return tape.record(std::move(out), ins, [=](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    if (tp.needs_grad(ia)) {
      auto ga = tp.grad(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * (ca + cb) + c];
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.grad(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * (ca + cb) + ca + c];
    }
  });
}

Var add_per_sample(const Var& x, const Var& v) {
  Tape& tape = same_tape("add_per_sample", x, v);
  const Shape& xs = x.shape();
  const Shape& vs = v.shape();
  if (xs.size() < 2 || vs.size() != 2 || vs[0] != xs[0] || vs[1] != xs.back()) {
    shape_error("add_per_sample", "cannot broadcast " + shape_str(vs) + " over " + shape_str(xs));
  }
  const std::size_t nb = xs[0], ch = xs.back(), mid = x.value().size() / (nb * ch);
  Tensor out(xs);
  const Tensor& xv = x.value();
  const Tensor& vv = v.value();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t m = 0; m < mid; ++m)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t i = (b * mid + m) * ch + c;
        out[i] = xv[i] + vv[b * ch + c];
      }
  const std::size_t ix = x.id(), iv = v.id();
  const std::size_t ins[] = {ix, iv};
  return tape.record(std::move(out), ins, [=](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    if (tp.needs_grad(ix)) {
      auto gx = tp.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.needs_grad(iv)) {
      auto gv = tp.grad(iv);
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t m = 0; m < mid; ++m)
          for (std::size_t c = 0; c < ch; ++c) gv[b * ch + c] += g[(b * mid + m) * ch + c];
    }
  });
}

Var selective_scan(const Var& u, const Var& dt, const Var& p, const Var& bm, const Var& cm) {
  Tape& tape = same_tape("selective_scan", u, dt);
  for (const Var* other : {&p, &bm, &cm}) same_tape("selective_scan", u, *other);
  const Shape& us = u.shape();
  if (us.size() != 3) shape_error("selective_scan", "input must be (B, L, D), got " + shape_str(us));
  require_same_shape("selective_scan", u, dt);
  if (p.shape().size() != 1) shape_error("selective_scan", "state matrix diagonal must be rank 1, got " + shape_str(p.shape()));
  const kernels::ScanDims dims{us[0], us[1], us[2], p.shape()[0]};
  const Shape proj{dims.batch, dims.length, dims.state};
  if (bm.shape() != proj || cm.shape() != proj) {
    shape_error("selective_scan", "projections " + shape_str(bm.shape()) + "/" + shape_str(cm.shape()) +
                                      " expected " + shape_str(proj));
  }
  for (double d : dt.value().data()) {
    if (!(d > 0.0)) shape_error("selective_scan", "time scales must be strictly positive");
  }
  Tensor out(us);
  auto states = std::make_shared<std::vector<double>>(dims.batch * dims.length * dims.channels * dims.state);
  kn::scan_forward(u.value().data(), dt.value().data(), p.value().data(), bm.value().data(), cm.value().data(),
                   out.data(), *states, dims);
  const std::size_t iu = u.id(), idt = dt.id(), ip = p.id(), ib = bm.id(), ic = cm.id();
  const std::size_t ins[] = {iu, idt, ip, ib, ic};
  return tape.record(std::move(out), ins, [=](Tape& tp, std::size_t self) {
    auto grad_if = [&tp](std::size_t id) { return tp.needs_grad(id) ? tp.grad(id) : std::span<double>{}; };
    auto gu = grad_if(iu), gdt = grad_if(idt), gp = grad_if(ip), gb = grad_if(ib), gc = grad_if(ic);
    kn::scan_backward(tp.grad(self), tp.value(iu).data(), tp.value(idt).data(), tp.value(ip).data(),
                      tp.value(ib).data(), tp.value(ic).data(), *states, gu, gdt, gp, gb, gc, dims);
  });
}

}  // namespace mddose::ops
