// SPDX-License-Identifier: Apache-2.0
#include "mmsa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mmsa {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return s.empty() ? 0 : n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
  if (shape_size(shape) != data.size())
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
}

Tensor Tensor::zeros(Shape s, bool rg) {
  std::size_t n = shape_size(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0), rg);
}

Tensor Tensor::scalar(double v, bool rg) { return Tensor({1}, {v}, rg); }

Tensor Tensor::of(Shape s, std::initializer_list<double> values, bool rg) {
  return Tensor(std::move(s), std::vector<double>(values), rg);
}

std::size_t Tensor::rows() const {
  if (shape.size() != 2) throw ShapeError("rows() on non-matrix " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() != 2) throw ShapeError("cols() on non-matrix " + shape_str(shape));
  return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------- Var

const Shape& Var::shape() const { return tape->shape(id); }
const std::vector<double>& Var::values() const { return tape->value(id); }
std::size_t Var::size() const { return tape->value(id).size(); }

double Var::scalar_value() const {
  if (size() != 1) throw ShapeError("scalar_value() on node of size " + std::to_string(size()));
  return values()[0];
}

// ---------------------------------------------------------------- Tape

int Tape::emplace(Shape shape, std::vector<double> value, BackFn back) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(const Tensor& t) {
  int id = emplace(t.shape, t.data, nullptr);
  return Var{this, id};
}

Var Tape::constant(Tensor t) {
  int id = emplace(std::move(t.shape), std::move(t.data), nullptr);
  return Var{this, id};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
  if (value(loss.id).size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(shape(loss.id)));
  if (swept_) throw std::logic_error("backward: tape already swept");
  swept_ = true;
  for (int i = 0; i <= loss.id; ++i) nodes_[i].grad.assign(nodes_[i].value.size(), 0.0);
  nodes_[loss.id].grad[0] = 1.0;
  for (int i = loss.id; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back(*this, i);
}

Tensor Tape::grad_of(Var v) const {
  if (v.tape != this) throw std::invalid_argument("grad_of: node from another tape");
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor::zeros(n.shape);
  return Tensor(n.shape, n.grad);
}

// ---------------------------------------------------------------- op helpers

namespace {

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument(std::string(op) + ": operands from different tapes");
}

void check_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

Var unary_map(Var a, const char* /*op*/, double (*fwd)(double), double (*dfn)(double)) {
  Tape& t = *a.tape;
  const auto& av = t.value(a.id);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  int aid = a.id;
  int id = t.emplace(a.shape(), std::move(out), [aid, dfn](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.value(aid);
    auto& ga = tp.grad(aid);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfn(x[i]);
  });
  return Var{&t, id};
}

}  // namespace

// ---------------------------------------------------------------- arithmetic

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  check_same_shape(a, b, "add");
  Tape& t = *a.tape;
  const auto& av = t.value(a.id);
  const auto& bv = t.value(b.id);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  int aid = a.id, bid = b.id;
  int id = t.emplace(a.shape(), std::move(out), [aid, bid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
  return Var{&t, id};
}

Var sub(Var a, Var b) {
  check_same_tape(a, b, "sub");
  check_same_shape(a, b, "sub");
  Tape& t = *a.tape;
  const auto& av = t.value(a.id);
  const auto& bv = t.value(b.id);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  int aid = a.id, bid = b.id;
  int id = t.emplace(a.shape(), std::move(out), [aid, bid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
  return Var{&t, id};
}

Var mul(Var a, Var b) {
  check_same_tape(a, b, "mul");
  check_same_shape(a, b, "mul");
  Tape& t = *a.tape;
  const auto& av = t.value(a.id);
  const auto& bv = t.value(b.id);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  int aid = a.id, bid = b.id;
  int id = t.emplace(a.shape(), std::move(out), [aid, bid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.value(aid);
    const auto& y = tp.value(bid);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * y[i];
      gb[i] += g[i] * x[i];
    }
  });
  return Var{&t, id};
}

Var scale(Var a, double k) {
  Tape& t = *a.tape;
  const auto& av = t.value(a.id);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * k;
  int aid = a.id;
  int id = t.emplace(a.shape(), std::move(out), [aid, k](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
  });
  return Var{&t, id};
}

Var mul_scalar(Var m, Var s) {
  check_same_tape(m, s, "mul_scalar");
  if (s.size() != 1) throw ShapeError("mul_scalar: scale must be a scalar node");
  Tape& t = *m.tape;
  const auto& mv = t.value(m.id);
  double sv = t.value(s.id)[0];
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < mv.size(); ++i) out[i] = mv[i] * sv;
  int mid = m.id, sid = s.id;
  int id = t.emplace(m.shape(), std::move(out), [mid, sid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& x = tp.value(mid);
    double sval = tp.value(sid)[0];
    auto& gm = tp.grad(mid);
    auto& gs = tp.grad(sid);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gm[i] += g[i] * sval;
      gs[0] += g[i] * x[i];
    }
  });
  return Var{&t, id};
}

Var add_bias(Var m, Var bias) {
  check_same_tape(m, bias, "add_bias");
  const Shape& ms = m.shape();
  const Shape& bs = bias.shape();
  if (ms.size() != 2 || bs.size() != 1 || bs[0] != ms[1])
    throw ShapeError("add_bias: need {n,d} + {d}, got " + shape_str(ms) + " + " + shape_str(bs));
  Tape& t = *m.tape;
  const auto& mv = t.value(m.id);
  const auto& bv = t.value(bias.id);
  std::size_t n = ms[0], d = ms[1];
  std::vector<double> out(mv.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = mv[r * d + c] + bv[c];
  int mid = m.id, bid = bias.id;
  int id = t.emplace(ms, std::move(out), [mid, bid, n, d](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gm = tp.grad(mid);
    auto& gb = tp.grad(bid);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        gm[r * d + c] += g[r * d + c];
        gb[c] += g[r * d + c];
      }
  });
  return Var{&t, id};
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  Tape& t = *a.tape;
  std::size_t m = as[0], k = as[1], n = bs[1];
  const auto& av = t.value(a.id);
  const auto& bv = t.value(b.id);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  int aid = a.id, bid = b.id;
  int id = t.emplace({m, n}, std::move(out), [aid, bid, m, k, n](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av2 = tp.value(aid);
    const auto& bv2 = tp.value(bid);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    // dA = G * B^T
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* grow = &g[i * n];
        const double* brow = &bv2[p * n];
        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        ga[i * k + p] += acc;
      }
    // dB = A^T * G
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) {
        double x = av2[i * k + p];
        if (x == 0.0) continue;
        const double* grow = &g[i * n];
        double* gbrow = &gb[p * n];
        for (std::size_t j = 0; j < n; ++j) gbrow[j] += x * grow[j];
      }
  });
  return Var{&t, id};
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b, "matmul_nt");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1])
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(as) + " x " + shape_str(bs) +
                     "^T");
  Tape& t = *a.tape;
  std::size_t n = as[0], d = as[1], m = bs[0];
  const auto& av = t.value(a.id);
  const auto& bv = t.value(b.id);
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += av[i * d + k] * bv[j * d + k];
      out[i * m + j] = acc;
    }
  int aid = a.id, bid = b.id;
  int id = t.emplace({n, m}, std::move(out), [aid, bid, n, d, m](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av2 = tp.value(aid);
    const auto& bv2 = tp.value(bid);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double gij = g[i * m + j];
        if (gij == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          ga[i * d + k] += gij * bv2[j * d + k];
          gb[j * d + k] += gij * av2[i * d + k];
        }
      }
  });
  return Var{&t, id};
}

// ---------------------------------------------------------------- nonlinearities

namespace {
double relu_fwd(double x) { return x > 0.0 ? x : 0.0; }
double relu_dfn(double x) { return x > 0.0 ? 1.0 : 0.0; }
double abs_fwd(double x) { return std::fabs(x); }
double abs_dfn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
double exp_fwd(double x) { return std::exp(x); }
double log_fwd(double x) { return std::log(x); }
double log_dfn(double x) { return 1.0 / x; }

double sigmoid_stable(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

double softplus_value(double x) {
  // ln(1 + e^x), branch keeps the exponent small on both tails
  if (x > 30.0) return x + std::exp(-x);
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

Var relu(Var a) { return unary_map(a, "relu", relu_fwd, relu_dfn); }
Var abs_val(Var a) { return unary_map(a, "abs", abs_fwd, abs_dfn); }
Var exp_elem(Var a) { return unary_map(a, "exp", exp_fwd, exp_fwd); }
Var log_elem(Var a) { return unary_map(a, "log", log_fwd, log_dfn); }
Var softplus(Var a) { return unary_map(a, "softplus", softplus_value, sigmoid_stable); }

std::vector<double> softmax_values(const std::vector<double>& v) {
  if (v.empty()) throw std::domain_error("softmax: empty vector");
  double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    denom += out[i];
  }
  for (double& x : out) x /= denom;
  return out;
}

Var softmax(Var v) {
  const Shape& s = v.shape();
  if (s.empty() || (s.size() != 1 && s.size() != 2))
    throw std::domain_error("softmax: need a vector or matrix");
  std::size_t n = s.size() == 1 ? 1 : s[0];
  std::size_t d = s.size() == 1 ? s[0] : s[1];
  if (d == 0) throw std::domain_error("softmax: empty vector");
  Tape& t = *v.tape;
  const auto& x = t.value(v.id);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> row(x.begin() + r * d, x.begin() + (r + 1) * d);
    auto sm = softmax_values(row);
    std::copy(sm.begin(), sm.end(), out.begin() + r * d);
  }
  int vid = v.id;
  int id = t.emplace(s, std::move(out), [vid, n, d](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self);
    auto& gv = tp.grad(vid);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c)
        gv[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
    }
  });
  return Var{&t, id};
}

// ---------------------------------------------------------------- reductions

Var sum(Var a) {
  Tape& t = *a.tape;
  const auto& av = t.value(a.id);
  double acc = 0.0;
  for (double x : av) acc += x;
  int aid = a.id;
  int id = t.emplace({1}, {acc}, [aid](Tape& tp, int self) {
    double g = tp.grad(self)[0];
    auto& ga = tp.grad(aid);
    for (double& x : ga) x += g;
  });
  return Var{&t, id};
}

Var mean_all(Var a) {
  std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_rows(Var m) {
  const Shape& s = m.shape();
  if (s.size() != 2) throw ShapeError("mean_rows: need a matrix");
  std::size_t n = s[0], d = s[1];
  Tape& t = *m.tape;
  const auto& mv = t.value(m.id);
  std::vector<double> out(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += mv[r * d + c];
  for (double& x : out) x /= static_cast<double>(n);
  int mid = m.id;
  int id = t.emplace({d}, std::move(out), [mid, n, d](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gm = tp.grad(mid);
    double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) gm[r * d + c] += g[c] * inv;
  });
  return Var{&t, id};
}

Var row_sums(Var m) {
  const Shape& s = m.shape();
  if (s.size() != 2) throw ShapeError("row_sums: need a matrix");
  std::size_t n = s[0], d = s[1];
  Tape& t = *m.tape;
  const auto& mv = t.value(m.id);
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r] += mv[r * d + c];
  int mid = m.id;
  int id = t.emplace({n}, std::move(out), [mid, n, d](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gm = tp.grad(mid);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) gm[r * d + c] += g[r];
  });
  return Var{&t, id};
}

Var l2norm_rows(Var m) {
  const Shape& s = m.shape();
  if (s.size() != 2) throw ShapeError("l2norm_rows: need a matrix");
  std::size_t n = s[0], d = s[1];
  Tape& t = *m.tape;
  const auto& mv = t.value(m.id);
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += mv[r * d + c] * mv[r * d + c];
    out[r] = std::sqrt(acc);
  }
  int mid = m.id;
  int id = t.emplace({n}, std::move(out), [mid, n, d](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.value(self);
    const auto& x = tp.value(mid);
    auto& gm = tp.grad(mid);
    for (std::size_t r = 0; r < n; ++r) {
      if (y[r] == 0.0) continue;  // subgradient 0 at the kink
      double k = g[r] / y[r];
      for (std::size_t c = 0; c < d; ++c) gm[r * d + c] += k * x[r * d + c];
    }
  });
  return Var{&t, id};
}

// ---------------------------------------------------------------- similarity

namespace {
double dot_range(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) acc += a[i] * b[i];
  return acc;
}
}  // namespace

double cosine_value(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw ShapeError("cosine: length mismatch");
  double nu = std::sqrt(dot_range(u.data(), u.data(), u.size()));
  double nv = std::sqrt(dot_range(v.data(), v.data(), v.size()));
  if (nu == 0.0 || nv == 0.0) throw std::domain_error("cosine: zero vector");
  return dot_range(u.data(), v.data(), u.size()) / (nu * nv);
}

Var cosine_rows(Var x, Var y) {
  check_same_tape(x, y, "cosine_rows");
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (xs.size() != 2 || ys.size() != 2 || xs[1] != ys[1])
    throw ShapeError("cosine_rows: need {n,d},{m,d}, got " + shape_str(xs) + "," + shape_str(ys));
  std::size_t n = xs[0], m = ys[0], d = xs[1];
  Tape& t = *x.tape;
  const auto& xv = t.value(x.id);
  const auto& yv = t.value(y.id);
  std::vector<double> nx(n), ny(m);
  for (std::size_t i = 0; i < n; ++i) {
    nx[i] = std::sqrt(dot_range(&xv[i * d], &xv[i * d], d));
    if (nx[i] == 0.0) throw std::domain_error("cosine_rows: zero row in first argument");
  }
  for (std::size_t j = 0; j < m; ++j) {
    ny[j] = std::sqrt(dot_range(&yv[j * d], &yv[j * d], d));
    if (ny[j] == 0.0) throw std::domain_error("cosine_rows: zero row in second argument");
  }
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out[i * m + j] = dot_range(&xv[i * d], &yv[j * d], d) / (nx[i] * ny[j]);
  int xid = x.id, yid = y.id;
  int id = t.emplace({n, m}, std::move(out),
                     [xid, yid, n, m, d, nx, ny](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& c = tp.value(self);
    const auto& xv2 = tp.value(xid);
    const auto& yv2 = tp.value(yid);
    auto& gx = tp.grad(xid);
    auto& gy = tp.grad(yid);
    // d c_ij / d x_i = y_j/(|x||y|) - c_ij x_i/|x|^2, symmetric for y
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double gij = g[i * m + j];
        if (gij == 0.0) continue;
        double cij = c[i * m + j];
        double inv = 1.0 / (nx[i] * ny[j]);
        double ix2 = 1.0 / (nx[i] * nx[i]);
        double iy2 = 1.0 / (ny[j] * ny[j]);
        for (std::size_t k = 0; k < d; ++k) {
          gx[i * d + k] += gij * (yv2[j * d + k] * inv - cij * xv2[i * d + k] * ix2);
          gy[j * d + k] += gij * (xv2[i * d + k] * inv - cij * yv2[j * d + k] * iy2);
        }
      }
  });
  return Var{&t, id};
}

Var cosine_similarity(Var u, Var v) {
  if (u.shape().size() != 1 || v.shape().size() != 1)
    throw ShapeError("cosine_similarity: need two vectors");
  Var um = reshape(u, {1, u.size()});
  Var vm = reshape(v, {1, v.size()});
  return reshape(cosine_rows(um, vm), {1});
}

// ---------------------------------------------------------------- structure

Var take_entries(Var m, std::vector<std::pair<std::size_t, std::size_t>> idx) {
  const Shape& s = m.shape();
  if (s.size() != 2) throw ShapeError("take_entries: need a matrix");
  std::size_t rows = s[0], cols = s[1];
  Tape& t = *m.tape;
  const auto& mv = t.value(m.id);
  std::vector<double> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k].first >= rows || idx[k].second >= cols)
      throw ShapeError("take_entries: index out of range");
    out[k] = mv[idx[k].first * cols + idx[k].second];
  }
  int mid = m.id;
  std::size_t count = idx.size();  // the capture below moves idx
  int id = t.emplace({count}, std::move(out),
                     [mid, cols, idx = std::move(idx)](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gm = tp.grad(mid);
    for (std::size_t k = 0; k < idx.size(); ++k)
      gm[idx[k].first * cols + idx[k].second] += g[k];
  });
  return Var{&t, id};
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b, "concat_cols");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[0] != bs[0])
    throw ShapeError("concat_cols: row mismatch " + shape_str(as) + "," + shape_str(bs));
  std::size_t n = as[0], da = as[1], db = bs[1];
  Tape& t = *a.tape;
  const auto& av = t.value(a.id);
  const auto& bv = t.value(b.id);
  std::vector<double> out(n * (da + db));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(av.begin() + r * da, av.begin() + (r + 1) * da, out.begin() + r * (da + db));
    std::copy(bv.begin() + r * db, bv.begin() + (r + 1) * db,
              out.begin() + r * (da + db) + da);
  }
  int aid = a.id, bid = b.id;
  int id = t.emplace({n, da + db}, std::move(out), [aid, bid, n, da, db](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    auto& gb = tp.grad(bid);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < da; ++c) ga[r * da + c] += g[r * (da + db) + c];
      for (std::size_t c = 0; c < db; ++c) gb[r * db + c] += g[r * (da + db) + da + c];
    }
  });
  return Var{&t, id};
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: empty row list");
  Tape& t = *rows[0].tape;
  std::size_t d = rows[0].size();
  std::vector<int> ids;
  ids.reserve(rows.size());
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (const Var& r : rows) {
    if (r.tape != &t) throw std::invalid_argument("stack_rows: mixed tapes");
    if (r.shape().size() != 1 || r.size() != d)
      throw ShapeError("stack_rows: rows must be vectors of equal length");
    const auto& v = t.value(r.id);
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(r.id);
  }
  int id = t.emplace({rows.size(), d}, std::move(out),
                     [ids = std::move(ids), d](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto& gr = tp.grad(ids[r]);
      for (std::size_t c = 0; c < d; ++c) gr[c] += g[r * d + c];
    }
  });
  return Var{&t, id};
}

Var reshape(Var a, Shape s) {
  if (shape_size(s) != a.size())
    throw ShapeError("reshape: size mismatch " + shape_str(a.shape()) + " -> " + shape_str(s));
  Tape& t = *a.tape;
  int aid = a.id;
  int id = t.emplace(std::move(s), t.value(a.id), [aid](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(aid);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return Var{&t, id};
}

// ---------------------------------------------------------------- convolution

Var conv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  check_same_tape(input, weight, "conv2d");
  check_same_tape(input, bias, "conv2d");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  const Shape& bs = bias.shape();
  if (is.size() != 4 || ws.size() != 4 || bs.size() != 1)
    throw ShapeError("conv2d: need input {N,C,H,W}, weight {O,C,kh,kw}, bias {O}");
  std::size_t N = is[0], C = is[1], H = is[2], W = is[3];
  std::size_t O = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != C || bs[0] != O) throw ShapeError("conv2d: channel mismatch");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
  std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
  Tape& t = *input.tape;
  const auto& x = t.value(input.id);
  const auto& w = t.value(weight.id);
  const auto& b = t.value(bias.id);
  std::vector<double> out(N * O * Ho * Wo);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t ho = 0; ho < Ho; ++ho)
        for (std::size_t wo = 0; wo < Wo; ++wo) {
          double acc = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ph = 0; ph < kh; ++ph) {
              std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(ho * stride + ph) -
                                  static_cast<std::ptrdiff_t>(pad);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t pw = 0; pw < kw; ++pw) {
                std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(wo * stride + pw) -
                                    static_cast<std::ptrdiff_t>(pad);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += x[((n * C + c) * H + ih) * W + iw] *
                       w[((o * C + c) * kh + ph) * kw + pw];
              }
            }
          out[((n * O + o) * Ho + ho) * Wo + wo] = acc;
        }
  int xid = input.id, wid = weight.id, bid = bias.id;
  int id = t.emplace({N, O, Ho, Wo}, std::move(out),
                     [xid, wid, bid, N, C, H, W, O, kh, kw, Ho, Wo, stride,
                      pad](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& x2 = tp.value(xid);
    const auto& w2 = tp.value(wid);
    auto& gx = tp.grad(xid);
    auto& gw = tp.grad(wid);
    auto& gb = tp.grad(bid);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t ho = 0; ho < Ho; ++ho)
          for (std::size_t wo = 0; wo < Wo; ++wo) {
            double go = g[((n * O + o) * Ho + ho) * Wo + wo];
            if (go == 0.0) continue;
            gb[o] += go;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ph = 0; ph < kh; ++ph) {
                std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(ho * stride + ph) -
                                    static_cast<std::ptrdiff_t>(pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t pw = 0; pw < kw; ++pw) {
                  std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(wo * stride + pw) -
                                      static_cast<std::ptrdiff_t>(pad);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  std::size_t xi = ((n * C + c) * H + ih) * W + iw;
                  std::size_t wi = ((o * C + c) * kh + ph) * kw + pw;
                  gx[xi] += go * w2[wi];
                  gw[wi] += go * x2[xi];
                }
              }
          }
  });
  return Var{&t, id};
}

Var global_avg_pool(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ShapeError("global_avg_pool: need {N,C,H,W}");
  std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  std::size_t hw = H * W;
  Tape& t = *x.tape;
  const auto& xv = t.value(x.id);
  std::vector<double> out(N * C, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      const double* p = &xv[(n * C + c) * hw];
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      out[n * C + c] = acc / static_cast<double>(hw);
    }
  int xid = x.id;
  int id = t.emplace({N, C}, std::move(out), [xid, N, C, hw](Tape& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(xid);
    double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        double gi = g[n * C + c] * inv;
        double* p = &gx[(n * C + c) * hw];
        for (std::size_t i = 0; i < hw; ++i) p[i] += gi;
      }
  });
  return Var{&t, id};
}

// ---------------------------------------------------------------- optimizer

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam: " + std::to_string(params.size()) + " params vs " +
                                std::to_string(grads.size()) + " grads");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->size(), 0.0);
      v_[i].assign(params[i]->size(), 0.0);
    }
  }
  if (m_.size() != params.size())
    throw std::invalid_argument("adam: parameter block count changed between steps");
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (p.shape != g.shape)
      throw ShapeError("adam: shape mismatch in block " + std::to_string(i));
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g.data[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g.data[k] * g.data[k];
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      p.data[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

// ---------------------------------------------------------------- finite differences

double finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps) {
  // Analytic gradients through one taped evaluation.
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    Var loss = f(tape, leaves);
    if (!std::isfinite(loss.scalar_value()))
      throw std::runtime_error("finite_diff_check: non-finite loss at base point");
    tape.backward(loss);
    for (const Var& l : leaves) analytic.push_back(tape.grad_of(l));
  }

  auto eval = [&](const std::vector<Tensor>& pts) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(pts.size());
    for (const Tensor& p : pts) leaves.push_back(tape.leaf(p));
    return f(tape, leaves).scalar_value();
  };

  double worst = 0.0;
  std::vector<Tensor> work = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t k = 0; k < params[pi].size(); ++k) {
      double orig = work[pi].data[k];
      work[pi].data[k] = orig + eps;
      double fp = eval(work);
      work[pi].data[k] = orig - eps;
      double fm = eval(work);
      work[pi].data[k] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("finite_diff_check: non-finite value at parameter " +
                                 std::to_string(pi) + "[" + std::to_string(k) + "]");
      double central = (fp - fm) / (2.0 * eps);
      double err = std::fabs(analytic[pi].data[k] - central) /
                   std::max(1e-8, std::fabs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace mmsa
