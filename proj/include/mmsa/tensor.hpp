// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mmsa {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major tensor of 64-bit floats. Values are immutable once the
/// tensor enters a tape; mutation happens only through optimizer updates on
/// parameter blocks.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d, bool rg = false);

  static Tensor zeros(Shape s, bool rg = false);
  static Tensor scalar(double v, bool rg = false);
  static Tensor of(Shape s, std::initializer_list<double> values, bool rg = false);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
  bool all_finite() const;
};

class Tape;

/// Lightweight handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const;
  const std::vector<double>& values() const;
  double scalar_value() const;
  std::size_t size() const;
};

/// Append-only record of forward operations. Creation order is a topological
/// order, so the reverse sweep visits each node after all of its consumers and
/// accumulates exactly one gradient per node.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(const Tensor& t);
  Var constant(Tensor t);

  /// Reverse sweep from a scalar loss. Throws if the loss is not scalar.
  void backward(Var loss);
  Tensor grad_of(Var v) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Node machinery used by the op implementations.
  using BackFn = std::function<void(Tape&, int)>;
  int emplace(Shape shape, std::vector<double> value, BackFn back);
  const std::vector<double>& value(int id) const { return nodes_[id].value; }
  std::vector<double>& grad(int id) { return nodes_[id].grad; }
  const std::vector<double>& grad(int id) const { return nodes_[id].grad; }
  const Shape& shape(int id) const { return nodes_[id].shape; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    BackFn back;
  };
  // deque keeps value/grad references stable while new nodes are appended
  std::deque<Node> nodes_;
  bool swept_ = false;
};

// Elementwise and structural operations. All record a gradient rule unless the
// result cannot reach a leaf.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var mul_scalar(Var m, Var s);  // s is a {1} node, broadcast multiply
Var add_bias(Var m, Var bias);
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // {n,d} x {m,d} -> {n,m}, i.e. A * B^T
Var relu(Var a);
Var softplus(Var a);
Var abs_val(Var a);
Var exp_elem(Var a);
Var log_elem(Var a);
Var softmax(Var v);  // 1-D vector or 2-D row-wise, max-subtracted
Var sum(Var a);
Var mean_all(Var a);
Var mean_rows(Var m);   // {n,d} -> {d}
Var row_sums(Var m);    // {n,d} -> {n}
Var l2norm_rows(Var m); // {n,d} -> {n}, subgradient 0 at zero rows
Var cosine_rows(Var x, Var y);        // {n,d},{m,d} -> {n,m}
Var cosine_similarity(Var u, Var v);  // 1-D,1-D -> {1}
Var take_entries(Var m, std::vector<std::pair<std::size_t, std::size_t>> idx);
Var concat_cols(Var a, Var b);
Var stack_rows(const std::vector<Var>& rows);  // 1-D vars -> {n,d}
Var reshape(Var a, Shape s);
Var conv2d(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad);
Var global_avg_pool(Var x);  // {N,C,H,W} -> {N,C}

// Plain-value variants used outside the tape.
double softplus_value(double x);
std::vector<double> softmax_values(const std::vector<double>& v);
double cosine_value(const std::vector<double>& u, const std::vector<double>& v);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected adaptive-moment optimizer. Moment buffers are keyed by
/// parameter position, so the caller must pass the same block order on every
/// step.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {});
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Builds a scalar from leaves created on the given tape.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares tape gradients of f against central finite differences.
/// Returns max over parameter entries of
/// |analytic - central| / max(1e-8, |central|).
/// Throws if f evaluates to a non-finite value, naming the parameter index.
double finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& params,
                         double eps = 1e-5);

}  // namespace mmsa
