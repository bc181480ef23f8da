// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mmsa/random.hpp"
#include "mmsa/tensor.hpp"
#include "test_util.hpp"

using namespace mmsa;
using testutil::random_tensor;
using testutil::random_tensor_away_from;

TEST_CASE("matmul basics") {
  Tape t;
  Var eye = t.constant(Tensor::of({2, 2}, {1, 0, 0, 1}));
  Var b = t.constant(Tensor::of({2, 2}, {5, 6, 7, 8}));
  CHECK(matmul(eye, b).values() == b.values());

  Var a = t.constant(Tensor::of({2, 2}, {1, 2, 3, 4}));
  Var p = t.constant(Tensor::of({2, 2}, {0, 1, 1, 0}));
  Var ap = matmul(a, p);
  CHECK(ap.values() == std::vector<double>{2, 1, 4, 3});

  Var s1 = t.constant(Tensor::of({1, 1}, {2.0}));
  Var s2 = t.constant(Tensor::of({1, 1}, {3.0}));
  CHECK(matmul(s1, s2).values()[0] == doctest::Approx(6.0));

  Var bad = t.constant(Tensor::zeros({3, 2}));
  CHECK_THROWS_AS(matmul(a, bad), ShapeError);
}

TEST_CASE("matmul agrees with triple-loop oracle") {
  Rng rng(11);
  for (int it = 0; it < 10; ++it) {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 5});
    Tape t;
    Var r = matmul(t.constant(a), t.constant(b));
    Tensor want = testutil::matmul_oracle(a, b);
    CHECK(testutil::max_abs_diff(r.values(), want.data) < 1e-12);
  }
}

TEST_CASE("softmax uniform, closed form, shift invariance") {
  Tape t;
  Var u = softmax(t.constant(Tensor::of({3}, {4.2, 4.2, 4.2})));
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Var s = softmax(t.constant(Tensor::of({2}, {0.0, std::log(2.0)})));
  CHECK(s.values()[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(s.values()[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));

  Rng rng(3);
  for (int it = 0; it < 20; ++it) {
    Tensor v = random_tensor(rng, {6}, -5, 5);
    Tensor vs = v;
    double k = rng.uniform(-100, 100);
    for (double& x : vs.data) x += k;
    Tape tp;
    auto a = softmax(tp.constant(v)).values();
    auto b = softmax(tp.constant(vs)).values();
    CHECK(testutil::max_abs_diff(a, b) < 1e-12);
    double total = 0.0;
    for (double x : a) {
      CHECK(x > 0.0);
      total += x;
    }
    CHECK(std::fabs(total - 1.0) < 1e-12);
  }

  CHECK_THROWS_AS(softmax_values({}), std::domain_error);
}

TEST_CASE("softplus closed form and asymptotes") {
  CHECK(softplus_value(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::fabs(softplus_value(50.0) - 50.0) < 1e-9);
  Rng rng(5);
  for (int it = 0; it < 20; ++it) {
    double x = rng.uniform(-40, 40);
    CHECK(softplus_value(x) - softplus_value(-x) == doctest::Approx(x).epsilon(1e-9));
  }
}

TEST_CASE("cosine similarity") {
  std::vector<double> u{1, 0}, v{0, 1}, w{1, 1};
  CHECK(cosine_value(u, u) == doctest::Approx(1.0));
  CHECK(cosine_value(u, v) == doctest::Approx(0.0));
  CHECK(cosine_value(u, w) == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-6));
  CHECK_THROWS_AS(cosine_value({0, 0}, {1, 0}), std::domain_error);

  Tape t;
  Var a = t.constant(Tensor::of({2}, {1, 0}));
  Var b = t.constant(Tensor::of({2}, {1, 1}));
  CHECK(cosine_similarity(a, b).scalar_value() == doctest::Approx(0.707107).epsilon(1e-6));
}

TEST_CASE("backward: square, sum, and the matmul oracle") {
  {
    Tape t;
    Var x = t.leaf(Tensor::scalar(3.0, true));
    Var y = mul(x, x);
    t.backward(y);
    CHECK(t.grad_of(x).data[0] == doctest::Approx(6.0));
  }
  {
    Tape t;
    Var v = t.leaf(Tensor({4}, {1, 2, 3, 4}, true));
    t.backward(sum(v));
    for (double g : t.grad_of(v).data) CHECK(g == doctest::Approx(1.0));
  }
  {
    Rng rng(17);
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {4, 2});
    double err = finite_diff_check(
        [](Tape&, const std::vector<Var>& ps) { return sum(matmul(ps[0], ps[1])); },
        {a, b});
    CHECK(err < 1e-4);
  }
  {
    Tape t;
    Var v = t.leaf(Tensor({2}, {1, 2}, true));
    CHECK_THROWS(t.backward(v));  // non-scalar loss
  }
}

TEST_CASE("finite_diff_check endpoints") {
  Rng rng(23);
  Tensor p = random_tensor(rng, {5});
  // Linear functional: exact derivative, error limited only by roundoff.
  double lin = finite_diff_check(
      [](Tape& t, const std::vector<Var>& ps) {
        Var w = t.constant(Tensor::of({5}, {0.3, -1.2, 2.0, 0.7, -0.1}));
        return sum(mul(ps[0], w));
      },
      {p});
  CHECK(lin < 1e-9);
  // Constant functional: both sides identically zero.
  double con = finite_diff_check(
      [](Tape&, const std::vector<Var>& ps) { return scale(sum(mul(ps[0], ps[0])), 0.0); },
      {p});
  CHECK(con == 0.0);
}

TEST_CASE("adam steps") {
  Tensor p = Tensor::of({2}, {1.0, -2.0});
  Tensor p0 = p;
  Adam opt;
  opt.step({&p}, {Tensor::zeros({2})});
  CHECK(p.data == p0.data);  // zero gradient moves nothing
  CHECK(opt.steps() == 1);

  Tensor q = Tensor::scalar(0.5);
  Adam opt2(AdamConfig{0.001, 0.9, 0.999, 1e-8});
  opt2.step({&q}, {Tensor::scalar(1.0)});
  CHECK(q.data[0] == doctest::Approx(0.5 - 0.001).epsilon(1e-6));
  opt2.step({&q}, {Tensor::scalar(1.0)});
  CHECK(opt2.steps() == 2);

  Tensor bad = Tensor::zeros({3});
  CHECK_THROWS(opt2.step({&q}, {bad}));
}

TEST_CASE("forward results are bitwise reproducible") {
  auto run = [] {
    Rng rng(99);
    Tensor a = random_tensor(rng, {4, 4});
    Tensor b = random_tensor(rng, {4, 4});
    Tape t;
    Var z = softmax(row_sums(relu(matmul(t.constant(a), t.constant(b)))));
    return z.values();
  };
  CHECK(run() == run());
}

// Every op with a gradient rule, checked against central differences on 20
// random small instances each.
TEST_CASE("gradient rules match finite differences") {
  struct OpCase {
    const char* name;
    ScalarFn fn;
    std::vector<Shape> shapes;
    bool away_from_zero = false;
  };
  auto wrap = [](Var v) { return sum(v); };
  std::vector<OpCase> cases;
  cases.push_back({"add", [&](Tape&, const std::vector<Var>& p) { return sum(add(p[0], p[1])); },
                   {{3, 4}, {3, 4}}});
  cases.push_back({"sub", [&](Tape&, const std::vector<Var>& p) { return sum(sub(p[0], p[1])); },
                   {{3, 4}, {3, 4}}});
  cases.push_back({"mul", [&](Tape&, const std::vector<Var>& p) { return sum(mul(p[0], p[1])); },
                   {{3, 4}, {3, 4}}});
  cases.push_back({"scale", [&](Tape&, const std::vector<Var>& p) { return sum(scale(p[0], -1.7)); },
                   {{3, 4}}});
  cases.push_back({"mul_scalar",
                   [&](Tape&, const std::vector<Var>& p) { return sum(mul_scalar(p[0], p[1])); },
                   {{3, 4}, {1}}});
  cases.push_back({"add_bias",
                   [&](Tape&, const std::vector<Var>& p) { return sum(add_bias(p[0], p[1])); },
                   {{3, 4}, {4}}});
  cases.push_back({"matmul",
                   [&](Tape&, const std::vector<Var>& p) { return sum(matmul(p[0], p[1])); },
                   {{3, 4}, {4, 2}}});
  cases.push_back({"relu", [&](Tape&, const std::vector<Var>& p) { return sum(relu(p[0])); },
                   {{3, 4}}, true});
  cases.push_back({"softplus",
                   [&](Tape&, const std::vector<Var>& p) { return sum(softplus(p[0])); },
                   {{3, 4}}});
  cases.push_back({"abs", [&](Tape&, const std::vector<Var>& p) { return sum(abs_val(p[0])); },
                   {{3, 4}}, true});
  cases.push_back({"exp", [&](Tape&, const std::vector<Var>& p) { return sum(exp_elem(p[0])); },
                   {{3, 4}}});
  cases.push_back({"log",
                   [&](Tape& t, const std::vector<Var>& p) {
                     Var shifted = add(p[0], t.constant(Tensor({3, 4}, std::vector<double>(12, 3.0))));
                     return sum(log_elem(shifted));
                   },
                   {{3, 4}}});
  cases.push_back({"softmax",
                   [&](Tape&, const std::vector<Var>& p) {
                     return sum(mul(softmax(p[0]), p[1]));
                   },
                   {{3, 4}, {3, 4}}});
  cases.push_back({"mean_all", [&](Tape&, const std::vector<Var>& p) { return mean_all(p[0]); },
                   {{3, 4}}});
  cases.push_back({"mean_rows",
                   [&](Tape&, const std::vector<Var>& p) { return sum(mul(mean_rows(p[0]), p[1])); },
                   {{3, 4}, {4}}});
  cases.push_back({"row_sums",
                   [&](Tape&, const std::vector<Var>& p) { return sum(mul(row_sums(p[0]), p[1])); },
                   {{3, 4}, {3}}});
  cases.push_back({"l2norm_rows",
                   [&](Tape&, const std::vector<Var>& p) { return sum(l2norm_rows(p[0])); },
                   {{3, 4}}, true});
  cases.push_back({"cosine_rows",
                   [&](Tape&, const std::vector<Var>& p) { return sum(cosine_rows(p[0], p[1])); },
                   {{3, 4}, {2, 4}}, true});
  cases.push_back({"take_entries",
                   [&](Tape&, const std::vector<Var>& p) {
                     return sum(take_entries(p[0], {{0, 0}, {1, 2}, {2, 3}}));
                   },
                   {{3, 4}}});
  cases.push_back({"concat_cols",
                   [&](Tape&, const std::vector<Var>& p) { return sum(mul(concat_cols(p[0], p[1]), p[2])); },
                   {{3, 2}, {3, 3}, {3, 5}}});
  cases.push_back({"stack_rows",
                   [&](Tape&, const std::vector<Var>& p) {
                     return sum(mul(stack_rows({p[0], p[1], p[2]}), p[3]));
                   },
                   {{4}, {4}, {4}, {3, 4}}});
  cases.push_back({"reshape",
                   [&](Tape&, const std::vector<Var>& p) { return sum(mul(reshape(p[0], {4, 3}), p[1])); },
                   {{3, 4}, {4, 3}}});
  cases.push_back({"conv2d",
                   [&](Tape&, const std::vector<Var>& p) {
                     return sum(conv2d(p[0], p[1], p[2], 2, 1));
                   },
                   {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}}});
  cases.push_back({"global_avg_pool",
                   [&](Tape&, const std::vector<Var>& p) {
                     return sum(mul(global_avg_pool(p[0]), p[1]));
                   },
                   {{2, 3, 4, 4}, {2, 3}}});
  (void)wrap;

  for (const auto& c : cases) {
    CAPTURE(c.name);
    Rng rng(hash_bytes(c.name));
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      std::vector<Tensor> params;
      for (const Shape& s : c.shapes)
        params.push_back(c.away_from_zero ? random_tensor_away_from(rng, s)
                                          : random_tensor(rng, s));
      worst = std::max(worst, finite_diff_check(c.fn, params));
    }
    CHECK_MESSAGE(worst < 1e-3, c.name << " worst rel err " << worst);
  }
}
