// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <vector>

#include "mmsa/structure.hpp"
#include "test_util.hpp"

using namespace mmsa;

namespace {

void check_hypergraph_invariants(const Hypergraph& hg) {
  const std::size_t b = hg.incidence.shape[0];
  for (double v : hg.incidence.data) CHECK((v == 0.0 || v == 1.0));
  for (std::size_t e = 0; e < b; ++e) {
    double col = 0.0;
    for (std::size_t v = 0; v < b; ++v) col += hg.incidence.data[v * b + e];
    CHECK(col == static_cast<double>(hg.k_eff));
    CHECK(hg.incidence.data[e * b + e] == 1.0);  // seed node belongs to its edge
    CHECK(hg.edge_degree.data[e] > 0.0);
  }
  for (std::size_t v = 0; v < b; ++v) CHECK(hg.node_degree.data[v] > 0.0);
}

}  // namespace

TEST_CASE("knn hypergraph: degenerate and derived cases") {
  Rng rng(3);
  {
    Tensor c = testutil::random_tensor(rng, {5, 4});
    Hypergraph hg = build_knn_hypergraph(c, 1);
    check_hypergraph_invariants(hg);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        CHECK(hg.incidence.data[i * 5 + j] == (i == j ? 1.0 : 0.0));
  }
  {
    Tensor c = testutil::random_tensor(rng, {3, 4});
    Hypergraph hg = build_knn_hypergraph(c, 3);
    check_hypergraph_invariants(hg);
    for (double v : hg.incidence.data) CHECK(v == 1.0);
    // K larger than the batch clamps
    Hypergraph clamped = build_knn_hypergraph(c, 10);
    CHECK(clamped.k_eff == 3);
    for (double v : clamped.incidence.data) CHECK(v == 1.0);
  }
  {
    // rows e1, e1 + 0.01 e2, e3, e4: node 0's nearest other node is node 1
    Tensor c = Tensor::zeros({4, 4});
    c.data[0 * 4 + 0] = 1.0;
    c.data[1 * 4 + 0] = 1.0;
    c.data[1 * 4 + 1] = 0.01;
    c.data[2 * 4 + 2] = 1.0;
    c.data[3 * 4 + 3] = 1.0;
    Hypergraph hg = build_knn_hypergraph(c, 2);
    check_hypergraph_invariants(hg);
    CHECK(hg.incidence.data[0 * 4 + 0] == 1.0);
    CHECK(hg.incidence.data[1 * 4 + 0] == 1.0);
    CHECK(hg.incidence.data[2 * 4 + 0] == 0.0);
    CHECK(hg.incidence.data[3 * 4 + 0] == 0.0);
  }
  CHECK_THROWS(build_knn_hypergraph(Tensor::zeros({3, 2}), 0));
}

TEST_CASE("hgnn_conv: identity reduction and zero input") {
  Rng rng(7);
  Tensor c = testutil::random_tensor(rng, {5, 6});
  Tensor w = testutil::random_tensor(rng, {6, 6});
  {
    Hypergraph hg = build_knn_hypergraph(c, 1);  // H = I, all degrees 1
    Tape t;
    Var z = hgnn_conv(t, hg, t.constant(c), t.constant(w));
    Tape t2;
    Var want = relu(matmul(t2.constant(c), t2.constant(w)));
    CHECK(testutil::max_abs_diff(z.values(), want.values()) < 1e-9);
  }
  {
    Tensor zeros = Tensor::zeros({5, 6});
    Hypergraph hg = build_knn_hypergraph(zeros, 3);
    Tape t;
    Var z = hgnn_conv(t, hg, t.constant(zeros), t.constant(w));
    for (double v : z.values()) CHECK(v == 0.0);
  }
  {
    Hypergraph hg = build_knn_hypergraph(c, 3);
    Tape t;
    CHECK_THROWS_AS(hgnn_conv(t, hg, t.constant(c), t.constant(Tensor::zeros({6, 5}))),
                    ShapeError);
  }
}

TEST_CASE("hgnn_conv: permutation equivariance") {
  Rng rng(11);
  const std::size_t b = 6, d = 5;
  Tensor c = testutil::random_tensor(rng, {b, d});
  Tensor w = testutil::random_tensor(rng, {d, d});
  Hypergraph hg = build_knn_hypergraph(c, 3);
  Tape t;
  Var z = hgnn_conv(t, hg, t.constant(c), t.constant(w));

  Rng perm_rng(13);
  for (int it = 0; it < 20; ++it) {
    std::vector<std::size_t> perm(b);
    for (std::size_t i = 0; i < b; ++i) perm[i] = i;
    perm_rng.shuffle(perm);
    Tensor cp = Tensor::zeros({b, d});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < d; ++k) cp.data[perm[i] * d + k] = c.data[i * d + k];
    Hypergraph hgp = build_knn_hypergraph(cp, 3);
    Tape tp;
    Var zp = hgnn_conv(tp, hgp, tp.constant(cp), tp.constant(w));
    double worst = 0.0;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < d; ++k)
        worst = std::max(worst, std::fabs(zp.values()[perm[i] * d + k] - z.values()[i * d + k]));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("memory_align: anchors and weights") {
  {
    // a single anchor receives all the weight regardless of z
    Tape t;
    Var z = t.constant(Tensor::of({1, 3}, {0.2, -0.4, 1.0}));
    Var a = t.constant(Tensor::of({1, 3}, {5.0, 6.0, 7.0}));
    MemoryAlign al = memory_align(t, z, a);
    CHECK(al.weights.values() == std::vector<double>{1.0});
    CHECK(al.aligned.values() == std::vector<double>{5.0, 6.0, 7.0});
  }
  {
    // identical anchors: the convex combination is that anchor
    Tape t;
    Var z = t.constant(Tensor::of({1, 2}, {1.0, 0.0}));
    Var a = t.constant(Tensor::of({3, 2}, {0.3, 0.4, 0.3, 0.4, 0.3, 0.4}));
    MemoryAlign al = memory_align(t, z, a);
    CHECK(testutil::max_abs_diff(al.aligned.values(), {0.3, 0.4}) < 1e-15);
  }
  {
    // two orthonormal anchors, z equal to the first
    Tape t;
    Var z = t.constant(Tensor::of({1, 2}, {1.0, 0.0}));
    Var a = t.constant(Tensor::of({2, 2}, {1.0, 0.0, 0.0, 1.0}));
    MemoryAlign al = memory_align(t, z, a);
    double e = std::exp(1.0);
    CHECK(al.weights.values()[0] == doctest::Approx(e / (e + 1)).epsilon(1e-9));
    CHECK(al.weights.values()[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-9));
    CHECK(al.weights.values()[0] == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(al.weights.values()[1] == doctest::Approx(0.26894).epsilon(1e-5));
    CHECK(al.aligned.values()[0] == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(al.aligned.values()[1] == doctest::Approx(0.26894).epsilon(1e-5));
  }
  {
    // weights normalize exactly and stay in the simplex
    Rng rng(17);
    Tape t;
    Var z = t.constant(testutil::random_tensor_away_from(rng, {6, 8}));
    Var a = t.constant(testutil::random_tensor_away_from(rng, {12, 8}));
    MemoryAlign al = memory_align(t, z, a);
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < 12; ++j) {
        double wj = al.weights.values()[r * 12 + j];
        CHECK(wj >= 0.0);
        total += wj;
      }
      CHECK(std::fabs(total - 1.0) < 1e-12);
    }
  }
  {
    // zero embedding has no defined cosine
    Tape t;
    Var z = t.constant(Tensor::zeros({1, 3}));
    Var a = t.constant(Tensor::of({2, 3}, {1, 0, 0, 0, 1, 0}));
    CHECK_THROWS_AS(memory_align(t, z, a), std::domain_error);
    // the scaled-dot alternative accepts it
    MemoryAlign al = memory_align(t, z, a, AlignMetric::kScaledDot);
    CHECK(std::fabs(al.weights.values()[0] - 0.5) < 1e-12);
  }
}

TEST_CASE("memory_loss") {
  Tape t;
  Var z = t.constant(Tensor::of({1, 2}, {1.0, 2.0}));
  CHECK(memory_loss(t, z, z).scalar_value() == 0.0);
  Var zhat = t.constant(Tensor::of({1, 2}, {4.0, 6.0}));  // residual [3,4]
  CHECK(memory_loss(t, zhat, z).scalar_value() == doctest::Approx(25.0));

  Rng rng(29);
  for (int it = 0; it < 10; ++it) {
    Tape tt;
    Var a = tt.constant(testutil::random_tensor(rng, {4, 5}));
    Var b = tt.constant(testutil::random_tensor(rng, {4, 5}));
    CHECK(memory_loss(tt, a, b).scalar_value() >= 0.0);
  }
}

TEST_CASE("prediction_loss: exact, hand case, symmetry") {
  auto zero_predictor = [](std::size_t d, std::size_t out) {
    PredictorParams p;
    p.l1 = {Tensor::zeros({d, 4}, true), Tensor::zeros({4}, true)};
    p.l2 = {Tensor::zeros({4, out}, true), Tensor::zeros({out}, true)};
    return p;
  };
  {
    // all-zero predictors on all-zero labels are exact
    Tape t;
    PredictorVars geom = bind(t, zero_predictor(3, 2));
    PredictorVars prop = bind(t, zero_predictor(3, 2));
    Var z = t.constant(Tensor::of({2, 3}, {1, 2, 3, 4, 5, 6}));
    Var zh = t.constant(Tensor::of({2, 3}, {0, 1, 0, 1, 0, 1}));
    Var yg = t.constant(Tensor::zeros({2, 2}));
    Var yp = t.constant(Tensor::zeros({2, 2}));
    CHECK(prediction_loss(t, yg, yp, z, zh, geom, prop).scalar_value() == 0.0);
  }
  {
    // geometry predicted 0.5 from both embeddings, property exact
    PredictorParams geom_half = zero_predictor(2, 1);
    geom_half.l2.b.data[0] = 0.5;
    Tape t;
    PredictorVars geom = bind(t, geom_half);
    PredictorVars prop = bind(t, zero_predictor(2, 1));
    Var z = t.constant(Tensor::of({1, 2}, {3.0, -1.0}));
    Var zh = t.constant(Tensor::of({1, 2}, {0.5, 0.5}));
    Var yg = t.constant(Tensor::of({1, 1}, {1.0}));
    Var yp = t.constant(Tensor::of({1, 1}, {0.0}));
    CHECK(prediction_loss(t, yg, yp, z, zh, geom, prop).scalar_value() ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  {
    // swapping the two embedding branches leaves the sum unchanged
    Rng rng(31);
    Tape t;
    PredictorVars geom = bind(t, init_predictor(5, 6, 3, rng));
    PredictorVars prop = bind(t, init_predictor(5, 6, 4, rng));
    Var z = t.constant(testutil::random_tensor(rng, {3, 5}));
    Var zh = t.constant(testutil::random_tensor(rng, {3, 5}));
    Var yg = t.constant(testutil::random_tensor(rng, {3, 3}));
    Var yp = t.constant(testutil::random_tensor(rng, {3, 4}));
    double ab = prediction_loss(t, yg, yp, z, zh, geom, prop).scalar_value();
    double ba = prediction_loss(t, yg, yp, zh, z, geom, prop).scalar_value();
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  }
}

TEST_CASE("sa_loss") {
  Tape t;
  Var me = t.constant(Tensor::scalar(2.0));
  Var pre = t.constant(Tensor::scalar(4.0));
  CHECK(sa_loss(t, me, pre, 1.0).scalar_value() == doctest::Approx(2.0));
  CHECK(sa_loss(t, me, pre, 0.0).scalar_value() == doctest::Approx(4.0));
  CHECK(sa_loss(t, me, pre, 0.5).scalar_value() == doctest::Approx(3.0));
  CHECK_THROWS(sa_loss(t, me, pre, -0.2));
  CHECK_THROWS(sa_loss(t, me, pre, 1.2));
}

TEST_CASE("one gradient step on the memory loss decreases the residual") {
  Rng rng(41);
  for (int inst = 0; inst < 5; ++inst) {
    Tensor anchors = testutil::random_tensor_away_from(rng, {5, 6});
    Tensor z = testutil::random_tensor_away_from(rng, {4, 6});
    auto eval = [&](const Tensor& a, Tensor* grad) {
      Tape t;
      Var av = t.leaf(a);
      Var zv = t.constant(z);
      MemoryAlign al = memory_align(t, zv, av);
      Var loss = memory_loss(t, al.aligned, zv);
      double val = loss.scalar_value();
      if (grad) {
        t.backward(loss);
        *grad = t.grad_of(av);
      }
      return val;
    };
    Tensor grad;
    double before = eval(anchors, &grad);
    Tensor stepped = anchors;
    for (std::size_t i = 0; i < stepped.size(); ++i) stepped.data[i] -= 1e-3 * grad.data[i];
    double after = eval(stepped, nullptr);
    CHECK(after < before);
  }
}

TEST_CASE("structure losses match finite differences") {
  Rng rng(59);
  const std::size_t b = 4, dc = 8, L = 4;
  double worst_me = 0.0, worst_pre = 0.0, worst_sa = 0.0;
  for (int inst = 0; inst < 5; ++inst) {
    Tensor c = testutil::random_tensor_away_from(rng, {b, dc});
    Tensor w = testutil::random_tensor(rng, {dc, dc});
    Tensor anchors = testutil::random_tensor_away_from(rng, {L, dc});
    PredictorParams geom = init_predictor(dc, 8, 3, rng);
    PredictorParams prop = init_predictor(dc, 8, 4, rng);
    // labels offset from the base predictions by at least 0.1 so no L1
    // residual sits near its kink during the +/- eps probes
    Tensor yg = Tensor::zeros({b, 3});
    Tensor yp = Tensor::zeros({b, 4});
    {
      Tape probe;
      Hypergraph hg = build_knn_hypergraph(c, 3);
      Var z = hgnn_conv(probe, hg, probe.constant(c), probe.constant(w));
      PredictorVars gv = bind(probe, geom);
      PredictorVars pv = bind(probe, prop);
      MemoryAlign al = memory_align(probe, z, probe.constant(anchors));
      auto gz = predict(probe, gv, z).values();
      auto pz = predict(probe, pv, z).values();
      auto ga = predict(probe, gv, al.aligned).values();
      auto pa = predict(probe, pv, al.aligned).values();
      auto fill = [&](Tensor& y, const std::vector<double>& from_z,
                      const std::vector<double>& from_aligned) {
        for (std::size_t i = 0; i < y.size(); ++i) {
          double v;
          do {
            v = from_z[i] + (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
          } while (std::fabs(v - from_aligned[i]) < 1e-2);
          y.data[i] = v;
        }
        y.requires_grad = false;
      };
      fill(yg, gz, ga);
      fill(yp, pz, pa);
    }

    std::vector<Tensor> params{c, w, anchors, geom.l1.w, geom.l1.b, geom.l2.w, geom.l2.b,
                               prop.l1.w, prop.l1.b, prop.l2.w, prop.l2.b};
    auto build = [&](Tape& t, const std::vector<Var>& ps, Var& me, Var& pre) {
      Tensor cval(ps[0].shape(), ps[0].values());
      Hypergraph hg = build_knn_hypergraph(cval, 3);
      Var z = hgnn_conv(t, hg, ps[0], ps[1]);
      MemoryAlign al = memory_align(t, z, ps[2]);
      me = memory_loss(t, al.aligned, z);
      PredictorVars gv{{ps[3], ps[4]}, {ps[5], ps[6]}};
      PredictorVars pv{{ps[7], ps[8]}, {ps[9], ps[10]}};
      pre = prediction_loss(t, t.constant(yg), t.constant(yp), z, al.aligned, gv, pv);
    };
    worst_me = std::max(worst_me, finite_diff_check(
        [&](Tape& t, const std::vector<Var>& ps) {
          Var me, pre;
          build(t, ps, me, pre);
          return me;
        },
        params, 2e-4));
    worst_pre = std::max(worst_pre, finite_diff_check(
        [&](Tape& t, const std::vector<Var>& ps) {
          Var me, pre;
          build(t, ps, me, pre);
          return pre;
        },
        params, 2e-4));
    worst_sa = std::max(worst_sa, finite_diff_check(
        [&](Tape& t, const std::vector<Var>& ps) {
          Var me, pre;
          build(t, ps, me, pre);
          return sa_loss(t, me, pre, 0.5);
        },
        params, 2e-4));
  }
  CHECK(worst_me < 1e-3);
  CHECK(worst_pre < 1e-3);
  CHECK(worst_sa < 1e-3);
}

TEST_CASE("doubling the batch at most quintuples construction time") {
  Rng rng(67);
  Tensor c64 = testutil::random_tensor(rng, {64, 128});
  Tensor c128 = testutil::random_tensor(rng, {128, 128});
  auto time_build = [](const Tensor& c, int reps) {
    auto best = std::chrono::duration<double>::max();
    for (int trial = 0; trial < 7; ++trial) {
      auto start = std::chrono::steady_clock::now();
      for (int r = 0; r < reps; ++r) {
        Hypergraph hg = build_knn_hypergraph(c, 10);
        if (hg.k_eff == 0) std::abort();  // keep the optimizer honest
      }
      best = std::min(best, std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - start));
    }
    return best.count();
  };
  double per_call_64 = time_build(c64, 40) / 40.0;
  double per_call_128 = time_build(c128, 10) / 10.0;
  CHECK(per_call_128 / per_call_64 <= 5.0);  // quadratic predicts 4x
}
