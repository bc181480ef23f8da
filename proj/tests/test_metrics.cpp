// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mmsa/metrics.hpp"
#include "mmsa/random.hpp"
#include "test_util.hpp"

using namespace mmsa;

namespace {

// O(P*N) oracle: probability a positive outranks a negative, ties half.
double roc_auc_bruteforce(const std::vector<double>& scores, const std::vector<double>& labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1.0 || labels[j] != 0.0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  return wins / pairs;
}

}  // namespace

TEST_CASE("roc_auc: hand cases") {
  CHECK(roc_auc({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(roc_auc({0.9, 0.8, 0.3, 0.2}, {1, 0, 1, 0}) == doctest::Approx(0.75));
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == doctest::Approx(0.5));
  CHECK_THROWS(roc_auc({0.5, 0.6}, {1, 1}));
  CHECK_THROWS(roc_auc({0.5}, {1, 0}));
}

TEST_CASE("roc_auc equals brute-force pair counting") {
  Rng rng(3);
  for (int inst = 0; inst < 100; ++inst) {
    std::size_t n = 5 + rng.below(196);
    std::vector<double> scores(n), labels(n);
    bool has_pos = false, has_neg = false;
    for (std::size_t i = 0; i < n; ++i) {
      // coarse score grid so ties actually occur
      scores[i] = std::floor(rng.uniform() * 8.0) / 8.0;
      labels[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
      has_pos |= labels[i] == 1.0;
      has_neg |= labels[i] == 0.0;
    }
    if (!has_pos) labels[0] = 1.0;
    if (!has_neg) labels[n - 1] = 0.0;
    CHECK(roc_auc(scores, labels) ==
          doctest::Approx(roc_auc_bruteforce(scores, labels)).epsilon(1e-12));
  }
}

TEST_CASE("rmse") {
  CHECK(rmse({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(rmse({3, -4}, {0, 0}) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
  Rng rng(5);
  std::vector<double> a(10), b(10);
  for (std::size_t i = 0; i < 10; ++i) {
    a[i] = rng.uniform(-2, 2);
    b[i] = rng.uniform(-2, 2);
  }
  double base = rmse(a, b);
  std::vector<double> a3 = b;
  for (std::size_t i = 0; i < 10; ++i) a3[i] += 3.0 * (a[i] - b[i]);
  CHECK(rmse(a3, b) == doctest::Approx(3.0 * base).epsilon(1e-12));
  CHECK_THROWS(rmse({1, 2}, {1}));
}

TEST_CASE("dbi: hand case, duplication, separation monotonicity") {
  std::vector<std::vector<double>> pts{{0, 0}, {0, 1}, {10, 0}, {10, 1}};
  std::vector<int> cl{0, 0, 1, 1};
  CHECK(dbi(pts, cl) == doctest::Approx(0.1).epsilon(1e-9));

  // duplicating every point changes nothing
  std::vector<std::vector<double>> dup = pts;
  dup.insert(dup.end(), pts.begin(), pts.end());
  std::vector<int> dcl{0, 0, 1, 1, 0, 0, 1, 1};
  CHECK(dbi(dup, dcl) == doctest::Approx(0.1).epsilon(1e-9));

  // moving the clusters apart strictly improves the index
  std::vector<std::vector<double>> far{{0, 0}, {0, 1}, {20, 0}, {20, 1}};
  CHECK(dbi(far, cl) < dbi(pts, cl));

  CHECK_THROWS(dbi(pts, std::vector<int>{0, 0, 0, 0}));
}

TEST_CASE("dbi: invariant under rigid motion") {
  Rng rng(9);
  std::vector<std::vector<double>> pts;
  std::vector<int> cl;
  for (int i = 0; i < 12; ++i) {
    int c = i % 3;
    pts.push_back({rng.normal() + 5.0 * c, rng.normal() - 2.0 * c, rng.normal()});
    cl.push_back(c);
  }
  double base = dbi(pts, cl);
  for (int it = 0; it < 5; ++it) {
    auto rot = testutil::random_rotation(rng);
    double tx = rng.uniform(-4, 4), ty = rng.uniform(-4, 4), tz = rng.uniform(-4, 4);
    std::vector<std::vector<double>> moved;
    for (const auto& p : pts)
      moved.push_back({rot[0] * p[0] + rot[1] * p[1] + rot[2] * p[2] + tx,
                       rot[3] * p[0] + rot[4] * p[1] + rot[5] * p[2] + ty,
                       rot[6] * p[0] + rot[7] * p[1] + rot[8] * p[2] + tz});
    CHECK(std::fabs(dbi(moved, cl) - base) < 1e-9);
  }
}

TEST_CASE("nmi") {
  CHECK(nmi({0, 0, 1, 1}, {1, 1, 0, 0}) == doctest::Approx(1.0));  // identical up to renaming
  CHECK(nmi({0, 1, 2, 0}, {5, 5, 5, 5}) == 0.0);                   // one side degenerate
  CHECK(nmi({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(0.0).epsilon(1e-12));  // independent

  Rng rng(13);
  for (int it = 0; it < 10; ++it) {
    std::vector<int> a(20), b(20);
    for (int i = 0; i < 20; ++i) {
      a[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(4));
      b[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(3));
    }
    CHECK(std::fabs(nmi(a, b) - nmi(b, a)) < 1e-12);
    // renaming labels leaves it unchanged
    std::vector<int> renamed = a;
    for (int& x : renamed) x = 7 - x;
    CHECK(std::fabs(nmi(renamed, b) - nmi(a, b)) < 1e-12);
  }
}

TEST_CASE("retrieval") {
  {
    std::vector<std::vector<double>> refs{{1, 0}, {0.6, 0.8}, {0, 1}};
    auto res = retrieve_cosine({1, 0}, refs, 3);
    CHECK(res.hits[0].reference == 0);
    CHECK(res.hits[0].similarity == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.hits[1].reference == 1);
    CHECK(res.hits[2].reference == 2);
    for (std::size_t i = 1; i < res.hits.size(); ++i)
      CHECK(res.hits[i - 1].similarity >= res.hits[i].similarity);
  }
  {
    // k = n returns a permutation of the reference set
    Rng rng(17);
    std::vector<std::vector<double>> refs;
    for (int i = 0; i < 9; ++i) {
      std::vector<double> v(4);
      for (double& x : v) x = rng.uniform(-1, 1) + 1.5;
      refs.push_back(v);
    }
    auto res = retrieve_cosine(refs[0], refs, refs.size());
    std::vector<char> seen(refs.size(), 0);
    for (const auto& h : res.hits) seen[h.reference] = 1;
    for (char s : seen) CHECK(s == 1);
  }
  {
    Fingerprint a(64), b(64), c(64);
    a.set(1);
    a.set(2);
    b.set(1);
    b.set(2);
    c.set(9);
    auto res = retrieve_tanimoto(a, {c, b, a}, 2);
    CHECK(res.hits[0].reference == 1);  // tie at 1.0 broken by lower index
    CHECK(res.hits[0].similarity == 1.0);
    CHECK(res.hits[1].reference == 2);
    CHECK_THROWS(retrieve_tanimoto(a, {b}, 5));
  }
}

TEST_CASE("kmeans separates well-separated blobs") {
  Rng rng(23);
  std::vector<std::vector<double>> pts;
  std::vector<int> truth;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 15; ++i) {
      pts.push_back({10.0 * c + rng.normal() * 0.3, -6.0 * c + rng.normal() * 0.3});
      truth.push_back(c);
    }
  auto labels = kmeans(pts, 3, 7);
  CHECK(nmi(labels, truth) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(kmeans(pts, 3, 7) == labels);  // deterministic
}

TEST_CASE("summarize") {
  auto r = summarize("roc_auc", {0.8, 0.9, 1.0});
  CHECK(r.mean == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(r.stddev == doctest::Approx(std::sqrt(0.02 / 3.0)).epsilon(1e-9));
  double recomputed = 0.0;
  for (double v : r.per_seed) recomputed += v;
  CHECK(std::fabs(recomputed / 3.0 - r.mean) < 1e-12);
}
