// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mmsa/autoencoder.hpp"
#include "test_util.hpp"

using namespace mmsa;

namespace {

AutoencoderParams identity_autoencoder() {
  AutoencoderParams p;
  p.enc1 = {Tensor::of({1, 1}, {1.0}, true), Tensor::zeros({1}, true)};
  p.enc2 = {Tensor::of({1, 1}, {1.0}, true), Tensor::zeros({1}, true)};
  p.dec1 = {Tensor::of({1, 1}, {1.0}, true), Tensor::zeros({1}, true)};
  p.dec2 = {Tensor::of({1, 1}, {1.0}, true), Tensor::zeros({1}, true)};
  return p;
}

std::vector<AutoencoderParams> random_aes(std::size_t m, std::size_t d, std::size_t hidden,
                                          std::size_t dc, Rng& rng) {
  std::vector<AutoencoderParams> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(init_autoencoder(d, hidden, dc, rng));
  return out;
}

}  // namespace

TEST_CASE("encode_all: shapes and determinism") {
  Rng rng(3);
  auto aes = random_aes(3, 10, 16, 6, rng);
  std::vector<Tensor> feats;
  for (int i = 0; i < 3; ++i) feats.push_back(testutil::random_tensor(rng, {4, 10}));

  Tape t1;
  std::vector<AutoencoderVars> vars1;
  std::vector<Var> f1;
  for (int i = 0; i < 3; ++i) {
    vars1.push_back(bind(t1, aes[static_cast<std::size_t>(i)]));
    f1.push_back(t1.constant(feats[static_cast<std::size_t>(i)]));
  }
  auto codes = encode_all(t1, vars1, f1);
  REQUIRE(codes.size() == 3);
  for (const Var& c : codes) CHECK(c.shape() == Shape{4, 6});

  Tape t2;
  std::vector<AutoencoderVars> vars2;
  std::vector<Var> f2;
  for (int i = 0; i < 3; ++i) {
    vars2.push_back(bind(t2, aes[static_cast<std::size_t>(i)]));
    f2.push_back(t2.constant(feats[static_cast<std::size_t>(i)]));
  }
  auto codes2 = encode_all(t2, vars2, f2);
  for (int i = 0; i < 3; ++i)
    CHECK(codes[static_cast<std::size_t>(i)].values() == codes2[static_cast<std::size_t>(i)].values());

  // single modality is legal for encoding (contrast requires two)
  auto single = encode_all(t1, {vars1[0]}, {f1[0]});
  CHECK(single.size() == 1);
}

TEST_CASE("contrastive_loss: closed forms") {
  // orthogonal molecules, perfectly aligned modalities
  {
    Tape t;
    Var c1 = t.constant(Tensor::of({2, 2}, {1, 0, 0, 1}));
    Var c2 = t.constant(Tensor::of({2, 2}, {1, 0, 0, 1}));
    double loss = contrastive_loss(t, {c1, c2}, {}).scalar_value();
    double per_pair = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    CHECK(per_pair == doctest::Approx(0.55144).epsilon(1e-4));
    CHECK(loss == doctest::Approx(2.0 * per_pair / 3.0).epsilon(1e-9));
    CHECK(loss == doctest::Approx(0.36763).epsilon(1e-4));
  }
  // everything identical: theta = 1 everywhere
  {
    Tape t;
    Tensor same = Tensor::of({2, 3}, {0.3, -0.7, 0.2, 0.3, -0.7, 0.2});
    double loss = contrastive_loss(t, {t.constant(same), t.constant(same)}, {}).scalar_value();
    CHECK(loss == doctest::Approx(2.0 * std::log(3.0) / 3.0).epsilon(1e-9));
    CHECK(loss == doctest::Approx(0.73241).epsilon(1e-4));
  }
}

TEST_CASE("contrastive_loss: raising the positive similarity lowers the loss") {
  auto loss_at = [](double angle) {
    Tape t;
    // molecule 1 embeddings vary only in their mutual angle; molecule 2 sits
    // in an orthogonal direction so every negative term stays fixed
    Tensor m1 = Tensor::of({2, 4}, {1, 0, 0, 0, 0, 0, 1, 0});
    Tensor m2 = Tensor::of({2, 4}, {std::cos(angle), 0, 0, std::sin(angle), 0, 0, 1, 0});
    return contrastive_loss(t, {t.constant(m1), t.constant(m2)}, {}).scalar_value();
  };
  CHECK(loss_at(0.5) < loss_at(1.0));
  CHECK(loss_at(1.0) < loss_at(1.4));
}

TEST_CASE("contrastive_loss: invariant under positive rescaling") {
  Rng rng(7);
  std::vector<Tensor> cs;
  for (int i = 0; i < 3; ++i) cs.push_back(testutil::random_tensor_away_from(rng, {4, 6}));
  for (double k : {0.01, 3.0, 250.0}) {
    Tape t1, t2;
    std::vector<Var> a, b;
    for (const Tensor& c : cs) {
      a.push_back(t1.constant(c));
      Tensor scaled = c;
      for (double& v : scaled.data) v *= k;
      b.push_back(t2.constant(scaled));
    }
    double la = contrastive_loss(t1, a, {}).scalar_value();
    double lb = contrastive_loss(t2, b, {}).scalar_value();
    CHECK(std::fabs(la - lb) < 1e-9);
  }
}

TEST_CASE("contrastive_loss: contracts") {
  Tape t;
  Var single_row = t.constant(Tensor::of({1, 2}, {1, 0}));
  CHECK_THROWS(contrastive_loss(t, {single_row, single_row}, {}));
  Var ok = t.constant(Tensor::of({2, 2}, {1, 0, 0, 1}));
  CHECK_THROWS(contrastive_loss(t, {ok}, {}));

  // single-draw mode is deterministic for a fixed seed
  Rng rng(5);
  Tensor a = testutil::random_tensor_away_from(rng, {4, 6});
  Tensor b = testutil::random_tensor_away_from(rng, {4, 6});
  ContrastiveConfig cfg{NegativeMode::kSingleDraw, 11};
  Tape t1, t2;
  double l1 = contrastive_loss(t1, {t1.constant(a), t1.constant(b)}, cfg).scalar_value();
  double l2 = contrastive_loss(t2, {t2.constant(a), t2.constant(b)}, cfg).scalar_value();
  CHECK(l1 == l2);
}

TEST_CASE("reconstruction_loss: hand case with identity maps") {
  auto p = identity_autoencoder();
  Tape t;
  std::vector<AutoencoderVars> aes{bind(t, p), bind(t, p)};
  Var x1 = t.constant(Tensor::of({1, 1}, {1.0}));
  Var x2 = t.constant(Tensor::of({1, 1}, {0.0}));
  double loss = reconstruction_loss(t, {x1, x2}, aes, 0.5).scalar_value();
  CHECK(loss == doctest::Approx(0.5).epsilon(1e-12));

  // identical features through identity maps reconstruct exactly
  Tape t2;
  std::vector<AutoencoderVars> aes2{bind(t2, p), bind(t2, p)};
  Var y = t2.constant(Tensor::of({2, 1}, {0.4, 0.9}));
  CHECK(reconstruction_loss(t2, {y, y}, aes2, 0.5).scalar_value() == doctest::Approx(0.0));
}

TEST_CASE("reconstruction_loss: tau endpoint and bounds") {
  Rng rng(19);
  auto params = random_aes(3, 8, 12, 5, rng);
  std::vector<Tensor> feats;
  for (int i = 0; i < 3; ++i) feats.push_back(testutil::random_tensor(rng, {4, 8}));

  Tape t;
  std::vector<AutoencoderVars> aes;
  std::vector<Var> xs;
  for (int i = 0; i < 3; ++i) {
    aes.push_back(bind(t, params[static_cast<std::size_t>(i)]));
    xs.push_back(t.constant(feats[static_cast<std::size_t>(i)]));
  }
  double at_one = reconstruction_loss(t, xs, aes, 1.0).scalar_value();
  // tau = 1: cross terms vanish, leaving (M-1) * mean intra residual
  double intra_mean = 0.0;
  for (int i = 0; i < 3; ++i) {
    Var rec = decode(t, aes[static_cast<std::size_t>(i)],
                     encode(t, aes[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(i)]));
    intra_mean += mean_all(l2norm_rows(sub(xs[static_cast<std::size_t>(i)], rec))).scalar_value();
  }
  intra_mean /= 3.0;
  CHECK(at_one == doctest::Approx(2.0 * intra_mean).epsilon(1e-9));

  CHECK(reconstruction_loss(t, xs, aes, 0.0).scalar_value() >= 0.0);
  CHECK_THROWS(reconstruction_loss(t, xs, aes, -0.1));
  CHECK_THROWS(reconstruction_loss(t, xs, aes, 1.1));
}

TEST_CASE("ae_loss endpoints and default arithmetic") {
  Tape t;
  Var cl = t.constant(Tensor::scalar(1.0));
  Var rl = t.constant(Tensor::scalar(2.0));
  CHECK(ae_loss(t, cl, rl, 1.0).scalar_value() == doctest::Approx(1.0));
  CHECK(ae_loss(t, cl, rl, 0.0).scalar_value() == doctest::Approx(2.0));
  CHECK(ae_loss(t, cl, rl, 0.6).scalar_value() == doctest::Approx(1.4));
  CHECK_THROWS(ae_loss(t, cl, rl, 1.5));
}

TEST_CASE("aggregate") {
  Tape t;
  Var a = t.constant(Tensor::of({1, 2}, {1, 0}));
  Var b = t.constant(Tensor::of({1, 2}, {0, 1}));
  auto mean = aggregate(t, {a, b}).values();
  CHECK(mean == std::vector<double>{0.5, 0.5});

  CHECK(aggregate(t, {a}).values() == a.values());
  CHECK(aggregate(t, {a, a, a}).values() == a.values());

  Rng rng(23);
  Tensor x = testutil::random_tensor(rng, {3, 4});
  Tensor y = testutil::random_tensor(rng, {3, 4});
  Tensor z = testutil::random_tensor(rng, {3, 4});
  Tape t2;
  auto abc = aggregate(t2, {t2.constant(x), t2.constant(y), t2.constant(z)}).values();
  auto cab = aggregate(t2, {t2.constant(z), t2.constant(x), t2.constant(y)}).values();
  CHECK(testutil::max_abs_diff(abc, cab) < 1e-15);

  CHECK_THROWS(aggregate(t, {}));
}

TEST_CASE("gradients of both losses match finite differences") {
  const std::size_t M = 3, b = 4, d = 8, dc = 8, hidden = 8;
  Rng rng(101);
  double worst_cl = 0.0, worst_rl = 0.0, worst_ae = 0.0;
  for (int inst = 0; inst < 5; ++inst) {
    // contrastive wrt the modality embeddings
    std::vector<Tensor> cs;
    for (std::size_t i = 0; i < M; ++i) cs.push_back(testutil::random_tensor_away_from(rng, {b, dc}));
    worst_cl = std::max(worst_cl, finite_diff_check(
        [&](Tape& t, const std::vector<Var>& ps) { return contrastive_loss(t, ps, {}); }, cs));

    // reconstruction wrt features and every autoencoder parameter
    auto params = random_aes(M, d, hidden, dc, rng);
    std::vector<Tensor> flat;
    for (std::size_t i = 0; i < M; ++i) flat.push_back(testutil::random_tensor(rng, {b, d}));
    for (const auto& p : params)
      for (const Tensor* t : {&p.enc1.w, &p.enc1.b, &p.enc2.w, &p.enc2.b, &p.dec1.w, &p.dec1.b,
                              &p.dec2.w, &p.dec2.b})
        flat.push_back(*t);
    auto rebuild = [&](Tape& t, const std::vector<Var>& ps, std::vector<Var>& xs,
                       std::vector<AutoencoderVars>& aes) {
      for (std::size_t i = 0; i < M; ++i) xs.push_back(ps[i]);
      for (std::size_t i = 0; i < M; ++i) {
        std::size_t base = M + i * 8;
        aes.push_back(AutoencoderVars{{ps[base], ps[base + 1]},
                                      {ps[base + 2], ps[base + 3]},
                                      {ps[base + 4], ps[base + 5]},
                                      {ps[base + 6], ps[base + 7]}});
      }
      (void)t;
    };
    worst_rl = std::max(worst_rl, finite_diff_check(
        [&](Tape& t, const std::vector<Var>& ps) {
          std::vector<Var> xs;
          std::vector<AutoencoderVars> aes;
          rebuild(t, ps, xs, aes);
          return reconstruction_loss(t, xs, aes, 0.4);
        },
        flat));

    // combined objective wrt everything at once
    worst_ae = std::max(worst_ae, finite_diff_check(
        [&](Tape& t, const std::vector<Var>& ps) {
          std::vector<Var> xs;
          std::vector<AutoencoderVars> aes;
          rebuild(t, ps, xs, aes);
          auto codes = encode_all(t, aes, xs);
          Var cl = contrastive_loss(t, codes, {});
          Var rl = reconstruction_loss(t, xs, aes, 0.4);
          return ae_loss(t, cl, rl, 0.6);
        },
        flat));
  }
  CHECK(worst_cl < 1e-3);
  CHECK(worst_rl < 1e-3);
  CHECK(worst_ae < 1e-3);
}
