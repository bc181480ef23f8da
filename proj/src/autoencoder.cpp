// SPDX-License-Identifier: Apache-2.0
#include "mmsa/autoencoder.hpp"

#include <stdexcept>

namespace mmsa {

AutoencoderParams init_autoencoder(std::size_t feature_dim, std::size_t hidden,
                                   std::size_t embed_dim, Rng& rng) {
  AutoencoderParams p;
  p.enc1 = init_linear_kaiming(feature_dim, hidden, rng);
  p.enc2 = init_linear_kaiming(hidden, embed_dim, rng);
  p.dec1 = init_linear_kaiming(embed_dim, hidden, rng);
  p.dec2 = init_linear_kaiming(hidden, feature_dim, rng);
  return p;
}

void AutoencoderParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".enc1.w", &enc1.w});
  out.push_back({prefix + ".enc1.b", &enc1.b});
  out.push_back({prefix + ".enc2.w", &enc2.w});
  out.push_back({prefix + ".enc2.b", &enc2.b});
  out.push_back({prefix + ".dec1.w", &dec1.w});
  out.push_back({prefix + ".dec1.b", &dec1.b});
  out.push_back({prefix + ".dec2.w", &dec2.w});
  out.push_back({prefix + ".dec2.b", &dec2.b});
}

AutoencoderVars bind(Tape& tape, const AutoencoderParams& p) {
  return AutoencoderVars{bind(tape, p.enc1), bind(tape, p.enc2), bind(tape, p.dec1),
                         bind(tape, p.dec2)};
}

std::vector<Var> AutoencoderVars::all_vars() const {
  return {enc1.w, enc1.b, enc2.w, enc2.b, dec1.w, dec1.b, dec2.w, dec2.b};
}

Var encode(Tape& tape, const AutoencoderVars& ae, Var x) {
  return linear(tape, ae.enc2, relu(linear(tape, ae.enc1, x)));
}

Var decode(Tape& tape, const AutoencoderVars& ae, Var c) {
  return linear(tape, ae.dec2, relu(linear(tape, ae.dec1, c)));
}

std::vector<Var> encode_all(Tape& tape, const std::vector<AutoencoderVars>& aes,
                            const std::vector<Var>& features) {
  if (features.empty()) throw std::invalid_argument("encode_all: no modalities");
  if (aes.size() != features.size())
    throw std::invalid_argument("encode_all: modality count mismatch");
  std::vector<Var> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i)
    out.push_back(encode(tape, aes[i], features[i]));
  return out;
}

Var contrastive_loss(Tape& tape, const std::vector<Var>& embeddings,
                     const ContrastiveConfig& cfg) {
  (void)tape;
  const std::size_t M = embeddings.size();
  if (M < 2) throw std::invalid_argument("contrastive_loss: need at least two modalities");
  const std::size_t b = embeddings[0].shape()[0];
  if (b < 2)
    throw std::invalid_argument("contrastive_loss: batch of " + std::to_string(b) +
                                " has no negatives");

  // one seeded partner per molecule in single-draw mode
  std::vector<std::size_t> partner(b, 0);
  if (cfg.mode == NegativeMode::kSingleDraw) {
    Rng rng(derive_seed(cfg.seed, {hash_bytes("contrastive")}));
    for (std::size_t l = 0; l < b; ++l) {
      std::size_t draw = rng.below(b - 1);
      partner[l] = draw >= l ? draw + 1 : draw;
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> diag;
  for (std::size_t l = 0; l < b; ++l) diag.push_back({l, l});

  Var total{};
  bool first = true;
  for (std::size_t i = 0; i < M; ++i) {
    // negatives against the same modality are shared across j
    Var sim_ii = cosine_rows(embeddings[i], embeddings[i]);
    for (std::size_t j = 0; j < M; ++j) {
      if (j == i) continue;
      Var sim_ij = cosine_rows(embeddings[i], embeddings[j]);
      Var pos = take_entries(sim_ij, diag);  // {b}
      Var neg_own, neg_cross;
      if (cfg.mode == NegativeMode::kInBatchAll) {
        // mean over other molecules of e^theta, per row
        Var exp_ii = exp_elem(sim_ii);
        Var exp_ij = exp_elem(sim_ij);
        Var own_diag = take_entries(exp_ii, diag);
        Var cross_diag = take_entries(exp_ij, diag);
        double inv = 1.0 / static_cast<double>(b - 1);
        neg_own = scale(sub(row_sums(exp_ii), own_diag), inv);
        neg_cross = scale(sub(row_sums(exp_ij), cross_diag), inv);
      } else {
        std::vector<std::pair<std::size_t, std::size_t>> drawn;
        for (std::size_t l = 0; l < b; ++l) drawn.push_back({l, partner[l]});
        neg_own = exp_elem(take_entries(sim_ii, drawn));
        neg_cross = exp_elem(take_entries(sim_ij, drawn));
      }
      Var exp_pos = exp_elem(pos);
      Var denom = add(add(exp_pos, neg_own), neg_cross);
      Var term = sub(log_elem(denom), pos);  // -log(e^pos / denom)
      Var pair_mean = mean_all(term);
      total = first ? pair_mean : add(total, pair_mean);
      first = false;
    }
  }
  double prefactor = 2.0 / (static_cast<double>(M) * static_cast<double>(M + 1));
  return scale(total, prefactor);
}

Var reconstruction_loss(Tape& tape, const std::vector<Var>& features,
                        const std::vector<AutoencoderVars>& aes, double tau,
                        const std::vector<Var>* targets) {
  if (tau < 0.0 || tau > 1.0)
    throw std::invalid_argument("reconstruction_loss: tau must lie in [0,1]");
  const std::size_t M = features.size();
  if (M < 2) throw std::invalid_argument("reconstruction_loss: need at least two modalities");
  if (aes.size() != M) throw std::invalid_argument("reconstruction_loss: autoencoder count mismatch");
  const std::vector<Var>& refs = targets ? *targets : features;
  if (refs.size() != M) throw std::invalid_argument("reconstruction_loss: target count mismatch");

  std::vector<Var> codes;
  codes.reserve(M);
  for (std::size_t i = 0; i < M; ++i) codes.push_back(encode(tape, aes[i], features[i]));

  Var total{};
  bool first = true;
  for (std::size_t i = 0; i < M; ++i) {
    Var intra = mean_all(l2norm_rows(sub(refs[i], decode(tape, aes[i], codes[i]))));
    for (std::size_t j = 0; j < M; ++j) {
      if (j == i) continue;
      Var cross = mean_all(l2norm_rows(sub(refs[i], decode(tape, aes[i], codes[j]))));
      Var term = add(scale(intra, tau), scale(cross, 1.0 - tau));
      total = first ? term : add(total, term);
      first = false;
    }
  }
  return scale(total, 1.0 / static_cast<double>(M));
}

Var ae_loss(Tape& tape, Var contrastive, Var reconstruction, double lambda) {
  (void)tape;
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("ae_loss: lambda must lie in [0,1]");
  return add(scale(contrastive, lambda), scale(reconstruction, 1.0 - lambda));
}

Var aggregate(Tape& tape, const std::vector<Var>& embeddings) {
  (void)tape;
  if (embeddings.empty()) throw std::invalid_argument("aggregate: no embeddings");
  Var acc = embeddings[0];
  for (std::size_t i = 1; i < embeddings.size(); ++i) acc = add(acc, embeddings[i]);
  return scale(acc, 1.0 / static_cast<double>(embeddings.size()));
}

}  // namespace mmsa
