// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "mmsa/encoders.hpp"
#include "mmsa/tensor.hpp"

namespace mmsa {

/// Per-modality compression into the shared embedding space and back.
struct AutoencoderParams {
  LinearParams enc1, enc2;  // feature_dim -> hidden -> embed_dim
  LinearParams dec1, dec2;  // embed_dim -> hidden -> feature_dim
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};
struct AutoencoderVars {
  LinearVars enc1, enc2, dec1, dec2;
  std::vector<Var> all_vars() const;
};

AutoencoderParams init_autoencoder(std::size_t feature_dim, std::size_t hidden,
                                   std::size_t embed_dim, Rng& rng);
AutoencoderVars bind(Tape& tape, const AutoencoderParams& p);

Var encode(Tape& tape, const AutoencoderVars& ae, Var x);  // {b, feature} -> {b, embed}
Var decode(Tape& tape, const AutoencoderVars& ae, Var c);  // {b, embed} -> {b, feature}

/// Encodes every modality's batched features; all outputs share {b, embed}.
std::vector<Var> encode_all(Tape& tape, const std::vector<AutoencoderVars>& aes,
                            const std::vector<Var>& features);

enum class NegativeMode : std::uint8_t {
  kInBatchAll,   // negative terms averaged over every other molecule in the batch
  kSingleDraw,   // one seeded uniform draw of a partner molecule
};

struct ContrastiveConfig {
  NegativeMode mode = NegativeMode::kInBatchAll;
  std::uint64_t seed = 0;  // used only by kSingleDraw
};

/// Cross-modal contrastive objective over a batch: for each molecule and each
/// ordered modality pair (i, j) the positive cosine competes against negatives
/// drawn from other molecules, scaled by 2/(M(M+1)) and averaged over the
/// batch.
Var contrastive_loss(Tape& tape, const std::vector<Var>& embeddings, const ContrastiveConfig& cfg);

/// Intra- plus cross-modal reconstruction with un-squared L2 residual norms,
/// weighted by tau, averaged over the batch. When `targets` is supplied it
/// replaces `features` on the residual's reference side (same values expected);
/// the trainer passes detached copies there so the feature extractors are not
/// rewarded for making their own outputs easier to reconstruct.
Var reconstruction_loss(Tape& tape, const std::vector<Var>& features,
                        const std::vector<AutoencoderVars>& aes, double tau,
                        const std::vector<Var>* targets = nullptr);

Var ae_loss(Tape& tape, Var contrastive, Var reconstruction, double lambda);

/// Elementwise mean over modalities -> the unified embedding matrix.
Var aggregate(Tape& tape, const std::vector<Var>& embeddings);

}  // namespace mmsa
