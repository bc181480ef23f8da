// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "mmsa/encoders.hpp"
#include "mmsa/random.hpp"
#include "mmsa/tensor.hpp"

namespace mmsa {

enum class KnnMetric : std::uint8_t { kInnerProduct, kEuclidean };
enum class AlignMetric : std::uint8_t { kCosine, kScaledDot };

/// Batch-local hypergraph: one hyperedge per molecule containing the seed node
/// and its K-1 nearest neighbors.
struct Hypergraph {
  Tensor incidence;      // {b, b} boolean, column e = members of hyperedge e
  Tensor edge_weights;   // {b} diagonal of the hyperedge weight matrix (all 1)
  Tensor node_degree;    // {b} diagonal of D_v
  Tensor edge_degree;    // {b} diagonal of D_e
  std::size_t k_eff = 0;
};

/// Similarity defaults to the inner product; ties break toward lower index and
/// K clamps to the batch size.
Hypergraph build_knn_hypergraph(const Tensor& embeddings, std::size_t k,
                                KnnMetric metric = KnnMetric::kInnerProduct);

/// Degree-normalized propagation operator
/// D_v^{-1/2} H A D_e^{-1} H^T D_v^{-1/2} as a dense constant.
Tensor propagation_matrix(const Hypergraph& hg);

/// Z = ReLU(P C W) with P built from the hypergraph.
Var hgnn_conv(Tape& tape, const Hypergraph& hg, Var embeddings, Var weight);

struct MemoryBank {
  Tensor anchors;  // {L, embed_dim}, learnable
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

MemoryBank init_memory(std::size_t size, std::size_t embed_dim, Rng& rng);

struct MemoryAlign {
  Var scores;   // {b, L} raw activations
  Var weights;  // {b, L} softmax-normalized
  Var aligned;  // {b, embed_dim}
};

/// Activation scores against every anchor, softmax-normalized, and the convex
/// anchor combination they select.
MemoryAlign memory_align(Tape& tape, Var embeddings, Var anchors,
                         AlignMetric metric = AlignMetric::kCosine);

/// Mean over the batch of the squared alignment residual.
Var memory_loss(Tape& tape, Var aligned, Var embeddings);

/// Two-layer head with a softplus bend, shared by geometry and property
/// prediction.
struct PredictorParams {
  LinearParams l1, l2;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};
struct PredictorVars {
  LinearVars l1, l2;
  std::vector<Var> all_vars() const;
};

PredictorParams init_predictor(std::size_t embed_dim, std::size_t hidden, std::size_t out_dim,
                               Rng& rng);
PredictorVars bind(Tape& tape, const PredictorParams& p);
Var predict(Tape& tape, const PredictorVars& p, Var embeddings);

/// Summed L1 residuals of geometry and property predictions from both the
/// structure embeddings and their aligned counterparts, averaged over the
/// batch.
Var prediction_loss(Tape& tape, Var y_geom, Var y_prop, Var embeddings, Var aligned,
                    const PredictorVars& geom, const PredictorVars& prop);

Var sa_loss(Tape& tape, Var memory, Var prediction, double alpha);

}  // namespace mmsa
