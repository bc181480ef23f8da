// SPDX-License-Identifier: Apache-2.0
#include "mmsa/structure.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mmsa {

Hypergraph build_knn_hypergraph(const Tensor& embeddings, std::size_t k, KnnMetric metric) {
  if (k < 1) throw std::invalid_argument("build_knn_hypergraph: K must be at least 1");
  if (embeddings.shape.size() != 2 || embeddings.shape[0] == 0)
    throw ShapeError("build_knn_hypergraph: need a nonempty {b, d} matrix");
  const std::size_t b = embeddings.shape[0];
  const std::size_t d = embeddings.shape[1];
  const std::size_t k_eff = std::min(k, b);

  Hypergraph hg;
  hg.k_eff = k_eff;
  hg.incidence = Tensor::zeros({b, b});
  hg.edge_weights = Tensor({b}, std::vector<double>(b, 1.0));

  for (std::size_t e = 0; e < b; ++e) {
    // similarity of the seed node to every other node
    std::vector<double> sim(b, 0.0);
    for (std::size_t v = 0; v < b; ++v) {
      if (v == e) continue;
      double acc = 0.0;
      if (metric == KnnMetric::kInnerProduct) {
        for (std::size_t c = 0; c < d; ++c)
          acc += embeddings.data[e * d + c] * embeddings.data[v * d + c];
      } else {
        for (std::size_t c = 0; c < d; ++c) {
          double diff = embeddings.data[e * d + c] - embeddings.data[v * d + c];
          acc -= diff * diff;  // negated distance so larger is closer
        }
      }
      sim[v] = acc;
    }
    std::vector<std::size_t> order(b);
    std::iota(order.begin(), order.end(), 0);
    order.erase(order.begin() + static_cast<std::ptrdiff_t>(e));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sim[x] > sim[y]; });
    hg.incidence.data[e * b + e] = 1.0;  // seed node
    for (std::size_t r = 0; r + 1 < k_eff; ++r) hg.incidence.data[order[r] * b + e] = 1.0;
  }

  hg.node_degree = Tensor::zeros({b});
  hg.edge_degree = Tensor::zeros({b});
  for (std::size_t v = 0; v < b; ++v)
    for (std::size_t e = 0; e < b; ++e) {
      double h = hg.incidence.data[v * b + e];
      hg.node_degree.data[v] += hg.edge_weights.data[e] * h;
      hg.edge_degree.data[e] += h;
    }
  return hg;
}

Tensor propagation_matrix(const Hypergraph& hg) {
  const std::size_t b = hg.incidence.shape[0];
  Tensor p = Tensor::zeros({b, b});
  for (std::size_t i = 0; i < b; ++i) {
    double di = hg.node_degree.data[i];
    if (di <= 0.0) throw std::domain_error("propagation_matrix: zero node degree");
    for (std::size_t j = 0; j < b; ++j) {
      double acc = 0.0;
      for (std::size_t e = 0; e < b; ++e) {
        double he = hg.incidence.data[i * b + e] * hg.incidence.data[j * b + e];
        if (he == 0.0) continue;
        acc += hg.edge_weights.data[e] / hg.edge_degree.data[e] * he;
      }
      p.data[i * b + j] = acc / std::sqrt(di * hg.node_degree.data[j]);
    }
  }
  return p;
}

Var hgnn_conv(Tape& tape, const Hypergraph& hg, Var embeddings, Var weight) {
  const Shape& cs = embeddings.shape();
  const Shape& ws = weight.shape();
  if (cs.size() != 2 || ws.size() != 2 || ws[0] != cs[1] || ws[0] != ws[1])
    throw ShapeError("hgnn_conv: need C {b,d} and square W {d,d}");
  if (hg.incidence.shape[0] != cs[0])
    throw ShapeError("hgnn_conv: hypergraph built for a different batch size");
  Var prop = tape.constant(propagation_matrix(hg));
  return relu(matmul(matmul(prop, embeddings), weight));
}

// ----------------------------------------------------------------- memory

MemoryBank init_memory(std::size_t size, std::size_t embed_dim, Rng& rng) {
  if (size < 1) throw std::invalid_argument("init_memory: need at least one anchor");
  double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  Tensor anchors = Tensor::zeros({size, embed_dim}, true);
  for (double& v : anchors.data) v = rng.uniform(-bound, bound);
  return MemoryBank{std::move(anchors)};
}

void MemoryBank::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".anchors", &anchors});
}

MemoryAlign memory_align(Tape& tape, Var embeddings, Var anchors, AlignMetric metric) {
  const Shape& zs = embeddings.shape();
  const Shape& as = anchors.shape();
  if (zs.size() != 2 || as.size() != 2 || zs[1] != as[1])
    throw ShapeError("memory_align: dimension mismatch " + shape_str(zs) + " vs " + shape_str(as));
  (void)tape;
  Var scores;
  if (metric == AlignMetric::kCosine) {
    scores = cosine_rows(embeddings, anchors);  // throws on a zero embedding
  } else {
    scores = scale(matmul_nt(embeddings, anchors),
                   1.0 / std::sqrt(static_cast<double>(as[1])));
  }
  Var weights = softmax(scores);
  Var aligned = matmul(weights, anchors);
  return MemoryAlign{scores, weights, aligned};
}

Var memory_loss(Tape& tape, Var aligned, Var embeddings) {
  (void)tape;
  if (aligned.shape() != embeddings.shape())
    throw ShapeError("memory_loss: shape mismatch");
  Var diff = sub(aligned, embeddings);
  double rows = static_cast<double>(aligned.shape().size() == 2 ? aligned.shape()[0] : 1);
  return scale(sum(mul(diff, diff)), 1.0 / rows);
}

// ----------------------------------------------------------------- predictors

PredictorParams init_predictor(std::size_t embed_dim, std::size_t hidden, std::size_t out_dim,
                               Rng& rng) {
  return PredictorParams{init_linear_kaiming(embed_dim, hidden, rng),
                         init_linear_kaiming(hidden, out_dim, rng)};
}

void PredictorParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".l1.w", &l1.w});
  out.push_back({prefix + ".l1.b", &l1.b});
  out.push_back({prefix + ".l2.w", &l2.w});
  out.push_back({prefix + ".l2.b", &l2.b});
}

PredictorVars bind(Tape& tape, const PredictorParams& p) {
  return PredictorVars{bind(tape, p.l1), bind(tape, p.l2)};
}

std::vector<Var> PredictorVars::all_vars() const { return {l1.w, l1.b, l2.w, l2.b}; }

Var predict(Tape& tape, const PredictorVars& p, Var embeddings) {
  return linear(tape, p.l2, softplus(linear(tape, p.l1, embeddings)));
}

Var prediction_loss(Tape& tape, Var y_geom, Var y_prop, Var embeddings, Var aligned,
                    const PredictorVars& geom, const PredictorVars& prop) {
  const Shape& zs = embeddings.shape();
  if (zs.size() != 2) throw ShapeError("prediction_loss: need {b,d} embeddings");
  if (y_geom.shape().size() != 2 || y_prop.shape().size() != 2 ||
      y_geom.shape()[0] != zs[0] || y_prop.shape()[0] != zs[0])
    throw std::invalid_argument("prediction_loss: label rows must match the batch");
  double b = static_cast<double>(zs[0]);
  Var total = sum(abs_val(sub(y_geom, predict(tape, geom, embeddings))));
  total = add(total, sum(abs_val(sub(y_prop, predict(tape, prop, embeddings)))));
  total = add(total, sum(abs_val(sub(y_geom, predict(tape, geom, aligned)))));
  total = add(total, sum(abs_val(sub(y_prop, predict(tape, prop, aligned)))));
  return scale(total, 1.0 / b);
}

Var sa_loss(Tape& tape, Var memory, Var prediction, double alpha) {
  (void)tape;
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("sa_loss: alpha must lie in [0,1]");
  return add(scale(memory, alpha), scale(prediction, 1.0 - alpha));
}

}  // namespace mmsa
