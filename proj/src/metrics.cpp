// SPDX-License-Identifier: Apache-2.0
#include "mmsa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "mmsa/random.hpp"

namespace mmsa {

double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("roc_auc: scores and labels must align");
  std::size_t pos = 0, neg = 0;
  for (double l : labels) {
    if (l == 1.0)
      ++pos;
    else if (l == 0.0)
      ++neg;
    else
      throw std::invalid_argument("roc_auc: labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("roc_auc: need at least one positive and one negative");

  // average rank of positives, ties averaged within their group
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1.0) rank_sum_pos += avg_rank;
    i = j;
  }
  double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1) / 2.0) / (p * n);
}

double rmse(const std::vector<double>& predicted, const std::vector<double>& expected) {
  if (predicted.size() != expected.size() || predicted.empty())
    throw std::invalid_argument("rmse: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    double r = predicted[i] - expected[i];
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(predicted.size()));
}

double dbi(const std::vector<std::vector<double>>& points, const std::vector<int>& clusters) {
  if (points.size() != clusters.size() || points.empty())
    throw std::invalid_argument("dbi: points and clusters must align");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < clusters.size(); ++i) groups[clusters[i]].push_back(i);
  if (groups.size() < 2) throw std::invalid_argument("dbi: need at least two clusters");
  const std::size_t d = points[0].size();

  std::vector<std::vector<double>> centroids;
  std::vector<double> sigma;
  for (const auto& [label, members] : groups) {
    std::vector<double> c(d, 0.0);
    for (std::size_t i : members)
      for (std::size_t k = 0; k < d; ++k) c[k] += points[i][k];
    for (double& x : c) x /= static_cast<double>(members.size());
    double s = 0.0;
    for (std::size_t i : members) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = points[i][k] - c[k];
        dist += diff * diff;
      }
      s += std::sqrt(dist);
    }
    sigma.push_back(s / static_cast<double>(members.size()));
    centroids.push_back(std::move(c));
  }
  double total = 0.0;
  for (std::size_t a = 0; a < centroids.size(); ++a) {
    double worst = 0.0;
    for (std::size_t b = 0; b < centroids.size(); ++b) {
      if (a == b) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = centroids[a][k] - centroids[b][k];
        dist += diff * diff;
      }
      dist = std::sqrt(dist);
      if (dist == 0.0) throw std::domain_error("dbi: coincident centroids");
      worst = std::max(worst, (sigma[a] + sigma[b]) / dist);
    }
    total += worst;
  }
  return total / static_cast<double>(centroids.size());
}

double nmi(const std::vector<int>& labels_a, const std::vector<int>& labels_b) {
  if (labels_a.size() != labels_b.size() || labels_a.empty())
    throw std::invalid_argument("nmi: length mismatch");
  const double n = static_cast<double>(labels_a.size());
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < labels_a.size(); ++i) {
    ca[labels_a[i]] += 1.0;
    cb[labels_b[i]] += 1.0;
    joint[{labels_a[i], labels_b[i]}] += 1.0;
  }
  auto entropy = [n](const std::map<int, double>& counts) {
    double h = 0.0;
    for (const auto& [k, c] : counts) {
      double p = c / n;
      h -= p * std::log(p);
    }
    return h;
  };
  double ha = entropy(ca), hb = entropy(cb);
  double mi = 0.0;
  for (const auto& [kv, c] : joint) {
    double pxy = c / n;
    double px = ca[kv.first] / n;
    double py = cb[kv.second] / n;
    mi += pxy * std::log(pxy / (px * py));
  }
  double denom = (ha + hb) / 2.0;
  if (denom == 0.0) return 0.0;
  return std::max(0.0, mi / denom);
}

namespace {

RetrievalResult rank_top_k(std::vector<double> sims, std::size_t k) {
  if (k > sims.size())
    throw std::invalid_argument("retrieve: k exceeds the reference set size");
  std::vector<std::size_t> order(sims.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return a < b;
  });
  RetrievalResult out;
  for (std::size_t i = 0; i < k; ++i) out.hits.push_back({order[i], sims[order[i]]});
  return out;
}

}  // namespace

RetrievalResult retrieve_cosine(const std::vector<double>& query,
                                const std::vector<std::vector<double>>& references,
                                std::size_t k) {
  std::vector<double> sims;
  sims.reserve(references.size());
  for (const auto& r : references) sims.push_back(cosine_value(query, r));
  return rank_top_k(std::move(sims), k);
}

RetrievalResult retrieve_tanimoto(const Fingerprint& query,
                                  const std::vector<Fingerprint>& references, std::size_t k) {
  std::vector<double> sims;
  sims.reserve(references.size());
  for (const auto& r : references) sims.push_back(tanimoto(query, r));
  return rank_top_k(std::move(sims), k);
}

std::vector<int> kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                        std::uint64_t seed, int iterations) {
  if (points.empty() || k == 0 || k > points.size())
    throw std::invalid_argument("kmeans: need 1 <= k <= n points");
  const std::size_t n = points.size(), d = points[0].size();
  Rng rng(derive_seed(seed, {hash_bytes("kmeans")}));

  // k-means++ seeding
  std::vector<std::vector<double>> centers;
  centers.push_back(points[rng.below(n)]);
  std::vector<double> dist2(n, std::numeric_limits<double>::max());
  auto sqdist = [d](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double diff = a[i] - b[i];
      acc += diff * diff;
    }
    return acc;
  };
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist2[i] = std::min(dist2[i], sqdist(points[i], centers.back()));
      total += dist2[i];
    }
    if (total == 0.0) {
      centers.push_back(points[rng.below(n)]);
      continue;
    }
    double pick = rng.uniform() * total;
    std::size_t chosen = n - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += dist2[i];
      if (acc >= pick) {
        chosen = i;
        break;
      }
    }
    centers.push_back(points[chosen]);
  }

  std::vector<int> assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    bool moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::max();
      for (std::size_t c = 0; c < k; ++c) {
        double dd = sqdist(points[i], centers[c]);
        if (dd < best_d) {
          best_d = dd;
          best = static_cast<int>(c);
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        moved = true;
      }
    }
    std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) sums[static_cast<std::size_t>(assign[i])][c] += points[i][c];
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (std::size_t j = 0; j < d; ++j)
          centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    if (!moved) break;
  }
  return assign;
}

MetricReport summarize(const std::string& metric, const std::vector<double>& per_seed) {
  if (per_seed.empty()) throw std::invalid_argument("summarize: no values");
  MetricReport r;
  r.metric = metric;
  r.per_seed = per_seed;
  for (double v : per_seed) r.mean += v;
  r.mean /= static_cast<double>(per_seed.size());
  double var = 0.0;
  for (double v : per_seed) var += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(var / static_cast<double>(per_seed.size()));
  return r;
}

}  // namespace mmsa
