// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmsa/mol_data.hpp"

namespace mmsa {

/// Exact Mann-Whitney pair statistic: (wins + 0.5 * ties) / (P * N).
double roc_auc(const std::vector<double>& scores, const std::vector<double>& labels);

double rmse(const std::vector<double>& predicted, const std::vector<double>& expected);

/// Davies-Bouldin index with sigma = mean distance to the cluster centroid.
double dbi(const std::vector<std::vector<double>>& points, const std::vector<int>& clusters);

/// Mutual information normalized by the arithmetic mean of the entropies;
/// 0/0 is defined as 0.
double nmi(const std::vector<int>& labels_a, const std::vector<int>& labels_b);

struct RetrievalHit {
  std::size_t reference;
  double similarity;
};

struct RetrievalResult {
  std::size_t query = 0;
  std::vector<RetrievalHit> hits;  // similarity non-increasing, ties by index
};

/// Exact top-k by cosine over embedding rows.
RetrievalResult retrieve_cosine(const std::vector<double>& query,
                                const std::vector<std::vector<double>>& references,
                                std::size_t k);

/// Exact top-k by Tanimoto over fingerprints.
RetrievalResult retrieve_tanimoto(const Fingerprint& query,
                                  const std::vector<Fingerprint>& references, std::size_t k);

/// Seeded k-means++ with Lloyd iterations; returns cluster labels.
std::vector<int> kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                        std::uint64_t seed, int iterations = 100);

struct MetricReport {
  std::string metric;
  std::vector<double> per_seed;
  double mean = 0.0;
  double stddev = 0.0;
};

MetricReport summarize(const std::string& metric, const std::vector<double>& per_seed);

}  // namespace mmsa
