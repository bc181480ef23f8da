// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmsa/autoencoder.hpp"
#include "mmsa/encoders.hpp"
#include "mmsa/mol_data.hpp"
#include "mmsa/structure.hpp"
#include "mmsa/tensor.hpp"

namespace mmsa {

struct ConfigMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PretrainConfig {
  int epochs = 30;
  std::size_t batch = 128;
  double lr = 0.001;
  double lambda = 0.6;  // contrastive vs reconstruction
  double tau = 0.5;     // intra vs cross reconstruction
  double alpha = 0.5;   // memory vs prediction
  std::size_t knn_k = 10;
  std::size_t bank_size = 128;
  std::size_t embed_dim = 256;
  std::size_t feature_dim = 256;
  std::size_t hidden = 64;  // encoder message width
  std::uint64_t seed = 0;
  NegativeMode contrastive_mode = NegativeMode::kInBatchAll;
  KnnMetric knn_metric = KnnMetric::kInnerProduct;
  // scaled-dot stays defined when ReLU zeroes an embedding row; the cosine
  // variant aborts training on the first degenerate row
  AlignMetric align_metric = AlignMetric::kScaledDot;

  void validate() const;
  EncoderConfig encoder_config() const;
  std::string to_json() const;
  static PretrainConfig from_json(const std::string& text);
};

/// Every learnable block of the pre-training pipeline. parameters() fixes the
/// block order used by the optimizer and the checkpoint writer.
struct MmsaModel {
  PretrainConfig config;
  std::size_t atom_dim = 0;
  std::size_t bond_dim = 0;
  GinParams gin;
  ImageParams image;
  GeoParams geo;
  std::vector<AutoencoderParams> autoencoders;  // graph, image, geometry
  Tensor hgnn_weight;
  MemoryBank memory;
  PredictorParams geom_predictor, prop_predictor;

  static MmsaModel init(const PretrainConfig& cfg, std::size_t atom_dim, std::size_t bond_dim);
  std::vector<NamedParam> parameters();
};

struct BoundModel {
  GinVars gin;
  ImageVars image;
  GeoVars geo;
  std::vector<AutoencoderVars> autoencoders;
  Var hgnn_weight;
  Var anchors;
  PredictorVars geom_predictor, prop_predictor;
  std::vector<Var> all_vars() const;  // same order as MmsaModel::parameters()
};

BoundModel bind(Tape& tape, const MmsaModel& model);

struct SampleRef {
  std::size_t molecule = 0;
  std::size_t conformer = 0;
};

struct BatchVars {
  Var contrastive, reconstruction, ae;
  Var memory, prediction, sa;
  Var overall;
  Var aggregated;  // unified embedding matrix {b, embed_dim}
};

/// Full forward pass over one batch: modality encoders, autoencoder losses,
/// hypergraph convolution, memory alignment, and predictors.
BatchVars pretrain_forward(Tape& tape, const BoundModel& bound, const MmsaModel& model,
                           const Dataset& ds, const std::vector<SampleRef>& batch,
                           std::uint64_t step_seed);

struct EpochLosses {
  int epoch = 0;
  double cl = 0, rl = 0, ae = 0, me = 0, pre = 0, sa = 0, overall = 0;
};

struct PretrainResult {
  std::vector<EpochLosses> log;
  std::map<std::string, double> max_grad_norm;  // per block, across the whole run
  std::string rng_state;
};

/// Runs the optimization loop in place. Every molecule must carry all three
/// modality inputs and both label vectors. When log_path is set, one JSON
/// record per epoch is appended there.
PretrainResult pretrain(MmsaModel& model, const Dataset& ds,
                        const std::string& log_path = "");

enum class Task : std::uint8_t { kClassification, kRegression };

struct FinetuneConfig {
  int epochs = 100;
  std::size_t batch = 32;
  double lr = 0.001;
  std::uint64_t seed = 0;
  std::size_t label_index = 0;
};

struct FinetuneResult {
  double test_metric = 0.0;  // ROC-AUC or RMSE depending on the task
  std::vector<double> train_loss;
};

/// Full fine-tune of the encoder/autoencoder path plus a linear task head on
/// the aggregated embedding; reports the metric on the test split. The model
/// passed in is left untouched.
FinetuneResult finetune(const MmsaModel& base, const Dataset& ds, Task task,
                        const FinetuneConfig& cfg);

/// Aggregated embedding per molecule (first conformer), deterministic.
Tensor embed(const MmsaModel& model, const Dataset& ds);

void save_checkpoint(const MmsaModel& model, int epoch, const std::string& rng_state,
                     const std::string& path);

struct Checkpoint {
  MmsaModel model;
  int epoch = 0;
  std::string rng_state;
};

Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<PretrainConfig>& expected = std::nullopt);

}  // namespace mmsa
