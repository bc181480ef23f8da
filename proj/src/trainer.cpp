// SPDX-License-Identifier: Apache-2.0
#include "mmsa/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmsa/metrics.hpp"
#include "mmsa/random.hpp"

namespace mmsa {

using json = nlohmann::json;

namespace {

const char* negative_mode_name(NegativeMode m) {
  return m == NegativeMode::kInBatchAll ? "in-batch" : "single-draw";
}
NegativeMode negative_mode_from(const std::string& s) {
  if (s == "in-batch") return NegativeMode::kInBatchAll;
  if (s == "single-draw") return NegativeMode::kSingleDraw;
  throw std::invalid_argument("unknown contrastive mode: " + s);
}
const char* knn_metric_name(KnnMetric m) {
  return m == KnnMetric::kInnerProduct ? "inner" : "euclidean";
}
KnnMetric knn_metric_from(const std::string& s) {
  if (s == "inner") return KnnMetric::kInnerProduct;
  if (s == "euclidean") return KnnMetric::kEuclidean;
  throw std::invalid_argument("unknown knn metric: " + s);
}
const char* align_metric_name(AlignMetric m) {
  return m == AlignMetric::kCosine ? "cosine" : "scaled-dot";
}
AlignMetric align_metric_from(const std::string& s) {
  if (s == "cosine") return AlignMetric::kCosine;
  if (s == "scaled-dot") return AlignMetric::kScaledDot;
  throw std::invalid_argument("unknown align metric: " + s);
}

json config_json(const PretrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch", c.batch},
              {"lr", c.lr},
              {"lambda", c.lambda},
              {"tau", c.tau},
              {"alpha", c.alpha},
              {"knn_k", c.knn_k},
              {"bank_size", c.bank_size},
              {"embed_dim", c.embed_dim},
              {"feature_dim", c.feature_dim},
              {"hidden", c.hidden},
              {"seed", c.seed},
              {"contrastive_mode", negative_mode_name(c.contrastive_mode)},
              {"knn_metric", knn_metric_name(c.knn_metric)},
              {"align_metric", align_metric_name(c.align_metric)}};
}

PretrainConfig config_from_json(const json& j) {
  PretrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.lambda = j.value("lambda", c.lambda);
  c.tau = j.value("tau", c.tau);
  c.alpha = j.value("alpha", c.alpha);
  c.knn_k = j.value("knn_k", c.knn_k);
  c.bank_size = j.value("bank_size", c.bank_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.seed = j.value("seed", c.seed);
  if (j.contains("contrastive_mode"))
    c.contrastive_mode = negative_mode_from(j["contrastive_mode"].get<std::string>());
  if (j.contains("knn_metric")) c.knn_metric = knn_metric_from(j["knn_metric"].get<std::string>());
  if (j.contains("align_metric"))
    c.align_metric = align_metric_from(j["align_metric"].get<std::string>());
  return c;
}

}  // namespace

void PretrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("config: epochs must be positive");
  if (batch < 2) throw std::invalid_argument("config: batch must be at least 2");
  if (lambda < 0 || lambda > 1 || tau < 0 || tau > 1 || alpha < 0 || alpha > 1)
    throw std::invalid_argument("config: loss weights must lie in [0,1]");
  if (knn_k < 1) throw std::invalid_argument("config: K must be at least 1");
  if (bank_size < 1 || embed_dim < 1 || feature_dim < 1 || hidden < 1)
    throw std::invalid_argument("config: dimensions must be positive");
}

EncoderConfig PretrainConfig::encoder_config() const {
  EncoderConfig ec;
  ec.hidden = hidden;
  ec.out_dim = feature_dim;
  return ec;
}

std::string PretrainConfig::to_json() const { return config_json(*this).dump(); }

PretrainConfig PretrainConfig::from_json(const std::string& text) {
  return config_from_json(json::parse(text));
}

// ----------------------------------------------------------------- model

MmsaModel MmsaModel::init(const PretrainConfig& cfg, std::size_t atom_dim, std::size_t bond_dim) {
  cfg.validate();
  MmsaModel m;
  m.config = cfg;
  m.atom_dim = atom_dim;
  m.bond_dim = bond_dim;
  EncoderConfig ec = cfg.encoder_config();
  Rng rng(derive_seed(cfg.seed, {hash_bytes("model-init")}));
  m.gin = init_gin(ec, atom_dim, bond_dim, rng);
  m.image = init_image(ec, rng);
  m.geo = init_geo(ec, atom_dim, rng);
  for (int i = 0; i < 3; ++i)
    m.autoencoders.push_back(init_autoencoder(cfg.feature_dim, 256, cfg.embed_dim, rng));
  {
    // variance-preserving through the ReLU of the convolution
    double bound = std::sqrt(6.0 / static_cast<double>(cfg.embed_dim));
    m.hgnn_weight = Tensor::zeros({cfg.embed_dim, cfg.embed_dim}, true);
    for (double& v : m.hgnn_weight.data) v = rng.uniform(-bound, bound);
  }
  m.memory = init_memory(cfg.bank_size, cfg.embed_dim, rng);
  m.geom_predictor = init_predictor(cfg.embed_dim, 64, 3, rng);
  m.prop_predictor = init_predictor(cfg.embed_dim, 64, 4, rng);
  return m;
}

std::vector<NamedParam> MmsaModel::parameters() {
  std::vector<NamedParam> out;
  gin.collect("gin", out);
  image.collect("image", out);
  geo.collect("geo", out);
  static const char* kModalities[3] = {"graph", "image", "geometry"};
  for (std::size_t i = 0; i < autoencoders.size(); ++i)
    autoencoders[i].collect(std::string("ae.") + kModalities[i], out);
  out.push_back({"hgnn.weight", &hgnn_weight});
  memory.collect("memory", out);
  geom_predictor.collect("predictor.geom", out);
  prop_predictor.collect("predictor.prop", out);
  return out;
}

BoundModel bind(Tape& tape, const MmsaModel& model) {
  BoundModel b;
  b.gin = bind(tape, model.gin);
  b.image = bind(tape, model.image);
  b.geo = bind(tape, model.geo);
  for (const auto& ae : model.autoencoders) b.autoencoders.push_back(bind(tape, ae));
  b.hgnn_weight = tape.leaf(model.hgnn_weight);
  b.anchors = tape.leaf(model.memory.anchors);
  b.geom_predictor = bind(tape, model.geom_predictor);
  b.prop_predictor = bind(tape, model.prop_predictor);
  return b;
}

std::vector<Var> BoundModel::all_vars() const {
  std::vector<Var> out = gin.all_vars();
  auto append = [&out](const std::vector<Var>& v) { out.insert(out.end(), v.begin(), v.end()); };
  append(image.all_vars());
  append(geo.all_vars());
  for (const auto& ae : autoencoders) append(ae.all_vars());
  out.push_back(hgnn_weight);
  out.push_back(anchors);
  append(geom_predictor.all_vars());
  append(prop_predictor.all_vars());
  return out;
}

// ----------------------------------------------------------------- forward

namespace {

void validate_sample(const Dataset& ds, const SampleRef& s) {
  const Molecule& m = ds.molecules[s.molecule];
  std::ostringstream what;
  if (m.image.size() == 0)
    what << "molecule " << s.molecule << " has no image";
  else if (m.coords.empty() || s.conformer >= m.coords.size())
    what << "molecule " << s.molecule << " has no conformer " << s.conformer;
  else if (m.y_geom.size() != 3 || m.y_prop.size() != 4)
    what << "molecule " << s.molecule << " is missing label vectors";
  else
    return;
  throw std::invalid_argument("trainer: " + what.str());
}

struct ModalityForward {
  std::vector<Var> features;  // X_1..X_3, each {b, feature_dim}
  std::vector<Var> codes;     // c_1..c_3, each {b, embed_dim}
  Var aggregated;             // {b, embed_dim}
};

// Per-component scale normalization of the prediction targets over the
// corpus (divide by the standard deviation, keep the mean). The raw property
// vector spans two orders of magnitude (atomic-number sum vs heteroatom
// fraction), which would otherwise swamp the prediction loss and sit beyond
// what the optimizer can reach at the configured learning rate.
struct LabelScaler {
  std::vector<double> geom_mean, geom_std, prop_mean, prop_std;

  static LabelScaler fit(const Dataset& ds) {
    LabelScaler s;
    s.geom_mean.assign(3, 0.0);
    s.geom_std.assign(3, 0.0);
    s.prop_mean.assign(4, 0.0);
    s.prop_std.assign(4, 0.0);
    double n = static_cast<double>(ds.size());
    for (const Molecule& m : ds.molecules) {
      for (std::size_t k = 0; k < 3; ++k) s.geom_mean[k] += m.y_geom[k];
      for (std::size_t k = 0; k < 4; ++k) s.prop_mean[k] += m.y_prop[k];
    }
    for (double& v : s.geom_mean) v /= n;
    for (double& v : s.prop_mean) v /= n;
    for (const Molecule& m : ds.molecules) {
      for (std::size_t k = 0; k < 3; ++k) {
        double d = m.y_geom[k] - s.geom_mean[k];
        s.geom_std[k] += d * d;
      }
      for (std::size_t k = 0; k < 4; ++k) {
        double d = m.y_prop[k] - s.prop_mean[k];
        s.prop_std[k] += d * d;
      }
    }
    for (double& v : s.geom_std) v = std::max(1e-8, std::sqrt(v / n));
    for (double& v : s.prop_std) v = std::max(1e-8, std::sqrt(v / n));
    return s;
  }

  double geom(double v, std::size_t k) const { return v / geom_std[k]; }
  double prop(double v, std::size_t k) const { return v / prop_std[k]; }
};

ModalityForward modality_forward(Tape& tape, const BoundModel& bound, const MmsaModel& model,
                                 const Dataset& ds, const std::vector<SampleRef>& batch) {
  const std::size_t b = batch.size();
  EncoderConfig ec = model.config.encoder_config();
  std::size_t img_size = 0;
  for (const SampleRef& s : batch) validate_sample(ds, s);
  img_size = ds.molecules[batch[0].molecule].image.shape[0];

  std::vector<Var> graph_rows, geo_rows;
  Tensor images = Tensor::zeros({b, 3, img_size, img_size});
  for (std::size_t i = 0; i < b; ++i) {
    const Molecule& m = ds.molecules[batch[i].molecule];
    graph_rows.push_back(
        gin_forward(tape, bound.gin, m.atom_features, m.bond_features, m.graph.bonds));
    geo_rows.push_back(geo3d_forward(tape, bound.geo, ec, m.atom_features,
                                     m.coords[batch[i].conformer], m.graph.bonds));
    // HWC -> CHW
    for (std::size_t y = 0; y < img_size; ++y)
      for (std::size_t x = 0; x < img_size; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          images.data[((i * 3 + c) * img_size + y) * img_size + x] =
              m.image.data[(y * img_size + x) * 3 + c];
  }
  ModalityForward out;
  out.features = {stack_rows(graph_rows),
                  image_forward(tape, bound.image, tape.constant(std::move(images))),
                  stack_rows(geo_rows)};
  out.codes = encode_all(tape, bound.autoencoders, out.features);
  out.aggregated = aggregate(tape, out.codes);
  return out;
}

}  // namespace

BatchVars pretrain_forward(Tape& tape, const BoundModel& bound, const MmsaModel& model,
                           const Dataset& ds, const std::vector<SampleRef>& batch,
                           std::uint64_t step_seed) {
  const PretrainConfig& cfg = model.config;
  ModalityForward mf = modality_forward(tape, bound, model, ds, batch);

  ContrastiveConfig ccfg{cfg.contrastive_mode, step_seed};
  BatchVars out;
  out.contrastive = contrastive_loss(tape, mf.codes, ccfg);
  // detached reconstruction targets: same loss value, but the extractors get
  // no reward for collapsing their outputs into easily-reconstructed constants
  std::vector<Var> detached;
  detached.reserve(mf.features.size());
  for (const Var& x : mf.features)
    detached.push_back(tape.constant(Tensor(x.shape(), x.values())));
  out.reconstruction =
      reconstruction_loss(tape, mf.features, bound.autoencoders, cfg.tau, &detached);
  out.ae = ae_loss(tape, out.contrastive, out.reconstruction, cfg.lambda);
  out.aggregated = mf.aggregated;

  Tensor c_values(out.aggregated.shape(), out.aggregated.values());
  Hypergraph hg = build_knn_hypergraph(c_values, cfg.knn_k, cfg.knn_metric);
  Var z = hgnn_conv(tape, hg, out.aggregated, bound.hgnn_weight);
  MemoryAlign align = memory_align(tape, z, bound.anchors, cfg.align_metric);
  out.memory = memory_loss(tape, align.aligned, z);

  const std::size_t b = batch.size();
  LabelScaler scaler = LabelScaler::fit(ds);
  Tensor yg = Tensor::zeros({b, 3});
  Tensor yp = Tensor::zeros({b, 4});
  for (std::size_t i = 0; i < b; ++i) {
    const Molecule& m = ds.molecules[batch[i].molecule];
    std::vector<double> g =
        batch[i].conformer == 0 ? m.y_geom : geom_labels(m.coords[batch[i].conformer]);
    for (std::size_t k = 0; k < 3; ++k) yg.data[i * 3 + k] = scaler.geom(g[k], k);
    for (std::size_t k = 0; k < 4; ++k) yp.data[i * 4 + k] = scaler.prop(m.y_prop[k], k);
  }
  out.prediction = prediction_loss(tape, tape.constant(std::move(yg)), tape.constant(std::move(yp)),
                                   z, align.aligned, bound.geom_predictor, bound.prop_predictor);
  out.sa = sa_loss(tape, out.memory, out.prediction, cfg.alpha);
  out.overall = add(out.ae, out.sa);
  return out;
}

// ----------------------------------------------------------------- pretrain

namespace {

std::vector<std::vector<SampleRef>> make_batches(std::vector<SampleRef> samples,
                                                 std::size_t batch_size, Rng& rng) {
  rng.shuffle(samples);
  std::vector<std::vector<SampleRef>> batches;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::size_t end = std::min(samples.size(), start + batch_size);
    batches.push_back(std::vector<SampleRef>(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                             samples.begin() + static_cast<std::ptrdiff_t>(end)));
  }
  // a lone trailing sample cannot form contrastive negatives; fold it back
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

json epoch_json(const EpochLosses& e) {
  return json{{"epoch", e.epoch}, {"L_cl", e.cl},   {"L_rl", e.rl},
              {"L_ae", e.ae},     {"L_me", e.me},   {"L_pre", e.pre},
              {"L_sa", e.sa},     {"L_overall", e.overall}};
}

}  // namespace

PretrainResult pretrain(MmsaModel& model, const Dataset& ds, const std::string& log_path) {
  const PretrainConfig& cfg = model.config;
  cfg.validate();
  if (ds.size() < 2) throw std::invalid_argument("pretrain: need at least two molecules");

  std::vector<SampleRef> samples;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    validate_sample(ds, {i, 0});
    for (std::size_t c = 0; c < ds.molecules[i].coords.size(); ++c) samples.push_back({i, c});
  }

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw std::runtime_error("pretrain: cannot open log file " + log_path);
  }

  auto params = model.parameters();
  Adam optimizer(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng order_rng(derive_seed(cfg.seed, {hash_bytes("batch-order")}));

  PretrainResult result;
  for (const auto& p : params) result.max_grad_norm[p.name] = 0.0;

  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = make_batches(samples, cfg.batch, order_rng);
    EpochLosses acc;
    acc.epoch = epoch;
    for (const auto& batch : batches) {
      Tape tape;
      BoundModel bound = bind(tape, model);
      BatchVars vars = pretrain_forward(tape, bound, model, ds, batch,
                                        derive_seed(cfg.seed, {hash_bytes("step"), step}));
      tape.backward(vars.overall);

      std::vector<Var> leaves = bound.all_vars();
      if (leaves.size() != params.size())
        throw std::logic_error("pretrain: parameter/leaf count mismatch");
      std::vector<Tensor*> targets;
      std::vector<Tensor> grads;
      targets.reserve(params.size());
      grads.reserve(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        targets.push_back(params[i].tensor);
        grads.push_back(tape.grad_of(leaves[i]));
        double norm = 0.0;
        for (double g : grads.back().data) norm += g * g;
        result.max_grad_norm[params[i].name] =
            std::max(result.max_grad_norm[params[i].name], std::sqrt(norm));
      }
      optimizer.step(targets, grads);

      acc.cl += vars.contrastive.scalar_value();
      acc.rl += vars.reconstruction.scalar_value();
      acc.ae += vars.ae.scalar_value();
      acc.me += vars.memory.scalar_value();
      acc.pre += vars.prediction.scalar_value();
      acc.sa += vars.sa.scalar_value();
      acc.overall += vars.overall.scalar_value();
      ++step;
    }
    double inv = 1.0 / static_cast<double>(batches.size());
    acc.cl *= inv;
    acc.rl *= inv;
    acc.ae *= inv;
    acc.me *= inv;
    acc.pre *= inv;
    acc.sa *= inv;
    acc.overall *= inv;
    result.log.push_back(acc);
    if (log) log << epoch_json(acc).dump() << '\n';
  }
  result.rng_state = order_rng.state_string();
  return result;
}

// ----------------------------------------------------------------- finetune

namespace {

struct LabeledSample {
  SampleRef ref;
  double label;
};

std::vector<LabeledSample> labeled_samples(const Dataset& ds, Split split,
                                           std::size_t label_index) {
  std::vector<LabeledSample> out;
  for (std::size_t i : ds.indices_of(split)) {
    const Molecule& m = ds.molecules[i];
    if (label_index >= m.labels.size()) continue;
    double l = m.labels[label_index];
    if (std::isnan(l)) continue;
    out.push_back({{i, 0}, l});
  }
  return out;
}

}  // namespace

FinetuneResult finetune(const MmsaModel& base, const Dataset& ds, Task task,
                        const FinetuneConfig& cfg) {
  MmsaModel model = base;
  auto train = labeled_samples(ds, Split::kTrain, cfg.label_index);
  auto test = labeled_samples(ds, Split::kTest, cfg.label_index);
  if (train.empty()) throw std::invalid_argument("finetune: no labeled training molecules");
  if (test.empty()) throw std::invalid_argument("finetune: no labeled test molecules");
  if (task == Task::kClassification) {
    for (const auto& s : train)
      if (s.label != 0.0 && s.label != 1.0)
        throw std::invalid_argument("finetune: classification labels must be 0/1");
  }

  Rng init_rng(derive_seed(cfg.seed, {hash_bytes("task-head")}));
  LinearParams head = init_linear(model.config.embed_dim, 1, init_rng);

  auto params = model.parameters();
  params.push_back({"head.w", &head.w});
  params.push_back({"head.b", &head.b});
  Adam optimizer(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng order_rng(derive_seed(cfg.seed, {hash_bytes("finetune-order")}));

  FinetuneResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<LabeledSample> shuffled = train;
    order_rng.shuffle(shuffled);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < shuffled.size(); start += cfg.batch) {
      std::size_t end = std::min(shuffled.size(), start + cfg.batch);
      std::vector<SampleRef> refs;
      Tensor labels = Tensor::zeros({end - start});
      for (std::size_t i = start; i < end; ++i) {
        refs.push_back(shuffled[i].ref);
        labels.data[i - start] = shuffled[i].label;
      }
      Tape tape;
      BoundModel bound = bind(tape, model);
      LinearVars head_vars = bind(tape, head);
      ModalityForward mf = modality_forward(tape, bound, model, ds, refs);
      Var logits = reshape(linear(tape, head_vars, mf.aggregated), {refs.size()});
      Var y = tape.constant(labels);
      Var loss;
      if (task == Task::kClassification) {
        // y*softplus(-x) + (1-y)*softplus(x), the stable logistic loss
        Var ones = tape.constant(Tensor({refs.size()}, std::vector<double>(refs.size(), 1.0)));
        Var pos = mul(y, softplus(scale(logits, -1.0)));
        Var neg = mul(sub(ones, y), softplus(logits));
        loss = mean_all(add(pos, neg));
      } else {
        Var diff = sub(logits, y);
        loss = mean_all(mul(diff, diff));
      }
      tape.backward(loss);

      std::vector<Var> leaves = bound.all_vars();
      leaves.push_back(head_vars.w);
      leaves.push_back(head_vars.b);
      std::vector<Tensor*> targets;
      std::vector<Tensor> grads;
      for (std::size_t i = 0; i < params.size(); ++i) {
        targets.push_back(params[i].tensor);
        grads.push_back(tape.grad_of(leaves[i]));
      }
      optimizer.step(targets, grads);
      epoch_loss += loss.scalar_value();
      ++batches;
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(batches));
  }

  // scores over the test split; rank metrics are monotone-invariant so raw
  // logits serve as classification scores
  std::vector<double> scores, truth;
  for (std::size_t start = 0; start < test.size(); start += cfg.batch) {
    std::size_t end = std::min(test.size(), start + cfg.batch);
    std::vector<SampleRef> refs;
    for (std::size_t i = start; i < end; ++i) refs.push_back(test[i].ref);
    Tape tape;
    BoundModel bound = bind(tape, model);
    LinearVars head_vars = bind(tape, head);
    ModalityForward mf = modality_forward(tape, bound, model, ds, refs);
    Var logits = reshape(linear(tape, head_vars, mf.aggregated), {refs.size()});
    for (std::size_t i = start; i < end; ++i) {
      scores.push_back(logits.values()[i - start]);
      truth.push_back(test[i].label);
    }
  }
  if (task == Task::kClassification) {
    result.test_metric = [&] {
      std::vector<double> labels = truth;
      return roc_auc(scores, labels);
    }();
  } else {
    result.test_metric = rmse(scores, truth);
  }
  return result;
}

// ----------------------------------------------------------------- embed

Tensor embed(const MmsaModel& model, const Dataset& ds) {
  Tensor out = Tensor::zeros({ds.size(), model.config.embed_dim});
  const std::size_t chunk = 64;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    std::size_t end = std::min(ds.size(), start + chunk);
    std::vector<SampleRef> refs;
    for (std::size_t i = start; i < end; ++i) refs.push_back({i, 0});
    Tape tape;
    BoundModel bound = bind(tape, model);
    ModalityForward mf = modality_forward(tape, bound, model, ds, refs);
    const auto& values = mf.aggregated.values();
    std::copy(values.begin(), values.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(start * model.config.embed_dim));
  }
  return out;
}

// ----------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[4] = {'M', 'M', 'S', 'A'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw CheckpointError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw CheckpointError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const MmsaModel& model, int epoch, const std::string& rng_state,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  json header{{"config", config_json(model.config)},
              {"epoch", epoch},
              {"rng", rng_state},
              {"atom_dim", model.atom_dim},
              {"bond_dim", model.bond_dim}};
  std::string header_text = header.dump();
  write_u64(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

  auto params = const_cast<MmsaModel&>(model).parameters();  // read-only traversal
  write_u64(out, params.size());
  for (const auto& p : params) {
    write_u64(out, p.tensor->size());
    for (double v : p.tensor->data) write_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<PretrainConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  std::uint32_t version = read_u32(in);
  if (version != kVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  std::uint64_t header_len = read_u64(in);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw CheckpointError("checkpoint: truncated header");
  json header = json::parse(header_text);

  PretrainConfig cfg = config_from_json(header.at("config"));
  std::size_t atom_dim = header.at("atom_dim").get<std::size_t>();
  std::size_t bond_dim = header.at("bond_dim").get<std::size_t>();
  if (expected) {
    auto mismatch = [](const char* what, std::size_t a, std::size_t b) {
      return std::string(what) + " " + std::to_string(a) + " vs expected " + std::to_string(b);
    };
    if (cfg.embed_dim != expected->embed_dim)
      throw ConfigMismatchError("checkpoint: " +
                                mismatch("embed_dim", cfg.embed_dim, expected->embed_dim));
    if (cfg.feature_dim != expected->feature_dim)
      throw ConfigMismatchError("checkpoint: " +
                                mismatch("feature_dim", cfg.feature_dim, expected->feature_dim));
    if (cfg.bank_size != expected->bank_size)
      throw ConfigMismatchError("checkpoint: " +
                                mismatch("bank_size", cfg.bank_size, expected->bank_size));
    if (cfg.hidden != expected->hidden)
      throw ConfigMismatchError("checkpoint: " + mismatch("hidden", cfg.hidden, expected->hidden));
  }

  Checkpoint ck;
  ck.model = MmsaModel::init(cfg, atom_dim, bond_dim);
  ck.epoch = header.at("epoch").get<int>();
  ck.rng_state = header.at("rng").get<std::string>();

  auto params = ck.model.parameters();
  std::uint64_t blocks = read_u64(in);
  if (blocks != params.size())
    throw CheckpointError("checkpoint: expected " + std::to_string(params.size()) +
                          " parameter blocks, found " + std::to_string(blocks));
  for (auto& p : params) {
    std::uint64_t count = read_u64(in);
    if (count != p.tensor->size())
      throw CheckpointError("checkpoint: block " + p.name + " has " + std::to_string(count) +
                            " values, expected " + std::to_string(p.tensor->size()));
    for (double& v : p.tensor->data) v = std::bit_cast<double>(read_u64(in));
  }
  in.peek();
  if (!in.eof()) throw CheckpointError("checkpoint: trailing bytes in " + path);
  return ck;
}

}  // namespace mmsa
