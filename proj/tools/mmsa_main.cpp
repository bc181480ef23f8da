// SPDX-License-Identifier: Apache-2.0
// Command-line front end: corpus generation, CSV ingestion, pre-training,
// fine-tuning, embedding export, retrieval, and evaluation metrics.

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmsa/metrics.hpp"
#include "mmsa/mol_data.hpp"
#include "mmsa/trainer.hpp"

using json = nlohmann::json;
using namespace mmsa;

namespace {

void emit(const json& payload, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << payload.dump(2) << std::endl;
  } else {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open output file " + out_path);
    out << payload.dump(2) << '\n';
  }
}

struct ConfigFlags {
  std::string config_path;
  PretrainConfig base;

  void attach(CLI::App* cmd, bool loop_flags = true) {
    cmd->add_option("--config", config_path, "JSON file with configuration defaults");
    if (loop_flags) {
      cmd->add_option("--epochs", base.epochs, "training epochs");
      cmd->add_option("--batch", base.batch, "batch size");
      cmd->add_option("--lr", base.lr, "learning rate");
    }
    cmd->add_option("--lambda", base.lambda, "contrastive/reconstruction weight");
    cmd->add_option("--tau", base.tau, "intra/cross reconstruction weight");
    cmd->add_option("--alpha", base.alpha, "memory/prediction weight");
    cmd->add_option("--knn-k", base.knn_k, "hyperedge neighborhood size");
    cmd->add_option("--bank-size", base.bank_size, "memory anchor count");
    cmd->add_option("--embed-dim", base.embed_dim, "molecular embedding width");
    cmd->add_option("--feature-dim", base.feature_dim, "modality feature width");
    cmd->add_option("--hidden", base.hidden, "encoder hidden width");
    cmd->add_option("--seed", base.seed, "random seed");
    cmd->add_option("--contrastive-mode", contrastive_mode, "in-batch | single-draw");
    cmd->add_option("--knn-metric", knn_metric, "inner | euclidean");
    cmd->add_option("--align-metric", align_metric, "cosine | scaled-dot");
    owner = cmd;
  }

  PretrainConfig resolve() const {
    PretrainConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot open config file " + config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg = PretrainConfig::from_json(ss.str());
    }
    auto take = [&](const char* flag, auto member, auto value) {
      if (owner->count(flag)) cfg.*member = value;
    };
    if (owner->count_all() && owner->get_option_no_throw("--epochs") != nullptr) {
      take("--epochs", &PretrainConfig::epochs, base.epochs);
      take("--batch", &PretrainConfig::batch, base.batch);
      take("--lr", &PretrainConfig::lr, base.lr);
    }
    take("--lambda", &PretrainConfig::lambda, base.lambda);
    take("--tau", &PretrainConfig::tau, base.tau);
    take("--alpha", &PretrainConfig::alpha, base.alpha);
    take("--knn-k", &PretrainConfig::knn_k, base.knn_k);
    take("--bank-size", &PretrainConfig::bank_size, base.bank_size);
    take("--embed-dim", &PretrainConfig::embed_dim, base.embed_dim);
    take("--feature-dim", &PretrainConfig::feature_dim, base.feature_dim);
    take("--hidden", &PretrainConfig::hidden, base.hidden);
    take("--seed", &PretrainConfig::seed, base.seed);
    if (owner->count("--contrastive-mode"))
      cfg.contrastive_mode = contrastive_mode == "single-draw" ? NegativeMode::kSingleDraw
                                                               : NegativeMode::kInBatchAll;
    if (owner->count("--knn-metric"))
      cfg.knn_metric = knn_metric == "euclidean" ? KnnMetric::kEuclidean
                                                 : KnnMetric::kInnerProduct;
    if (owner->count("--align-metric"))
      cfg.align_metric = align_metric == "scaled-dot" ? AlignMetric::kScaledDot
                                                      : AlignMetric::kCosine;
    cfg.validate();
    return cfg;
  }

  std::string contrastive_mode, knn_metric, align_metric;
  CLI::App* owner = nullptr;
};

json losses_json(const EpochLosses& e) {
  return json{{"epoch", e.epoch}, {"L_cl", e.cl},   {"L_rl", e.rl},
              {"L_ae", e.ae},     {"L_me", e.me},   {"L_pre", e.pre},
              {"L_sa", e.sa},     {"L_overall", e.overall}};
}

SplitFractions fraction_flags(CLI::App* cmd, double* train, double* val, double* test) {
  cmd->add_option("--frac-train", *train, "train fraction");
  cmd->add_option("--frac-val", *val, "validation fraction");
  cmd->add_option("--frac-test", *test, "test fraction");
  return {};
}

int run(int argc, char** argv) {
  CLI::App app{"multi-modal molecular pre-training toolkit"};
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  std::size_t gen_n = 200;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  double gf_train = 0.8, gf_val = 0.1, gf_test = 0.1;
  gen->add_option("--n", gen_n, "number of molecules");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output JSONL path")->required();
  fraction_flags(gen, &gf_train, &gf_val, &gf_test);

  // ---- ingest ----
  auto* ingest = app.add_subcommand("ingest", "featurize a CSV into a JSONL cache");
  std::string in_csv, in_smiles = "smiles", in_labels, in_out;
  std::uint64_t in_seed = 0;
  double if_train = 0.8, if_val = 0.1, if_test = 0.1;
  ingest->add_option("--csv", in_csv, "input CSV path")->required();
  ingest->add_option("--smiles-col", in_smiles, "SMILES column name");
  ingest->add_option("--label-cols", in_labels, "comma-separated label columns");
  ingest->add_option("--out", in_out, "output JSONL path")->required();
  ingest->add_option("--seed", in_seed, "split seed");
  fraction_flags(ingest, &if_train, &if_val, &if_test);

  // ---- pretrain ----
  auto* pre = app.add_subcommand("pretrain", "run self-supervised pre-training");
  std::string pre_data, pre_out, pre_log;
  ConfigFlags pre_cfg;
  pre->add_option("--data", pre_data, "corpus JSONL path")->required();
  pre->add_option("--out", pre_out, "checkpoint output path")->required();
  pre->add_option("--log", pre_log, "loss log JSONL path");
  pre_cfg.attach(pre);

  // ---- finetune ----
  auto* fine = app.add_subcommand("finetune", "fine-tune on a labeled dataset");
  std::string fine_ckpt, fine_data, fine_task = "classification", fine_out;
  int fine_epochs = 100;
  std::size_t fine_batch = 32, fine_label = 0;
  double fine_lr = 0.001;
  std::string fine_seeds = "0";
  ConfigFlags fine_cfg;
  fine->add_option("--checkpoint", fine_ckpt, "pre-trained checkpoint (omit for random init)");
  fine->add_option("--data", fine_data, "dataset JSONL path")->required();
  fine->add_option("--task", fine_task, "classification | regression");
  fine->add_option("--epochs", fine_epochs, "fine-tune epochs");
  fine->add_option("--batch", fine_batch, "batch size");
  fine->add_option("--lr", fine_lr, "learning rate");
  fine->add_option("--label-index", fine_label, "column of the task label");
  fine->add_option("--seeds", fine_seeds, "single seed or inclusive range a-b");
  fine->add_option("--out", fine_out, "write the report here instead of stdout");
  fine_cfg.attach(fine, false);

  // ---- embed ----
  auto* emb = app.add_subcommand("embed", "export aggregated molecular embeddings");
  std::string emb_ckpt, emb_data, emb_out;
  std::size_t emb_label = 0;
  emb->add_option("--checkpoint", emb_ckpt, "checkpoint path")->required();
  emb->add_option("--data", emb_data, "dataset JSONL path")->required();
  emb->add_option("--out", emb_out, "embedding JSONL output")->required();
  emb->add_option("--label-index", emb_label, "label column exported alongside");

  // ---- retrieve ----
  auto* ret = app.add_subcommand("retrieve", "rank reference molecules against a query");
  std::string ret_query, ret_refs, ret_mode = "tanimoto", ret_ckpt, ret_out;
  std::size_t ret_k = 4;
  int ret_radius = 2;
  std::size_t ret_nbits = 2048;
  ret->add_option("--query", ret_query, "query SMILES")->required();
  ret->add_option("--refs", ret_refs, "reference JSONL path")->required();
  ret->add_option("--mode", ret_mode, "tanimoto | cosine");
  ret->add_option("--k", ret_k, "number of hits");
  ret->add_option("--checkpoint", ret_ckpt, "checkpoint (cosine mode)");
  ret->add_option("--radius", ret_radius, "fingerprint radius");
  ret->add_option("--nbits", ret_nbits, "fingerprint width");
  ret->add_option("--out", ret_out, "write results here instead of stdout");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "clustering metrics over exported embeddings");
  std::string ev_emb, ev_out;
  std::size_t ev_k = 0;
  std::uint64_t ev_seed = 0;
  ev->add_option("--embeddings", ev_emb, "embedding JSONL from `embed`")->required();
  ev->add_option("--clusters", ev_k, "k-means cluster count (default: distinct labels)");
  ev->add_option("--seed", ev_seed, "k-means seed");
  ev->add_option("--out", ev_out, "write the report here instead of stdout");

  // ---- fingerprint ----
  auto* fp = app.add_subcommand("fingerprint", "ECFP bits for one molecule");
  std::string fp_smiles, fp_out;
  int fp_radius = 2;
  std::size_t fp_nbits = 2048;
  fp->add_option("--smiles", fp_smiles, "molecule SMILES")->required();
  fp->add_option("--radius", fp_radius, "neighborhood radius");
  fp->add_option("--nbits", fp_nbits, "fingerprint width");
  fp->add_option("--out", fp_out, "write results here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n' << app.help();
    return 2;
  }

  FeatureConfig feature_cfg;

  if (*gen) {
    Dataset ds = gen_synthetic(gen_n, gen_seed, feature_cfg);
    ds.split = scaffold_split(ds, {gf_train, gf_val, gf_test}, gen_seed);
    save_jsonl(ds, gen_out);
    emit(json{{"molecules", ds.size()}, {"seed", gen_seed}, {"path", gen_out}}, "");
  } else if (*ingest) {
    std::vector<std::string> label_cols;
    std::stringstream ss(in_labels);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) label_cols.push_back(item);
    std::size_t skipped = 0;
    Dataset ds = load_csv(in_csv, in_smiles, label_cols, feature_cfg, &skipped);
    if (ds.size() == 0) throw std::runtime_error("ingest: no parseable molecules in " + in_csv);
    ds.split = scaffold_split(ds, {if_train, if_val, if_test}, in_seed);
    save_jsonl(ds, in_out);
    emit(json{{"molecules", ds.size()}, {"skipped", skipped}, {"path", in_out}}, "");
  } else if (*pre) {
    PretrainConfig cfg = pre_cfg.resolve();
    Dataset ds = load_jsonl(pre_data, feature_cfg);
    MmsaModel model = MmsaModel::init(cfg, feature_cfg.atom_dim(), feature_cfg.bond_dim());
    PretrainResult r = pretrain(model, ds, pre_log);
    save_checkpoint(model, cfg.epochs, r.rng_state, pre_out);
    json out{{"checkpoint", pre_out},
             {"epochs", cfg.epochs},
             {"molecules", ds.size()},
             {"first_epoch", losses_json(r.log.front())},
             {"final_epoch", losses_json(r.log.back())}};
    emit(out, "");
  } else if (*fine) {
    Task task;
    if (fine_task == "classification")
      task = Task::kClassification;
    else if (fine_task == "regression")
      task = Task::kRegression;
    else
      throw std::runtime_error("finetune: unknown task " + fine_task);
    Dataset ds = load_jsonl(fine_data, feature_cfg);
    MmsaModel base = [&] {
      if (!fine_ckpt.empty()) return load_checkpoint(fine_ckpt).model;
      PretrainConfig cfg = fine_cfg.resolve();
      return MmsaModel::init(cfg, feature_cfg.atom_dim(), feature_cfg.bond_dim());
    }();

    std::vector<std::uint64_t> seeds;
    auto dash = fine_seeds.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(std::stoull(fine_seeds));
    } else {
      std::uint64_t lo = std::stoull(fine_seeds.substr(0, dash));
      std::uint64_t hi = std::stoull(fine_seeds.substr(dash + 1));
      for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    }
    std::vector<double> per_seed;
    for (std::uint64_t s : seeds) {
      FinetuneConfig fcfg;
      fcfg.epochs = fine_epochs;
      fcfg.batch = fine_batch;
      fcfg.lr = fine_lr;
      fcfg.seed = s;
      fcfg.label_index = fine_label;
      per_seed.push_back(finetune(base, ds, task, fcfg).test_metric);
    }
    MetricReport report =
        summarize(task == Task::kClassification ? "roc_auc" : "rmse", per_seed);
    json out{{"metric", report.metric},
             {"mean", report.mean},
             {"stddev", report.stddev},
             {"per_seed", report.per_seed},
             {"seeds", seeds},
             {"pretrained", !fine_ckpt.empty()}};
    emit(out, fine_out);
  } else if (*emb) {
    Dataset ds = load_jsonl(emb_data, feature_cfg);
    Checkpoint ck = load_checkpoint(emb_ckpt);
    Tensor e = embed(ck.model, ds);
    std::ofstream out(emb_out);
    if (!out) throw std::runtime_error("embed: cannot open " + emb_out);
    std::size_t d = ck.model.config.embed_dim;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      json rec;
      rec["id"] = i;
      rec["smiles"] = ds.molecules[i].smiles;
      std::vector<double> row(e.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                              e.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
      rec["embedding"] = row;
      double label = emb_label < ds.molecules[i].labels.size()
                         ? ds.molecules[i].labels[emb_label]
                         : std::nan("");
      rec["label"] = std::isnan(label) ? json(nullptr) : json(label);
      out << rec.dump() << '\n';
    }
    emit(json{{"molecules", ds.size()}, {"dim", d}, {"path", emb_out}}, "");
  } else if (*ret) {
    Dataset refs = load_jsonl(ret_refs, feature_cfg);
    if (refs.size() == 0) throw std::runtime_error("retrieve: empty reference set");
    RetrievalResult result;
    if (ret_mode == "tanimoto") {
      Fingerprint q = ecfp(parse_molecule(ret_query), ret_radius, ret_nbits);
      std::vector<Fingerprint> ref_fps;
      for (const Molecule& m : refs.molecules)
        ref_fps.push_back(ecfp(m.graph, ret_radius, ret_nbits));
      result = retrieve_tanimoto(q, ref_fps, ret_k);
    } else if (ret_mode == "cosine") {
      if (ret_ckpt.empty()) throw std::runtime_error("retrieve: cosine mode needs --checkpoint");
      Checkpoint ck = load_checkpoint(ret_ckpt);
      Tensor ref_emb = embed(ck.model, refs);
      std::size_t d = ck.model.config.embed_dim;
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < refs.size(); ++i)
        rows.push_back(std::vector<double>(
            ref_emb.data.begin() + static_cast<std::ptrdiff_t>(i * d),
            ref_emb.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
      // reuse the cached reference data when the query is one of them, so a
      // self-query reproduces its reference embedding exactly
      std::vector<double> query_row;
      bool found = false;
      for (std::size_t i = 0; i < refs.size(); ++i)
        if (refs.molecules[i].smiles == ret_query) {
          query_row = rows[i];
          found = true;
          break;
        }
      if (!found) {
        Dataset one;
        one.molecules.push_back(build_molecule(ret_query, feature_cfg));
        one.split.assign(1, Split::kNone);
        Tensor qe = embed(ck.model, one);
        query_row.assign(qe.data.begin(), qe.data.end());
      }
      result = retrieve_cosine(query_row, rows, ret_k);
    } else {
      throw std::runtime_error("retrieve: unknown mode " + ret_mode +
                               " (expected tanimoto or cosine)");
    }
    json hits = json::array();
    for (std::size_t r = 0; r < result.hits.size(); ++r)
      hits.push_back(json{{"rank", r + 1},
                          {"index", result.hits[r].reference},
                          {"smiles", refs.molecules[result.hits[r].reference].smiles},
                          {"similarity", result.hits[r].similarity}});
    emit(json{{"query", ret_query}, {"mode", ret_mode}, {"hits", hits}}, ret_out);
  } else if (*ev) {
    std::ifstream in(ev_emb);
    if (!in) throw std::runtime_error("eval: cannot open " + ev_emb);
    std::vector<std::vector<double>> points;
    std::vector<int> labels;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line);
      points.push_back(rec.at("embedding").get<std::vector<double>>());
      const auto& l = rec.at("label");
      labels.push_back(l.is_null() ? -1 : static_cast<int>(std::lround(l.get<double>())));
    }
    if (points.empty()) throw std::runtime_error("eval: no embeddings in " + ev_emb);
    std::vector<int> distinct = labels;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::size_t k = ev_k > 0 ? ev_k : distinct.size();
    std::vector<int> assignment = kmeans(points, k, ev_seed);
    json out{{"molecules", points.size()},
             {"clusters", k},
             {"dbi_true_labels", dbi(points, labels)},
             {"dbi_kmeans", dbi(points, assignment)},
             {"nmi_kmeans_vs_labels", nmi(assignment, labels)}};
    emit(out, ev_out);
  } else if (*fp) {
    Fingerprint f = ecfp(parse_molecule(fp_smiles), fp_radius, fp_nbits);
    std::vector<std::size_t> bits;
    for (std::size_t i = 0; i < f.nbits; ++i)
      if (f.test(i)) bits.push_back(i);
    emit(json{{"smiles", fp_smiles},
              {"radius", fp_radius},
              {"nbits", fp_nbits},
              {"popcount", f.popcount()},
              {"bits", bits}},
         fp_out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    json err{{"error", e.what()}};
    std::cerr << err.dump() << std::endl;
    return 1;
  }
}
