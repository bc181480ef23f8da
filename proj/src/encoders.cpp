// SPDX-License-Identifier: Apache-2.0
#include "mmsa/encoders.hpp"

#include <cmath>

namespace mmsa {

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Var mlp2(Tape& tape, Var x, const LinearVars& l1, const LinearVars& l2) {
  return linear(tape, l2, relu(linear(tape, l1, x)));
}

void validate_bonds(const std::vector<Bond>& bonds, std::size_t n_atoms) {
  for (const Bond& b : bonds)
    if (b.a < 0 || b.b < 0 || static_cast<std::size_t>(b.a) >= n_atoms ||
        static_cast<std::size_t>(b.b) >= n_atoms)
      throw std::invalid_argument("encoder: bond endpoint out of range");
}

}  // namespace

// Weights uniform in +-1/sqrt(fan_in); biases start at zero so initial
// outputs are input-driven rather than dominated by a shared offset, which
// would start every molecule embedding nearly parallel.
LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng) {
  return LinearParams{uniform_init({in, out}, in, rng), Tensor::zeros({out}, true)};
}

LinearParams init_linear_kaiming(std::size_t in, std::size_t out, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(in));
  Tensor w = Tensor::zeros({in, out}, true);
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  return LinearParams{std::move(w), Tensor::zeros({out}, true)};
}

LinearVars bind(Tape& tape, const LinearParams& p) {
  return LinearVars{tape.leaf(p.w), tape.leaf(p.b)};
}

Var linear(Tape& tape, const LinearVars& l, Var x) {
  (void)tape;
  return add_bias(matmul(x, l.w), l.b);
}

Var linear_vec(Tape& tape, const LinearVars& l, Var x) {
  Var row = reshape(x, {1, x.size()});
  Var out = linear(tape, l, row);
  return reshape(out, {out.size()});
}

// ----------------------------------------------------------------- GIN

GinParams init_gin(const EncoderConfig& cfg, std::size_t atom_dim, std::size_t bond_dim,
                   Rng& rng) {
  GinParams p;
  p.atom_embed = init_linear(atom_dim, cfg.hidden, rng);
  for (std::size_t l = 0; l < cfg.gin_layers; ++l) {
    GinParams::Layer layer;
    layer.eps = Tensor::scalar(0.0, true);
    layer.edge_embed = init_linear(bond_dim, cfg.hidden, rng);
    layer.mlp1 = init_linear(cfg.hidden, cfg.hidden, rng);
    layer.mlp2 = init_linear(cfg.hidden, cfg.hidden, rng);
    p.layers.push_back(std::move(layer));
  }
  p.readout = init_linear(cfg.hidden, cfg.out_dim, rng);
  return p;
}

void GinParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".atom_embed.w", &atom_embed.w});
  out.push_back({prefix + ".atom_embed.b", &atom_embed.b});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::string lp = prefix + ".layer" + std::to_string(l);
    out.push_back({lp + ".eps", &layers[l].eps});
    out.push_back({lp + ".edge_embed.w", &layers[l].edge_embed.w});
    out.push_back({lp + ".edge_embed.b", &layers[l].edge_embed.b});
    out.push_back({lp + ".mlp1.w", &layers[l].mlp1.w});
    out.push_back({lp + ".mlp1.b", &layers[l].mlp1.b});
    out.push_back({lp + ".mlp2.w", &layers[l].mlp2.w});
    out.push_back({lp + ".mlp2.b", &layers[l].mlp2.b});
  }
  out.push_back({prefix + ".readout.w", &readout.w});
  out.push_back({prefix + ".readout.b", &readout.b});
}

GinVars bind(Tape& tape, const GinParams& p) {
  GinVars v;
  v.atom_embed = bind(tape, p.atom_embed);
  for (const auto& layer : p.layers) {
    GinVars::Layer lv;
    lv.eps = tape.leaf(layer.eps);
    lv.edge_embed = bind(tape, layer.edge_embed);
    lv.mlp1 = bind(tape, layer.mlp1);
    lv.mlp2 = bind(tape, layer.mlp2);
    v.layers.push_back(lv);
  }
  v.readout = bind(tape, p.readout);
  return v;
}

std::vector<Var> GinVars::all_vars() const {
  std::vector<Var> out{atom_embed.w, atom_embed.b};
  for (const auto& l : layers) {
    out.push_back(l.eps);
    out.insert(out.end(), {l.edge_embed.w, l.edge_embed.b, l.mlp1.w, l.mlp1.b, l.mlp2.w, l.mlp2.b});
  }
  out.insert(out.end(), {readout.w, readout.b});
  return out;
}

Var gin_forward(Tape& tape, const GinVars& vars, const Tensor& atom_features,
                const Tensor& bond_features, const std::vector<Bond>& bonds) {
  const std::size_t n = atom_features.shape[0];
  const std::size_t ne = bond_features.shape[0];
  if (ne != bonds.size()) throw std::invalid_argument("gin_forward: bond feature row mismatch");
  validate_bonds(bonds, n);

  Tensor adjacency = Tensor::zeros({n, n});
  Tensor incidence = Tensor::zeros({n, ne});
  for (std::size_t e = 0; e < bonds.size(); ++e) {
    std::size_t a = static_cast<std::size_t>(bonds[e].a);
    std::size_t b = static_cast<std::size_t>(bonds[e].b);
    adjacency.data[a * n + b] = 1.0;
    adjacency.data[b * n + a] = 1.0;
    incidence.data[a * ne + e] = 1.0;
    incidence.data[b * ne + e] = 1.0;
  }
  Var adj = tape.constant(std::move(adjacency));
  Var inc = tape.constant(std::move(incidence));
  Var xe = tape.constant(bond_features);
  Var one = tape.constant(Tensor::scalar(1.0));

  Var h = linear(tape, vars.atom_embed, tape.constant(atom_features));
  for (const auto& layer : vars.layers) {
    Var self_scale = add(one, layer.eps);
    Var msg = add(mul_scalar(h, self_scale), matmul(adj, h));
    Var edges = linear(tape, layer.edge_embed, xe);
    msg = add(msg, matmul(inc, edges));
    h = mlp2(tape, msg, layer.mlp1, layer.mlp2);
  }
  return linear_vec(tape, vars.readout, mean_rows(h));
}

// ----------------------------------------------------------------- image

ImageParams init_image(const EncoderConfig& cfg, Rng& rng) {
  ImageParams p;
  const std::size_t channels[4] = {3, 8, 16, 32};
  for (int s = 0; s < 3; ++s) {
    std::size_t cin = channels[s], cout = channels[s + 1];
    ImageParams::Stage stage;
    stage.w = uniform_init({cout, cin, 3, 3}, cin * 9, rng);
    stage.b = Tensor::zeros({cout}, true);
    p.stages.push_back(std::move(stage));
  }
  p.fc = init_linear(32, cfg.out_dim, rng);
  return p;
}

void ImageParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t s = 0; s < stages.size(); ++s) {
    std::string sp = prefix + ".conv" + std::to_string(s);
    out.push_back({sp + ".w", &stages[s].w});
    out.push_back({sp + ".b", &stages[s].b});
  }
  out.push_back({prefix + ".fc.w", &fc.w});
  out.push_back({prefix + ".fc.b", &fc.b});
}

ImageVars bind(Tape& tape, const ImageParams& p) {
  ImageVars v;
  for (const auto& s : p.stages) v.stages.push_back({tape.leaf(s.w), tape.leaf(s.b)});
  v.fc = bind(tape, p.fc);
  return v;
}

std::vector<Var> ImageVars::all_vars() const {
  std::vector<Var> out;
  for (const auto& s : stages) out.insert(out.end(), {s.w, s.b});
  out.insert(out.end(), {fc.w, fc.b});
  return out;
}

Var image_forward(Tape& tape, const ImageVars& vars, Var images) {
  if (images.shape().size() != 4 || images.shape()[1] != 3 ||
      images.shape()[2] != images.shape()[3] || images.shape()[2] < 8)
    throw ShapeError("image_forward: need {N,3,S,S} with S >= 8, got " +
                     shape_str(images.shape()));
  Var h = images;
  for (const auto& s : vars.stages) h = relu(conv2d(h, s.w, s.b, 2, 1));
  return linear(tape, vars.fc, global_avg_pool(h));
}

// ----------------------------------------------------------------- 3-D

GeoParams init_geo(const EncoderConfig& cfg, std::size_t atom_dim, Rng& rng) {
  GeoParams p;
  p.atom_embed = init_linear(atom_dim, cfg.hidden, rng);
  for (std::size_t l = 0; l < cfg.geo_layers; ++l) {
    GeoParams::Layer layer;
    layer.edge_mlp1 = init_linear(cfg.hidden + cfg.rbf_bins, cfg.hidden, rng);
    layer.edge_mlp2 = init_linear(cfg.hidden, cfg.hidden, rng);
    layer.node_mlp1 = init_linear(cfg.hidden, cfg.hidden, rng);
    layer.node_mlp2 = init_linear(cfg.hidden, cfg.hidden, rng);
    p.layers.push_back(std::move(layer));
  }
  p.readout = init_linear(cfg.hidden, cfg.out_dim, rng);
  return p;
}

void GeoParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".atom_embed.w", &atom_embed.w});
  out.push_back({prefix + ".atom_embed.b", &atom_embed.b});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::string lp = prefix + ".layer" + std::to_string(l);
    out.push_back({lp + ".edge_mlp1.w", &layers[l].edge_mlp1.w});
    out.push_back({lp + ".edge_mlp1.b", &layers[l].edge_mlp1.b});
    out.push_back({lp + ".edge_mlp2.w", &layers[l].edge_mlp2.w});
    out.push_back({lp + ".edge_mlp2.b", &layers[l].edge_mlp2.b});
    out.push_back({lp + ".node_mlp1.w", &layers[l].node_mlp1.w});
    out.push_back({lp + ".node_mlp1.b", &layers[l].node_mlp1.b});
    out.push_back({lp + ".node_mlp2.w", &layers[l].node_mlp2.w});
    out.push_back({lp + ".node_mlp2.b", &layers[l].node_mlp2.b});
  }
  out.push_back({prefix + ".readout.w", &readout.w});
  out.push_back({prefix + ".readout.b", &readout.b});
}

GeoVars bind(Tape& tape, const GeoParams& p) {
  GeoVars v;
  v.atom_embed = bind(tape, p.atom_embed);
  for (const auto& layer : p.layers) {
    GeoVars::Layer lv;
    lv.edge_mlp1 = bind(tape, layer.edge_mlp1);
    lv.edge_mlp2 = bind(tape, layer.edge_mlp2);
    lv.node_mlp1 = bind(tape, layer.node_mlp1);
    lv.node_mlp2 = bind(tape, layer.node_mlp2);
    v.layers.push_back(lv);
  }
  v.readout = bind(tape, p.readout);
  return v;
}

std::vector<Var> GeoVars::all_vars() const {
  std::vector<Var> out{atom_embed.w, atom_embed.b};
  for (const auto& l : layers)
    out.insert(out.end(), {l.edge_mlp1.w, l.edge_mlp1.b, l.edge_mlp2.w, l.edge_mlp2.b,
                           l.node_mlp1.w, l.node_mlp1.b, l.node_mlp2.w, l.node_mlp2.b});
  out.insert(out.end(), {readout.w, readout.b});
  return out;
}

Var geo3d_forward(Tape& tape, const GeoVars& vars, const EncoderConfig& cfg,
                  const Tensor& atom_features, const Tensor& coords,
                  const std::vector<Bond>& bonds) {
  const std::size_t n = atom_features.shape[0];
  if (coords.shape.size() != 2 || coords.shape[0] != n || coords.shape[1] != 3)
    throw ShapeError("geo3d_forward: coordinate rows must match atom count");
  validate_bonds(bonds, n);

  // directed edges, one message per direction
  const std::size_t nd = bonds.size() * 2;
  Tensor sender = Tensor::zeros({nd, n});
  Tensor receiver = Tensor::zeros({n, nd});
  Tensor rbf = Tensor::zeros({nd, cfg.rbf_bins});
  for (std::size_t e = 0; e < bonds.size(); ++e) {
    std::size_t a = static_cast<std::size_t>(bonds[e].a);
    std::size_t b = static_cast<std::size_t>(bonds[e].b);
    double dx = coords.data[a * 3] - coords.data[b * 3];
    double dy = coords.data[a * 3 + 1] - coords.data[b * 3 + 1];
    double dz = coords.data[a * 3 + 2] - coords.data[b * 3 + 2];
    double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
    for (int dir = 0; dir < 2; ++dir) {
      std::size_t d = 2 * e + static_cast<std::size_t>(dir);
      std::size_t src = dir == 0 ? a : b;
      std::size_t dst = dir == 0 ? b : a;
      sender.data[d * n + src] = 1.0;
      receiver.data[dst * nd + d] = 1.0;
      for (std::size_t k = 0; k < cfg.rbf_bins; ++k) {
        double mu = cfg.rbf_max * static_cast<double>(k) / static_cast<double>(cfg.rbf_bins - 1);
        rbf.data[d * cfg.rbf_bins + k] = std::exp(-cfg.rbf_gamma * (dist - mu) * (dist - mu));
      }
    }
  }
  Var sel = tape.constant(std::move(sender));
  Var agg = tape.constant(std::move(receiver));
  Var rbf_feats = tape.constant(std::move(rbf));

  Var h = linear(tape, vars.atom_embed, tape.constant(atom_features));
  for (const auto& layer : vars.layers) {
    Var senders = matmul(sel, h);
    Var msg = mlp2(tape, concat_cols(senders, rbf_feats), layer.edge_mlp1, layer.edge_mlp2);
    Var pooled = matmul(agg, msg);
    h = mlp2(tape, add(h, pooled), layer.node_mlp1, layer.node_mlp2);
  }
  return linear_vec(tape, vars.readout, mean_rows(h));
}

}  // namespace mmsa
