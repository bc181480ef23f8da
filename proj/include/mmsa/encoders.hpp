// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmsa/random.hpp"
#include "mmsa/smiles.hpp"
#include "mmsa/tensor.hpp"

namespace mmsa {

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

struct EncoderConfig {
  std::size_t gin_layers = 5;
  std::size_t geo_layers = 4;
  std::size_t hidden = 64;    // message-passing width
  std::size_t out_dim = 256;  // basic-feature dimension
  std::size_t rbf_bins = 16;
  double rbf_max = 4.0;
  double rbf_gamma = 4.0;
};

struct LinearParams {
  Tensor w;  // {in, out}
  Tensor b;  // {out}
};
struct LinearVars {
  Var w, b;
};

LinearParams init_linear(std::size_t in, std::size_t out, Rng& rng);
/// Variance-preserving variant (gain sqrt(2) for ReLU-family stacks); used by
/// the modules downstream of the feature extractors so activations keep a
/// usable scale through the full pipeline.
LinearParams init_linear_kaiming(std::size_t in, std::size_t out, Rng& rng);
LinearVars bind(Tape& tape, const LinearParams& p);

Var linear(Tape& tape, const LinearVars& l, Var x);      // {n,in} -> {n,out}
Var linear_vec(Tape& tape, const LinearVars& l, Var x);  // {in} -> {out}

/// Message passing with sum aggregation and a learnable self-weight; the mean
/// readout keeps the output independent of atom order.
struct GinParams {
  LinearParams atom_embed;
  struct Layer {
    Tensor eps;  // {1}
    LinearParams edge_embed;
    LinearParams mlp1, mlp2;
  };
  std::vector<Layer> layers;
  LinearParams readout;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};
struct GinVars {
  LinearVars atom_embed;
  struct Layer {
    Var eps;
    LinearVars edge_embed;
    LinearVars mlp1, mlp2;
  };
  std::vector<Layer> layers;
  LinearVars readout;
  std::vector<Var> all_vars() const;
};

GinParams init_gin(const EncoderConfig& cfg, std::size_t atom_dim, std::size_t bond_dim,
                   Rng& rng);
GinVars bind(Tape& tape, const GinParams& p);
Var gin_forward(Tape& tape, const GinVars& vars, const Tensor& atom_features,
                const Tensor& bond_features, const std::vector<Bond>& bonds);

/// Downsampling conv stack over the three semantic image channels.
struct ImageParams {
  struct Stage {
    Tensor w;  // {out, in, 3, 3}
    Tensor b;  // {out}
  };
  std::vector<Stage> stages;  // 3 -> 8 -> 16 -> 32, stride 2
  LinearParams fc;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};
struct ImageVars {
  struct Stage {
    Var w, b;
  };
  std::vector<Stage> stages;
  LinearVars fc;
  std::vector<Var> all_vars() const;
};

ImageParams init_image(const EncoderConfig& cfg, Rng& rng);
ImageVars bind(Tape& tape, const ImageParams& p);
/// images: {N, 3, H, W} -> {N, out_dim}
Var image_forward(Tape& tape, const ImageVars& vars, Var images);

/// Distance-RBF message passing over the bonded graph; depends on coordinates
/// only through pairwise distances, so rigid motions leave it unchanged.
struct GeoParams {
  LinearParams atom_embed;
  struct Layer {
    LinearParams edge_mlp1, edge_mlp2;
    LinearParams node_mlp1, node_mlp2;
  };
  std::vector<Layer> layers;
  LinearParams readout;
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};
struct GeoVars {
  LinearVars atom_embed;
  struct Layer {
    LinearVars edge_mlp1, edge_mlp2;
    LinearVars node_mlp1, node_mlp2;
  };
  std::vector<Layer> layers;
  LinearVars readout;
  std::vector<Var> all_vars() const;
};

GeoParams init_geo(const EncoderConfig& cfg, std::size_t atom_dim, Rng& rng);
GeoVars bind(Tape& tape, const GeoParams& p);
Var geo3d_forward(Tape& tape, const GeoVars& vars, const EncoderConfig& cfg,
                  const Tensor& atom_features, const Tensor& coords,
                  const std::vector<Bond>& bonds);

}  // namespace mmsa
