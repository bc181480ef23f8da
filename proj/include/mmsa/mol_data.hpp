// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmsa/smiles.hpp"
#include "mmsa/tensor.hpp"

namespace mmsa {

/// Fixed featurization layout shared by every molecule in a run.
struct FeatureConfig {
  std::vector<std::string> vocabulary = {"B", "C", "N", "O", "P", "S",
                                         "F", "Cl", "Br", "I", "H"};
  std::size_t image_size = 64;
  int n_conf = 1;

  // one-hot element + degree bucket 0-5 + aromatic + charge bucket -2..+2
  // + hydrogen bucket 0-4
  std::size_t atom_dim() const { return vocabulary.size() + 6 + 1 + 5 + 5; }
  // one-hot order x4 + in_ring
  std::size_t bond_dim() const { return 5; }
};

struct Fingerprint {
  std::size_t nbits = 2048;
  int radius = 2;
  std::vector<std::uint64_t> blocks;

  explicit Fingerprint(std::size_t bits = 2048, int r = 2)
      : nbits(bits), radius(r), blocks((bits + 63) / 64, 0) {}
  void set(std::size_t i) { blocks[i / 64] |= 1ULL << (i % 64); }
  bool test(std::size_t i) const { return blocks[i / 64] & (1ULL << (i % 64)); }
  std::size_t popcount() const;
  bool operator==(const Fingerprint& o) const = default;
};

struct Molecule {
  std::string smiles;
  MolGraph graph;
  Tensor atom_features;        // {n_atoms, atom_dim}
  Tensor bond_features;        // {n_bonds, bond_dim}
  Tensor image;                // {H, W, 3}, values in [0,1]
  std::vector<Tensor> coords;  // one {n_atoms, 3} per conformer, centered
  std::vector<double> y_geom;  // radius of gyration, mean / max pairwise distance
  std::vector<double> y_prop;  // atomic-number sum, heavy atoms, rings, heteroatom fraction
  std::vector<double> labels;  // task labels, NaN marks missing
};

enum class Split : std::uint8_t { kNone = 0, kTrain, kVal, kTest };

struct Dataset {
  std::vector<Molecule> molecules;
  std::vector<Split> split;  // parallel to molecules; kNone when unassigned
  std::string provenance;

  std::size_t size() const { return molecules.size(); }
  std::vector<std::size_t> indices_of(Split s) const;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// ---- featurization ----
std::pair<Tensor, Tensor> featurize(const MolGraph& mol, const FeatureConfig& cfg);

/// Force-directed 2-D layout, 200 iterations, deterministic for a seed.
/// Coordinates land in the unit box with the centroid at (0.5, 0.5).
Tensor layout_2d(const MolGraph& mol, std::uint64_t seed);

/// Three semantic channels: bond skeleton, atom disks scaled by atomic
/// number / 53, aromatic-ring mask. All values in [0,1].
Tensor rasterize(const MolGraph& mol, const Tensor& coords2d, const FeatureConfig& cfg);

/// Stress-majorized 3-D coordinates against shortest-path distances scaled by
/// 1.5, one seeded Gaussian jitter per conformer, each centered at the origin.
std::vector<Tensor> embed_3d(const MolGraph& mol, std::uint64_t seed, int n_conf);

std::vector<double> geom_labels(const Tensor& coords);
std::vector<double> prop_labels(const MolGraph& mol);

// ---- fingerprints ----
Fingerprint ecfp(const MolGraph& mol, int radius = 2, std::size_t nbits = 2048);
double tanimoto(const Fingerprint& a, const Fingerprint& b);

// ---- datasets ----
/// Bemis-Murcko-style scaffold key: iteratively strip non-ring degree-1 atoms,
/// then hash the remaining (element, degree) multiset plus ring sizes.
std::string scaffold_key(const MolGraph& mol);

std::vector<Split> scaffold_split(const Dataset& ds, SplitFractions fractions,
                                  std::uint64_t seed);

/// Full per-molecule pipeline: parse, featurize, layout, rasterize, embed,
/// label. Modality seeds derive from the SMILES text so any context
/// regenerates identical inputs for the same molecule.
Molecule build_molecule(const std::string& smiles, const FeatureConfig& cfg);

Dataset load_csv(const std::string& path, const std::string& smiles_column,
                 const std::vector<std::string>& label_columns, const FeatureConfig& cfg,
                 std::size_t* skipped = nullptr);

Dataset gen_synthetic(std::size_t n, std::uint64_t seed,
                      const FeatureConfig& cfg = FeatureConfig{});

void save_jsonl(const Dataset& ds, const std::string& path);
Dataset load_jsonl(const std::string& path, const FeatureConfig& cfg = FeatureConfig{});

}  // namespace mmsa
