// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmsa {

enum class BondOrder { kSingle, kDouble, kTriple, kAromatic };

struct Atom {
  std::string element;       // one of B,C,N,O,P,S,F,Cl,Br,I,H
  bool aromatic = false;
  int formal_charge = 0;
  int explicit_h = -1;       // -1: unspecified (organic-subset atom)
  int implicit_h = 0;        // filled by assign_valence
  int index = 0;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::kSingle;
  bool in_ring = false;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::vector<std::vector<int>> rings;  // atom-index cycles

  std::vector<std::vector<int>> adjacency() const;  // neighbor atom indices
  int degree(int atom) const;
  int total_h(int atom) const { return atoms[atom].implicit_h + std::max(0, atoms[atom].explicit_h); }
};

struct ParseError : std::runtime_error {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " (byte " + std::to_string(off) + ")"), offset(off) {}
};

struct ValenceError : std::runtime_error {
  int atom;
  ValenceError(const std::string& msg, int atom_index)
      : std::runtime_error(msg + " (atom " + std::to_string(atom_index) + ")"),
        atom(atom_index) {}
};

/// Parses the supported SMILES subset into a molecular graph. Branches,
/// ring-closure digits and %nn pairs, aromatic lowercase atoms, and bracket
/// atoms with charge/H-count are handled; stereo markers are accepted and
/// dropped. Dot-disconnected inputs are rejected.
MolGraph parse_smiles(std::string_view text);

/// Fills implicit hydrogen counts from the standard valence table. Bracket
/// atoms keep their explicit count and get no implicit hydrogens. Aromatic
/// bonds contribute 1.5 to the used valence, summed before rounding down.
void assign_valence(MolGraph& mol);

/// Smallest set of smallest rings via Horton-style candidate selection over a
/// GF(2) cycle basis; also marks in_ring on bonds.
std::vector<std::vector<int>> perceive_rings(MolGraph& mol);

/// parse + ring perception + valence + invariant checks; the normal entry point.
MolGraph parse_molecule(std::string_view text);

/// Non-canonical SMILES writer for generated graphs; the output reparses to an
/// isomorphic graph with atoms in DFS preorder.
std::string write_smiles(const MolGraph& mol);

int atomic_number(const std::string& element);

}  // namespace mmsa
