// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <functional>
#include <set>
#include <vector>

#include "mmsa/smiles.hpp"

using namespace mmsa;

namespace {

// Exhaustive simple-cycle enumeration up to a length cap; the independent
// oracle for ring perception on small molecules.
std::set<std::set<int>> all_simple_cycles(const MolGraph& mol, std::size_t max_len = 12) {
  auto adj = mol.adjacency();
  std::set<std::set<int>> cycles;
  std::vector<int> path;
  std::vector<char> on_path(mol.atoms.size(), 0);
  std::function<void(int, int)> dfs = [&](int u, int start) {
    if (path.size() > max_len) return;
    for (int v : adj[u]) {
      if (v == start && path.size() >= 3) cycles.insert(std::set<int>(path.begin(), path.end()));
      if (!on_path[v] && v > start) {  // canonical: cycle rooted at its minimum
        on_path[v] = 1;
        path.push_back(v);
        dfs(v, start);
        path.pop_back();
        on_path[v] = 0;
      }
    }
  };
  for (std::size_t s = 0; s < mol.atoms.size(); ++s) {
    path = {static_cast<int>(s)};
    std::fill(on_path.begin(), on_path.end(), 0);
    on_path[s] = 1;
    dfs(static_cast<int>(s), static_cast<int>(s));
  }
  return cycles;
}

int smallest_cycle_size(const std::set<std::set<int>>& cycles) {
  std::size_t best = SIZE_MAX;
  for (const auto& c : cycles) best = std::min(best, c.size());
  return static_cast<int>(best);
}

}  // namespace

TEST_CASE("parse: single atom") {
  MolGraph m = parse_molecule("C");
  CHECK(m.atoms.size() == 1);
  CHECK(m.bonds.empty());
  CHECK(m.atoms[0].element == "C");
  CHECK(m.atoms[0].implicit_h == 4);
}

TEST_CASE("parse: the retrieval query molecule") {
  MolGraph m = parse_molecule("CC(=O)Nc1cccc(O)c1");
  CHECK(m.atoms.size() == 11);
  CHECK(m.bonds.size() == 11);
  REQUIRE(m.rings.size() == 1);
  CHECK(m.rings[0].size() == 6);
  int aromatic_atoms = 0, aromatic_bonds = 0;
  for (const Atom& a : m.atoms) aromatic_atoms += a.aromatic;
  for (const Bond& b : m.bonds) aromatic_bonds += b.order == BondOrder::kAromatic;
  CHECK(aromatic_atoms == 6);
  CHECK(aromatic_bonds == 6);
}

TEST_CASE("parse: benzene") {
  MolGraph m = parse_molecule("c1ccccc1");
  CHECK(m.atoms.size() == 6);
  CHECK(m.bonds.size() == 6);
  for (const Atom& a : m.atoms) {
    CHECK(a.aromatic);
    CHECK(a.implicit_h == 1);
  }
  for (const Bond& b : m.bonds) {
    CHECK(b.order == BondOrder::kAromatic);
    CHECK(b.in_ring);
  }
  REQUIRE(m.rings.size() == 1);
  CHECK(m.rings[0].size() == 6);
}

TEST_CASE("parse errors carry positions") {
  CHECK_THROWS_AS(parse_smiles("C1CC"), ParseError);
  try {
    parse_smiles("C1CC");
  } catch (const ParseError& e) {
    CHECK(e.offset == 1);
  }
  CHECK_THROWS_AS(parse_smiles("C(C"), ParseError);
  CHECK_THROWS_AS(parse_smiles("CC)C"), ParseError);
  CHECK_THROWS_AS(parse_smiles("CQ"), ParseError);
  CHECK_THROWS_AS(parse_smiles("C.C"), ParseError);
  CHECK_THROWS_AS(parse_smiles(""), ParseError);
  CHECK_THROWS_AS(parse_smiles("[C"), ParseError);
  // stray aromatic atom outside any ring violates the type invariant
  CHECK_THROWS_AS(parse_molecule("cC"), ParseError);
}

TEST_CASE("valence assignment") {
  MolGraph co2 = parse_molecule("O=C=O");
  CHECK(co2.atoms[1].element == "C");
  CHECK(co2.atoms[1].implicit_h == 0);
  CHECK(co2.atoms[0].implicit_h == 0);

  MolGraph ammonium = parse_molecule("[NH4+]");
  CHECK(ammonium.atoms[0].element == "N");
  CHECK(ammonium.atoms[0].explicit_h == 4);
  CHECK(ammonium.atoms[0].formal_charge == 1);
  CHECK(ammonium.atoms[0].implicit_h == 0);

  // sulfur picks the lowest fitting valence
  CHECK(parse_molecule("S").atoms[0].implicit_h == 2);
  CHECK(parse_molecule("O=S=O").atoms[1].implicit_h == 0);

  // five bonds on carbon cannot fit any valence
  CHECK_THROWS_AS(parse_molecule("C(C)(C)(C)(C)C"), ValenceError);
}

TEST_CASE("ring perception against exhaustive-cycle oracle") {
  {
    MolGraph m = parse_molecule("c1ccccc1");
    auto cycles = all_simple_cycles(m);
    CHECK(smallest_cycle_size(cycles) == 6);
    CHECK(m.rings.size() == 1);
  }
  {
    MolGraph m = parse_molecule("CCCC");
    CHECK(m.rings.empty());
    CHECK(all_simple_cycles(m).empty());
    for (const Bond& b : m.bonds) CHECK(!b.in_ring);
  }
  {
    MolGraph m = parse_molecule("c1ccc2ccccc2c1");  // naphthalene
    REQUIRE(m.rings.size() == 2);
    CHECK(m.rings[0].size() == 6);
    CHECK(m.rings[1].size() == 6);
    // oracle: the two independent smallest cycles are both hexagons
    auto cycles = all_simple_cycles(m);
    int hexagons = 0;
    for (const auto& c : cycles) hexagons += c.size() == 6;
    CHECK(hexagons == 2);
    for (const auto& ring : m.rings) {
      std::set<int> rs(ring.begin(), ring.end());
      CHECK(cycles.count(rs) == 1);
    }
  }
  {
    // two four-rings joined by a single bond
    MolGraph m = parse_molecule("C1CCC1C2CCC2");
    REQUIRE(m.rings.size() == 2);
    CHECK(m.rings[0].size() == 4);
    CHECK(m.rings[1].size() == 4);
  }
}

TEST_CASE("re-parse determinism and the cycle-count identity") {
  const char* inputs[] = {"CC(=O)Nc1cccc(O)c1", "c1ccc2ccccc2c1", "C1CC1CC(=O)O",
                          "N#Cc1ccccc1", "[O-]C(=O)C"};
  for (const char* s : inputs) {
    MolGraph a = parse_molecule(s);
    MolGraph b = parse_molecule(s);
    REQUIRE(a.atoms.size() == b.atoms.size());
    REQUIRE(a.bonds.size() == b.bonds.size());
    for (std::size_t i = 0; i < a.atoms.size(); ++i) {
      CHECK(a.atoms[i].element == b.atoms[i].element);
      CHECK(a.atoms[i].implicit_h == b.atoms[i].implicit_h);
    }
    // for a connected graph, independent cycles = bonds - atoms + 1
    CHECK(a.rings.size() == a.bonds.size() - a.atoms.size() + 1);
  }
}

TEST_CASE("writer round-trips generated-style graphs") {
  const char* inputs[] = {"CCO", "C1CCCCC1", "CC(C)C(=O)O", "C1CC1C2CCC2", "c1ccccc1C"};
  for (const char* s : inputs) {
    MolGraph a = parse_molecule(s);
    std::string w = write_smiles(a);
    MolGraph b = parse_molecule(w);
    CHECK(a.atoms.size() == b.atoms.size());
    CHECK(a.bonds.size() == b.bonds.size());
    CHECK(a.rings.size() == b.rings.size());
    // element multiset preserved
    std::multiset<std::string> ea, eb;
    for (const Atom& x : a.atoms) ea.insert(x.element);
    for (const Atom& x : b.atoms) eb.insert(x.element);
    CHECK(ea == eb);
  }
}
