// SPDX-License-Identifier: Apache-2.0
#include "mmsa/smiles.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <sstream>

namespace mmsa {

namespace {

const std::array<std::pair<const char*, int>, 11> kElements = {{
    {"B", 5}, {"C", 6}, {"N", 7}, {"O", 8}, {"P", 15}, {"S", 16},
    {"F", 9}, {"Cl", 17}, {"Br", 35}, {"I", 53}, {"H", 1},
}};

bool known_element(const std::string& e) {
  return std::any_of(kElements.begin(), kElements.end(),
                     [&](const auto& p) { return e == p.first; });
}

// Per-element candidate valences, lowest fitting wins.
std::vector<int> base_valences(const std::string& e) {
  if (e == "C") return {4};
  if (e == "N") return {3};
  if (e == "O") return {2};
  if (e == "S") return {2, 4, 6};
  if (e == "P") return {3, 5};
  if (e == "B") return {3};
  if (e == "H") return {1};
  return {1};  // halogens
}

// Charge shifts the usable valence: lone-pair donors gain with positive
// charge, carbon loses a bond either way, boron gains with negative charge.
int charge_shift(const std::string& e, int q) {
  if (e == "C") return -std::abs(q);
  if (e == "B") return -q;
  return q;  // N, O, P, S, halogens, H
}

}  // namespace

int atomic_number(const std::string& element) {
  for (const auto& [sym, z] : kElements)
    if (element == sym) return z;
  throw std::invalid_argument("unknown element: " + element);
}

std::vector<std::vector<int>> MolGraph::adjacency() const {
  std::vector<std::vector<int>> adj(atoms.size());
  for (const Bond& b : bonds) {
    adj[b.a].push_back(b.b);
    adj[b.b].push_back(b.a);
  }
  return adj;
}

int MolGraph::degree(int atom) const {
  int d = 0;
  for (const Bond& b : bonds)
    if (b.a == atom || b.b == atom) ++d;
  return d;
}

// ----------------------------------------------------------------- parser

namespace {

struct RingOpen {
  int atom;
  std::optional<BondOrder> order;
  std::size_t offset;
};

struct Parser {
  std::string_view text;
  std::size_t pos = 0;
  MolGraph mol;
  std::vector<int> stack;          // branch return points
  int prev = -1;                   // atom awaiting the next bond
  std::optional<BondOrder> pending;
  std::map<int, RingOpen> ring_open;

  [[noreturn]] void fail(const std::string& msg, std::size_t off) const {
    throw ParseError(msg, off);
  }

  char peek() const { return pos < text.size() ? text[pos] : '\0'; }
  char take() { return text[pos++]; }
  bool done() const { return pos >= text.size(); }

  void add_bond(int a, int b, BondOrder order, std::size_t off) {
    if (a == b) fail("bond endpoints must be distinct", off);
    for (const Bond& x : mol.bonds) {
      if ((x.a == a && x.b == b) || (x.a == b && x.b == a))
        fail("duplicate bond between atoms " + std::to_string(a) + " and " + std::to_string(b),
             off);
    }
    mol.bonds.push_back(Bond{a, b, order, false});
  }

  BondOrder default_order(int a, int b) const {
    return (mol.atoms[a].aromatic && mol.atoms[b].aromatic) ? BondOrder::kAromatic
                                                            : BondOrder::kSingle;
  }

  void attach(int atom_idx, std::size_t off) {
    if (prev >= 0) {
      BondOrder order = pending ? *pending : default_order(prev, atom_idx);
      add_bond(prev, atom_idx, order, off);
    } else if (pending) {
      fail("bond symbol before any atom", off);
    }
    pending.reset();
    prev = atom_idx;
  }

  int new_atom(std::string element, bool aromatic, int charge, int explicit_h,
               std::size_t off) {
    if (!known_element(element)) fail("unknown element '" + element + "'", off);
    int idx = static_cast<int>(mol.atoms.size());
    Atom a;
    a.element = std::move(element);
    a.aromatic = aromatic;
    a.formal_charge = charge;
    a.explicit_h = explicit_h;
    a.index = idx;
    mol.atoms.push_back(std::move(a));
    return idx;
  }

  void ring_digit(int digit, std::size_t off) {
    if (prev < 0) fail("ring closure before any atom", off);
    auto it = ring_open.find(digit);
    if (it == ring_open.end()) {
      ring_open[digit] = RingOpen{prev, pending, off};
      pending.reset();
      return;
    }
    RingOpen open = it->second;
    ring_open.erase(it);
    if (open.order && pending && *open.order != *pending)
      fail("conflicting bond orders on ring closure " + std::to_string(digit), off);
    BondOrder order = open.order   ? *open.order
                      : pending    ? *pending
                                   : default_order(open.atom, prev);
    add_bond(open.atom, prev, order, off);
    pending.reset();
  }

  void parse_bracket() {
    std::size_t start = pos;
    take();  // '['
    // optional isotope digits, accepted and dropped
    while (std::isdigit(static_cast<unsigned char>(peek()))) take();
    bool aromatic = false;
    std::string element;
    char c = peek();
    if (c == '\0') fail("unterminated bracket atom", start);
    if (std::islower(static_cast<unsigned char>(c)) && c != 'c' && c != 'n' && c != 'o' &&
        c != 'p' && c != 's' && c != 'b') {
      fail("unknown aromatic element in bracket", pos);
    }
    if (std::islower(static_cast<unsigned char>(c))) {
      aromatic = true;
      element = static_cast<char>(std::toupper(static_cast<unsigned char>(take())));
    } else {
      element += take();
      if (std::islower(static_cast<unsigned char>(peek()))) {
        std::string two = element + peek();
        if (known_element(two)) {
          element = two;
          take();
        }
      }
    }
    // chirality markers, dropped
    while (peek() == '@') take();
    int explicit_h = 0;
    if (peek() == 'H') {
      take();
      explicit_h = 1;
      if (std::isdigit(static_cast<unsigned char>(peek()))) {
        explicit_h = take() - '0';
      }
    }
    int charge = 0;
    if (peek() == '+' || peek() == '-') {
      int sign = take() == '+' ? 1 : -1;
      int count = 1;
      if (std::isdigit(static_cast<unsigned char>(peek()))) {
        count = take() - '0';
      } else {
        while (peek() == (sign > 0 ? '+' : '-')) {
          take();
          ++count;
        }
      }
      charge = sign * count;
    }
    if (peek() != ']') fail("expected ']' in bracket atom", pos);
    take();
    int idx = new_atom(element, aromatic, charge, explicit_h, start);
    attach(idx, start);
  }

  void run() {
    if (text.empty()) fail("empty input", 0);
    while (!done()) {
      std::size_t off = pos;
      char c = peek();
      switch (c) {
        case '-': take(); pending = BondOrder::kSingle; break;
        case '=': take(); pending = BondOrder::kDouble; break;
        case '#': take(); pending = BondOrder::kTriple; break;
        case ':': take(); pending = BondOrder::kAromatic; break;
        case '/':
        case '\\':
          take();
          pending = BondOrder::kSingle;  // stereo direction dropped
          break;
        case '(':
          take();
          if (prev < 0) fail("branch before any atom", off);
          stack.push_back(prev);
          break;
        case ')':
          take();
          if (stack.empty()) fail("unbalanced ')'", off);
          prev = stack.back();
          stack.pop_back();
          pending.reset();
          break;
        case '.': fail("dot-disconnected input is not supported", off);
        case '[': parse_bracket(); break;
        case '%': {
          take();
          if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected digits after %", off);
          int d = take() - '0';
          if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected two digits after %", off);
          d = d * 10 + (take() - '0');
          ring_digit(d, off);
          break;
        }
        default:
          if (std::isdigit(static_cast<unsigned char>(c))) {
            take();
            ring_digit(c - '0', off);
          } else if (std::isupper(static_cast<unsigned char>(c))) {
            std::string element(1, take());
            if (std::islower(static_cast<unsigned char>(peek()))) {
              std::string two = element + peek();
              if (known_element(two)) {
                element = two;
                take();
              }
            }
            attach(new_atom(element, false, 0, -1, off), off);
          } else if (c == 'b' || c == 'c' || c == 'n' || c == 'o' || c == 'p' || c == 's') {
            take();
            std::string element(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
            attach(new_atom(element, true, 0, -1, off), off);
          } else {
            fail(std::string("unexpected character '") + c + "'", off);
          }
      }
    }
    if (!stack.empty()) fail("unbalanced '('", text.size());
    if (!ring_open.empty()) {
      const auto& [digit, open] = *ring_open.begin();
      fail("unclosed ring closure " + std::to_string(digit), open.offset);
    }
    if (mol.atoms.empty()) fail("no atoms in input", 0);
  }
};

}  // namespace

MolGraph parse_smiles(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i)
    if (static_cast<unsigned char>(text[i]) > 127) throw ParseError("non-ASCII byte", i);
  Parser p;
  p.text = text;
  p.run();
  return std::move(p.mol);
}

// ----------------------------------------------------------------- valence

void assign_valence(MolGraph& mol) {
  for (Atom& atom : mol.atoms) {
    int singles = 0, aromatic = 0;
    for (const Bond& b : mol.bonds) {
      if (b.a != atom.index && b.b != atom.index) continue;
      switch (b.order) {
        case BondOrder::kSingle: singles += 1; break;
        case BondOrder::kDouble: singles += 2; break;
        case BondOrder::kTriple: singles += 3; break;
        case BondOrder::kAromatic: aromatic += 1; break;
      }
    }
    // aromatic bonds count 1.5 each, pairs summing exactly, remainder floored
    int used = singles + (3 * aromatic) / 2;
    int explicit_h = std::max(0, atom.explicit_h);
    int needed = used + explicit_h;
    int shift = charge_shift(atom.element, atom.formal_charge);
    int chosen = -1;
    for (int v : base_valences(atom.element)) {
      if (v + shift >= needed) {
        chosen = v + shift;
        break;
      }
    }
    if (chosen < 0)
      throw ValenceError("used valence " + std::to_string(needed) + " exceeds maximum for " +
                             atom.element,
                         atom.index);
    // bracket atoms carry their hydrogen count explicitly
    atom.implicit_h = atom.explicit_h >= 0 ? 0 : chosen - needed;
  }
}

// ----------------------------------------------------------------- rings

namespace {

using EdgeSet = std::vector<std::uint64_t>;  // bitset over bond indices

EdgeSet make_edgeset(std::size_t nbits) { return EdgeSet((nbits + 63) / 64, 0); }
void set_bit(EdgeSet& s, std::size_t i) { s[i / 64] |= 1ULL << (i % 64); }
bool any_bit(const EdgeSet& s) {
  return std::any_of(s.begin(), s.end(), [](std::uint64_t w) { return w != 0; });
}
std::size_t lowest_bit(const EdgeSet& s) {
  for (std::size_t w = 0; w < s.size(); ++w)
    if (s[w]) return w * 64 + static_cast<std::size_t>(__builtin_ctzll(s[w]));
  return SIZE_MAX;
}
void xor_into(EdgeSet& a, const EdgeSet& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] ^= b[i];
}

}  // namespace

std::vector<std::vector<int>> perceive_rings(MolGraph& mol) {
  const std::size_t n = mol.atoms.size();
  const std::size_t m = mol.bonds.size();
  mol.rings.clear();
  for (Bond& b : mol.bonds) b.in_ring = false;
  if (m + 1 <= n) return mol.rings;  // connected acyclic graph
  std::size_t want = m - n + 1;

  std::map<std::pair<int, int>, int> bond_index;
  for (std::size_t i = 0; i < m; ++i) {
    int a = std::min(mol.bonds[i].a, mol.bonds[i].b);
    int b = std::max(mol.bonds[i].a, mol.bonds[i].b);
    bond_index[{a, b}] = static_cast<int>(i);
  }
  auto adj = mol.adjacency();
  for (auto& nb : adj) std::sort(nb.begin(), nb.end());

  // Horton candidates: for each root, BFS shortest-path tree; for each edge
  // (x,y) a candidate cycle path(root,x) + path(root,y) + (x,y) when the two
  // paths meet only at the root.
  struct Candidate {
    std::vector<int> atoms;
    EdgeSet edges;
  };
  std::vector<Candidate> candidates;
  for (std::size_t root = 0; root < n; ++root) {
    std::vector<int> parent(n, -2);
    std::queue<int> q;
    parent[root] = -1;
    q.push(static_cast<int>(root));
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[u])
        if (parent[v] == -2) {
          parent[v] = u;
          q.push(v);
        }
    }
    auto path_to_root = [&](int x) {
      std::vector<int> path{x};
      while (parent[x] >= 0) {
        x = parent[x];
        path.push_back(x);
      }
      return path;
    };
    for (const Bond& b : mol.bonds) {
      if (parent[b.a] == b.b || parent[b.b] == b.a) continue;  // tree edge
      std::vector<int> pa = path_to_root(b.a);
      std::vector<int> pb = path_to_root(b.b);
      // require disjoint paths apart from the root itself
      std::vector<char> seen(n, 0);
      for (int x : pa) seen[x] = 1;
      bool disjoint = true;
      for (std::size_t i = 0; i + 1 < pb.size(); ++i)
        if (seen[pb[i]]) {
          disjoint = false;
          break;
        }
      if (!disjoint) continue;
      std::vector<int> cycle(pa.rbegin(), pa.rend());  // root .. a
      for (std::size_t i = 0; i + 1 < pb.size(); ++i) cycle.push_back(pb[i]);  // b .. below root
      EdgeSet es = make_edgeset(m);
      bool ok = true;
      for (std::size_t i = 0; i < cycle.size() && ok; ++i) {
        int u = cycle[i], v = cycle[(i + 1) % cycle.size()];
        auto it = bond_index.find({std::min(u, v), std::max(u, v)});
        if (it == bond_index.end())
          ok = false;
        else
          set_bit(es, static_cast<std::size_t>(it->second));
      }
      if (ok) candidates.push_back({std::move(cycle), std::move(es)});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.atoms.size() != b.atoms.size()) return a.atoms.size() < b.atoms.size();
    return a.atoms < b.atoms;
  });

  // Greedy GF(2) independence check, smallest cycles first.
  std::vector<EdgeSet> basis;        // reduced rows
  std::vector<std::size_t> pivots;   // pivot bond per row
  for (const Candidate& c : candidates) {
    if (mol.rings.size() == want) break;
    EdgeSet reduced = c.edges;
    for (std::size_t r = 0; r < basis.size(); ++r) {
      if (reduced[pivots[r] / 64] & (1ULL << (pivots[r] % 64))) xor_into(reduced, basis[r]);
    }
    if (!any_bit(reduced)) continue;  // dependent on chosen rings
    pivots.push_back(lowest_bit(reduced));
    basis.push_back(std::move(reduced));
    mol.rings.push_back(c.atoms);
  }

  for (const auto& ring : mol.rings)
    for (std::size_t i = 0; i < ring.size(); ++i) {
      int u = ring[i], v = ring[(i + 1) % ring.size()];
      mol.bonds[bond_index[{std::min(u, v), std::max(u, v)}]].in_ring = true;
    }
  return mol.rings;
}

MolGraph parse_molecule(std::string_view text) {
  MolGraph mol = parse_smiles(text);
  perceive_rings(mol);
  assign_valence(mol);
  for (const Atom& a : mol.atoms) {
    if (!a.aromatic) continue;
    bool in_ring = std::any_of(mol.rings.begin(), mol.rings.end(), [&](const auto& ring) {
      return std::find(ring.begin(), ring.end(), a.index) != ring.end();
    });
    if (!in_ring)
      throw ParseError("aromatic atom " + std::to_string(a.index) + " is not in any ring", 0);
  }
  return mol;
}

// ----------------------------------------------------------------- writer

std::string write_smiles(const MolGraph& mol) {
  const std::size_t n = mol.atoms.size();
  std::map<std::pair<int, int>, const Bond*> bond_at;
  for (const Bond& b : mol.bonds) {
    bond_at[{b.a, b.b}] = &b;
    bond_at[{b.b, b.a}] = &b;
  }
  auto adj = mol.adjacency();
  for (auto& nb : adj) std::sort(nb.begin(), nb.end());

  auto bond_symbol = [](BondOrder o) -> const char* {
    switch (o) {
      case BondOrder::kDouble: return "=";
      case BondOrder::kTriple: return "#";
      default: return "";  // single and aromatic are implicit here
    }
  };

  // DFS tree with ascending neighbor order; every non-tree edge becomes a
  // ring closure. The emission pass below walks the identical tree.
  std::vector<int> parent(n, -2);
  std::map<std::pair<int, int>, int> closure_digit;
  {
    std::function<void(int, int)> build = [&](int u, int p) {
      parent[u] = p;
      for (int v : adj[u]) {
        if (v == p) continue;
        if (parent[v] == -2)
          build(v, u);
        else if (parent[u] != v) {
          auto key = std::make_pair(std::min(u, v), std::max(u, v));
          closure_digit.emplace(key, 0);  // digit assigned at emission time
        }
      }
    };
    build(0, -1);
  }

  std::ostringstream out;
  auto emit_atom = [&](int idx) {
    const Atom& a = mol.atoms[idx];
    bool bracket = a.formal_charge != 0 || a.explicit_h >= 0 || a.element == "H";
    if (bracket) {
      out << '[' << a.element;
      int h = std::max(0, a.explicit_h);
      if (h == 1)
        out << 'H';
      else if (h > 1)
        out << 'H' << h;
      if (a.formal_charge > 0)
        out << '+' << (a.formal_charge > 1 ? std::to_string(a.formal_charge) : "");
      if (a.formal_charge < 0)
        out << '-' << (a.formal_charge < -1 ? std::to_string(-a.formal_charge) : "");
      out << ']';
    } else if (a.aromatic) {
      std::string low = a.element;
      for (char& c : low) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out << low;
    } else {
      out << a.element;
    }
  };

  int next_digit = 1;
  auto emit_closure = [&](int u, int v) {
    auto key = std::make_pair(std::min(u, v), std::max(u, v));
    int& digit = closure_digit.at(key);
    if (digit == 0) digit = next_digit++;
    out << bond_symbol(bond_at[key]->order);
    if (digit < 10)
      out << digit;
    else
      out << '%' << (digit < 100 ? std::to_string(digit) : throw std::logic_error("ring digits exhausted"));
  };

  std::function<void(int)> emit = [&](int u) {
    emit_atom(u);
    for (int v : adj[u]) {
      auto key = std::make_pair(std::min(u, v), std::max(u, v));
      if (closure_digit.count(key)) emit_closure(u, v);
    }
    std::vector<int> children;
    for (int v : adj[u])
      if (parent[v] == u) children.push_back(v);
    for (std::size_t i = 0; i < children.size(); ++i) {
      bool branch = i + 1 < children.size();
      if (branch) out << '(';
      out << bond_symbol(bond_at[{u, children[i]}]->order);
      emit(children[i]);
      if (branch) out << ')';
    }
  };
  emit(0);
  return out.str();
}

}  // namespace mmsa
