// SPDX-License-Identifier: Apache-2.0
#include "mmsa/mol_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "mmsa/base64.hpp"
#include "mmsa/random.hpp"

namespace mmsa {

using json = nlohmann::ordered_json;

std::size_t Fingerprint::popcount() const {
  std::size_t n = 0;
  for (std::uint64_t w : blocks) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::vector<std::size_t> Dataset::indices_of(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

// ----------------------------------------------------------------- featurize

std::pair<Tensor, Tensor> featurize(const MolGraph& mol, const FeatureConfig& cfg) {
  const std::size_t dv = cfg.atom_dim();
  const std::size_t de = cfg.bond_dim();
  Tensor xv = Tensor::zeros({mol.atoms.size(), dv});
  for (const Atom& a : mol.atoms) {
    auto it = std::find(cfg.vocabulary.begin(), cfg.vocabulary.end(), a.element);
    if (it == cfg.vocabulary.end())
      throw std::invalid_argument("featurize: element outside vocabulary: " + a.element);
    std::size_t off = static_cast<std::size_t>(a.index) * dv;
    std::size_t elem = static_cast<std::size_t>(it - cfg.vocabulary.begin());
    xv.data[off + elem] = 1.0;
    std::size_t base = cfg.vocabulary.size();
    int degree = std::min(mol.degree(a.index), 5);
    xv.data[off + base + static_cast<std::size_t>(degree)] = 1.0;
    base += 6;
    xv.data[off + base] = a.aromatic ? 1.0 : 0.0;
    base += 1;
    int charge = std::clamp(a.formal_charge, -2, 2) + 2;
    xv.data[off + base + static_cast<std::size_t>(charge)] = 1.0;
    base += 5;
    int h = std::min(mol.total_h(a.index), 4);
    xv.data[off + base + static_cast<std::size_t>(h)] = 1.0;
  }
  Tensor xe = Tensor::zeros({mol.bonds.size(), de});
  for (std::size_t k = 0; k < mol.bonds.size(); ++k) {
    const Bond& b = mol.bonds[k];
    xe.data[k * de + static_cast<std::size_t>(b.order)] = 1.0;
    xe.data[k * de + 4] = b.in_ring ? 1.0 : 0.0;
  }
  return {std::move(xv), std::move(xe)};
}

// ----------------------------------------------------------------- 2-D layout

namespace {
constexpr double kRestLength = 0.25;
constexpr int kLayoutIters = 200;
}  // namespace

Tensor layout_2d(const MolGraph& mol, std::uint64_t seed) {
  const std::size_t n = mol.atoms.size();
  Rng rng(seed);
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rng.uniform(-0.5, 0.5);
    y[i] = rng.uniform(-0.5, 0.5);
  }
  // Fruchterman-Reingold: repulsion k^2/d between all pairs, attraction d^2/k
  // along bonds, displacement capped by a linearly cooling temperature.
  const double k = kRestLength;
  for (int iter = 0; iter < kLayoutIters; ++iter) {
    double temp = 0.1 * (1.0 - static_cast<double>(iter) / kLayoutIters);
    std::vector<double> dx(n, 0.0), dy(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double ux = x[i] - x[j], uy = y[i] - y[j];
        double d = std::sqrt(ux * ux + uy * uy);
        if (d < 1e-9) {
          // deterministic nudge for coincident points
          ux = 1e-6 * static_cast<double>(i + 1);
          uy = 1e-6 * static_cast<double>(j + 1);
          d = std::sqrt(ux * ux + uy * uy);
        }
        double f = k * k / d;
        dx[i] += ux / d * f;
        dy[i] += uy / d * f;
        dx[j] -= ux / d * f;
        dy[j] -= uy / d * f;
      }
    for (const Bond& b : mol.bonds) {
      double ux = x[b.a] - x[b.b], uy = y[b.a] - y[b.b];
      double d = std::sqrt(ux * ux + uy * uy);
      if (d < 1e-9) continue;
      double f = d * d / k;
      dx[b.a] -= ux / d * f;
      dy[b.a] -= uy / d * f;
      dx[b.b] += ux / d * f;
      dy[b.b] += uy / d * f;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double disp = std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]);
      if (disp < 1e-12) continue;
      double step = std::min(disp, temp);
      x[i] += dx[i] / disp * step;
      y[i] += dy[i] / disp * step;
    }
  }
  // center at (0.5, 0.5); uniform downscale only when the box is exceeded
  double cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cx += x[i];
    cy += y[i];
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  double ext = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    ext = std::max({ext, std::fabs(x[i] - cx), std::fabs(y[i] - cy)});
  double s = ext > 0.46 ? 0.46 / ext : 1.0;
  Tensor out = Tensor::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    out.data[i * 2] = 0.5 + (x[i] - cx) * s;
    out.data[i * 2 + 1] = 0.5 + (y[i] - cy) * s;
  }
  return out;
}

// ----------------------------------------------------------------- raster

namespace {

constexpr double kAtomRadius = 2.5;   // pixels
constexpr double kLineHalfWidth = 0.75;
constexpr double kPixelMargin = 5.0;

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  double vx = bx - ax, vy = by - ay;
  double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double ex = ax + t * vx - px, ey = ay + t * vy - py;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

Tensor rasterize(const MolGraph& mol, const Tensor& coords2d, const FeatureConfig& cfg) {
  const std::size_t s = cfg.image_size;
  Tensor img = Tensor::zeros({s, s, 3});
  const double scale = static_cast<double>(s) - 1.0 - 2.0 * kPixelMargin;
  auto px = [&](std::size_t i) { return kPixelMargin + coords2d.data[i * 2] * scale; };
  auto py = [&](std::size_t i) { return kPixelMargin + coords2d.data[i * 2 + 1] * scale; };
  auto blend = [&](std::size_t xylo, std::size_t c, double v) {
    double& cell = img.data[xylo * 3 + c];
    cell = std::min(1.0, std::max(cell, v));
  };

  // channel 0: anti-aliased bond segments
  for (const Bond& b : mol.bonds) {
    double ax = px(static_cast<std::size_t>(b.a)), ay = py(static_cast<std::size_t>(b.a));
    double bx = px(static_cast<std::size_t>(b.b)), by = py(static_cast<std::size_t>(b.b));
    std::size_t x0 = static_cast<std::size_t>(std::max(0.0, std::floor(std::min(ax, bx) - 2)));
    std::size_t x1 = static_cast<std::size_t>(std::min<double>(s - 1.0, std::ceil(std::max(ax, bx) + 2)));
    std::size_t y0 = static_cast<std::size_t>(std::max(0.0, std::floor(std::min(ay, by) - 2)));
    std::size_t y1 = static_cast<std::size_t>(std::min<double>(s - 1.0, std::ceil(std::max(ay, by) + 2)));
    for (std::size_t yy = y0; yy <= y1; ++yy)
      for (std::size_t xx = x0; xx <= x1; ++xx) {
        double d = segment_distance(xx, yy, ax, ay, bx, by);
        double v = std::clamp(kLineHalfWidth + 0.5 - d, 0.0, 1.0);
        if (v > 0) blend(yy * s + xx, 0, v);
      }
  }
  // channel 1: atom disks, intensity scaled by atomic number
  for (const Atom& a : mol.atoms) {
    double cx = px(static_cast<std::size_t>(a.index)), cy = py(static_cast<std::size_t>(a.index));
    double intensity = std::clamp(atomic_number(a.element) / 53.0, 0.0, 1.0);
    std::size_t x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - kAtomRadius - 1)));
    std::size_t x1 = static_cast<std::size_t>(std::min<double>(s - 1.0, std::ceil(cx + kAtomRadius + 1)));
    std::size_t y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - kAtomRadius - 1)));
    std::size_t y1 = static_cast<std::size_t>(std::min<double>(s - 1.0, std::ceil(cy + kAtomRadius + 1)));
    for (std::size_t yy = y0; yy <= y1; ++yy)
      for (std::size_t xx = x0; xx <= x1; ++xx) {
        double d = std::sqrt((xx - cx) * (xx - cx) + (yy - cy) * (yy - cy));
        double cover = std::clamp(kAtomRadius - d + 0.5, 0.0, 1.0);
        if (cover > 0) blend(yy * s + xx, 1, cover * intensity);
      }
  }
  // channel 2: filled disk at the centroid of each fully aromatic ring
  for (const auto& ring : mol.rings) {
    bool aromatic = std::all_of(ring.begin(), ring.end(),
                                [&](int i) { return mol.atoms[static_cast<std::size_t>(i)].aromatic; });
    if (!aromatic) continue;
    double cx = 0.0, cy = 0.0;
    for (int i : ring) {
      cx += px(static_cast<std::size_t>(i));
      cy += py(static_cast<std::size_t>(i));
    }
    cx /= static_cast<double>(ring.size());
    cy /= static_cast<double>(ring.size());
    double r = 0.0;
    for (int i : ring) {
      double dx = px(static_cast<std::size_t>(i)) - cx, dy = py(static_cast<std::size_t>(i)) - cy;
      r += std::sqrt(dx * dx + dy * dy);
    }
    r = 0.55 * r / static_cast<double>(ring.size());
    std::size_t x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - r - 1)));
    std::size_t x1 = static_cast<std::size_t>(std::min<double>(s - 1.0, std::ceil(cx + r + 1)));
    std::size_t y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - r - 1)));
    std::size_t y1 = static_cast<std::size_t>(std::min<double>(s - 1.0, std::ceil(cy + r + 1)));
    for (std::size_t yy = y0; yy <= y1; ++yy)
      for (std::size_t xx = x0; xx <= x1; ++xx) {
        double d = std::sqrt((xx - cx) * (xx - cx) + (yy - cy) * (yy - cy));
        double cover = std::clamp(r - d + 0.5, 0.0, 1.0);
        if (cover > 0) blend(yy * s + xx, 2, cover);
      }
  }
  return img;
}

// ----------------------------------------------------------------- 3-D embed

namespace {

std::vector<std::vector<int>> hop_distances(const MolGraph& mol) {
  const std::size_t n = mol.atoms.size();
  auto adj = mol.adjacency();
  std::vector<std::vector<int>> dist(n, std::vector<int>(n, -1));
  for (std::size_t s = 0; s < n; ++s) {
    std::queue<int> q;
    dist[s][s] = 0;
    q.push(static_cast<int>(s));
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (int v : adj[static_cast<std::size_t>(u)])
        if (dist[s][static_cast<std::size_t>(v)] < 0) {
          dist[s][static_cast<std::size_t>(v)] = dist[s][static_cast<std::size_t>(u)] + 1;
          q.push(v);
        }
    }
  }
  return dist;
}

void center_rows(Tensor& coords) {
  std::size_t n = coords.shape[0], d = coords.shape[1];
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += coords.data[r * d + c];
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) coords.data[r * d + c] -= mean;
  }
}

}  // namespace

std::vector<Tensor> embed_3d(const MolGraph& mol, std::uint64_t seed, int n_conf) {
  const std::size_t n = mol.atoms.size();
  const double bond_len = 1.5;
  auto hops = hop_distances(mol);

  Rng rng(derive_seed(seed, {hash_bytes("embed3d")}));
  Tensor base = Tensor::zeros({n, 3});
  for (double& v : base.data) v = rng.normal() * bond_len;

  // SMACOF / Guttman transform with uniform weights against the scaled
  // hop-distance matrix: x_i' = (1/n) sum_j (d_ij / dist_ij) (x_i - x_j).
  for (int iter = 0; iter < 200 && n > 1; ++iter) {
    Tensor next = Tensor::zeros({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double target = bond_len * hops[i][j];
        double dx = base.data[i * 3] - base.data[j * 3];
        double dy = base.data[i * 3 + 1] - base.data[j * 3 + 1];
        double dz = base.data[i * 3 + 2] - base.data[j * 3 + 2];
        double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (d < 1e-9) {
          dx = 1e-6 * static_cast<double>(i + 1);
          dy = 1e-6 * static_cast<double>(j + 1);
          dz = 1e-6;
          d = std::sqrt(dx * dx + dy * dy + dz * dz);
        }
        double t = target / d;
        next.data[i * 3] += dx * t;
        next.data[i * 3 + 1] += dy * t;
        next.data[i * 3 + 2] += dz * t;
      }
      for (int c = 0; c < 3; ++c) next.data[i * 3 + c] /= static_cast<double>(n);
    }
    base = std::move(next);
  }

  std::vector<Tensor> conformers;
  conformers.reserve(static_cast<std::size_t>(n_conf));
  for (int c = 0; c < n_conf; ++c) {
    Tensor r = base;
    Rng jitter(derive_seed(seed, {hash_bytes("jitter"), static_cast<std::uint64_t>(c)}));
    for (double& v : r.data) v += 0.1 * jitter.normal();
    center_rows(r);
    conformers.push_back(std::move(r));
  }
  return conformers;
}

// ----------------------------------------------------------------- labels

std::vector<double> geom_labels(const Tensor& coords) {
  if (coords.shape.size() != 2 || coords.shape[1] != 3 || coords.shape[0] == 0)
    throw std::invalid_argument("geom_labels: need a nonempty {n,3} coordinate matrix");
  const std::size_t n = coords.shape[0];
  double cx = 0, cy = 0, cz = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cx += coords.data[i * 3];
    cy += coords.data[i * 3 + 1];
    cz += coords.data[i * 3 + 2];
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  cz /= static_cast<double>(n);
  double rg2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = coords.data[i * 3] - cx, dy = coords.data[i * 3 + 1] - cy,
           dz = coords.data[i * 3 + 2] - cz;
    rg2 += dx * dx + dy * dy + dz * dz;
  }
  rg2 /= static_cast<double>(n);
  double mean = 0.0, mx = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double dx = coords.data[i * 3] - coords.data[j * 3];
      double dy = coords.data[i * 3 + 1] - coords.data[j * 3 + 1];
      double dz = coords.data[i * 3 + 2] - coords.data[j * 3 + 2];
      double d = std::sqrt(dx * dx + dy * dy + dz * dz);
      mean += d;
      mx = std::max(mx, d);
      ++pairs;
    }
  if (pairs > 0) mean /= static_cast<double>(pairs);
  return {std::sqrt(rg2), mean, mx};
}

std::vector<double> prop_labels(const MolGraph& mol) {
  if (mol.atoms.empty()) throw std::invalid_argument("prop_labels: empty molecule");
  double zsum = 0.0;
  double heavy = 0.0, hetero = 0.0;
  for (const Atom& a : mol.atoms) {
    zsum += atomic_number(a.element);
    if (a.element != "H") {
      heavy += 1.0;
      if (a.element != "C") hetero += 1.0;
    }
  }
  double frac = heavy > 0 ? hetero / heavy : 0.0;
  return {zsum, heavy, static_cast<double>(mol.rings.size()), frac};
}

// ----------------------------------------------------------------- fingerprints

namespace {

std::uint64_t invariant_hash(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6d6f7267616e00ULL;
  for (std::uint64_t p : parts) h = hash_combine(h, p);
  return h;
}

}  // namespace

Fingerprint ecfp(const MolGraph& mol, int radius, std::size_t nbits) {
  Fingerprint fp(nbits, radius);
  const std::size_t n = mol.atoms.size();
  std::vector<std::uint64_t> h(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Atom& a = mol.atoms[i];
    h[i] = invariant_hash({hash_bytes(a.element),
                           static_cast<std::uint64_t>(mol.degree(a.index)),
                           static_cast<std::uint64_t>(a.formal_charge + 8),
                           static_cast<std::uint64_t>(a.implicit_h),
                           a.aromatic ? 1u : 0u,
                           [&] {
                             for (const Bond& b : mol.bonds)
                               if (b.in_ring && (b.a == a.index || b.b == a.index)) return 1u;
                             return 0u;
                           }()});
    fp.set(h[i] % nbits);
  }
  std::vector<std::vector<std::pair<int, int>>> nb(n);  // (neighbor, bond order code)
  for (const Bond& b : mol.bonds) {
    int code = static_cast<int>(b.order) + 1;
    nb[static_cast<std::size_t>(b.a)].push_back({b.b, code});
    nb[static_cast<std::size_t>(b.b)].push_back({b.a, code});
  }
  for (int r = 0; r < radius; ++r) {
    std::vector<std::uint64_t> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<std::uint64_t, std::uint64_t>> env;
      env.reserve(nb[i].size());
      for (auto [j, code] : nb[i])
        env.push_back({static_cast<std::uint64_t>(code), h[static_cast<std::size_t>(j)]});
      std::sort(env.begin(), env.end());
      std::uint64_t v = hash_combine(0x65637470ULL, h[i]);
      for (const auto& [code, hj] : env) v = hash_combine(hash_combine(v, code), hj);
      next[i] = v;
      fp.set(v % nbits);
    }
    h = std::move(next);
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.nbits != b.nbits)
    throw std::invalid_argument("tanimoto: fingerprints of different widths");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    inter += static_cast<std::size_t>(std::popcount(a.blocks[i] & b.blocks[i]));
    uni += static_cast<std::size_t>(std::popcount(a.blocks[i] | b.blocks[i]));
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ----------------------------------------------------------------- scaffold split

std::string scaffold_key(const MolGraph& mol) {
  std::vector<char> alive(mol.atoms.size(), 1);
  std::vector<char> ring_atom(mol.atoms.size(), 0);
  for (const auto& ring : mol.rings)
    for (int i : ring) ring_atom[static_cast<std::size_t>(i)] = 1;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
      if (!alive[i] || ring_atom[i]) continue;
      int deg = 0;
      for (const Bond& b : mol.bonds) {
        if (!alive[static_cast<std::size_t>(b.a)] || !alive[static_cast<std::size_t>(b.b)]) continue;
        if (b.a == static_cast<int>(i) || b.b == static_cast<int>(i)) ++deg;
      }
      if (deg <= 1) {
        alive[i] = 0;
        changed = true;
      }
    }
  }
  std::vector<std::string> parts;
  for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
    if (!alive[i]) continue;
    int deg = 0;
    for (const Bond& b : mol.bonds)
      if (alive[static_cast<std::size_t>(b.a)] && alive[static_cast<std::size_t>(b.b)] &&
          (b.a == static_cast<int>(i) || b.b == static_cast<int>(i)))
        ++deg;
    parts.push_back(mol.atoms[i].element + std::to_string(deg));
  }
  std::sort(parts.begin(), parts.end());
  std::vector<std::size_t> ring_sizes;
  for (const auto& ring : mol.rings) ring_sizes.push_back(ring.size());
  std::sort(ring_sizes.begin(), ring_sizes.end());
  std::ostringstream os;
  for (const auto& p : parts) os << p << '|';
  os << ';';
  for (std::size_t rs : ring_sizes) os << rs << ',';
  return os.str();
}

std::vector<Split> scaffold_split(const Dataset& ds, SplitFractions f, std::uint64_t seed) {
  (void)seed;  // grouping and tie order are fully deterministic
  if (f.train <= 0 || f.val < 0 || f.test < 0 ||
      std::fabs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw std::invalid_argument("scaffold_split: fractions must be positive and sum to 1");
  const std::size_t n = ds.size();
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[scaffold_key(ds.molecules[i].graph)].push_back(i);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> ordered(groups.begin(),
                                                                        groups.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second.size() != b.second.size()) return a.second.size() > b.second.size();
    return a.first < b.first;
  });
  std::size_t quota_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  std::size_t quota_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n)));
  std::vector<Split> out(n, Split::kNone);
  std::size_t in_train = 0, in_val = 0;
  for (const auto& [key, members] : ordered) {
    Split target;
    if (in_train < quota_train)
      target = Split::kTrain;
    else if (in_val < quota_val)
      target = Split::kVal;
    else
      target = Split::kTest;
    for (std::size_t i : members) out[i] = target;
    if (target == Split::kTrain) in_train += members.size();
    if (target == Split::kVal) in_val += members.size();
  }
  return out;
}

// ----------------------------------------------------------------- pipeline

Molecule build_molecule(const std::string& smiles, const FeatureConfig& cfg) {
  Molecule m;
  m.smiles = smiles;
  m.graph = parse_molecule(smiles);
  auto [xv, xe] = featurize(m.graph, cfg);
  m.atom_features = std::move(xv);
  m.bond_features = std::move(xe);
  std::uint64_t mol_seed = hash_bytes(smiles);
  Tensor flat = layout_2d(m.graph, derive_seed(mol_seed, {hash_bytes("layout")}));
  m.image = rasterize(m.graph, flat, cfg);
  m.coords = embed_3d(m.graph, mol_seed, cfg.n_conf);
  m.y_geom = geom_labels(m.coords[0]);
  m.y_prop = prop_labels(m.graph);
  return m;
}

// ----------------------------------------------------------------- CSV ingest

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

Dataset load_csv(const std::string& path, const std::string& smiles_column,
                 const std::vector<std::string>& label_columns, const FeatureConfig& cfg,
                 std::size_t* skipped) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);
  auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw std::runtime_error("load_csv: missing column '" + name + "' in " + path);
    return static_cast<std::size_t>(it - header.begin());
  };
  std::size_t smiles_idx = column(smiles_column);
  std::vector<std::size_t> label_idx;
  for (const auto& l : label_columns) label_idx.push_back(column(l));

  Dataset ds;
  ds.provenance = path;
  std::size_t bad = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() < header.size()) fields.resize(header.size());
    try {
      Molecule m = build_molecule(fields[smiles_idx], cfg);
      for (std::size_t li : label_idx) {
        const std::string& cell = fields[li];
        m.labels.push_back(cell.empty() ? std::nan("") : std::stod(cell));
      }
      ds.molecules.push_back(std::move(m));
    } catch (const ParseError&) {
      ++bad;
    } catch (const ValenceError&) {
      ++bad;
    } catch (const std::invalid_argument&) {
      ++bad;
    }
  }
  ds.split.assign(ds.size(), Split::kNone);
  if (skipped) *skipped = bad;
  return ds;
}

// ----------------------------------------------------------------- synthetic corpus

Dataset gen_synthetic(std::size_t n, std::uint64_t seed, const FeatureConfig& cfg) {
  Dataset ds;
  ds.provenance = "synthetic:" + std::to_string(seed);
  auto element_valence = [](const std::string& e) { return e == "C" ? 4 : e == "N" ? 3 : 2; };
  for (std::size_t idx = 0; idx < n; ++idx) {
    Rng rng(derive_seed(seed, {hash_bytes("molecule"), idx}));
    std::size_t atoms = 6 + rng.below(15);  // 6..20 heavy atoms
    MolGraph g;
    const char* het[] = {"N", "O", "S"};
    for (std::size_t i = 0; i < atoms; ++i) {
      Atom a;
      a.element = rng.uniform() < 0.25 ? het[rng.below(3)] : "C";
      a.index = static_cast<int>(i);
      g.atoms.push_back(a);
    }
    std::vector<int> free_val(atoms);
    for (std::size_t i = 0; i < atoms; ++i) free_val[i] = element_valence(g.atoms[i].element);
    // random spanning tree over atoms with remaining valence
    for (std::size_t i = 1; i < atoms; ++i) {
      std::vector<std::size_t> candidates;
      for (std::size_t j = 0; j < i; ++j)
        if (free_val[j] >= 1) candidates.push_back(j);
      std::size_t p = candidates[rng.below(candidates.size())];
      BondOrder order = BondOrder::kSingle;
      int used = 1;
      // the new atom must keep a free slot so the next atom always has a parent
      if (rng.uniform() < 0.15 && free_val[p] >= 2 && free_val[i] >= 3) {
        order = BondOrder::kDouble;
        used = 2;
      }
      g.bonds.push_back(Bond{static_cast<int>(p), static_cast<int>(i), order, false});
      free_val[p] -= used;
      free_val[i] -= used;
    }
    // one ring closure with probability 0.6, ring size 3..8
    if (rng.uniform() < 0.6) {
      auto adj = g.adjacency();
      std::vector<std::pair<std::size_t, std::size_t>> closures;
      std::vector<int> dist(atoms);
      for (std::size_t u = 0; u < atoms; ++u) {
        if (free_val[u] < 1) continue;
        std::fill(dist.begin(), dist.end(), -1);
        std::queue<std::size_t> q;
        dist[u] = 0;
        q.push(u);
        while (!q.empty()) {
          std::size_t x = q.front();
          q.pop();
          for (int y : adj[x])
            if (dist[static_cast<std::size_t>(y)] < 0) {
              dist[static_cast<std::size_t>(y)] = dist[x] + 1;
              q.push(static_cast<std::size_t>(y));
            }
        }
        for (std::size_t v = u + 1; v < atoms; ++v)
          if (free_val[v] >= 1 && dist[v] >= 2 && dist[v] <= 7)
            closures.push_back({u, v});
      }
      if (!closures.empty()) {
        auto [u, v] = closures[rng.below(closures.size())];
        g.bonds.push_back(Bond{static_cast<int>(u), static_cast<int>(v), BondOrder::kSingle, false});
        free_val[u] -= 1;
        free_val[v] -= 1;
      }
    }
    std::string smiles = write_smiles(g);
    Molecule m = build_molecule(smiles, cfg);
    bool positive = m.y_prop[2] >= 1.0 && m.y_prop[3] > 0.1;
    double regression = m.y_prop[1] + 0.1 * rng.normal();
    m.labels = {positive ? 1.0 : 0.0, regression};
    ds.molecules.push_back(std::move(m));
  }
  ds.split.assign(ds.size(), Split::kNone);
  return ds;
}

// ----------------------------------------------------------------- JSONL cache

namespace {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    default: return nullptr;
  }
}

Split split_from(const json& j) {
  if (j.is_null()) return Split::kNone;
  std::string s = j.get<std::string>();
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::runtime_error("unknown split name: " + s);
}

const char* order_name(BondOrder o) {
  switch (o) {
    case BondOrder::kSingle: return "single";
    case BondOrder::kDouble: return "double";
    case BondOrder::kTriple: return "triple";
    default: return "aromatic";
  }
}

}  // namespace

void save_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_jsonl: cannot open " + path);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Molecule& m = ds.molecules[i];
    json rec;
    rec["smiles"] = m.smiles;
    json atoms = json::array();
    for (const Atom& a : m.graph.atoms)
      atoms.push_back({{"element", a.element},
                       {"aromatic", a.aromatic},
                       {"charge", a.formal_charge},
                       {"h", a.explicit_h < 0 ? json(nullptr) : json(a.explicit_h)}});
    rec["atoms"] = std::move(atoms);
    json bonds = json::array();
    for (const Bond& b : m.graph.bonds)
      bonds.push_back({{"a", b.a}, {"b", b.b}, {"order", order_name(b.order)}, {"in_ring", b.in_ring}});
    rec["bonds"] = std::move(bonds);
    std::vector<std::uint8_t> pixels(m.image.data.size());
    for (std::size_t k = 0; k < pixels.size(); ++k)
      pixels[k] = static_cast<std::uint8_t>(
          std::lround(std::clamp(m.image.data[k], 0.0, 1.0) * 255.0));
    rec["image"] = base64_encode(pixels);
    json confs = json::array();
    for (const Tensor& r : m.coords) {
      json rows = json::array();
      for (std::size_t a = 0; a < r.shape[0]; ++a)
        rows.push_back({r.data[a * 3], r.data[a * 3 + 1], r.data[a * 3 + 2]});
      confs.push_back(std::move(rows));
    }
    rec["coords"] = std::move(confs);
    rec["y_geom"] = m.y_geom;
    rec["y_prop"] = m.y_prop;
    json labels = json::array();
    for (double l : m.labels) labels.push_back(std::isnan(l) ? json(nullptr) : json(l));
    rec["labels"] = std::move(labels);
    const char* sn = split_name(ds.split[i]);
    rec["split"] = sn ? json(sn) : json(nullptr);
    out << rec.dump() << '\n';
  }
}

Dataset load_jsonl(const std::string& path, const FeatureConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_jsonl: cannot open " + path);
  Dataset ds;
  ds.provenance = path;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    Molecule m;
    m.smiles = rec.at("smiles").get<std::string>();
    m.graph = parse_molecule(m.smiles);
    if (m.graph.atoms.size() != rec.at("atoms").size() ||
        m.graph.bonds.size() != rec.at("bonds").size())
      throw std::runtime_error("load_jsonl: stored atom/bond lists disagree with SMILES for " +
                               m.smiles);
    auto [xv, xe] = featurize(m.graph, cfg);
    m.atom_features = std::move(xv);
    m.bond_features = std::move(xe);
    auto pixels = base64_decode(rec.at("image").get<std::string>());
    std::size_t s = cfg.image_size;
    if (pixels.size() != s * s * 3)
      throw std::runtime_error("load_jsonl: image payload has wrong size");
    m.image = Tensor::zeros({s, s, 3});
    for (std::size_t k = 0; k < pixels.size(); ++k)
      m.image.data[k] = static_cast<double>(pixels[k]) / 255.0;
    for (const auto& conf : rec.at("coords")) {
      Tensor r = Tensor::zeros({m.graph.atoms.size(), 3});
      if (conf.size() != m.graph.atoms.size())
        throw std::runtime_error("load_jsonl: conformer row count mismatch");
      for (std::size_t a = 0; a < conf.size(); ++a)
        for (std::size_t c = 0; c < 3; ++c) r.data[a * 3 + c] = conf[a][c].get<double>();
      m.coords.push_back(std::move(r));
    }
    m.y_geom = rec.at("y_geom").get<std::vector<double>>();
    m.y_prop = rec.at("y_prop").get<std::vector<double>>();
    for (const auto& l : rec.at("labels"))
      m.labels.push_back(l.is_null() ? std::nan("") : l.get<double>());
    ds.split.push_back(split_from(rec.at("split")));
    ds.molecules.push_back(std::move(m));
  }
  return ds;
}

}  // namespace mmsa
