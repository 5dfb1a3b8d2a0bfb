#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rcut/image.hpp"
#include "rcut/numerics.hpp"
#include "rcut/rout.hpp"
#include "rcut/types.hpp"

// Stage 2, "Cut": thresholded cosine-affinity graph over the class-aware
// tokens, Ncut relaxation via the generalized eigensystem
// (K - e) y = lambda K y, mean split of the second eigenvector into
// foreground and background, rendering of the explainability map.

namespace rcut {

struct AffinityGraph {
  int n = 0;                         // non-isolated node count
  int total = 0;                     // original patch count S
  std::vector<std::uint8_t> e;       // n x n binary adjacency, self-edges kept
  std::vector<double> degrees;       // K, row sums of e
  std::vector<int> node_index;       // reduced node -> original patch index
  std::vector<int> isolated;         // removed patch indices

  std::uint8_t edge(int i, int j) const {
    return e[static_cast<std::size_t>(i) * n + j];
  }

  // Every pair connected: the mean split of a near-constant eigenvector is
  // noise, callers fall back to the R-Out-only map.
  bool complete() const {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (!edge(i, j)) return false;
    return true;
  }
};

struct Partition {
  std::vector<double> y1;      // eigenvector over non-isolated nodes
  double lambda1 = 0.0;
  double mean = 0.0;
  std::vector<int> foreground;  // original patch indices, y1 >= mean
  std::vector<int> background;  // original patch indices, y1 < mean
  std::vector<float> y1c;       // length S, zero on background and isolated
};

// e_ij = 1 iff cosine(tc_i, tc_j) >= phi. Self-edges follow the same rule
// (cosine of a nonzero row with itself is 1). Nodes with no edge beyond the
// self-edge are moved to `isolated` and the degrees are recomputed on the
// remaining subgraph.
inline AffinityGraph build_graph(const TokenMatrix& tc, double phi) {
  if (tc.has_cls) throw ConfigError("build_graph: strip the cls row first");
  const int s_total = tc.rows;
  if (s_total < 2) throw DegenerateGraphError("build_graph: need at least 2 tokens");

  std::vector<std::uint8_t> full(static_cast<std::size_t>(s_total) * s_total, 0);
  for (int i = 0; i < s_total; ++i) {
    for (int j = i; j < s_total; ++j) {
      std::uint8_t v = cosine(tc.row(i), tc.row(j)) >= phi ? 1 : 0;
      full[static_cast<std::size_t>(i) * s_total + j] = v;
      full[static_cast<std::size_t>(j) * s_total + i] = v;
    }
  }

  AffinityGraph g;
  g.total = s_total;
  for (int i = 0; i < s_total; ++i) {
    bool connected = false;
    for (int j = 0; j < s_total && !connected; ++j)
      if (j != i && full[static_cast<std::size_t>(i) * s_total + j]) connected = true;
    if (connected)
      g.node_index.push_back(i);
    else
      g.isolated.push_back(i);
  }
  g.n = static_cast<int>(g.node_index.size());
  if (g.n < 2)
    throw DegenerateGraphError("build_graph: fewer than 2 non-isolated nodes");

  g.e.assign(static_cast<std::size_t>(g.n) * g.n, 0);
  g.degrees.assign(g.n, 0.0);
  for (int a = 0; a < g.n; ++a) {
    for (int b = 0; b < g.n; ++b) {
      std::uint8_t v =
          full[static_cast<std::size_t>(g.node_index[a]) * s_total + g.node_index[b]];
      g.e[static_cast<std::size_t>(a) * g.n + b] = v;
      g.degrees[a] += v;
    }
  }
  return g;
}

// Direct evaluation of Ncut(I,J) = cut/sim(I,V) + cut/sim(J,V) over the
// reduced graph. setI holds reduced node ids.
inline double ncut_value(const AffinityGraph& g, const std::vector<int>& set_i) {
  std::vector<bool> in_i(g.n, false);
  int count = 0;
  for (int id : set_i) {
    if (id < 0 || id >= g.n) throw DomainError("ncut_value: node id out of range");
    if (!in_i[id]) {
      in_i[id] = true;
      ++count;
    }
  }
  if (count == 0 || count == g.n)
    throw DomainError("ncut_value: set must be a nonempty proper subset");

  double cut = 0.0, sim_i = 0.0, sim_j = 0.0;
  for (int i = 0; i < g.n; ++i) {
    for (int j = 0; j < g.n; ++j) {
      double w = g.edge(i, j);
      if (in_i[i] && !in_i[j]) cut += w;
      if (in_i[i]) sim_i += w;
      else sim_j += w;
    }
  }
  return cut / sim_i + cut / sim_j;
}

// Second generalized eigenvector, mean split, scatter back to S positions.
// Eigenvector sign is arbitrary here; orient_foreground resolves it.
inline Partition ncut_partition(const AffinityGraph& g) {
  SymMatrix adj(g.n);
  for (int i = 0; i < g.n; ++i)
    for (int j = i; j < g.n; ++j) adj.set(i, j, g.edge(i, j));
  GenEigPair pair = generalized_second_eigvec(g.degrees, adj);

  Partition p;
  p.y1 = std::move(pair.y1);
  p.lambda1 = pair.lambda1;
  double mean = 0.0;
  for (double v : p.y1) mean += v;
  p.mean = mean / g.n;
  p.y1c.assign(g.total, 0.0f);
  for (int i = 0; i < g.n; ++i) {
    int orig = g.node_index[i];
    if (p.y1[i] >= p.mean) {
      p.foreground.push_back(orig);
      p.y1c[orig] = static_cast<float>(p.y1[i]);
    } else {
      p.background.push_back(orig);
    }
  }
  return p;
}

namespace detail {

inline double mean_row_norm(const TokenMatrix& tc, const std::vector<int>& rows) {
  if (rows.empty()) return 0.0;
  double sum = 0.0;
  for (int r : rows) {
    double n2 = 0.0;
    for (int d = 0; d < tc.cols; ++d)
      n2 += static_cast<double>(tc.at(r, d)) * tc.at(r, d);
    sum += std::sqrt(n2);
  }
  return sum / static_cast<double>(rows.size());
}

}  // namespace detail

// The eigensystem fixes y1 only up to sign. Foreground is defined as the
// side with the larger mean class-aware token norm; ties keep the incoming
// orientation.
inline Partition orient_foreground(const AffinityGraph& g, Partition p,
                                   const TokenMatrix& tc) {
  double mf = detail::mean_row_norm(tc, p.foreground);
  double mb = detail::mean_row_norm(tc, p.background);
  if (mb <= mf) return p;

  Partition flipped;
  flipped.y1.resize(p.y1.size());
  for (std::size_t i = 0; i < p.y1.size(); ++i) flipped.y1[i] = -p.y1[i];
  flipped.lambda1 = p.lambda1;
  double mean = 0.0;
  for (double v : flipped.y1) mean += v;
  flipped.mean = mean / static_cast<double>(g.n);
  flipped.y1c.assign(g.total, 0.0f);
  for (int i = 0; i < g.n; ++i) {
    int orig = g.node_index[i];
    if (flipped.y1[i] >= flipped.mean) {
      flipped.foreground.push_back(orig);
      flipped.y1c[orig] = static_cast<float>(flipped.y1[i]);
    } else {
      flipped.background.push_back(orig);
    }
  }
  return flipped;
}

struct Overlay {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;  // values in [0, 255]

  Overlay() = default;
  Overlay(int h, int w)
      : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  void save_png(const std::string& path) const {
    std::vector<std::uint8_t> q(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i)
      q[i] = static_cast<std::uint8_t>(
          std::lround(std::clamp(rgb[i], 0.0f, 255.0f)));
    write_png_rgb8(path, height, width, q);
  }
};

struct RenderOut {
  Overlay overlay;   // 0.5*255*up(map) + 0.5*255*X
  GridMap heatmap;   // full resolution, [0,1]
};

// Renders an already-[0,1] grid map: nearest upsample by p, then the
// overlay mix with the input rescaled to 0..255.
inline RenderOut render_grid(const GridMap& grid, const Image& x, int patch) {
  RenderOut out;
  out.heatmap = upsample_nearest(grid, patch);
  if (out.heatmap.gh != x.height || out.heatmap.gw != x.width)
    throw ConfigError("render: grid does not cover the image");
  out.overlay = Overlay(x.height, x.width);
  for (int y = 0; y < x.height; ++y)
    for (int px = 0; px < x.width; ++px) {
      float h = out.heatmap.at(y, px);
      for (int c = 0; c < 3; ++c)
        out.overlay.rgb[(static_cast<std::size_t>(y) * x.width + px) * 3 + c] =
            0.5f * 255.0f * h + 0.5f * (255.0f * x.at(y, px, c));
    }
  return out;
}

// Eigenvector scale is arbitrary, so y1c is min-max normalized over its
// nonzero support before the 255-scale overlay; zeros (background and
// isolated nodes) stay zero. A singleton or constant support maps to 1.
inline GridMap normalize_y1c(const std::vector<float>& y1c, int grid_h, int grid_w) {
  if (static_cast<int>(y1c.size()) != grid_h * grid_w)
    throw ConfigError("normalize_y1c: length does not fill the grid");
  GridMap g(grid_h, grid_w);
  float lo = 0.0f, hi = 0.0f;
  bool seen = false;
  for (float v : y1c) {
    if (v == 0.0f) continue;
    if (!seen) {
      lo = hi = v;
      seen = true;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!seen) return g;  // all-background: zero map
  for (int i = 0; i < grid_h * grid_w; ++i) {
    float v = y1c[i];
    if (v == 0.0f) continue;
    g.v[i] = (hi == lo) ? 1.0f : (v - lo) / (hi - lo);
  }
  return g;
}

inline RenderOut render_map(const std::vector<float>& y1c, const Image& x,
                            int patch) {
  return render_grid(normalize_y1c(y1c, x.height / patch, x.width / patch), x,
                     patch);
}

struct CutOut {
  RenderOut render;
  Partition partition;
  bool degenerate = false;  // fell back to the R-Out-only map
};

// Ablation variant: the full Cut stage over unweighted tokens (w = 1).
// Degenerate graphs (complete, or fewer than 2 usable nodes) fall back to
// the summed-token map.
inline CutOut cut_pipeline(const TokenMatrix& tokens, double phi, const Image& x,
                           int patch) {
  const int gh = x.height / patch;
  const int gw = x.width / patch;
  CutOut out;
  try {
    AffinityGraph g = build_graph(tokens, phi);
    if (g.complete()) throw DegenerateGraphError("all nodes mutually similar");
    Partition p = orient_foreground(g, ncut_partition(g), tokens);
    out.render = render_map(p.y1c, x, patch);
    out.partition = std::move(p);
  } catch (const DegenerateGraphError&) {
    out.degenerate = true;
    out.render = render_grid(rout_only_map(tokens, gh, gw), x, patch);
    out.partition.y1c.assign(static_cast<std::size_t>(gh) * gw, 0.0f);
  }
  return out;
}

inline CutOut cut_only_map(const TokenMatrix& tokens_s, double phi,
                           const Image& x, int patch) {
  return cut_pipeline(tokens_s, phi, x, patch);
}

}  // namespace rcut
