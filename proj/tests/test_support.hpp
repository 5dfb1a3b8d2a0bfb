#pragma once

// Shared fixtures and independent oracles for the test suites. Everything
// here recomputes expectations from first principles (enumeration, direct
// summation) so the assertions do not depend on the code under test.

#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "rcut/image.hpp"
#include "rcut/numerics.hpp"

namespace testsup {

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto base = std::filesystem::temp_directory_path() /
              ("rcut-test-" + tag + "-" + std::to_string(::getpid()));
  std::filesystem::create_directories(base);
  return base;
}

// Random connected binary graph on n nodes, optionally with self-edges.
// Connectivity is forced with a random spanning tree, then extra edges are
// sprinkled with probability p.
inline std::vector<std::uint8_t> random_connected_graph(int n, double p,
                                                        bool self_edges,
                                                        std::mt19937_64& rng) {
  std::vector<std::uint8_t> e(static_cast<std::size_t>(n) * n, 0);
  auto set = [&](int i, int j) {
    e[static_cast<std::size_t>(i) * n + j] = 1;
    e[static_cast<std::size_t>(j) * n + i] = 1;
  };
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 1; i < n; ++i) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    set(order[i], order[pick(rng)]);
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (coin(rng) < p) set(i, j);
  if (self_edges)
    for (int i = 0; i < n; ++i) e[static_cast<std::size_t>(i) * n + i] = 1;
  return e;
}

inline std::vector<double> degree_vector(const std::vector<std::uint8_t>& e, int n) {
  std::vector<double> k(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) k[i] += e[static_cast<std::size_t>(i) * n + j];
  return k;
}

inline rcut::SymMatrix adjacency_matrix(const std::vector<std::uint8_t>& e, int n) {
  rcut::SymMatrix m(n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j)
      m.set(i, j, static_cast<double>(e[static_cast<std::size_t>(i) * n + j]));
  return m;
}

// Normalized-cut cost of the bipartition given by mask (true = side I),
// by direct summation. Independent of the library code it checks.
inline double ncut_cost(const std::vector<std::uint8_t>& e, int n,
                        const std::vector<bool>& mask) {
  double cut = 0.0, sim_i = 0.0, sim_j = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double w = e[static_cast<std::size_t>(i) * n + j];
      if (mask[i] && !mask[j]) cut += w;
      if (mask[i]) sim_i += w;
      if (!mask[i]) sim_j += w;
    }
  }
  if (sim_i == 0.0 || sim_j == 0.0) return cut == 0.0 ? 0.0 : 1e300;
  return cut / sim_i + cut / sim_j;
}

// Exhaustive minimum over all 2^(n-1) - 1 proper bipartitions.
inline double ncut_exhaustive_min(const std::vector<std::uint8_t>& e, int n,
                                  std::vector<bool>* best_mask = nullptr) {
  double best = 1e300;
  for (std::uint32_t bits = 1; bits < (1u << (n - 1)); ++bits) {
    std::vector<bool> mask(n, false);
    for (int i = 0; i < n - 1; ++i) mask[i] = (bits >> i) & 1;
    // node n-1 always on side J, which covers every bipartition once
    double c = ncut_cost(e, n, mask);
    if (c < best) {
      best = c;
      if (best_mask) *best_mask = mask;
    }
  }
  return best;
}

// Residual of the generalized eigensystem (K - e) y = lambda K y, inf-norm.
inline double generalized_residual(const std::vector<std::uint8_t>& e, int n,
                                   const std::vector<double>& k,
                                   const std::vector<double>& y, double lambda) {
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    double lhs = k[i] * y[i];
    for (int j = 0; j < n; ++j)
      lhs -= static_cast<double>(e[static_cast<std::size_t>(i) * n + j]) * y[j];
    double r = lhs - lambda * k[i] * y[i];
    worst = std::max(worst, std::fabs(r));
  }
  return worst;
}

inline rcut::Image solid_image(int size, float r, float g, float b) {
  rcut::Image img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

inline rcut::Image random_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  rcut::Image img(size, size);
  for (auto& v : img.data) v = uni(rng);
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const rcut::Image& img) {
  std::ofstream f(path, std::ios::binary);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (float v : img.data) {
    int q = static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    f.put(static_cast<char>(q));
  }
}

}  // namespace testsup
