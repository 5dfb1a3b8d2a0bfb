#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rcut/common.hpp"
#include "rcut/types.hpp"

namespace rcut {

// Cosine similarity with f64 accumulation. A zero vector on either side
// returns 0: a perturbation of an all-black region produces a zero output
// channel and must not inject NaN into the weight vector.
inline double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size())
    throw DomainError("cosine: length mismatch " + std::to_string(u.size()) +
                      " vs " + std::to_string(v.size()));
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<double>(u[i]) * v[i];
    nu += static_cast<double>(u[i]) * u[i];
    nv += static_cast<double>(v[i]) * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

inline double cosine(const std::vector<float>& u, const std::vector<float>& v) {
  return cosine(std::span<const float>(u), std::span<const float>(v));
}

// (x - min) / (max - min); a constant input maps to all zeros.
inline void minmax_normalize(std::span<float> x) {
  if (x.empty()) throw DomainError("minmax_normalize: empty input");
  float lo = x[0], hi = x[0];
  for (float v : x) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) {
    std::fill(x.begin(), x.end(), 0.0f);
    return;
  }
  const float inv = 1.0f / (hi - lo);
  for (float& v : x) v = (v - lo) * inv;
}

inline GridMap minmax_normalize(GridMap g) {
  minmax_normalize(std::span<float>(g.v));
  return g;
}

// Each cell replicated into a factor x factor block.
inline GridMap upsample_nearest(const GridMap& g, int factor) {
  if (factor < 1) throw DomainError("upsample_nearest: factor must be >= 1");
  GridMap out(g.gh * factor, g.gw * factor);
  for (int r = 0; r < out.gh; ++r)
    for (int c = 0; c < out.gw; ++c)
      out.at(r, c) = g.at(r / factor, c / factor);
  return out;
}

// Dense symmetric matrix, double storage. Writes go through set(), which
// mirrors across the diagonal, so asymmetry is unrepresentable.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(int n) : n_(n), a_(static_cast<std::size_t>(n) * n, 0.0) {}

  int order() const { return n_; }

  void set(int i, int j, double v) {
    a_[static_cast<std::size_t>(i) * n_ + j] = v;
    a_[static_cast<std::size_t>(j) * n_ + i] = v;
  }
  double get(int i, int j) const { return a_[static_cast<std::size_t>(i) * n_ + j]; }

  double inf_norm() const {
    double best = 0.0;
    for (int i = 0; i < n_; ++i) {
      double row = 0.0;
      for (int j = 0; j < n_; ++j) row += std::fabs(get(i, j));
      best = std::max(best, row);
    }
    return best;
  }

 private:
  int n_ = 0;
  std::vector<double> a_;
};

struct EigResult {
  std::vector<double> values;   // ascending
  std::vector<double> vectors;  // column k = eigenvector k, row-major n*n
  int n = 0;

  double vec(int i, int k) const { return vectors[static_cast<std::size_t>(i) * n + k]; }
  std::vector<double> eigenvector(int k) const {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = vec(i, k);
    return v;
  }
};

// Cyclic Jacobi. Dense O(n^3) per sweep; graph orders here stay in the low
// hundreds so robustness wins over speed. Caps at 100 sweeps and reports
// the leftover off-diagonal mass on failure.
inline EigResult sym_eig(const SymMatrix& m) {
  const int n = m.order();
  if (n < 1) throw DomainError("sym_eig: empty matrix");
  std::vector<double> a(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a[static_cast<std::size_t>(i) * n + j] = m.get(i, j);
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

  auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  auto V = [&](int i, int j) -> double& { return v[static_cast<std::size_t>(i) * n + j]; };

  double frob = 0.0;
  for (double x : a) frob += x * x;
  frob = std::sqrt(frob);
  const double tol = 1e-14 * std::max(1.0, frob);
  const int max_sweeps = 100;

  double off = 0.0;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    off = std::sqrt(2.0 * off);
    if (off <= tol) break;
    if (sweep == max_sweeps - 1)
      throw NumericError("sym_eig: no convergence after " +
                         std::to_string(max_sweeps) +
                         " sweeps, off-diagonal residual " + std::to_string(off));

    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = A(p, q);
        if (std::fabs(apq) <= tol / (n * n)) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        double tau = s / (1.0 + c);

        double app = A(p, p), aqq = A(q, q);
        A(p, p) = app - t * apq;
        A(q, q) = aqq + t * apq;
        A(p, q) = 0.0;
        A(q, p) = 0.0;
        for (int k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          double akp = A(k, p), akq = A(k, q);
          A(k, p) = akp - s * (akq + tau * akp);
          A(p, k) = A(k, p);
          A(k, q) = akq + s * (akp - tau * akq);
          A(q, k) = A(k, q);
        }
        for (int k = 0; k < n; ++k) {
          double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = vkp - s * (vkq + tau * vkp);
          V(k, q) = vkq + s * (vkp - tau * vkq);
        }
      }
    }
  }

  // Sort ascending, carrying columns.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return A(x, x) < A(y, y); });

  EigResult out;
  out.n = n;
  out.values.resize(n);
  out.vectors.resize(static_cast<std::size_t>(n) * n);
  for (int k = 0; k < n; ++k) {
    out.values[k] = A(order[k], order[k]);
    for (int i = 0; i < n; ++i)
      out.vectors[static_cast<std::size_t>(i) * n + k] = V(i, order[k]);
  }
  return out;
}

struct GenEigPair {
  double lambda1 = 0.0;
  std::vector<double> y1;
};

// Second-smallest eigenpair of (K - e) y = lambda K y via the substitution
// Z = K^{1/2} y, which turns it into the standard symmetric problem
// N Z = lambda Z with N = K^{-1/2} (K - e) K^{-1/2}.
//
// The smallest eigenpair is known exactly: lambda = 0, Z0 = K^{1/2} 1.
// That direction is deflated by shifting it up (N + 4 u u^T with u the unit
// Z0; eigenvalues of N never exceed 2), so the smallest eigenpair of the
// shifted matrix is the wanted second-smallest pair and comes out
// orthogonal to Z0 even when the graph is disconnected and the null space
// has dimension > 1. That orthogonality is exactly the y^T K 1 = 0
// constraint of the relaxation.
inline GenEigPair generalized_second_eigvec(const std::vector<double>& degrees,
                                            const SymMatrix& adjacency) {
  const int n = adjacency.order();
  if (n < 2) throw DegenerateGraphError("generalized eigensystem needs >= 2 nodes");
  if (static_cast<int>(degrees.size()) != n)
    throw DomainError("degree vector length mismatch");
  for (int i = 0; i < n; ++i) {
    if (degrees[i] <= 0.0)
      throw DomainError("zero-degree node " + std::to_string(i) +
                        " must be removed before the solve");
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += adjacency.get(i, j);
    if (std::fabs(row - degrees[i]) > 1e-9 * std::max(1.0, degrees[i]))
      throw DomainError("degree " + std::to_string(i) +
                        " disagrees with adjacency row sum");
  }

  std::vector<double> isqrt(n), u(n);
  double unorm = 0.0;
  for (int i = 0; i < n; ++i) {
    isqrt[i] = 1.0 / std::sqrt(degrees[i]);
    u[i] = std::sqrt(degrees[i]);
    unorm += degrees[i];
  }
  unorm = std::sqrt(unorm);
  for (double& x : u) x /= unorm;

  const double shift = 4.0;
  SymMatrix shifted(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double nij = (i == j ? 1.0 - adjacency.get(i, i) / degrees[i]
                           : -adjacency.get(i, j) * isqrt[i] * isqrt[j]);
      shifted.set(i, j, nij + shift * u[i] * u[j]);
    }
  }

  EigResult eig = sym_eig(shifted);
  GenEigPair out;
  out.lambda1 = eig.values[0];
  out.y1.resize(n);
  for (int i = 0; i < n; ++i) out.y1[i] = eig.vec(i, 0) * isqrt[i];
  return out;
}

}  // namespace rcut
