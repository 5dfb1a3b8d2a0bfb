#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rcut/common.hpp"

namespace rcut {

// Transformer token matrix, row-major. When has_cls is set row 0 is the
// cls token and rows-1 equals the patch count S.
struct TokenMatrix {
  int rows = 0;
  int cols = 0;
  bool has_cls = false;
  std::vector<float> data;

  TokenMatrix() = default;
  TokenMatrix(int r, int c, bool cls)
      : rows(r), cols(c), has_cls(cls), data(static_cast<std::size_t>(r) * c, 0.0f) {}

  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  std::span<const float> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }
  std::span<float> row(int r) {
    return {data.data() + static_cast<std::size_t>(r) * cols,
            static_cast<std::size_t>(cols)};
  }

  // Drops row 0 (the cls token); result rows = S.
  TokenMatrix strip_cls() const {
    if (!has_cls) throw ConfigError("strip_cls: matrix has no cls row");
    TokenMatrix out(rows - 1, cols, false);
    std::copy(data.begin() + cols, data.end(), out.data.begin());
    return out;
  }
};

// Class-probability vector. Construction enforces nonnegativity and a sum
// of 1 within 1e-5.
struct ProbVector {
  std::vector<float> p;

  ProbVector() = default;

  static ProbVector checked(std::vector<float> v) {
    double sum = 0.0;
    for (float x : v) {
      if (!(x >= 0.0f))
        throw DomainError("probability vector: negative entry " +
                          std::to_string(x));
      sum += x;
    }
    if (std::fabs(sum - 1.0) > 1e-5)
      throw DomainError("probability vector: sum " + std::to_string(sum) +
                        " deviates from 1 by more than 1e-5");
    ProbVector out;
    out.p = std::move(v);
    return out;
  }

  int size() const { return static_cast<int>(p.size()); }

  int argmax() const {
    int best = 0;
    for (int i = 1; i < size(); ++i)
      if (p[i] > p[best]) best = i;
    return best;
  }
};

// Single-channel float map on a grid. Used both at patch-grid resolution
// (A/p x B/p) and at full image resolution.
struct GridMap {
  int gh = 0;
  int gw = 0;
  std::vector<float> v;

  GridMap() = default;
  GridMap(int h, int w) : gh(h), gw(w), v(static_cast<std::size_t>(h) * w, 0.0f) {}

  float& at(int r, int c) { return v[static_cast<std::size_t>(r) * gw + c]; }
  float at(int r, int c) const { return v[static_cast<std::size_t>(r) * gw + c]; }
  std::size_t size() const { return v.size(); }
};

}  // namespace rcut
