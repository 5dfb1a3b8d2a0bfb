#pragma once

#include <string>
#include <thread>
#include <vector>

#include "rcut/backend.hpp"
#include "rcut/image.hpp"
#include "rcut/numerics.hpp"
#include "rcut/types.hpp"

// Stage 1, "Relationship Weighted Out": each embedding channel of the final
// patch tokens becomes an activation map; the input is perturbed through
// every map; each channel is scored by how similar the classifier output on
// its perturbation stays to a reference vector; tokens are re-weighted
// channel-wise by those scores.

namespace rcut {

struct ActivationMaps {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<GridMap> maps;  // exactly D, values in [0,1]
};

struct ChannelWeights {
  std::vector<float> w;  // length D
};

// Which output vector the perturbed outputs are compared against.
struct TargetSpec {
  enum class Mode { Predicted, ClassConditioned, FullOutput };
  Mode mode = Mode::ClassConditioned;
  int class_id = -1;  // required for ClassConditioned

  static TargetSpec predicted() { return {Mode::Predicted, -1}; }
  static TargetSpec class_conditioned(int c) { return {Mode::ClassConditioned, c}; }
  static TargetSpec full_output() { return {Mode::FullOutput, -1}; }
};

// Per-channel reshape + min-max. Each of the D maps is normalized
// independently so every heat map spans the full [0,1] range; a constant
// channel becomes an all-zero map.
inline ActivationMaps build_activation_maps(const TokenMatrix& tokens_s,
                                            int grid_h, int grid_w) {
  if (tokens_s.has_cls)
    throw ConfigError("build_activation_maps: strip the cls row first");
  if (tokens_s.rows != grid_h * grid_w)
    throw ConfigError("build_activation_maps: " + std::to_string(tokens_s.rows) +
                      " tokens do not fill a " + std::to_string(grid_h) + "x" +
                      std::to_string(grid_w) + " grid");
  ActivationMaps out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  out.maps.reserve(tokens_s.cols);
  for (int d = 0; d < tokens_s.cols; ++d) {
    GridMap g(grid_h, grid_w);
    for (int s = 0; s < tokens_s.rows; ++s) g.v[s] = tokens_s.at(s, d);
    minmax_normalize(std::span<float>(g.v));
    out.maps.push_back(std::move(g));
  }
  return out;
}

// P = up(map) .* X across all three channels.
inline Image perturb(const Image& x, const GridMap& map, int patch) {
  if (map.gh * patch != x.height || map.gw * patch != x.width)
    throw ConfigError("perturb: map " + std::to_string(map.gh) + "x" +
                      std::to_string(map.gw) + " at patch " +
                      std::to_string(patch) + " does not cover image " +
                      std::to_string(x.height) + "x" + std::to_string(x.width));
  Image out(x.height, x.width);
  for (int y = 0; y < x.height; ++y) {
    for (int px = 0; px < x.width; ++px) {
      float m = map.at(y / patch, px / patch);
      for (int c = 0; c < 3; ++c) out.at(y, px, c) = m * x.at(y, px, c);
    }
  }
  return out;
}

namespace detail {

inline std::vector<float> reference_vector(Backend& backend, const Image& x,
                                           const TargetSpec& target,
                                           int classes) {
  switch (target.mode) {
    case TargetSpec::Mode::FullOutput:
      return backend.forward(x).p;
    case TargetSpec::Mode::Predicted: {
      std::vector<float> r(classes, 0.0f);
      r[backend.forward(x).argmax()] = 1.0f;
      return r;
    }
    case TargetSpec::Mode::ClassConditioned: {
      if (target.class_id < 0 || target.class_id >= classes)
        throw ConfigError("target class " + std::to_string(target.class_id) +
                          " out of range for " + std::to_string(classes) +
                          " classes");
      std::vector<float> r(classes, 0.0f);
      r[target.class_id] = 1.0f;
      return r;
    }
  }
  throw ConfigError("unreachable target mode");
}

}  // namespace detail

// w_d = cosine(ViT(P_d), r). Channels are dispatched over up to `workers`
// threads when the backend allows it; results land in a pre-sized vector
// indexed by channel, so the weight vector is bitwise identical for any
// worker count.
inline ChannelWeights compute_weights(Backend& backend, const Image& x,
                                      const ActivationMaps& maps,
                                      const TargetSpec& target, int workers = 1) {
  BackendMeta meta = backend.meta();
  if (x.height != meta.image_size || x.width != meta.image_size)
    throw BackendError("compute_weights: image does not match backend meta");
  const int d_total = static_cast<int>(maps.maps.size());
  std::vector<float> reference =
      detail::reference_vector(backend, x, target, meta.classes);

  ChannelWeights out;
  out.w.assign(d_total, 0.0f);
  if (!backend.concurrent_safe()) workers = 1;
  workers = std::max(1, std::min(workers, d_total));

  std::vector<std::string> failures(d_total);
  auto run_range = [&](int begin, int end) {
    for (int d = begin; d < end; ++d) {
      try {
        Image p = perturb(x, maps.maps[d], meta.patch);
        ProbVector probs = backend.forward(p);
        out.w[d] = static_cast<float>(cosine(probs.p, reference));
      } catch (const std::exception& e) {
        failures[d] = e.what();
      }
    }
  };

  if (workers == 1) {
    run_range(0, d_total);
  } else {
    std::vector<std::thread> threads;
    int chunk = (d_total + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
      int begin = t * chunk;
      int end = std::min(d_total, begin + chunk);
      if (begin < end) threads.emplace_back(run_range, begin, end);
    }
    for (auto& th : threads) th.join();
  }

  for (int d = 0; d < d_total; ++d)
    if (!failures[d].empty())
      throw BackendError("perturbation forward failed on channel " +
                         std::to_string(d) + ": " + failures[d]);
  return out;
}

// t^c[s][d] = w[d] * tokens[s][d].
inline TokenMatrix weight_tokens(const TokenMatrix& tokens_s,
                                 const ChannelWeights& weights) {
  if (tokens_s.has_cls)
    throw ConfigError("weight_tokens: strip the cls row first");
  if (static_cast<int>(weights.w.size()) != tokens_s.cols)
    throw ConfigError("weight_tokens: weight length " +
                      std::to_string(weights.w.size()) + " vs " +
                      std::to_string(tokens_s.cols) + " channels");
  TokenMatrix out(tokens_s.rows, tokens_s.cols, false);
  for (int s = 0; s < tokens_s.rows; ++s)
    for (int d = 0; d < tokens_s.cols; ++d)
      out.at(s, d) = weights.w[d] * tokens_s.at(s, d);
  return out;
}

// Ablation map: per-token sum over channels, reshaped, min-max normalized.
inline GridMap rout_only_map(const TokenMatrix& tc, int grid_h, int grid_w) {
  if (tc.rows != grid_h * grid_w)
    throw ConfigError("rout_only_map: token count does not fill the grid");
  GridMap g(grid_h, grid_w);
  for (int s = 0; s < tc.rows; ++s) {
    double sum = 0.0;
    for (int d = 0; d < tc.cols; ++d) sum += tc.at(s, d);
    g.v[s] = static_cast<float>(sum);
  }
  minmax_normalize(std::span<float>(g.v));
  return g;
}

}  // namespace rcut
