#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rcut/common.hpp"
#include "rcut/image.hpp"
#include "rcut/tensor_file.hpp"
#include "rcut/types.hpp"

// Deterministic reference Vision Transformer. Pre-norm blocks
// (LN -> MHSA -> add, LN -> MLP -> add) with a final layernorm whose output
// is the token matrix the explainability stages consume. Forward captures
// every attention map. No training, no dropout, f32 parameters with f64
// accumulation in the kernels.

namespace rcut {

struct VitConfig {
  int image_size = 32;
  int patch = 8;
  int dim = 24;
  int heads = 4;
  int depth = 3;
  int mlp_ratio = 4;
  int classes = 10;

  int grid() const { return image_size / patch; }
  int patches() const { return grid() * grid(); }  // S
  int head_dim() const { return dim / heads; }
  int mlp_hidden() const { return dim * mlp_ratio; }

  void validate() const {
    if (image_size <= 0 || patch <= 0 || dim <= 0 || heads <= 0 || depth < 0 ||
        mlp_ratio <= 0 || classes <= 0)
      throw ConfigError("vit config: all fields must be positive");
    if (image_size % patch != 0)
      throw ConfigError("vit config: image_size " + std::to_string(image_size) +
                        " not divisible by patch " + std::to_string(patch));
    if (dim % heads != 0)
      throw ConfigError("vit config: dim " + std::to_string(dim) +
                        " not divisible by heads " + std::to_string(heads));
  }
};

// y = x W + b with W stored row-major [in][out].
struct Linear {
  int in = 0;
  int out = 0;
  std::vector<float> w;
  std::vector<float> b;

  Linear() = default;
  Linear(int i, int o)
      : in(i), out(o), w(static_cast<std::size_t>(i) * o, 0.0f), b(o, 0.0f) {}

  void apply(const float* x, float* y) const {
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      for (int i = 0; i < in; ++i)
        acc += static_cast<double>(x[i]) * w[static_cast<std::size_t>(i) * out + o];
      y[o] = static_cast<float>(acc);
    }
  }
};

struct LayerNormParams {
  std::vector<float> scale;
  std::vector<float> shift;

  explicit LayerNormParams(int d = 0) : scale(d, 1.0f), shift(d, 0.0f) {}
};

struct BlockWeights {
  LayerNormParams ln1;
  Linear q, k, v, proj;
  LayerNormParams ln2;
  Linear mlp_fc1, mlp_fc2;
};

struct VitWeights {
  Linear patch_proj;            // [p*p*3, D]
  std::vector<float> cls_token; // [D]
  std::vector<float> pos_embed; // [(S+1) * D]
  std::vector<BlockWeights> blocks;
  LayerNormParams ln_final;
  Linear head;                  // [D, C]
};

struct ForwardTrace {
  ProbVector probs;
  TokenMatrix final_tokens;       // (S+1) x D, output of the final layernorm
  std::vector<float> attentions;  // [L][H][S+1][S+1]
  int layers = 0;
  int heads = 0;
  int tokens = 0;  // S+1

  float attn(int l, int h, int i, int j) const {
    std::size_t t = tokens;
    return attentions[((static_cast<std::size_t>(l) * heads + h) * t + i) * t + j];
  }
};

namespace detail {

constexpr double kLnEps = 1e-6;

inline void layernorm_row(const float* x, int d, const LayerNormParams& p, float* y) {
  double mean = 0.0;
  for (int i = 0; i < d; ++i) mean += x[i];
  mean /= d;
  double var = 0.0;
  for (int i = 0; i < d; ++i) {
    double c = x[i] - mean;
    var += c * c;
  }
  var /= d;
  double inv = 1.0 / std::sqrt(var + kLnEps);
  for (int i = 0; i < d; ++i)
    y[i] = static_cast<float>((x[i] - mean) * inv * p.scale[i] + p.shift[i]);
}

inline void softmax_row(double* x, int n) {
  double hi = x[0];
  for (int i = 1; i < n; ++i) hi = std::max(hi, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - hi);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

inline float gelu(float x) {
  return static_cast<float>(0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))));
}

}  // namespace detail

// Patch tokens from flattened p x p x 3 patches (pixel-major, RGB
// interleaved) through the projection; cls prepended, position embeddings
// added.
inline TokenMatrix patch_embed(const Image& img, const VitConfig& cfg,
                               const VitWeights& w) {
  cfg.validate();
  if (img.height != cfg.image_size || img.width != cfg.image_size)
    throw ConfigError("patch_embed: image " + std::to_string(img.height) + "x" +
                      std::to_string(img.width) + " does not match config size " +
                      std::to_string(cfg.image_size));
  const int p = cfg.patch;
  const int g = cfg.grid();
  const int S = cfg.patches();
  const int D = cfg.dim;
  TokenMatrix tokens(S + 1, D, true);

  for (int d = 0; d < D; ++d)
    tokens.at(0, d) = w.cls_token[d] + w.pos_embed[d];

  std::vector<float> flat(static_cast<std::size_t>(p) * p * 3);
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      int s = gy * g + gx;
      std::size_t k = 0;
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int c = 0; c < 3; ++c)
            flat[k++] = img.at(gy * p + py, gx * p + px, c);
      w.patch_proj.apply(flat.data(), tokens.row(s + 1).data());
      for (int d = 0; d < D; ++d)
        tokens.at(s + 1, d) += w.pos_embed[static_cast<std::size_t>(s + 1) * D + d];
    }
  }
  return tokens;
}

struct MhsaOut {
  TokenMatrix tokens;              // (S+1) x D after output projection
  std::vector<float> attentions;   // [H][S+1][S+1]
};

inline MhsaOut mhsa(const TokenMatrix& x, const BlockWeights& bw,
                    const VitConfig& cfg) {
  const int T = x.rows;
  const int D = cfg.dim;
  const int H = cfg.heads;
  const int Dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(Dh));

  TokenMatrix q(T, D, false), k(T, D, false), v(T, D, false);
  for (int t = 0; t < T; ++t) {
    bw.q.apply(x.row(t).data(), q.row(t).data());
    bw.k.apply(x.row(t).data(), k.row(t).data());
    bw.v.apply(x.row(t).data(), v.row(t).data());
  }

  MhsaOut out;
  out.attentions.assign(static_cast<std::size_t>(H) * T * T, 0.0f);
  TokenMatrix concat(T, D, false);
  std::vector<double> logits(T);
  for (int h = 0; h < H; ++h) {
    const int off = h * Dh;
    for (int i = 0; i < T; ++i) {
      for (int j = 0; j < T; ++j) {
        double dot = 0.0;
        for (int d = 0; d < Dh; ++d)
          dot += static_cast<double>(q.at(i, off + d)) * k.at(j, off + d);
        logits[j] = dot * scale;
      }
      detail::softmax_row(logits.data(), T);
      float* arow =
          out.attentions.data() + (static_cast<std::size_t>(h) * T + i) * T;
      for (int j = 0; j < T; ++j) arow[j] = static_cast<float>(logits[j]);
      for (int d = 0; d < Dh; ++d) {
        double acc = 0.0;
        for (int j = 0; j < T; ++j)
          acc += logits[j] * static_cast<double>(v.at(j, off + d));
        concat.at(i, off + d) = static_cast<float>(acc);
      }
    }
  }

  out.tokens = TokenMatrix(T, D, x.has_cls);
  for (int t = 0; t < T; ++t)
    bw.proj.apply(concat.row(t).data(), out.tokens.row(t).data());
  return out;
}

inline ForwardTrace forward(const Image& img, const VitConfig& cfg,
                            const VitWeights& w) {
  TokenMatrix x = patch_embed(img, cfg, w);
  const int T = x.rows;
  const int D = cfg.dim;

  ForwardTrace trace;
  trace.layers = cfg.depth;
  trace.heads = cfg.heads;
  trace.tokens = T;
  trace.attentions.reserve(static_cast<std::size_t>(cfg.depth) * cfg.heads * T * T);

  TokenMatrix normed(T, D, true);
  std::vector<float> hidden(cfg.mlp_hidden());
  std::vector<float> mlp_out(D);
  for (int l = 0; l < cfg.depth; ++l) {
    const BlockWeights& bw = w.blocks[l];
    for (int t = 0; t < T; ++t)
      detail::layernorm_row(x.row(t).data(), D, bw.ln1, normed.row(t).data());
    MhsaOut att = mhsa(normed, bw, cfg);
    trace.attentions.insert(trace.attentions.end(), att.attentions.begin(),
                            att.attentions.end());
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += att.tokens.data[i];

    for (int t = 0; t < T; ++t) {
      detail::layernorm_row(x.row(t).data(), D, bw.ln2, normed.row(t).data());
      bw.mlp_fc1.apply(normed.row(t).data(), hidden.data());
      for (auto& hv : hidden) hv = detail::gelu(hv);
      bw.mlp_fc2.apply(hidden.data(), mlp_out.data());
      for (int d = 0; d < D; ++d) x.at(t, d) += mlp_out[d];
    }
    for (float v : x.data)
      if (std::isnan(v))
        throw NumericError("NaN activation after block " + std::to_string(l));
  }

  trace.final_tokens = TokenMatrix(T, D, true);
  for (int t = 0; t < T; ++t)
    detail::layernorm_row(x.row(t).data(), D, w.ln_final,
                          trace.final_tokens.row(t).data());

  std::vector<float> logits_f(cfg.classes);
  w.head.apply(trace.final_tokens.row(0).data(), logits_f.data());
  std::vector<double> logits(logits_f.begin(), logits_f.end());
  detail::softmax_row(logits.data(), cfg.classes);
  std::vector<float> probs(cfg.classes);
  for (int c = 0; c < cfg.classes; ++c) probs[c] = static_cast<float>(logits[c]);
  trace.probs = ProbVector::checked(std::move(probs));
  return trace;
}

// Seed-deterministic weights: every tensor drawn in a fixed canonical order
// from one NormalStream (sigma 0.02); layernorm params start at identity.
inline VitWeights init_random(const VitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NormalStream rng(seed);
  const double s = 0.02;
  auto fill = [&](std::vector<float>& v) {
    for (auto& x : v) x = rng.next_scaled(s);
  };
  auto fill_linear = [&](Linear& l, int in, int out) {
    l = Linear(in, out);
    fill(l.w);
    fill(l.b);
  };

  VitWeights w;
  fill_linear(w.patch_proj, cfg.patch * cfg.patch * 3, cfg.dim);
  w.cls_token.resize(cfg.dim);
  fill(w.cls_token);
  w.pos_embed.resize(static_cast<std::size_t>(cfg.patches() + 1) * cfg.dim);
  fill(w.pos_embed);
  w.blocks.resize(cfg.depth);
  for (auto& b : w.blocks) {
    b.ln1 = LayerNormParams(cfg.dim);
    fill_linear(b.q, cfg.dim, cfg.dim);
    fill_linear(b.k, cfg.dim, cfg.dim);
    fill_linear(b.v, cfg.dim, cfg.dim);
    fill_linear(b.proj, cfg.dim, cfg.dim);
    b.ln2 = LayerNormParams(cfg.dim);
    fill_linear(b.mlp_fc1, cfg.dim, cfg.mlp_hidden());
    fill_linear(b.mlp_fc2, cfg.mlp_hidden(), cfg.dim);
  }
  w.ln_final = LayerNormParams(cfg.dim);
  fill_linear(w.head, cfg.dim, cfg.classes);
  return w;
}

// --- weight persistence -----------------------------------------------------
// Canonical TensorFile entry names, e.g. "block0.q.weight". The "config"
// entry pins the hyperparameters so a weights file is self-describing.

namespace detail {

inline void add_linear(TensorFile& tf, const std::string& base, const Linear& l) {
  tf.add(base + ".weight",
         {static_cast<std::uint32_t>(l.in), static_cast<std::uint32_t>(l.out)}, l.w);
  tf.add(base + ".bias", {static_cast<std::uint32_t>(l.out)}, l.b);
}

inline Linear read_linear(const TensorFile& tf, const std::string& base) {
  const auto& we = tf.at(base + ".weight");
  const auto& be = tf.at(base + ".bias");
  if (we.dims.size() != 2 || be.dims.size() != 1 || we.dims[1] != be.dims[0])
    throw FormatError("weights: bad shape for " + base);
  Linear l(static_cast<int>(we.dims[0]), static_cast<int>(we.dims[1]));
  l.w = we.data;
  l.b = be.data;
  return l;
}

inline void add_ln(TensorFile& tf, const std::string& base,
                   const LayerNormParams& p) {
  tf.add(base + ".scale", {static_cast<std::uint32_t>(p.scale.size())}, p.scale);
  tf.add(base + ".shift", {static_cast<std::uint32_t>(p.shift.size())}, p.shift);
}

inline LayerNormParams read_ln(const TensorFile& tf, const std::string& base, int d) {
  LayerNormParams p(d);
  p.scale = tf.at(base + ".scale").data;
  p.shift = tf.at(base + ".shift").data;
  if (static_cast<int>(p.scale.size()) != d || static_cast<int>(p.shift.size()) != d)
    throw FormatError("weights: bad layernorm size for " + base);
  return p;
}

}  // namespace detail

inline TensorFile weights_to_tensorfile(const VitConfig& cfg, const VitWeights& w) {
  TensorFile tf;
  tf.add("config", {7},
         {static_cast<float>(cfg.image_size), static_cast<float>(cfg.patch),
          static_cast<float>(cfg.dim), static_cast<float>(cfg.heads),
          static_cast<float>(cfg.depth), static_cast<float>(cfg.mlp_ratio),
          static_cast<float>(cfg.classes)});
  detail::add_linear(tf, "patch_embed", w.patch_proj);
  tf.add("cls_token", {1, static_cast<std::uint32_t>(cfg.dim)}, w.cls_token);
  tf.add("pos_embed",
         {static_cast<std::uint32_t>(cfg.patches() + 1),
          static_cast<std::uint32_t>(cfg.dim)},
         w.pos_embed);
  for (int i = 0; i < cfg.depth; ++i) {
    std::string base = "block" + std::to_string(i);
    const BlockWeights& b = w.blocks[i];
    detail::add_ln(tf, base + ".ln1", b.ln1);
    detail::add_linear(tf, base + ".q", b.q);
    detail::add_linear(tf, base + ".k", b.k);
    detail::add_linear(tf, base + ".v", b.v);
    detail::add_linear(tf, base + ".proj", b.proj);
    detail::add_ln(tf, base + ".ln2", b.ln2);
    detail::add_linear(tf, base + ".mlp.fc1", b.mlp_fc1);
    detail::add_linear(tf, base + ".mlp.fc2", b.mlp_fc2);
  }
  detail::add_ln(tf, "ln_final", w.ln_final);
  detail::add_linear(tf, "head", w.head);
  return tf;
}

inline std::pair<VitConfig, VitWeights> weights_from_tensorfile(const TensorFile& tf) {
  const auto& ce = tf.at("config");
  if (ce.data.size() != 7) throw FormatError("weights: config entry must have 7 values");
  VitConfig cfg;
  cfg.image_size = static_cast<int>(ce.data[0]);
  cfg.patch = static_cast<int>(ce.data[1]);
  cfg.dim = static_cast<int>(ce.data[2]);
  cfg.heads = static_cast<int>(ce.data[3]);
  cfg.depth = static_cast<int>(ce.data[4]);
  cfg.mlp_ratio = static_cast<int>(ce.data[5]);
  cfg.classes = static_cast<int>(ce.data[6]);
  cfg.validate();

  VitWeights w;
  w.patch_proj = detail::read_linear(tf, "patch_embed");
  w.cls_token = tf.at("cls_token").data;
  w.pos_embed = tf.at("pos_embed").data;
  if (static_cast<int>(w.cls_token.size()) != cfg.dim ||
      w.pos_embed.size() != static_cast<std::size_t>(cfg.patches() + 1) * cfg.dim)
    throw FormatError("weights: embedding shapes disagree with config");
  w.blocks.resize(cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    std::string base = "block" + std::to_string(i);
    BlockWeights& b = w.blocks[i];
    b.ln1 = detail::read_ln(tf, base + ".ln1", cfg.dim);
    b.q = detail::read_linear(tf, base + ".q");
    b.k = detail::read_linear(tf, base + ".k");
    b.v = detail::read_linear(tf, base + ".v");
    b.proj = detail::read_linear(tf, base + ".proj");
    b.ln2 = detail::read_ln(tf, base + ".ln2", cfg.dim);
    b.mlp_fc1 = detail::read_linear(tf, base + ".mlp.fc1");
    b.mlp_fc2 = detail::read_linear(tf, base + ".mlp.fc2");
  }
  w.ln_final = detail::read_ln(tf, "ln_final", cfg.dim);
  w.head = detail::read_linear(tf, "head");
  if (w.head.in != cfg.dim || w.head.out != cfg.classes)
    throw FormatError("weights: head shape disagrees with config");
  return {cfg, w};
}

}  // namespace rcut
