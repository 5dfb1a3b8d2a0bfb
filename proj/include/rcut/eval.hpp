#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rcut/backend.hpp"
#include "rcut/pipeline.hpp"

// The three quantitative protocols (point game, weak-localization IoU,
// MRFP/LRFP perturbation curves), the attention baselines, and dataset
// runs with aggregate reporting.

namespace rcut {

// Half-open pixel box: x0 <= x < x1, y0 <= y < y1.
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  long long area() const {
    return static_cast<long long>(std::max(0, x1 - x0)) * std::max(0, y1 - y0);
  }
  bool contains(int x, int y) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }
};

struct Annotation {
  std::string image;
  int cls = 0;
  std::vector<BBox> boxes;
};

// One JSON object per line: {"image": path, "class": c, "boxes": [[x0,y0,x1,y1],...]}
// in resized-image pixel coordinates.
inline std::vector<Annotation> parse_annotations(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open annotations: " + path);
  std::vector<Annotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("annotations line " + std::to_string(lineno) + ": " +
                        e.what());
    }
    Annotation a;
    a.image = j.at("image").get<std::string>();
    a.cls = j.at("class").get<int>();
    for (const auto& b : j.at("boxes")) {
      if (b.size() != 4)
        throw FormatError("annotations line " + std::to_string(lineno) +
                          ": box needs 4 coordinates");
      BBox box{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
      if (box.x0 >= box.x1 || box.y0 >= box.y1)
        throw FormatError("annotations line " + std::to_string(lineno) +
                          ": empty box");
      a.boxes.push_back(box);
    }
    if (a.boxes.empty())
      throw FormatError("annotations line " + std::to_string(lineno) +
                        ": at least one box required");
    out.push_back(std::move(a));
  }
  return out;
}

// Hit iff the argmax pixel lies inside any GT box. Ties break to the
// smallest (row, col), i.e. the first maximum in row-major order.
inline bool point_game(const GridMap& heatmap, const std::vector<BBox>& boxes) {
  if (boxes.empty()) throw DomainError("point_game: no ground-truth boxes");
  int best_r = 0, best_c = 0;
  float best = heatmap.at(0, 0);
  for (int r = 0; r < heatmap.gh; ++r)
    for (int c = 0; c < heatmap.gw; ++c)
      if (heatmap.at(r, c) > best) {
        best = heatmap.at(r, c);
        best_r = r;
        best_c = c;
      }
  for (const BBox& b : boxes)
    if (b.contains(best_c, best_r)) return true;
  return false;
}

// Tight hull of {pixels >= thres}; empty set maps to the zero-area box at
// the origin.
inline BBox bbox_from_heatmap(const GridMap& heatmap, double thres = 0.2) {
  int min_r = heatmap.gh, min_c = heatmap.gw, max_r = -1, max_c = -1;
  for (int r = 0; r < heatmap.gh; ++r)
    for (int c = 0; c < heatmap.gw; ++c)
      if (heatmap.at(r, c) >= thres) {
        min_r = std::min(min_r, r);
        min_c = std::min(min_c, c);
        max_r = std::max(max_r, r);
        max_c = std::max(max_c, c);
      }
  if (max_r < 0) return {0, 0, 0, 0};
  return {min_c, min_r, max_c + 1, max_r + 1};
}

inline double iou(const BBox& a, const BBox& b) {
  int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  long long inter = static_cast<long long>(std::max(0, ix1 - ix0)) *
                    std::max(0, iy1 - iy0);
  long long uni = a.area() + b.area() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

enum class MaskOrder { MostFirst, LeastFirst };

struct PerturbationCurve {
  std::array<double, 9> deltas{};  // fractions 10%..90%
  double mean = 0.0;
};

// Rank pixels by heatmap value (descending for most-first, ascending for
// least-first; ties by row-major position), zero out the top q% in all
// channels, and record the drop of the target-class probability.
// q sweeps 10..90 step 10; the masked count is floor(q*N/100).
inline PerturbationCurve perturbation_curve(Backend& backend, const Image& x,
                                            const GridMap& heatmap,
                                            int target_class, MaskOrder order) {
  if (heatmap.gh != x.height || heatmap.gw != x.width)
    throw ConfigError("perturbation_curve: heatmap must be full resolution");
  const std::size_t n = heatmap.size();
  std::vector<std::uint32_t> rank(n);
  std::iota(rank.begin(), rank.end(), 0u);
  if (order == MaskOrder::MostFirst) {
    std::sort(rank.begin(), rank.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (heatmap.v[a] != heatmap.v[b]) return heatmap.v[a] > heatmap.v[b];
      return a < b;
    });
  } else {
    std::sort(rank.begin(), rank.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (heatmap.v[a] != heatmap.v[b]) return heatmap.v[a] < heatmap.v[b];
      return a < b;
    });
  }

  double base = backend.forward(x).p[target_class];
  PerturbationCurve out;
  double sum = 0.0;
  for (int qi = 0; qi < 9; ++qi) {
    int q = 10 * (qi + 1);
    std::size_t k = n * static_cast<std::size_t>(q) / 100;
    Image masked = x;
    for (std::size_t i = 0; i < k; ++i) {
      std::uint32_t px = rank[i];
      int r = static_cast<int>(px) / heatmap.gw;
      int c = static_cast<int>(px) % heatmap.gw;
      for (int ch = 0; ch < 3; ++ch) masked.at(r, c, ch) = 0.0f;
    }
    double p;
    try {
      p = backend.forward(masked).p[target_class];
    } catch (const std::exception& e) {
      throw BackendError("perturbation forward failed at fraction " +
                         std::to_string(q) + "%: " + e.what());
    }
    out.deltas[qi] = base - p;
    sum += out.deltas[qi];
  }
  out.mean = sum / 9.0;
  return out;
}

// Mean over heads of the last-layer cls-token attention row, patch entries
// only, reshaped, min-max normalized, upsampled.
inline GridMap baseline_raw_attention(const ForwardTrace& trace, int patch) {
  if (trace.layers < 1)
    throw BackendError("raw-attention baseline: no attention maps captured");
  const int t = trace.tokens;
  const int s = t - 1;
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s))));
  GridMap grid(g, g);
  for (int j = 0; j < s; ++j) {
    double acc = 0.0;
    for (int h = 0; h < trace.heads; ++h)
      acc += trace.attn(trace.layers - 1, h, 0, j + 1);
    grid.v[j] = static_cast<float>(acc / trace.heads);
  }
  minmax_normalize(std::span<float>(grid.v));
  return upsample_nearest(grid, patch);
}

// Attention rollout: per layer the head-mean map, mixed with identity
// (0.5 A + 0.5 I), rows renormalized, accumulated across layers; the cls
// row of the product attributes the output to input tokens.
inline GridMap baseline_rollout(const ForwardTrace& trace, int patch) {
  if (trace.layers < 1)
    throw BackendError("rollout baseline: no attention maps captured");
  const int t = trace.tokens;
  const int s = t - 1;
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s))));

  std::vector<double> rollout(static_cast<std::size_t>(t) * t, 0.0);
  for (int i = 0; i < t; ++i) rollout[static_cast<std::size_t>(i) * t + i] = 1.0;

  std::vector<double> layer(static_cast<std::size_t>(t) * t);
  std::vector<double> next(static_cast<std::size_t>(t) * t);
  for (int l = 0; l < trace.layers; ++l) {
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) {
        double acc = 0.0;
        for (int h = 0; h < trace.heads; ++h) acc += trace.attn(l, h, i, j);
        layer[static_cast<std::size_t>(i) * t + j] =
            0.5 * (acc / trace.heads) + (i == j ? 0.5 : 0.0);
      }
    // next = layer * rollout, then row-renormalize
    for (int i = 0; i < t; ++i) {
      double row_sum = 0.0;
      for (int j = 0; j < t; ++j) {
        double acc = 0.0;
        for (int k = 0; k < t; ++k)
          acc += layer[static_cast<std::size_t>(i) * t + k] *
                 rollout[static_cast<std::size_t>(k) * t + j];
        next[static_cast<std::size_t>(i) * t + j] = acc;
        row_sum += acc;
      }
      for (int j = 0; j < t; ++j)
        next[static_cast<std::size_t>(i) * t + j] /= row_sum;
    }
    std::swap(rollout, next);
  }

  GridMap grid(g, g);
  for (int j = 0; j < s; ++j)
    grid.v[j] = static_cast<float>(rollout[static_cast<std::size_t>(0) * t + j + 1]);
  minmax_normalize(std::span<float>(grid.v));
  return upsample_nearest(grid, patch);
}

enum class Method { Rcut, Rout, Cut, RawAttention, Rollout };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Rcut: return "rcut";
    case Method::Rout: return "rout";
    case Method::Cut: return "cut";
    case Method::RawAttention: return "raw-attention";
    case Method::Rollout: return "rollout";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "rcut") return Method::Rcut;
  if (s == "rout") return Method::Rout;
  if (s == "cut") return Method::Cut;
  if (s == "raw-attention") return Method::RawAttention;
  if (s == "rollout") return Method::Rollout;
  throw ConfigError("unknown method '" + s + "'");
}

struct EvalRecord {
  std::string image;
  int predicted = -1;
  int target = -1;
  bool hit = false;
  double iou = 0.0;
  double mrfp = 0.0;
  double lrfp = 0.0;
  bool degenerate = false;

  nlohmann::json to_json() const {
    return {{"image", image},   {"predicted", predicted}, {"target", target},
            {"hit", hit},       {"iou", iou},             {"mrfp", mrfp},
            {"lrfp", lrfp},     {"degenerate", degenerate}};
  }
};

enum class EvalTarget { Pre, Gt, FixedClass, Full };

struct RunOptions {
  Method method = Method::Rcut;
  EvalTarget target = EvalTarget::Pre;
  int target_class = -1;  // for FixedClass
  bool filter_mispredicted = false;
  double phi = 0.05;
  double thres = 0.2;
  int workers = 1;
  std::string records_path;  // JSON-lines output, empty to skip
};

struct Aggregate {
  int total = 0;       // annotation entries
  int evaluated = 0;   // records produced
  int aggregated = 0;  // included in the means
  int failures = 0;
  int degenerate = 0;
  double point_game = 0.0;  // percent
  double miou = 0.0;
  double mrfp = 0.0;
  double lrfp = 0.0;

  nlohmann::json to_json() const {
    return {{"total", total},           {"evaluated", evaluated},
            {"aggregated", aggregated}, {"failures", failures},
            {"degenerate", degenerate}, {"point_game", point_game},
            {"miou", miou},             {"mrfp", mrfp},
            {"lrfp", lrfp}};
  }
};

inline GridMap method_heatmap(Backend& backend, const Image& img,
                              const RunOptions& opt, const Annotation& ann,
                              EvalRecord& rec, int predicted) {
  if (opt.method == Method::RawAttention || opt.method == Method::Rollout) {
    auto trace = backend.trace(img);
    if (!trace)
      throw BackendError(std::string(method_name(opt.method)) +
                         " baseline needs attention capture, which this "
                         "backend does not provide");
    int patch = backend.meta().patch;
    rec.target = predicted;
    return opt.method == Method::RawAttention
               ? baseline_raw_attention(*trace, patch)
               : baseline_rollout(*trace, patch);
  }

  TargetSpec spec;
  switch (opt.target) {
    case EvalTarget::Pre: spec = TargetSpec::predicted(); break;
    case EvalTarget::Gt: spec = TargetSpec::class_conditioned(ann.cls); break;
    case EvalTarget::FixedClass:
      spec = TargetSpec::class_conditioned(opt.target_class);
      break;
    case EvalTarget::Full: spec = TargetSpec::full_output(); break;
  }
  Variant variant = opt.method == Method::Rcut   ? Variant::Rcut
                    : opt.method == Method::Rout ? Variant::Rout
                                                 : Variant::Cut;
  ExplainResult res = explain(backend, img, spec, variant, opt.phi, opt.workers);
  rec.target = res.target_class_used;
  rec.degenerate = res.degenerate;
  return res.heatmap;
}

// Per-image records plus aggregate means. Per-image failures are logged
// and counted, never fatal. With filter_mispredicted, images whose
// predicted class differs from the annotation class are excluded from the
// aggregation (they still get records).
inline Aggregate run_dataset(Backend& backend, const std::string& annotations_path,
                             const RunOptions& opt,
                             std::vector<EvalRecord>* records_out = nullptr) {
  std::vector<Annotation> anns = parse_annotations(annotations_path);
  BackendMeta meta = backend.meta();

  Aggregate agg;
  agg.total = static_cast<int>(anns.size());
  std::vector<EvalRecord> records;

  for (const Annotation& ann : anns) {
    try {
      for (const BBox& b : ann.boxes)
        if (b.x0 < 0 || b.y0 < 0 || b.x1 > meta.image_size ||
            b.y1 > meta.image_size)
          throw FormatError("box outside the " + std::to_string(meta.image_size) +
                            "px image bounds");
      Image img = load_image(ann.image, meta.image_size);
      EvalRecord rec;
      rec.image = ann.image;
      ProbVector probs = backend.forward(img);
      rec.predicted = probs.argmax();
      GridMap heat = method_heatmap(backend, img, opt, ann, rec, rec.predicted);

      rec.hit = point_game(heat, ann.boxes);
      BBox pred_box = bbox_from_heatmap(heat, opt.thres);
      double best = 0.0;
      for (const BBox& b : ann.boxes) best = std::max(best, iou(pred_box, b));
      rec.iou = best;
      rec.mrfp = perturbation_curve(backend, img, heat, rec.target,
                                    MaskOrder::MostFirst)
                     .mean;
      rec.lrfp = perturbation_curve(backend, img, heat, rec.target,
                                    MaskOrder::LeastFirst)
                     .mean;
      records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      ++agg.failures;
      std::cerr << "eval: " << ann.image << " failed: " << e.what() << "\n";
    }
  }

  std::sort(records.begin(), records.end(),
            [](const EvalRecord& a, const EvalRecord& b) { return a.image < b.image; });

  agg.evaluated = static_cast<int>(records.size());
  int hits = 0;
  double iou_sum = 0.0, mrfp_sum = 0.0, lrfp_sum = 0.0;
  // annotation class by image for the misprediction filter
  std::unordered_map<std::string, int> gt_class;
  for (const auto& a : anns) gt_class[a.image] = a.cls;
  for (const EvalRecord& r : records) {
    if (r.degenerate) ++agg.degenerate;
    if (opt.filter_mispredicted && r.predicted != gt_class[r.image]) continue;
    ++agg.aggregated;
    hits += r.hit;
    iou_sum += r.iou;
    mrfp_sum += r.mrfp;
    lrfp_sum += r.lrfp;
  }
  if (agg.aggregated > 0) {
    agg.point_game = 100.0 * hits / agg.aggregated;
    agg.miou = iou_sum / agg.aggregated;
    agg.mrfp = mrfp_sum / agg.aggregated;
    agg.lrfp = lrfp_sum / agg.aggregated;
  }

  if (!opt.records_path.empty()) {
    std::ofstream f(opt.records_path);
    if (!f) throw IoError("cannot write records: " + opt.records_path);
    for (const EvalRecord& r : records) f << r.to_json().dump() << "\n";
  }
  if (records_out) *records_out = std::move(records);
  return agg;
}

}  // namespace rcut
