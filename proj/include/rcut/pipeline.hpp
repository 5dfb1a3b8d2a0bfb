#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcut/backend.hpp"
#include "rcut/cut.hpp"
#include "rcut/rout.hpp"

// End-to-end orchestration: image -> backend tokens -> R-Out -> Cut ->
// rendered artifacts. No hidden state; the composed stages equal calling
// the stage operations by hand.

namespace rcut {

enum class Variant { Rcut, Rout, Cut };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Rcut: return "rcut";
    case Variant::Rout: return "rout";
    case Variant::Cut: return "cut";
  }
  return "?";
}

inline const char* target_mode_name(const TargetSpec& t) {
  switch (t.mode) {
    case TargetSpec::Mode::Predicted: return "predicted";
    case TargetSpec::Mode::ClassConditioned: return "class";
    case TargetSpec::Mode::FullOutput: return "full";
  }
  return "?";
}

struct ExplainResult {
  std::string image_id;
  Variant variant = Variant::Rcut;
  TargetSpec target;
  int target_class_used = -1;  // class the reference vector conditioned on
  int predicted = -1;
  float predicted_prob = 0.0f;
  std::vector<float> w;     // channel weights (all ones for the cut variant)
  std::vector<float> y1c;   // length S, zeros when no cut stage ran
  GridMap heatmap;          // full resolution, [0,1]
  Overlay overlay;
  bool degenerate = false;
  double wall_ms = 0.0;
};

inline std::string explain_id(const Image& x, Variant variant,
                              const TargetSpec& target, double phi) {
  std::uint64_t h = image_hash(x);
  int v = static_cast<int>(variant);
  int m = static_cast<int>(target.mode);
  h = fnv1a64(&v, sizeof(v), h);
  h = fnv1a64(&m, sizeof(m), h);
  h = fnv1a64(&target.class_id, sizeof(target.class_id), h);
  h = fnv1a64(&phi, sizeof(phi), h);
  return hash_hex(h);
}

inline ExplainResult explain(Backend& backend, const Image& x,
                             const TargetSpec& target, Variant variant,
                             double phi = 0.05, int workers = 1) {
  auto t0 = std::chrono::steady_clock::now();
  BackendMeta meta = backend.meta();
  if (x.height != meta.image_size || x.width != meta.image_size)
    throw BackendError("explain: image does not match backend meta");
  const int gh = meta.image_size / meta.patch;
  const int gw = gh;

  ExplainResult res;
  res.image_id = explain_id(x, variant, target, phi);
  res.variant = variant;
  res.target = target;

  ProbVector probs = backend.forward(x);
  res.predicted = probs.argmax();
  res.predicted_prob = probs.p[res.predicted];
  res.target_class_used =
      target.mode == TargetSpec::Mode::ClassConditioned ? target.class_id
                                                        : res.predicted;

  TokenMatrix tokens_s = backend.tokens(x).strip_cls();

  TokenMatrix tc;
  if (variant == Variant::Cut) {
    res.w.assign(tokens_s.cols, 1.0f);
    tc = tokens_s;
  } else {
    ActivationMaps maps = build_activation_maps(tokens_s, gh, gw);
    ChannelWeights cw = compute_weights(backend, x, maps, target, workers);
    res.w = cw.w;
    tc = weight_tokens(tokens_s, cw);
  }

  if (variant == Variant::Rout) {
    res.y1c.assign(static_cast<std::size_t>(gh) * gw, 0.0f);
    RenderOut r = render_grid(rout_only_map(tc, gh, gw), x, meta.patch);
    res.heatmap = std::move(r.heatmap);
    res.overlay = std::move(r.overlay);
  } else {
    CutOut c = cut_pipeline(tc, phi, x, meta.patch);
    res.degenerate = c.degenerate;
    res.y1c = c.partition.y1c;
    res.heatmap = std::move(c.render.heatmap);
    res.overlay = std::move(c.render.overlay);
  }

  res.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  return res;
}

// Artifact store: per image one TensorFile (heatmap, y1c, w), one JSON
// sidecar, one overlay PNG, all named by the explain content hash.
struct ArtifactPaths {
  std::filesystem::path tensors;
  std::filesystem::path sidecar;
  std::filesystem::path overlay;
};

inline ArtifactPaths save_result(const std::filesystem::path& outdir,
                                 const ExplainResult& res, double phi) {
  std::filesystem::create_directories(outdir);
  ArtifactPaths paths{outdir / (res.image_id + ".rcut"),
                      outdir / (res.image_id + ".json"),
                      outdir / (res.image_id + ".png")};

  TensorFile tf;
  tf.add("heatmap",
         {static_cast<std::uint32_t>(res.heatmap.gh),
          static_cast<std::uint32_t>(res.heatmap.gw)},
         res.heatmap.v);
  tf.add("y1c", {static_cast<std::uint32_t>(res.y1c.size())}, res.y1c);
  tf.add("w", {static_cast<std::uint32_t>(res.w.size())}, res.w);
  tf.save(paths.tensors.string());

  nlohmann::json j{{"image_id", res.image_id},
                   {"variant", variant_name(res.variant)},
                   {"target_mode", target_mode_name(res.target)},
                   {"target_class", res.target_class_used},
                   {"predicted", res.predicted},
                   {"predicted_prob", res.predicted_prob},
                   {"degenerate", res.degenerate},
                   {"phi", phi},
                   {"wall_ms", res.wall_ms},
                   {"tensors", paths.tensors.filename().string()},
                   {"overlay", paths.overlay.filename().string()}};
  std::ofstream f(paths.sidecar);
  if (!f) throw IoError("cannot write " + paths.sidecar.string());
  f << j.dump(2) << "\n";

  res.overlay.save_png(paths.overlay.string());
  return paths;
}

}  // namespace rcut
