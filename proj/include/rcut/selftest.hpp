#pragma once

#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcut/eval.hpp"
#include "rcut/pipeline.hpp"
#include "rcut/synthetic.hpp"

// Offline invariant suite behind `rcut selftest`. Generates its own
// seed-fixed reference weights and synthetic fixtures; no files or network
// needed. The hidden inject-fault switch deliberately breaks one planted
// assertion so the failure path stays exercised.

namespace rcut::selftest {

class Runner {
 public:
  explicit Runner(std::ostream& out) : out_(out) {}

  void check(const std::string& name, bool ok) {
    ++total_;
    ++suite_total_;
    if (!ok) {
      failures_.push_back(name);
      ++suite_failed_;
    }
  }

  void begin_suite(const std::string& name) {
    suite_ = name;
    suite_total_ = 0;
    suite_failed_ = 0;
  }

  void end_suite() {
    out_ << "  " << suite_ << ": " << (suite_total_ - suite_failed_) << "/"
         << suite_total_ << " ok\n";
  }

  bool summary() {
    out_ << "selftest: " << total_ << " checks, " << failures_.size()
         << " failures\n";
    for (const auto& f : failures_) out_ << "  FAILED: " << f << "\n";
    return failures_.empty();
  }

 private:
  std::ostream& out_;
  std::string suite_;
  int total_ = 0;
  int suite_total_ = 0;
  int suite_failed_ = 0;
  std::vector<std::string> failures_;
};

namespace detail {

inline std::vector<std::uint8_t> random_connected(int n, double p,
                                                  std::mt19937_64& rng) {
  std::vector<std::uint8_t> e(static_cast<std::size_t>(n) * n, 0);
  auto set = [&](int i, int j) {
    e[static_cast<std::size_t>(i) * n + j] = 1;
    e[static_cast<std::size_t>(j) * n + i] = 1;
  };
  for (int i = 1; i < n; ++i) set(i, static_cast<int>(rng() % i));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (coin(rng) < p) set(i, j);
  return e;
}

inline double gen_residual(const std::vector<std::uint8_t>& e, int n,
                           const std::vector<double>& k,
                           const std::vector<double>& y, double lambda) {
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    double lhs = k[i] * y[i];
    for (int j = 0; j < n; ++j)
      lhs -= static_cast<double>(e[static_cast<std::size_t>(i) * n + j]) * y[j];
    worst = std::max(worst, std::fabs(lhs - lambda * k[i] * y[i]));
  }
  return worst;
}

}  // namespace detail

inline void suite_tensorfile(Runner& r, std::uint64_t seed) {
  r.begin_suite("core.tensorfile_roundtrip");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> uni(-4.0f, 4.0f);
  for (int t = 0; t < 10; ++t) {
    TensorFile tf;
    int n = 1 + static_cast<int>(rng() % 6);
    std::vector<float> data(n * n);
    for (auto& v : data) v = uni(rng);
    tf.add("m", {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(n)},
           data);
    auto bytes = tf.serialize();
    auto back = TensorFile::parse(bytes.data(), bytes.size());
    r.check("core.tensorfile_roundtrip", back.serialize() == bytes);
  }
  r.end_suite();
}

inline void suite_eig(Runner& r, std::uint64_t seed) {
  r.begin_suite("numerics.eig_residual");
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> uni(-3.0, 3.0);
  for (int t = 0; t < 50; ++t) {
    int n = 2 + static_cast<int>(rng() % 20);
    SymMatrix m(n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) m.set(i, j, uni(rng));
    auto eig = sym_eig(m);
    double bound = 1e-6 * std::max(1.0, m.inf_norm());
    bool ok = true;
    for (int k = 0; k < n && ok; ++k)
      for (int i = 0; i < n && ok; ++i) {
        double mv = 0.0;
        for (int j = 0; j < n; ++j) mv += m.get(i, j) * eig.vec(j, k);
        if (std::fabs(mv - eig.values[k] * eig.vec(i, k)) > bound) ok = false;
      }
    r.check("numerics.eig_residual", ok);
  }
  r.end_suite();
}

inline void suite_generalized(Runner& r, std::uint64_t seed) {
  r.begin_suite("numerics.generalized_eig");
  std::mt19937_64 rng(seed + 2);
  for (int t = 0; t < 30; ++t) {
    int n = 2 + static_cast<int>(rng() % 20);
    auto e = detail::random_connected(n, 0.3, rng);
    std::vector<double> k(n, 0.0);
    SymMatrix adj(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        k[i] += e[static_cast<std::size_t>(i) * n + j];
        if (j >= i) adj.set(i, j, e[static_cast<std::size_t>(i) * n + j]);
      }
    auto pair = generalized_second_eigvec(k, adj);
    double sumk = 0.0, kdot = 0.0;
    for (int i = 0; i < n; ++i) {
      sumk += k[i];
      kdot += k[i] * pair.y1[i];
    }
    r.check("numerics.generalized_eig.residual",
            detail::gen_residual(e, n, k, pair.y1, pair.lambda1) <= 1e-6);
    r.check("numerics.generalized_eig.k_orthogonal",
            std::fabs(kdot) <= 1e-6 * sumk);
  }
  r.end_suite();
}

inline void suite_planted(Runner& r, std::uint64_t seed, bool inject_fault) {
  r.begin_suite("cut.planted_partition");
  for (int t = 0; t < 10; ++t) {
    PlantedBackend backend(PlantedBackend::random_instance(seed * 100 + t));
    BackendMeta meta = backend.meta();
    Image x = [&] {
      Image img(meta.image_size, meta.image_size);
      for (auto& v : img.data) v = 0.8f;
      return img;
    }();
    TargetSpec target =
        TargetSpec::class_conditioned(backend.instance().salient_class);
    ExplainResult res = explain(backend, x, target, Variant::Rcut, 0.05, 1);
    std::vector<int> fg;
    for (int s = 0; s < static_cast<int>(res.y1c.size()); ++s)
      if (res.y1c[s] != 0.0f) fg.push_back(s);
    std::vector<int> expected = backend.salient_cluster();
    if (inject_fault && t == 0) fg.push_back(-1);  // simulated defect
    r.check("cut.planted_partition.exact_recovery",
            !res.degenerate && fg == expected);
  }
  r.end_suite();
}

inline void suite_identity_law(Runner& r, std::uint64_t seed) {
  r.begin_suite("rout.identity_perturbation");
  VitConfig cfg;
  RefBackend backend(cfg, init_random(cfg, seed + 3));
  std::mt19937_64 rng(seed + 4);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  for (int t = 0; t < 3; ++t) {
    Image x(cfg.image_size, cfg.image_size);
    for (auto& v : x.data) v = uni(rng);
    ActivationMaps maps;
    maps.grid_h = cfg.grid();
    maps.grid_w = cfg.grid();
    for (int d = 0; d < cfg.dim; ++d) {
      GridMap g(maps.grid_h, maps.grid_w);
      for (auto& v : g.v) v = 1.0f;
      maps.maps.push_back(std::move(g));
    }
    ChannelWeights w =
        compute_weights(backend, x, maps, TargetSpec::full_output());
    bool ok = true;
    for (float wi : w.w)
      if (std::fabs(wi - 1.0f) > 1e-6f) ok = false;
    r.check("rout.identity_perturbation.w_equals_one", ok);
  }
  r.end_suite();
}

inline void suite_metric_oracles(Runner& r) {
  r.begin_suite("eval.metric_oracles");
  BBox a{0, 0, 10, 10};
  r.check("eval.iou.identical", iou(a, a) == 1.0);
  r.check("eval.iou.disjoint", iou(a, BBox{20, 20, 30, 30}) == 0.0);
  r.check("eval.iou.third",
          std::fabs(iou(a, BBox{0, 5, 10, 15}) - 1.0 / 3.0) < 1e-12);

  GridMap heat(20, 20);
  heat.at(10, 10) = 1.0f;
  r.check("eval.point_game.hit", point_game(heat, {BBox{5, 5, 15, 15}}));
  GridMap miss(20, 20);
  miss.at(0, 0) = 1.0f;
  r.check("eval.point_game.miss", !point_game(miss, {BBox{5, 5, 15, 15}}));
  GridMap tie(20, 20);
  tie.at(0, 0) = 1.0f;
  tie.at(10, 10) = 1.0f;
  r.check("eval.point_game.tiebreak", !point_game(tie, {BBox{5, 5, 15, 15}}));

  GridMap hull(12, 12);
  hull.at(2, 2) = 0.9f;
  hull.at(9, 5) = 0.9f;
  BBox box = bbox_from_heatmap(hull, 0.2);
  r.check("eval.bbox.hull",
          box.x0 == 2 && box.y0 == 2 && box.x1 == 6 && box.y1 == 10);
  r.check("eval.bbox.empty",
          bbox_from_heatmap(GridMap(4, 4), 0.2).area() == 0);
  r.end_suite();
}

inline void suite_curve_oracle(Runner& r) {
  r.begin_suite("eval.perturbation_oracle");
  const int size = 40;  // N = 1600, region = 160 = exactly 10%
  std::vector<std::uint8_t> region(size * size, 0);
  for (int i = 0; i < 160; ++i) region[i] = 1;
  RegionFractionBackend backend({size, 8, 4, 2}, region);
  Image x(size, size);
  for (auto& v : x.data) v = 1.0f;
  GridMap heat(size, size);
  for (int i = 0; i < size * size; ++i) heat.v[i] = region[i] ? 1.0f : 0.0f;

  auto most = perturbation_curve(backend, x, heat, 0, MaskOrder::MostFirst);
  auto least = perturbation_curve(backend, x, heat, 0, MaskOrder::LeastFirst);

  // independent analytic oracle: k = floor(q*N/100) pixels masked
  double oracle_most = 0.0, oracle_least = 0.0;
  for (int q = 10; q <= 90; q += 10) {
    long long k = static_cast<long long>(size) * size * q / 100;
    oracle_most += static_cast<double>(std::min<long long>(k, 160)) / 160.0;
    oracle_least +=
        static_cast<double>(std::max<long long>(0, k - (1600 - 160))) / 160.0;
  }
  oracle_most /= 9.0;
  oracle_least /= 9.0;
  r.check("eval.perturbation_oracle.mrfp",
          std::fabs(most.mean - oracle_most) < 1e-9 &&
              std::fabs(most.mean - 1.0) < 1e-9);
  r.check("eval.perturbation_oracle.lrfp",
          std::fabs(least.mean - oracle_least) < 1e-9);
  r.end_suite();
}

inline void suite_protocol(Runner& r, std::uint64_t seed) {
  r.begin_suite("backend.protocol_roundtrip");
  nlohmann::json reqs[] = {
      {{"id", 1}, {"op", "meta"}},
      {{"id", 2}, {"op", "forward"}, {"tensor", "/tmp/x.rcut"}},
      {{"id", 3}, {"op", "tokens"}, {"tensor", "/tmp/y.rcut"}},
  };
  for (const auto& req : reqs) {
    auto back = nlohmann::json::parse(req.dump());
    r.check("backend.protocol_roundtrip.request", back == req);
  }
  // float payloads survive JSON: f32 -> double -> text -> double -> f32
  std::mt19937_64 rng(seed + 5);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  std::vector<float> probs(17);
  for (auto& p : probs) p = uni(rng);
  nlohmann::json resp{{"id", 9}, {"probs", probs}};
  auto parsed = nlohmann::json::parse(resp.dump());
  bool ok = true;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (parsed["probs"][i].get<float>() != probs[i]) ok = false;
  r.check("backend.protocol_roundtrip.probs_bitexact", ok);
  r.end_suite();
}

inline bool run_selftest(std::uint64_t seed, bool inject_fault,
                         std::ostream& out) {
  Runner r(out);
  suite_tensorfile(r, seed);
  suite_eig(r, seed);
  suite_generalized(r, seed);
  suite_planted(r, seed, inject_fault);
  suite_identity_law(r, seed);
  suite_metric_oracles(r);
  suite_curve_oracle(r);
  suite_protocol(r, seed);
  return r.summary();
}

}  // namespace rcut::selftest
