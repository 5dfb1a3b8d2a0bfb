// rcut: explain single images, evaluate annotated datasets, sweep the
// similarity threshold, run the offline selftest suite, and generate
// reference-model weights.
//
// Exit codes: 0 ok, 1 unusable input, 2 backend failure, 3 selftest failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rcut/eval.hpp"
#include "rcut/pipeline.hpp"
#include "rcut/selftest.hpp"

namespace {

int default_workers() {
  if (const char* env = std::getenv("RCUT_WORKERS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

rcut::TargetSpec parse_target(const std::string& s, bool& is_gt) {
  is_gt = false;
  if (s == "pre") return rcut::TargetSpec::predicted();
  if (s == "full") return rcut::TargetSpec::full_output();
  if (s == "gt") {
    is_gt = true;
    return rcut::TargetSpec::predicted();  // resolved per annotation
  }
  if (s.rfind("class:", 0) == 0)
    return rcut::TargetSpec::class_conditioned(std::stoi(s.substr(6)));
  throw rcut::ConfigError("target must be pre, gt, full, or class:<id> (got '" +
                          s + "')");
}

rcut::Variant parse_variant(const std::string& s) {
  if (s == "rcut") return rcut::Variant::Rcut;
  if (s == "rout") return rcut::Variant::Rout;
  if (s == "cut") return rcut::Variant::Cut;
  throw rcut::ConfigError("variant must be rcut, rout, or cut (got '" + s + "')");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct CliConfig {
  std::string backend_spec;
  std::string image_path;
  std::string annotations;
  std::string variant = "rcut";
  std::string method = "rcut";
  std::string target = "pre";
  std::string out_dir = "rcut-out";
  std::string phi_sweep;
  double phi = 0.05;
  double thres = 0.2;
  int workers = default_workers();
  bool filter_mispredicted = false;
  std::uint64_t seed = 1;
  bool inject_fault = false;
  // gen-weights
  std::string weights_out;
  int image_size = 32, patch = 8, dim = 24, heads = 4, depth = 3, mlp_ratio = 4,
      classes = 10;
};

int cmd_explain(const CliConfig& cfg) {
  bool is_gt = false;
  rcut::TargetSpec target = parse_target(cfg.target, is_gt);
  if (is_gt)
    throw rcut::ConfigError("target 'gt' needs annotations; use eval, or "
                            "class:<id> for explain");
  rcut::Variant variant = parse_variant(cfg.variant);
  auto backend = rcut::make_backend(cfg.backend_spec, cfg.workers);
  rcut::Image img = rcut::load_image(cfg.image_path, backend->meta().image_size);
  rcut::ExplainResult res =
      rcut::explain(*backend, img, target, variant, cfg.phi, cfg.workers);
  auto paths = rcut::save_result(cfg.out_dir, res, cfg.phi);
  std::cout << "predicted class " << res.predicted << " (p=" << res.predicted_prob
            << "), target class " << res.target_class_used << " ["
            << rcut::target_mode_name(res.target) << "]"
            << (res.degenerate ? ", degenerate-graph fallback" : "") << "\n";
  std::cout << "wrote " << paths.tensors.string() << "\n";
  std::cout << "wrote " << paths.sidecar.string() << "\n";
  std::cout << "wrote " << paths.overlay.string() << "\n";
  return 0;
}

int cmd_eval(const CliConfig& cfg) {
  bool is_gt = false;
  rcut::TargetSpec target = parse_target(cfg.target, is_gt);
  (void)target;
  rcut::RunOptions opt;
  opt.method = rcut::parse_method(cfg.method);
  opt.target = is_gt                        ? rcut::EvalTarget::Gt
               : cfg.target == "pre"        ? rcut::EvalTarget::Pre
               : cfg.target == "full"       ? rcut::EvalTarget::Full
                                            : rcut::EvalTarget::FixedClass;
  if (opt.target == rcut::EvalTarget::FixedClass)
    opt.target_class = std::stoi(cfg.target.substr(6));
  opt.filter_mispredicted = cfg.filter_mispredicted;
  opt.thres = cfg.thres;
  opt.workers = cfg.workers;

  auto backend = rcut::make_backend(cfg.backend_spec, cfg.workers);
  std::filesystem::create_directories(cfg.out_dir);

  std::vector<std::string> phis;
  if (!cfg.phi_sweep.empty())
    phis = split_list(cfg.phi_sweep);
  else
    phis.push_back(std::to_string(cfg.phi));

  for (const std::string& phi_str : phis) {
    opt.phi = std::stod(phi_str);
    if (opt.phi < -1.0 || opt.phi > 1.0)
      throw rcut::ConfigError("phi " + phi_str + " outside [-1, 1]");
    std::string tag = phis.size() > 1 ? "_phi" + phi_str : "";
    opt.records_path =
        (std::filesystem::path(cfg.out_dir) / ("records" + tag + ".jsonl"))
            .string();
    rcut::Aggregate agg = rcut::run_dataset(*backend, cfg.annotations, opt);
    nlohmann::json row = agg.to_json();
    row["phi"] = opt.phi;
    row["method"] = rcut::method_name(opt.method);
    row["target"] = cfg.target;
    row["filter_mispredicted"] = opt.filter_mispredicted;
    std::cout << row.dump() << "\n";
    std::ofstream f(std::filesystem::path(cfg.out_dir) /
                    ("aggregate" + tag + ".json"));
    f << row.dump(2) << "\n";
  }
  return 0;
}

int cmd_selftest(const CliConfig& cfg) {
  bool ok = rcut::selftest::run_selftest(cfg.seed, cfg.inject_fault, std::cout);
  return ok ? 0 : 3;
}

int cmd_gen_weights(const CliConfig& cfg) {
  rcut::VitConfig vc;
  vc.image_size = cfg.image_size;
  vc.patch = cfg.patch;
  vc.dim = cfg.dim;
  vc.heads = cfg.heads;
  vc.depth = cfg.depth;
  vc.mlp_ratio = cfg.mlp_ratio;
  vc.classes = cfg.classes;
  vc.validate();
  rcut::VitWeights w = rcut::init_random(vc, cfg.seed);
  rcut::weights_to_tensorfile(vc, w).save(cfg.weights_out);
  std::cout << "wrote " << cfg.weights_out << " (image " << vc.image_size
            << ", patch " << vc.patch << ", dim " << vc.dim << ", heads "
            << vc.heads << ", depth " << vc.depth << ", classes " << vc.classes
            << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CliConfig cfg;
  CLI::App app{"R-Cut explainability for vision-transformer classifiers"};
  app.require_subcommand(1);

  auto* explain = app.add_subcommand("explain", "Explain a single image");
  explain->add_option("--backend", cfg.backend_spec,
                      "ref:<weights.rcut> or proc:<command line>")
      ->required();
  explain->add_option("--image", cfg.image_path, "PNG or PPM input")->required();
  explain->add_option("--variant", cfg.variant, "rcut, rout, or cut");
  explain->add_option("--target", cfg.target, "pre, full, or class:<id>");
  explain->add_option("--phi", cfg.phi, "similarity threshold")
      ->check(CLI::Range(-1.0, 1.0));
  explain->add_option("--out", cfg.out_dir, "artifact directory");
  explain->add_option("--workers", cfg.workers, "parallel backend calls")
      ->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Evaluate an annotated dataset");
  eval->add_option("--backend", cfg.backend_spec,
                   "ref:<weights.rcut> or proc:<command line>")
      ->required();
  eval->add_option("--annotations", cfg.annotations, "JSON-lines annotation file")
      ->required();
  eval->add_option("--method", cfg.method,
                   "rcut, rout, cut, raw-attention, or rollout");
  eval->add_option("--target", cfg.target, "pre, gt, full, or class:<id>");
  eval->add_option("--phi", cfg.phi, "similarity threshold")
      ->check(CLI::Range(-1.0, 1.0));
  eval->add_option("--phi-sweep", cfg.phi_sweep,
                   "comma-separated thresholds, one aggregate row each");
  eval->add_option("--thres", cfg.thres, "IoU heatmap threshold")
      ->check(CLI::Range(0.0, 1.0));
  eval->add_flag("--filter-mispredicted", cfg.filter_mispredicted,
                 "exclude mispredicted images from aggregation");
  eval->add_option("--out", cfg.out_dir, "output directory");
  eval->add_option("--workers", cfg.workers, "parallel backend calls")
      ->check(CLI::PositiveNumber);

  auto* selftest = app.add_subcommand("selftest", "Run the offline invariant suite");
  selftest->add_option("--seed", cfg.seed, "fixture seed");
  selftest->add_flag("--inject-fault", cfg.inject_fault)->group("");  // test hook

  auto* gen = app.add_subcommand("gen-weights",
                                 "Generate seeded reference-model weights");
  gen->add_option("--out", cfg.weights_out, "output .rcut path")->required();
  gen->add_option("--seed", cfg.seed, "weight seed");
  gen->add_option("--image-size", cfg.image_size);
  gen->add_option("--patch", cfg.patch);
  gen->add_option("--dim", cfg.dim);
  gen->add_option("--heads", cfg.heads);
  gen->add_option("--depth", cfg.depth);
  gen->add_option("--mlp-ratio", cfg.mlp_ratio);
  gen->add_option("--classes", cfg.classes);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(explain)) return cmd_explain(cfg);
    if (app.got_subcommand(eval)) return cmd_eval(cfg);
    if (app.got_subcommand(selftest)) return cmd_selftest(cfg);
    if (app.got_subcommand(gen)) return cmd_gen_weights(cfg);
  } catch (const rcut::BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
