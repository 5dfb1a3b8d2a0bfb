// Reference external-backend adapter: serves the newline-delimited JSON
// protocol over stdin/stdout, backed either by the reference ViT (from a
// weights file or a seed) or by a uniform echo stub. Doubles as the
// protocol-conformance fixture and as a template for adapters that wrap
// real pretrained models.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rcut/image.hpp"
#include "rcut/tensor_file.hpp"
#include "rcut/vit.hpp"

namespace {

struct Server {
  rcut::VitConfig cfg;
  rcut::VitWeights weights;
  bool uniform = false;

  nlohmann::json meta() const {
    return {{"image_size", cfg.image_size},
            {"patch", cfg.patch},
            {"dim", cfg.dim},
            {"classes", cfg.classes},
            {"single_flight", true}};
  }

  rcut::Image read_image(const nlohmann::json& req) const {
    std::string path = req.at("tensor").get<std::string>();
    rcut::Image img =
        rcut::image_from_entry(rcut::TensorFile::load(path).at("image"));
    if (img.height != cfg.image_size || img.width != cfg.image_size)
      throw rcut::FormatError("image " + std::to_string(img.height) + "x" +
                              std::to_string(img.width) + " does not match " +
                              std::to_string(cfg.image_size));
    return img;
  }

  nlohmann::json forward(const nlohmann::json& req) const {
    rcut::Image img = read_image(req);
    std::vector<float> probs;
    if (uniform) {
      probs.assign(cfg.classes, 1.0f / static_cast<float>(cfg.classes));
    } else {
      probs = rcut::forward(img, cfg, weights).probs.p;
    }
    return {{"probs", probs}};
  }

  nlohmann::json tokens(const nlohmann::json& req) const {
    rcut::Image img = read_image(req);
    rcut::TokenMatrix t;
    if (uniform) {
      t = rcut::TokenMatrix(cfg.patches() + 1, cfg.dim, true);
      for (auto& v : t.data) v = 0.5f;
    } else {
      t = rcut::forward(img, cfg, weights).final_tokens;
    }
    std::string reply_path =
        req.at("tensor").get<std::string>() + ".tokens.rcut";
    rcut::TensorFile tf;
    tf.add("tokens",
           {static_cast<std::uint32_t>(t.rows), static_cast<std::uint32_t>(t.cols)},
           t.data);
    tf.save(reply_path);
    return {{"tensor", reply_path}};
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference backend adapter speaking the rcut JSON protocol"};
  std::string weights_path;
  std::uint64_t seed = 1;
  bool uniform = false;
  rcut::VitConfig cfg;
  app.add_option("--weights", weights_path, "reference weights .rcut file");
  app.add_option("--seed", seed, "seed weights in-process instead");
  app.add_flag("--uniform", uniform, "echo stub: uniform probs, constant tokens");
  app.add_option("--image-size", cfg.image_size);
  app.add_option("--patch", cfg.patch);
  app.add_option("--dim", cfg.dim);
  app.add_option("--heads", cfg.heads);
  app.add_option("--depth", cfg.depth);
  app.add_option("--classes", cfg.classes);
  CLI11_PARSE(app, argc, argv);

  Server server;
  try {
    if (!weights_path.empty()) {
      auto [c, w] = rcut::weights_from_tensorfile(rcut::TensorFile::load(weights_path));
      server.cfg = c;
      server.weights = std::move(w);
    } else {
      cfg.validate();
      server.cfg = cfg;
      if (!uniform) server.weights = rcut::init_random(cfg, seed);
    }
    server.uniform = uniform;
  } catch (const std::exception& e) {
    std::cerr << "refserve: " << e.what() << "\n";
    return 1;
  }

  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    nlohmann::json resp;
    nlohmann::json id = nullptr;
    try {
      nlohmann::json req = nlohmann::json::parse(line);
      if (req.contains("id")) id = req["id"];
      std::string op = req.at("op").get<std::string>();
      if (op == "meta")
        resp = server.meta();
      else if (op == "forward")
        resp = server.forward(req);
      else if (op == "tokens")
        resp = server.tokens(req);
      else
        resp = {{"error", "unknown op '" + op + "'"}};
    } catch (const std::exception& e) {
      resp = {{"error", e.what()}};
    }
    resp["id"] = id;
    std::cout << resp.dump() << "\n" << std::flush;
  }
  return 0;
}
