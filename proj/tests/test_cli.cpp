#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rcut/tensor_file.hpp"
#include "test_support.hpp"

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CmdResult run_cmd(const std::string& cmd) {
  CmdResult res;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) res.output.append(buf, n);
  int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string cli() { return RCUT_CLI_PATH; }

struct CliFixture {
  std::filesystem::path dir;
  std::string weights;
  std::string image;

  explicit CliFixture(const std::string& tag) {
    dir = testsup::temp_dir(tag);
    weights = (dir / "w.rcut").string();
    auto gen = run_cmd(cli() + " gen-weights --out " + weights + " --seed 3");
    REQUIRE(gen.exit_code == 0);
    auto img = testsup::random_image(32, 7);
    image = (dir / "x.ppm").string();
    testsup::write_ppm(image, img);
  }

  std::string annotations(int count) {
    std::ofstream ann(dir / "ann.jsonl");
    for (int i = 0; i < count; ++i) {
      auto img = testsup::random_image(32, 500 + i);
      auto path = dir / ("d" + std::to_string(i) + ".ppm");
      testsup::write_ppm(path, img);
      nlohmann::json j{{"image", path.string()},
                       {"class", i % 10},
                       {"boxes", nlohmann::json::array({{4, 4, 20, 20}})}};
      ann << j.dump() << "\n";
    }
    return (dir / "ann.jsonl").string();
  }
};

}  // namespace

TEST_CASE("explain happy path writes three artifacts") {
  CliFixture fx("cliexplain");
  std::string out = (fx.dir / "out").string();
  auto res = run_cmd(cli() + " explain --backend ref:" + fx.weights +
                     " --image " + fx.image + " --variant rcut --out " + out);
  CHECK(res.exit_code == 0);
  CHECK(res.output.find("predicted class") != std::string::npos);
  int artifacts = 0;
  for (auto& entry : std::filesystem::directory_iterator(out)) {
    (void)entry;
    ++artifacts;
  }
  CHECK(artifacts == 3);
}

TEST_CASE("explain with a missing image exits 1 and writes nothing") {
  CliFixture fx("climissing");
  std::string out = (fx.dir / "out-missing").string();
  auto res = run_cmd(cli() + " explain --backend ref:" + fx.weights +
                     " --image /nonexistent.png --out " + out);
  CHECK(res.exit_code == 1);
  CHECK(!std::filesystem::exists(out));
}

TEST_CASE("explain --target class:7 lands in the sidecar record") {
  CliFixture fx("clitarget");
  std::string out = (fx.dir / "out7").string();
  auto res = run_cmd(cli() + " explain --backend ref:" + fx.weights +
                     " --image " + fx.image + " --target class:7 --out " + out);
  CHECK(res.exit_code == 0);
  bool found = false;
  for (auto& entry : std::filesystem::directory_iterator(out)) {
    if (entry.path().extension() == ".json") {
      std::ifstream f(entry.path());
      nlohmann::json j = nlohmann::json::parse(f);
      CHECK(j["target_class"] == 7);
      CHECK(j["target_mode"] == "class");
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("backend failure exits 2") {
  CliFixture fx("clibackend");
  auto res = run_cmd(cli() + " explain --backend proc:false --image " + fx.image);
  CHECK(res.exit_code == 2);
}

TEST_CASE("eval single phi emits one aggregate row") {
  CliFixture fx("clieval");
  std::string ann = fx.annotations(2);
  std::string out = (fx.dir / "eval-out").string();
  auto res = run_cmd(cli() + " eval --backend ref:" + fx.weights +
                     " --annotations " + ann + " --method rout --out " + out);
  CHECK(res.exit_code == 0);
  int rows = 0;
  std::stringstream ss(res.output);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty() && line.front() == '{') {
      nlohmann::json j = nlohmann::json::parse(line);
      CHECK(j["evaluated"] == 2);
      CHECK(j.contains("point_game"));
      ++rows;
    }
  CHECK(rows == 1);
  CHECK(std::filesystem::exists(std::filesystem::path(out) / "records.jsonl"));
}

TEST_CASE("eval phi sweep emits one row per threshold") {
  CliFixture fx("clisweep");
  std::string ann = fx.annotations(2);
  std::string out = (fx.dir / "sweep-out").string();
  auto res = run_cmd(cli() + " eval --backend ref:" + fx.weights +
                     " --annotations " + ann +
                     " --phi-sweep 0,0.05,0.1 --out " + out);
  CHECK(res.exit_code == 0);
  std::vector<double> phis;
  std::stringstream ss(res.output);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty() && line.front() == '{')
      phis.push_back(nlohmann::json::parse(line)["phi"].get<double>());
  CHECK(phis == std::vector<double>{0.0, 0.05, 0.1});
  CHECK(std::filesystem::exists(std::filesystem::path(out) / "records_phi0.05.jsonl"));
}

TEST_CASE("eval with rollout baseline and misprediction filter") {
  CliFixture fx("clirollout");
  std::string ann = fx.annotations(2);
  std::string out = (fx.dir / "roll-out").string();
  auto res = run_cmd(cli() + " eval --backend ref:" + fx.weights +
                     " --annotations " + ann +
                     " --method rollout --filter-mispredicted --out " + out);
  CHECK(res.exit_code == 0);
  std::stringstream ss(res.output);
  std::string line;
  bool saw_row = false;
  while (std::getline(ss, line))
    if (!line.empty() && line.front() == '{') {
      nlohmann::json j = nlohmann::json::parse(line);
      CHECK(j["method"] == "rollout");
      CHECK(j["filter_mispredicted"] == true);
      CHECK(j["aggregated"].get<int>() <= j["evaluated"].get<int>());
      saw_row = true;
    }
  CHECK(saw_row);
}

TEST_CASE("selftest passes and the fault hook trips exit 3") {
  auto ok = run_cmd(cli() + " selftest --seed 7");
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("failures") != std::string::npos);
  CHECK(ok.output.find("numerics.eig_residual") != std::string::npos);

  auto bad = run_cmd(cli() + " selftest --inject-fault");
  CHECK(bad.exit_code == 3);
  CHECK(bad.output.find("cut.planted_partition") != std::string::npos);
}

TEST_CASE("help text documents the flags") {
  auto top = run_cmd(cli() + " --help");
  CHECK(top.exit_code == 0);
  for (const char* sub : {"explain", "eval", "selftest", "gen-weights"})
    CHECK(top.output.find(sub) != std::string::npos);

  auto eval_help = run_cmd(cli() + " eval --help");
  CHECK(eval_help.exit_code == 0);
  for (const char* flag : {"--backend", "--annotations", "--method", "--target",
                           "--phi", "--phi-sweep", "--thres",
                           "--filter-mispredicted", "--out", "--workers"})
    CHECK(eval_help.output.find(flag) != std::string::npos);

  auto explain_help = run_cmd(cli() + " explain --help");
  for (const char* flag : {"--backend", "--image", "--variant", "--target",
                           "--phi", "--out", "--workers"})
    CHECK(explain_help.output.find(flag) != std::string::npos);
}

TEST_CASE("unknown flags exit 1") {
  auto res = run_cmd(cli() + " explain --nope");
  CHECK(res.exit_code == 1);
}

TEST_CASE("RCUT_WORKERS env var is honored as the worker fallback") {
  CliFixture fx("clienv");
  std::string out = (fx.dir / "env-out").string();
  auto res = run_cmd("RCUT_WORKERS=4 " + cli() + " explain --backend ref:" +
                     fx.weights + " --image " + fx.image + " --out " + out);
  CHECK(res.exit_code == 0);
  CHECK(std::filesystem::exists(out));
}

TEST_CASE("proc backend through the CLI matches the ref backend") {
  CliFixture fx("cliproc");
  std::string out_ref = (fx.dir / "proc-ref").string();
  std::string out_proc = (fx.dir / "proc-ext").string();
  auto ref = run_cmd(cli() + " explain --backend ref:" + fx.weights +
                     " --image " + fx.image + " --out " + out_ref);
  REQUIRE(ref.exit_code == 0);
  auto proc = run_cmd(cli() + " explain --backend \"proc:" +
                      std::string(RCUT_REFSERVE_PATH) + " --weights " +
                      fx.weights + "\" --image " + fx.image + " --out " +
                      out_proc);
  REQUIRE(proc.exit_code == 0);

  // same artifacts, bit-identical tensor files
  for (auto& entry : std::filesystem::directory_iterator(out_ref)) {
    if (entry.path().extension() != ".rcut") continue;
    auto other = std::filesystem::path(out_proc) / entry.path().filename();
    REQUIRE(std::filesystem::exists(other));
    std::ifstream a(entry.path(), std::ios::binary), b(other, std::ios::binary);
    std::string abytes((std::istreambuf_iterator<char>(a)),
                       std::istreambuf_iterator<char>());
    std::string bbytes((std::istreambuf_iterator<char>(b)),
                       std::istreambuf_iterator<char>());
    CHECK(abytes == bbytes);
  }
}
