#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rcut/common.hpp"
#include "rcut/image.hpp"
#include "rcut/tensor_file.hpp"
#include "rcut/types.hpp"
#include "rcut/vit.hpp"

// Classifier-oracle boundary. The pipeline only ever needs three things
// from a model: its geometry, class probabilities for an image, and the
// final-layernorm token matrix. The in-process reference ViT implements
// the contract directly; ProcBackend speaks newline-delimited JSON to a
// child process, with tensors travelling as TensorFile paths:
//
//   -> {"id":1,"op":"meta"}
//   <- {"id":1,"image_size":224,"patch":16,"dim":768,"classes":1000,
//       "single_flight":true}
//   -> {"id":2,"op":"forward","tensor":"/tmp/req2.rcut"}   (entry "image", [H,W,3])
//   <- {"id":2,"probs":[...]}
//   -> {"id":3,"op":"tokens","tensor":"/tmp/req3.rcut"}
//   <- {"id":3,"tensor":"/tmp/req3.rcut.tokens.rcut"}      (entry "tokens", [S+1,D])
//
// One request in flight per process; parallel callers go through a pool of
// worker processes. Errors come back as {"id":n,"error":"..."}.

namespace rcut {

struct BackendMeta {
  int image_size = 0;
  int patch = 0;
  int dim = 0;
  int classes = 0;

  int patches() const { return (image_size / patch) * (image_size / patch); }

  void validate() const {
    if (image_size <= 0 || patch <= 0 || dim <= 0 || classes <= 0)
      throw BackendError("backend meta: all fields must be positive");
    if (image_size % patch != 0)
      throw BackendError("backend meta: image_size not divisible by patch");
  }
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendMeta meta() = 0;
  virtual ProbVector forward(const Image& img) = 0;
  virtual TokenMatrix tokens(const Image& img) = 0;
  // True when overlapping forward/tokens calls are allowed.
  virtual bool concurrent_safe() const = 0;
  // Attention capture, only available in-process. Baselines need it.
  virtual std::optional<ForwardTrace> trace(const Image&) { return std::nullopt; }
};

// Bounded LRU keyed by image content hash. MRFP/LRFP sweeps and the weight
// pass re-query overlapping inputs, so repeated forwards are common.
class ForwardCache {
 public:
  explicit ForwardCache(std::size_t cap = 4096) : cap_(cap) {}

  std::optional<ProbVector> get(std::uint64_t key) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->second;
  }

  void put(std::uint64_t key, const ProbVector& value) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = index_.find(key);
    if (it != index_.end()) {
      order_.splice(order_.begin(), order_, it->second);
      return;
    }
    order_.emplace_front(key, value);
    index_[key] = order_.begin();
    if (index_.size() > cap_) {
      index_.erase(order_.back().first);
      order_.pop_back();
    }
  }

 private:
  std::size_t cap_;
  std::mutex mu_;
  std::list<std::pair<std::uint64_t, ProbVector>> order_;
  std::unordered_map<std::uint64_t,
                     std::list<std::pair<std::uint64_t, ProbVector>>::iterator>
      index_;
};

// In-process reference ViT backend.
class RefBackend : public Backend {
 public:
  RefBackend(VitConfig cfg, VitWeights weights)
      : cfg_(cfg), weights_(std::move(weights)) {
    cfg_.validate();
  }

  static std::unique_ptr<RefBackend> from_file(const std::string& path) {
    auto [cfg, w] = weights_from_tensorfile(TensorFile::load(path));
    return std::make_unique<RefBackend>(cfg, std::move(w));
  }

  BackendMeta meta() override {
    return {cfg_.image_size, cfg_.patch, cfg_.dim, cfg_.classes};
  }

  ProbVector forward(const Image& img) override {
    std::uint64_t key = image_hash(img);
    if (auto hit = cache_.get(key)) return *hit;
    ProbVector probs = rcut::forward(img, cfg_, weights_).probs;
    cache_.put(key, probs);
    return probs;
  }

  TokenMatrix tokens(const Image& img) override {
    return rcut::forward(img, cfg_, weights_).final_tokens;
  }

  bool concurrent_safe() const override { return true; }

  std::optional<ForwardTrace> trace(const Image& img) override {
    return rcut::forward(img, cfg_, weights_);
  }

  const VitConfig& config() const { return cfg_; }

 private:
  VitConfig cfg_;
  VitWeights weights_;
  ForwardCache cache_;
};

namespace detail {

// Writes to a child that already exited must surface as EPIPE, not kill
// the process.
inline void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { signal(SIGPIPE, SIG_IGN); });
}

// One child process, one request in flight.
class ProcWorker {
 public:
  ProcWorker(const std::string& cmdline, int timeout_ms)
      : timeout_ms_(timeout_ms) {
    ignore_sigpipe_once();
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw BackendError("backend process: pipe failed");
    pid_ = fork();
    if (pid_ < 0) throw BackendError("backend process: fork failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      std::string cmd = "exec " + cmdline;
      execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
  }

  ~ProcWorker() {
    if (in_fd_ >= 0) close(in_fd_);
    if (out_fd_ >= 0) close(out_fd_);
    if (pid_ > 0) {
      kill(pid_, SIGTERM);
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  ProcWorker(const ProcWorker&) = delete;
  ProcWorker& operator=(const ProcWorker&) = delete;

  nlohmann::json request(const nlohmann::json& req) {
    std::string line = req.dump();
    line.push_back('\n');
    std::size_t written = 0;
    while (written < line.size()) {
      ssize_t n = write(in_fd_, line.data() + written, line.size() - written);
      if (n <= 0) throw BackendError("backend process: write failed (child gone?)");
      written += static_cast<std::size_t>(n);
    }
    std::string reply = read_line();
    nlohmann::json resp;
    try {
      resp = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("backend process: malformed reply: ") +
                         e.what());
    }
    if (resp.contains("error"))
      throw BackendError("backend process error: " +
                         resp["error"].get<std::string>());
    if (!resp.contains("id") || resp["id"] != req["id"])
      throw BackendError("backend process: reply id mismatch");
    return resp;
  }

 private:
  std::string read_line() {
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(timeout_ms_);
    for (;;) {
      auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return line;
      }
      auto now = std::chrono::steady_clock::now();
      if (now >= deadline) throw BackendError("backend process: request timeout");
      int wait_ms = static_cast<int>(
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now)
              .count());
      pollfd pfd{out_fd_, POLLIN, 0};
      int pr = poll(&pfd, 1, wait_ms);
      if (pr < 0) throw BackendError("backend process: poll failed");
      if (pr == 0) throw BackendError("backend process: request timeout");
      char chunk[4096];
      ssize_t n = read(out_fd_, chunk, sizeof(chunk));
      if (n <= 0) throw BackendError("backend process: child closed stdout");
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  int timeout_ms_;
  std::string buf_;
};

}  // namespace detail

// External-process backend with a pool of single-flight workers.
class ProcBackend : public Backend {
 public:
  explicit ProcBackend(const std::string& cmdline, int pool_size = 1,
                       int timeout_ms = 120000)
      : tmp_dir_(std::filesystem::temp_directory_path() /
                 ("rcut-proc-" + std::to_string(::getpid()) + "-" +
                  std::to_string(instance_counter_++))) {
    if (pool_size < 1) pool_size = 1;
    std::filesystem::create_directories(tmp_dir_);
    for (int i = 0; i < pool_size; ++i)
      workers_.push_back(std::make_unique<detail::ProcWorker>(cmdline, timeout_ms));
    for (std::size_t i = 0; i < workers_.size(); ++i) free_.push_back(i);

    nlohmann::json resp = roundtrip({{"op", "meta"}});
    meta_.image_size = resp.at("image_size").get<int>();
    meta_.patch = resp.at("patch").get<int>();
    meta_.dim = resp.at("dim").get<int>();
    meta_.classes = resp.at("classes").get<int>();
    meta_.validate();
    if (resp.contains("single_flight"))
      single_flight_ = resp["single_flight"].get<bool>();
  }

  ~ProcBackend() override {
    workers_.clear();
    std::error_code ec;
    std::filesystem::remove_all(tmp_dir_, ec);
  }

  BackendMeta meta() override { return meta_; }

  ProbVector forward(const Image& img) override {
    check_dims(img);
    std::uint64_t key = image_hash(img);
    if (auto hit = cache_.get(key)) return *hit;
    auto req_path = write_request_tensor(img);
    nlohmann::json resp =
        roundtrip({{"op", "forward"}, {"tensor", req_path.string()}});
    std::error_code ec;
    std::filesystem::remove(req_path, ec);
    if (!resp.contains("probs"))
      throw BackendError("backend process: forward reply lacks probs");
    std::vector<float> p;
    for (const auto& v : resp["probs"]) p.push_back(v.get<float>());
    ProbVector probs = ProbVector::checked(std::move(p));
    if (probs.size() != meta_.classes)
      throw BackendError("backend process: probs length " +
                         std::to_string(probs.size()) + ", expected " +
                         std::to_string(meta_.classes));
    cache_.put(key, probs);
    return probs;
  }

  TokenMatrix tokens(const Image& img) override {
    check_dims(img);
    auto req_path = write_request_tensor(img);
    nlohmann::json resp =
        roundtrip({{"op", "tokens"}, {"tensor", req_path.string()}});
    if (!resp.contains("tensor"))
      throw BackendError("backend process: tokens reply lacks tensor path");
    std::string reply_path = resp["tensor"].get<std::string>();
    TensorFile tf = TensorFile::load(reply_path);
    std::error_code ec;
    std::filesystem::remove(req_path, ec);
    std::filesystem::remove(reply_path, ec);
    const auto& e = tf.at("tokens");
    if (e.dims.size() != 2)
      throw BackendError("backend process: tokens tensor must be 2-D");
    int rows = static_cast<int>(e.dims[0]);
    int cols = static_cast<int>(e.dims[1]);
    if (rows != meta_.patches() + 1 || cols != meta_.dim)
      throw BackendError("backend process: tokens shape " + std::to_string(rows) +
                         "x" + std::to_string(cols) + ", expected " +
                         std::to_string(meta_.patches() + 1) + "x" +
                         std::to_string(meta_.dim));
    TokenMatrix t(rows, cols, true);
    t.data = e.data;
    return t;
  }

  bool concurrent_safe() const override { return true; }  // pool serializes

  bool adapter_single_flight() const { return single_flight_; }

 private:
  void check_dims(const Image& img) const {
    if (img.height != meta_.image_size || img.width != meta_.image_size)
      throw BackendError("backend: image " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + " does not match meta size " +
                         std::to_string(meta_.image_size));
  }

  std::filesystem::path write_request_tensor(const Image& img) {
    auto id = request_counter_.fetch_add(1);
    auto path = tmp_dir_ / ("req" + std::to_string(id) + ".rcut");
    TensorFile tf;
    add_image_entry(tf, "image", img);
    tf.save(path.string());
    return path;
  }

  nlohmann::json roundtrip(nlohmann::json req) {
    std::size_t slot;
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [&] { return !free_.empty(); });
      slot = free_.back();
      free_.pop_back();
    }
    req["id"] = static_cast<long long>(id_counter_.fetch_add(1));
    nlohmann::json resp;
    try {
      resp = workers_[slot]->request(req);
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu_);
      free_.push_back(slot);
      cv_.notify_one();
      throw;
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      free_.push_back(slot);
      cv_.notify_one();
    }
    return resp;
  }

  static inline std::atomic<std::uint64_t> instance_counter_{0};

  std::filesystem::path tmp_dir_;
  std::vector<std::unique_ptr<detail::ProcWorker>> workers_;
  std::vector<std::size_t> free_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::atomic<std::uint64_t> id_counter_{1};
  std::atomic<std::uint64_t> request_counter_{1};
  BackendMeta meta_;
  bool single_flight_ = true;
  ForwardCache cache_;
};

// Backend spec strings used by the CLI: "ref:<weights.rcut>" for the
// in-process model, "proc:<command line>" for an external adapter.
inline std::unique_ptr<Backend> make_backend(const std::string& spec, int workers) {
  if (spec.rfind("ref:", 0) == 0)
    return RefBackend::from_file(spec.substr(4));
  if (spec.rfind("proc:", 0) == 0)
    return std::make_unique<ProcBackend>(spec.substr(5), workers);
  throw ConfigError("backend spec must start with ref: or proc: (got '" + spec +
                    "')");
}

}  // namespace rcut
