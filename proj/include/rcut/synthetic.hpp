#pragma once

#include <random>
#include <vector>

#include "rcut/backend.hpp"

// Synthetic classifier oracles with closed-form behaviour. The selftest
// suite and the property tests use these to pin pipeline semantics without
// trained weights.

namespace rcut {

// Fixed probability vector regardless of input.
class ConstantBackend : public Backend {
 public:
  ConstantBackend(BackendMeta meta, std::vector<float> probs)
      : meta_(meta), probs_(ProbVector::checked(std::move(probs))) {
    meta_.validate();
  }

  BackendMeta meta() override { return meta_; }
  ProbVector forward(const Image&) override { return probs_; }
  TokenMatrix tokens(const Image&) override {
    TokenMatrix t(meta_.patches() + 1, meta_.dim, true);
    for (auto& v : t.data) v = 0.5f;
    return t;
  }
  bool concurrent_safe() const override { return true; }

 private:
  BackendMeta meta_;
  ProbVector probs_;
};

// Two-class "region fraction" oracle: the target-class probability is the
// fraction of still-unmasked pixels inside a fixed pixel region. A pixel
// counts as masked when all three channels are exactly zero.
class RegionFractionBackend : public Backend {
 public:
  RegionFractionBackend(BackendMeta meta, std::vector<std::uint8_t> region_mask)
      : meta_(meta), region_(std::move(region_mask)) {
    meta_.validate();
    region_size_ = 0;
    for (auto m : region_) region_size_ += m != 0;
  }

  BackendMeta meta() override { return meta_; }

  ProbVector forward(const Image& img) override {
    int alive = 0;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        if (!region_[static_cast<std::size_t>(y) * img.width + x]) continue;
        if (img.at(y, x, 0) != 0.0f || img.at(y, x, 1) != 0.0f ||
            img.at(y, x, 2) != 0.0f)
          ++alive;
      }
    float p0 = static_cast<float>(alive) / static_cast<float>(region_size_);
    return ProbVector::checked({p0, 1.0f - p0});
  }

  TokenMatrix tokens(const Image&) override {
    TokenMatrix t(meta_.patches() + 1, meta_.dim, true);
    for (auto& v : t.data) v = 0.5f;
    return t;
  }
  bool concurrent_safe() const override { return true; }

 private:
  BackendMeta meta_;
  std::vector<std::uint8_t> region_;
  int region_size_ = 0;
};

// Planted two-cluster world. The token matrix is two groups of parallel
// rows on disjoint channel supports (intra-cluster cosine exactly 1,
// inter-cluster cosine exactly 0). The classifier reads class 0 evidence
// from the pixels of cluster A's patches and class 1 evidence from cluster
// B's, so conditioning the weight pass on the salient class raises exactly
// that cluster's channel weights.
class PlantedBackend : public Backend {
 public:
  struct Instance {
    int grid = 4;
    int patch = 8;
    int dim = 8;
    std::vector<int> cluster_a;      // patch indices, rest is cluster B
    int channels_a = 4;              // channels [0, channels_a) support A
    int salient_class = 0;           // 0 -> cluster A, 1 -> cluster B
    std::vector<float> direction_a;  // positive, length channels_a
    std::vector<float> direction_b;  // positive, length dim - channels_a
    std::vector<float> row_coeff;    // positive, length grid*grid
  };

  static Instance random_instance(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Instance in;
    in.grid = 4;
    in.patch = 8;
    in.dim = 6 + static_cast<int>(rng() % 5);
    in.channels_a = 2 + static_cast<int>(rng() % (in.dim - 3));
    int s = in.grid * in.grid;
    int size_a = 3 + static_cast<int>(rng() % (s - 5));
    std::vector<int> perm(s);
    for (int i = 0; i < s; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    in.cluster_a.assign(perm.begin(), perm.begin() + size_a);
    std::sort(in.cluster_a.begin(), in.cluster_a.end());
    in.salient_class = static_cast<int>(rng() % 2);

    std::uniform_real_distribution<float> dir(0.5f, 1.0f);
    in.direction_a.resize(in.channels_a);
    for (auto& v : in.direction_a) v = dir(rng);
    in.direction_b.resize(in.dim - in.channels_a);
    for (auto& v : in.direction_b) v = dir(rng);

    bool a_salient = in.salient_class == 0;
    std::uniform_real_distribution<float> hi(1.0f, 2.0f);
    std::uniform_real_distribution<float> lo(0.4f, 0.8f);
    in.row_coeff.resize(s);
    std::vector<bool> in_a(s, false);
    for (int i : in.cluster_a) in_a[i] = true;
    for (int i = 0; i < s; ++i) {
      bool salient_row = in_a[i] == a_salient;
      in.row_coeff[i] = salient_row ? hi(rng) : lo(rng);
    }
    return in;
  }

  explicit PlantedBackend(Instance in) : in_(std::move(in)) {
    s_ = in_.grid * in_.grid;
    in_a_.assign(s_, false);
    for (int i : in_.cluster_a) in_a_[i] = true;
  }

  BackendMeta meta() override {
    return {in_.grid * in_.patch, in_.patch, in_.dim, 2};
  }

  ProbVector forward(const Image& img) override {
    double mean_a = region_mean(img, true);
    double mean_b = region_mean(img, false);
    double p0 = 1.0 + mean_a;
    double p1 = 1.0 + mean_b;
    double z = p0 + p1;
    return ProbVector::checked(
        {static_cast<float>(p0 / z), static_cast<float>(p1 / z)});
  }

  TokenMatrix tokens(const Image&) override {
    TokenMatrix t(s_ + 1, in_.dim, true);
    for (int d = 0; d < in_.dim; ++d) t.at(0, d) = 0.25f;  // cls row, stripped
    for (int s = 0; s < s_; ++s) {
      if (in_a_[s]) {
        for (int d = 0; d < in_.channels_a; ++d)
          t.at(s + 1, d) = in_.row_coeff[s] * in_.direction_a[d];
      } else {
        for (int d = in_.channels_a; d < in_.dim; ++d)
          t.at(s + 1, d) = in_.row_coeff[s] * in_.direction_b[d - in_.channels_a];
      }
    }
    return t;
  }

  bool concurrent_safe() const override { return true; }

  const Instance& instance() const { return in_; }

  std::vector<int> salient_cluster() const {
    std::vector<int> out;
    for (int s = 0; s < s_; ++s)
      if (in_a_[s] == (in_.salient_class == 0)) out.push_back(s);
    return out;
  }

 private:
  double region_mean(const Image& img, bool cluster_a) const {
    double sum = 0.0;
    long long count = 0;
    for (int s = 0; s < s_; ++s) {
      if (in_a_[s] != cluster_a) continue;
      int gy = s / in_.grid, gx = s % in_.grid;
      for (int py = 0; py < in_.patch; ++py)
        for (int px = 0; px < in_.patch; ++px)
          for (int c = 0; c < 3; ++c) {
            sum += img.at(gy * in_.patch + py, gx * in_.patch + px, c);
            ++count;
          }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
  }

  Instance in_;
  int s_ = 0;
  std::vector<bool> in_a_;
};

}  // namespace rcut
