#include <doctest.h>

#include <cmath>
#include <random>

#include "rcut/cut.hpp"
#include "test_support.hpp"

using namespace rcut;

namespace {

// two groups of parallel rows on disjoint channel supports
TokenMatrix planted_tokens(int size_a, int size_b, float coeff_a, float coeff_b) {
  TokenMatrix t(size_a + size_b, 4, false);
  for (int s = 0; s < size_a; ++s) {
    t.at(s, 0) = coeff_a * (1.0f + 0.1f * s);
    t.at(s, 1) = coeff_a * 0.5f * (1.0f + 0.1f * s);
  }
  for (int s = size_a; s < size_a + size_b; ++s) {
    t.at(s, 2) = coeff_b * (1.0f + 0.1f * s);
    t.at(s, 3) = coeff_b * 0.7f * (1.0f + 0.1f * s);
  }
  return t;
}

AffinityGraph path3_graph() {
  AffinityGraph g;
  g.n = 3;
  g.total = 3;
  g.e = {1, 1, 0, 1, 1, 1, 0, 1, 1};  // path with self-edges
  g.degrees = {2.0, 3.0, 2.0};
  g.node_index = {0, 1, 2};
  return g;
}

}  // namespace

TEST_CASE("build_graph edge rules") {
  // identical rows connect for any phi <= 1
  TokenMatrix same(2, 2, false);
  same.at(0, 0) = same.at(1, 0) = 0.3f;
  same.at(0, 1) = same.at(1, 1) = 0.7f;
  AffinityGraph g = build_graph(same, 1.0);
  CHECK(g.n == 2);
  CHECK(g.edge(0, 1) == 1);
  CHECK(g.edge(0, 0) == 1);  // self-edge, cosine 1
  CHECK(g.complete());

  // cos((1,1),(1,0)) = 1/sqrt(2) >= 0.05 -> edge
  TokenMatrix pair(2, 2, false);
  pair.at(0, 0) = 1.0f;
  pair.at(0, 1) = 1.0f;
  pair.at(1, 0) = 1.0f;
  AffinityGraph g2 = build_graph(pair, 0.05);
  CHECK(g2.edge(0, 1) == 1);

  // orthogonal groups stay unconnected across, connected within
  TokenMatrix quad = planted_tokens(2, 2, 1.0f, 1.0f);
  AffinityGraph g3 = build_graph(quad, 0.05);
  REQUIRE(g3.n == 4);
  CHECK(g3.edge(0, 1) == 1);
  CHECK(g3.edge(2, 3) == 1);
  CHECK(g3.edge(0, 2) == 0);
  CHECK(g3.edge(1, 3) == 0);
  CHECK(!g3.complete());
}

TEST_CASE("build_graph isolates zero rows and keeps exact degrees") {
  TokenMatrix t = planted_tokens(3, 2, 1.0f, 1.0f);
  TokenMatrix with_zero(6, 4, false);
  for (int s = 0; s < 5; ++s)
    for (int d = 0; d < 4; ++d) with_zero.at(s < 3 ? s : s + 1, d) = t.at(s, d);
  // row 3 is all zeros: cosine 0 with everything including itself
  AffinityGraph g = build_graph(with_zero, 0.05);
  CHECK(g.total == 6);
  REQUIRE(g.isolated.size() == 1);
  CHECK(g.isolated[0] == 3);
  CHECK(g.n == 5);
  for (int i = 0; i < g.n; ++i) {
    double row = 0.0;
    for (int j = 0; j < g.n; ++j) row += g.edge(i, j);
    CHECK(g.degrees[i] == row);
  }
  // node_index skips the isolated patch
  for (int i = 0; i < g.n; ++i) CHECK(g.node_index[i] != 3);
}

TEST_CASE("build_graph degenerate signals") {
  TokenMatrix one(1, 2, false);
  one.at(0, 0) = 1.0f;
  CHECK_THROWS_AS(build_graph(one, 0.05), DegenerateGraphError);

  // two orthogonal rows: no off-diagonal edges anywhere
  TokenMatrix ortho(2, 2, false);
  ortho.at(0, 0) = 1.0f;
  ortho.at(1, 1) = 1.0f;
  CHECK_THROWS_AS(build_graph(ortho, 0.05), DegenerateGraphError);
}

TEST_CASE("graph symmetry and degree bookkeeping on random tokens") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
  for (int trial = 0; trial < 20; ++trial) {
    TokenMatrix t(8, 5, false);
    for (auto& v : t.data) v = uni(rng);
    AffinityGraph g;
    try {
      g = build_graph(t, 0.05);
    } catch (const DegenerateGraphError&) {
      continue;
    }
    for (int i = 0; i < g.n; ++i) {
      double row = 0.0;
      for (int j = 0; j < g.n; ++j) {
        CHECK(g.edge(i, j) == g.edge(j, i));
        row += g.edge(i, j);
      }
      CHECK(g.degrees[i] == row);
    }
    CHECK(static_cast<int>(g.node_index.size() + g.isolated.size()) == g.total);
  }
}

TEST_CASE("ncut_value: disjoint cliques, K4 with self-edges, symmetry") {
  TokenMatrix quad = planted_tokens(2, 2, 1.0f, 1.0f);
  AffinityGraph two_cliques = build_graph(quad, 0.05);
  CHECK(ncut_value(two_cliques, {0, 1}) == doctest::Approx(0.0));

  // complete graph on 4 nodes including self-edges: cut({0}) = 3,
  // sim({0},V) = 4, sim(rest,V) = 12
  TokenMatrix same(4, 2, false);
  for (int s = 0; s < 4; ++s) same.at(s, 0) = 1.0f + s;
  AffinityGraph k4 = build_graph(same, 0.05);
  REQUIRE(k4.complete());
  CHECK(ncut_value(k4, {0}) == doctest::Approx(3.0 / 4.0 + 3.0 / 12.0));

  std::vector<int> complement{1, 2, 3};
  CHECK(ncut_value(k4, {0}) == doctest::Approx(ncut_value(k4, complement)));

  CHECK_THROWS_AS(ncut_value(k4, {}), DomainError);
  CHECK_THROWS_AS(ncut_value(k4, {0, 1, 2, 3}), DomainError);
}

TEST_CASE("ncut_partition recovers planted blocks") {
  TokenMatrix t = planted_tokens(5, 5, 2.0f, 0.5f);
  AffinityGraph g = build_graph(t, 0.05);
  Partition p = ncut_partition(g);
  // disconnected components: second eigenvalue 0, indicator split
  CHECK(std::fabs(p.lambda1) <= 1e-9);
  std::vector<int> fg = p.foreground;
  std::sort(fg.begin(), fg.end());
  std::vector<int> first{0, 1, 2, 3, 4}, second{5, 6, 7, 8, 9};
  CHECK((fg == first || fg == second));
  CHECK(p.foreground.size() + p.background.size() == 10);
}

TEST_CASE("ncut_partition on a complete graph still yields a disjoint split") {
  TokenMatrix same(4, 2, false);
  for (int s = 0; s < 4; ++s) same.at(s, 0) = 1.0f + s;
  AffinityGraph g = build_graph(same, 0.05);
  Partition p = ncut_partition(g);
  CHECK(p.foreground.size() + p.background.size() == 4);
  std::vector<bool> seen(4, false);
  for (int i : p.foreground) seen[i] = true;
  for (int i : p.background) {
    CHECK(!seen[i]);
    seen[i] = true;
  }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("3-node path partition matches the exhaustive minimum") {
  AffinityGraph g = path3_graph();
  Partition p = orient_foreground(g, ncut_partition(g), planted_tokens(2, 1, 1, 1));
  REQUIRE(!p.foreground.empty());
  REQUIRE(!p.background.empty());
  std::vector<int> reduced;
  for (int orig : p.foreground) reduced.push_back(orig);  // node_index is identity
  double split_cost = ncut_value(g, reduced);

  double best = 1e300;
  for (int bits = 1; bits < 4; ++bits) {
    std::vector<int> set_i;
    for (int i = 0; i < 2; ++i)
      if ((bits >> i) & 1) set_i.push_back(i);
    best = std::min(best, ncut_value(g, set_i));
  }
  CHECK(split_cost == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("eigen residual and K-orthogonality hold on produced partitions") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
  for (int trial = 0; trial < 20; ++trial) {
    TokenMatrix t(12, 6, false);
    for (auto& v : t.data) v = uni(rng);
    AffinityGraph g;
    try {
      g = build_graph(t, 0.05);
    } catch (const DegenerateGraphError&) {
      continue;
    }
    Partition p = ncut_partition(g);
    double sumk = 0.0, kdot = 0.0, worst = 0.0;
    for (int i = 0; i < g.n; ++i) {
      sumk += g.degrees[i];
      kdot += g.degrees[i] * p.y1[i];
      double lhs = g.degrees[i] * p.y1[i];
      for (int j = 0; j < g.n; ++j) lhs -= g.edge(i, j) * p.y1[j];
      worst = std::max(worst, std::fabs(lhs - p.lambda1 * g.degrees[i] * p.y1[i]));
    }
    CHECK(worst <= 1e-6);
    CHECK(std::fabs(kdot) <= 1e-6 * sumk);
    CHECK(p.foreground.size() + p.background.size() ==
          static_cast<std::size_t>(g.n));
  }
}

TEST_CASE("orient_foreground picks the high-norm side and is idempotent") {
  TokenMatrix t(4, 2, false);
  t.at(0, 0) = 10.0f;
  t.at(1, 0) = 10.0f;
  t.at(2, 1) = 0.1f;
  t.at(3, 1) = 0.1f;
  AffinityGraph g = build_graph(t, 0.05);

  // hand-built partition oriented the wrong way: foreground = low-norm pair
  Partition wrong;
  wrong.y1 = {-1.0, -1.0, 1.0, 1.0};
  wrong.lambda1 = 0.0;
  wrong.mean = 0.0;
  wrong.foreground = {2, 3};
  wrong.background = {0, 1};
  wrong.y1c = {0.0f, 0.0f, 1.0f, 1.0f};

  Partition fixed = orient_foreground(g, wrong, t);
  std::vector<int> fg = fixed.foreground;
  std::sort(fg.begin(), fg.end());
  CHECK(fg == std::vector<int>{0, 1});
  CHECK(fixed.y1c[0] != 0.0f);
  CHECK(fixed.y1c[2] == 0.0f);

  Partition again = orient_foreground(g, fixed, t);
  CHECK(again.foreground == fixed.foreground);
  CHECK(again.y1c == fixed.y1c);

  // tie on mean norms keeps the incoming orientation
  TokenMatrix even(4, 2, false);
  even.at(0, 0) = 1.0f;
  even.at(1, 0) = 1.0f;
  even.at(2, 1) = 1.0f;
  even.at(3, 1) = 1.0f;
  AffinityGraph ge = build_graph(even, 0.05);
  Partition tied = ncut_partition(ge);
  Partition kept = orient_foreground(ge, tied, even);
  CHECK(kept.foreground == tied.foreground);
}

TEST_CASE("planted-partition exactness with orientation to the high-norm side") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    int a = 2 + static_cast<int>(rng() % 5);
    int b = 2 + static_cast<int>(rng() % 5);
    bool a_salient = rng() % 2 == 0;
    TokenMatrix t = planted_tokens(a, b, a_salient ? 2.0f : 0.5f,
                                   a_salient ? 0.5f : 2.0f);
    AffinityGraph g = build_graph(t, 0.05);
    Partition p = orient_foreground(g, ncut_partition(g), t);
    std::vector<int> fg = p.foreground;
    std::sort(fg.begin(), fg.end());
    std::vector<int> expected;
    if (a_salient)
      for (int i = 0; i < a; ++i) expected.push_back(i);
    else
      for (int i = a; i < a + b; ++i) expected.push_back(i);
    CHECK(fg == expected);
  }
}

TEST_CASE("render_map: zeros, singleton support, overlay bounds") {
  Image x = testsup::random_image(4, 4);

  std::vector<float> zeros(4, 0.0f);
  RenderOut r0 = render_map(zeros, x, 2);
  for (float v : r0.heatmap.v) CHECK(v == 0.0f);
  for (int i = 0; i < 4 * 4 * 3; ++i)
    CHECK(r0.overlay.rgb[i] == doctest::Approx(0.5f * 255.0f * x.data[i]));

  std::vector<float> single(4, 0.0f);
  single[2] = 0.37f;  // grid position (1,0)
  RenderOut r1 = render_map(single, x, 2);
  CHECK(r1.heatmap.at(2, 0) == 1.0f);
  CHECK(r1.heatmap.at(3, 1) == 1.0f);
  CHECK(r1.heatmap.at(0, 0) == 0.0f);

  std::vector<float> mixed{0.5f, 0.0f, -0.25f, 1.0f};
  RenderOut r2 = render_map(mixed, x, 2);
  for (float v : r2.overlay.rgb) {
    CHECK(v >= 0.0f);
    CHECK(v <= 255.0f);
  }
  for (float v : r2.heatmap.v) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  // support normalization: min nonzero -> 0, max -> 1, zero stays zero
  CHECK(r2.heatmap.at(0, 0) == doctest::Approx((0.5f + 0.25f) / 1.25f));
  CHECK(r2.heatmap.at(0, 2) == 0.0f);
  CHECK(r2.heatmap.at(2, 0) == 0.0f);
  CHECK(r2.heatmap.at(2, 2) == 1.0f);
}

TEST_CASE("column-scale invariance of the cut pipeline") {
  TokenMatrix t = planted_tokens(3, 4, 2.0f, 0.5f);  // 7 tokens, 7x1 grid

  AffinityGraph g1 = build_graph(t, 0.05);
  Partition p1 = orient_foreground(g1, ncut_partition(g1), t);

  TokenMatrix scaled = t;
  for (auto& v : scaled.data) v *= 2.0f;  // exact in binary
  AffinityGraph g2 = build_graph(scaled, 0.05);
  Partition p2 = orient_foreground(g2, ncut_partition(g2), scaled);

  CHECK(g1.e == g2.e);
  CHECK(p1.foreground == p2.foreground);
  CHECK(p1.background == p2.background);

  GridMap h1 = normalize_y1c(p1.y1c, 7, 1);
  GridMap h2 = normalize_y1c(p2.y1c, 7, 1);
  CHECK(h1.v == h2.v);
}

TEST_CASE("cut_only_map: planted field, fallback on single-cluster field") {
  // planted: cluster A (higher norms) should be the foreground
  TokenMatrix t = planted_tokens(6, 10, 2.0f, 0.5f);
  Image img(8, 8);
  for (auto& v : img.data) v = 0.25f;
  CutOut out = cut_only_map(t, 0.05, img, 2);
  CHECK(!out.degenerate);
  std::vector<int> fg;
  for (int s = 0; s < 16; ++s)
    if (out.partition.y1c[s] != 0.0f) fg.push_back(s);
  CHECK(fg == std::vector<int>{0, 1, 2, 3, 4, 5});

  // all-identical tokens: complete graph, degenerate fallback
  TokenMatrix same(16, 2, false);
  for (int s = 0; s < 16; ++s) same.at(s, 0) = 2.0f;
  CutOut fallback = cut_only_map(same, 0.05, img, 2);
  CHECK(fallback.degenerate);
  REQUIRE(fallback.render.heatmap.gh == 8);
  // constant token field sums to a constant map -> all zeros after min-max
  for (float v : fallback.render.heatmap.v) CHECK(v == 0.0f);
}

TEST_CASE("mean-split ncut within 1.5x of exhaustive minimum on random graphs") {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    int n = 4 + static_cast<int>(rng() % 6);
    auto e = testsup::random_connected_graph(n, 0.4, true, rng);
    AffinityGraph g;
    g.n = n;
    g.total = n;
    g.e = e;
    g.degrees = testsup::degree_vector(e, n);
    for (int i = 0; i < n; ++i) g.node_index.push_back(i);

    Partition p = ncut_partition(g);
    if (p.foreground.empty() || p.background.empty()) continue;
    std::vector<bool> mask(n, false);
    for (int i : p.foreground) mask[i] = true;
    double split = testsup::ncut_cost(e, n, mask);
    double best = testsup::ncut_exhaustive_min(e, n);
    CHECK(split <= 1.5 * best + 1e-9);
  }
}
