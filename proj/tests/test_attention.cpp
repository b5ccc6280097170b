#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "esppct/attention.hpp"
#include "esppct/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace esppct;

namespace {

LinearParams fixed_linear(std::size_t in, std::size_t out, std::vector<double> w) {
  LinearParams p;
  p.weight = Tensor2(out, in, std::move(w));
  p.bias.assign(out, 0.0);
  return p;
}

// d_attention = 1; logits are the x offset, values are intensities.
VectorAttentionLayer hand_layer() {
  VectorAttentionLayer l;
  l.phi = fixed_linear(5, 1, {0, 0, 0, 0, 0});
  l.psi = fixed_linear(5, 1, {0, 0, 0, 0, 0});
  l.alpha = fixed_linear(5, 1, {0, 0, 0, 0, 1});
  l.gamma.layers = {fixed_linear(1, 1, {1})};
  l.delta.layers = {fixed_linear(3, 1, {1, 0, 0})};
  return l;
}

}  // namespace

TEST_CASE("attention: hand-computed two-point instance") {
  Frame f;
  f.points = {Point{0, 0, 0, 0, 1}, Point{1, 0, 0, 0, 3}};
  const AttentionOutput out = vector_attention_forward(hand_layer(), f, knn_neighbors(f, 2));
  const double hi = 0.7310585786300049;  // 1 / (1 + e^-1)
  const double lo = 0.2689414213699951;
  REQUIRE(out.neighbors.flat == std::vector<std::size_t>{0, 1, 1, 0});
  CHECK(out.weights(0, 0) == doctest::Approx(hi).epsilon(1e-15));
  CHECK(out.weights(1, 0) == doctest::Approx(lo).epsilon(1e-15));
  CHECK(out.weights(2, 0) == doctest::Approx(lo).epsilon(1e-15));
  CHECK(out.weights(3, 0) == doctest::Approx(hi).epsilon(1e-15));
  CHECK(out.features(0, 0) == doctest::Approx(1.5378828427399902).epsilon(1e-15));
  CHECK(out.features(1, 0) == doctest::Approx(1.5378828427399902).epsilon(1e-15));
  CHECK(out.point_scores[0] == doctest::Approx(1.4621171572600098).epsilon(1e-15));
  CHECK(out.point_scores[1] == doctest::Approx(0.5378828427399902).epsilon(1e-15));
}

TEST_CASE("attention: matches the dense oracle on random instances") {
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    AttentionConfig cfg;
    cfg.d_attention = 1 + rng.below(8);
    cfg.k_nn = 1 + rng.below(n + 2);
    cfg.gamma_layers = 1 + rng.below(3);
    cfg.delta_layers = 1 + rng.below(3);
    cfg.activation = trial % 2 ? Activation::kRelu : Activation::kTanh;
    const VectorAttentionLayer layer = init_attention_layer(kPointFeatures, cfg, rng);
    const Frame f = testing::random_frame(rng, n);

    const auto ref_nbrs = oracle::knn(f, cfg.k_nn);
    const NeighborIndex nbrs = knn_neighbors(f, cfg.k_nn);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = nbrs.of(i);
      REQUIRE(std::vector<std::size_t>(row.begin(), row.end()) == ref_nbrs[i]);
    }
    const auto ref = oracle::vector_attention(layer, f, ref_nbrs);
    const AttentionOutput out = vector_attention_forward(layer, f, nbrs);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < cfg.d_attention; ++c) {
        worst = std::max(worst, std::abs(out.features(i, c) - ref.y[i][c]));
        for (std::size_t r = 0; r < nbrs.k; ++r) {
          worst = std::max(worst, std::abs(out.weights(i * nbrs.k + r, c) - ref.weight[i][r][c]));
        }
      }
      worst = std::max(worst, std::abs(out.point_scores[i] - ref.incoming[i]));
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("knn: self first, sorted, ties by index, k clipped to N") {
  Frame f;
  // Points 1 and 2 are both at distance 1 from point 0.
  f.points = {Point{0, 0, 0, 0, 0}, Point{1, 0, 0, 0, 0}, Point{-1, 0, 0, 0, 0}, Point{0, 5, 0, 0, 0}};
  const NeighborIndex a = knn_neighbors(f, 3);
  CHECK(std::vector<std::size_t>(a.of(0).begin(), a.of(0).end()) == std::vector<std::size_t>{0, 1, 2});
  const NeighborIndex b = knn_neighbors(f, 10);
  CHECK(b.k == 4);
  CHECK(b.points() == 4);
  CHECK_THROWS_AS(knn_neighbors(Frame{}, 3), UsageError);
  CHECK_THROWS_AS(knn_neighbors(f, 0), UsageError);
}

TEST_CASE("knn: coincident points keep self in the list") {
  Frame f;
  f.points.assign(5, Point{1, 1, 1, 0, 0});
  const NeighborIndex n = knn_neighbors(f, 2);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto row = n.of(i);
    CHECK(std::find(row.begin(), row.end(), i) != row.end());
  }
  CHECK(std::vector<std::size_t>(n.of(4).begin(), n.of(4).end()) == std::vector<std::size_t>{0, 4});
}

TEST_CASE("attention: weights sum to one per point and channel") {
  Rng rng(5);
  AttentionConfig cfg;
  cfg.d_attention = 8;
  cfg.k_nn = 6;
  const auto layers = init_attention_stack(cfg, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Frame f = testing::random_frame(rng, 3 + rng.below(30));
    const AttentionOutput out = attention_stack_forward(layers, f, cfg.k_nn);
    const std::size_t k = out.neighbors.k;
    for (const Tensor2& w : out.layer_weights) {
      for (std::size_t i = 0; i < f.points.size(); ++i) {
        for (std::size_t c = 0; c < cfg.d_attention; ++c) {
          double s = 0.0;
          for (std::size_t r = 0; r < k; ++r) s += w(i * k + r, c);
          CHECK(std::abs(s - 1.0) < 1e-12);
        }
      }
    }
    const double mass = std::accumulate(out.point_scores.begin(), out.point_scores.end(), 0.0);
    CHECK(mass == doctest::Approx(static_cast<double>(f.points.size())).epsilon(1e-12));
  }
}

TEST_CASE("attention: permuting points permutes the outputs") {
  Rng rng(17);
  AttentionConfig cfg;
  cfg.d_attention = 6;
  cfg.k_nn = 5;
  const auto layers = init_attention_stack(cfg, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Frame f = testing::random_frame(rng, 12);
    REQUIRE(testing::distinct_pairwise_distances(f));
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Frame g;
    for (std::size_t i : perm) g.points.push_back(f.points[i]);
    const AttentionOutput a = attention_stack_forward(layers, f, cfg.k_nn);
    const AttentionOutput b = attention_stack_forward(layers, g, cfg.k_nn);
    for (std::size_t r = 0; r < 12; ++r) {
      for (std::size_t c = 0; c < cfg.d_attention; ++c) {
        CHECK(std::abs(b.features(r, c) - a.features(perm[r], c)) < 1e-12);
      }
      CHECK(std::abs(b.point_scores[r] - a.point_scores[perm[r]]) < 1e-12);
    }
  }
}

TEST_CASE("attention: stack widths must chain") {
  Rng rng(1);
  AttentionConfig cfg;
  cfg.d_attention = 4;
  auto layers = init_attention_stack(cfg, rng);
  cfg.d_attention = 3;
  layers.push_back(init_attention_layer(5, cfg, rng));
  CHECK_THROWS_AS(attention_stack_forward(layers, testing::random_frame(rng, 4), 2), UsageError);
  cfg.depth = 0;
  CHECK_THROWS_AS(validate(cfg), UsageError);
}
