#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace gaia;

namespace {

// A graph with hand-picked neighbors and distances.
KnnGraph manual_graph(std::size_t k, std::vector<std::uint32_t> nb, std::vector<double> d) {
  KnnGraph g;
  g.k = k;
  g.neighbors = std::move(nb);
  g.dists = std::move(d);
  return g;
}

Matrix rows(std::vector<std::vector<double>> r) {
  Matrix m(r.size(), r[0].size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t c = 0; c < r[i].size(); ++c) m(i, c) = r[i][c];
  return m;
}

}  // namespace

TEST(PointEntropy, Examples) {
  EXPECT_EQ(point_entropy(rows({{1, 0, 0}}))[0], 0.0);
  EXPECT_NEAR(point_entropy(rows({{0.25, 0.25, 0.25, 0.25}}))[0], std::log(4.0), 1e-15);
  const double ref = -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  EXPECT_NEAR(point_entropy(rows({{0.7, 0.2, 0.1}}))[0], ref, 1e-15);
  EXPECT_NEAR(ref, 0.801819, 5e-7);
}

TEST(PointEntropy, RejectsNonDistributions) {
  try {
    point_entropy(rows({{0.5, 0.6}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "invalid distribution");
  }
  EXPECT_THROW(point_entropy(rows({{1.5, -0.5}})), Error);
}

TEST(PointEntropy, BoundsOnRandomSoftmaxRows) {
  std::mt19937_64 rng(1);
  for (std::size_t y : {2u, 3u, 4u, 7u, 13u}) {
    const auto p = softmax_rows(support::random_matrix(500, y, rng, 5.0));
    for (double h : point_entropy(p)) {
      EXPECT_GE(h, 0.0);
      EXPECT_LE(h, std::log(static_cast<double>(y)) + 1e-12);
    }
  }
}

TEST(Calibration, TwoNeighborExample) {
  const auto g = manual_graph(2, {1, 2, 0, 2, 0, 1}, {1, 2, 1, 1, 1, 1});
  const auto hc = calibrated_entropy<double>({0.5, 1.0, 0.4}, g);
  EXPECT_NEAR(hc[0], (1.0 * 1.0 + 0.25 * 0.4) / 1.25, 1e-15);
  EXPECT_NEAR(hc[0], 0.88, 1e-12);
  const auto gi = graphical_information_gain<double>({0.5, 1.0, 0.4}, hc);
  EXPECT_NEAR(gi[0], 0.38, 1e-12);
}

TEST(Calibration, EqualDistancesGiveArithmeticMean) {
  const auto g = manual_graph(3, {1, 2, 3, 0, 2, 3, 0, 1, 3, 0, 1, 2}, std::vector<double>(12, 0.7));
  const std::vector<double> h{0.1, 0.2, 0.6, 1.0};
  const auto hc = calibrated_entropy(h, g);
  EXPECT_NEAR(hc[0], (0.2 + 0.6 + 1.0) / 3.0, 1e-15);
}

TEST(Calibration, ConstantNeighborEntropyIsFixed) {
  std::mt19937_64 rng(3);
  const auto g = support::random_graph(50, 6, rng);
  const auto hc = calibrated_entropy(std::vector<double>(50, 0.37), g);
  for (double v : hc) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Calibration, WeightsSumToOne) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    auto g = support::random_graph(80, 1 + static_cast<std::size_t>(t) % 15, rng);
    g.dists[0] = 0.0;  // a duplicate point exercises the distance clamp
    std::vector<double> w(g.k);
    for (std::size_t i = 0; i < g.size(); ++i) {
      calibration_weights(g, i, w);
      double s = 0.0;
      for (double v : w) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(GainAndAggregate, Examples) {
  // Point 0 has neighbors 1 and 2 with features [1,0] and [0,1].
  const auto g = manual_graph(2, {1, 2, 0, 2, 0, 1}, std::vector<double>(6, 1.0));
  const Matrix f = rows({{9, 9}, {1, 0}, {0, 1}});
  const auto agg = gi_neighbor_aggregate<double>(f, {0.0, 0.5, 1.0}, g);
  EXPECT_NEAR(agg(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(agg(0, 1), 0.5, 1e-15);

  // Loop oracle for the same instance.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < 2; ++j) s += std::vector<double>{0.0, 0.5, 1.0}[g.neighbor(i, j)] * f(g.neighbor(i, j), c);
      EXPECT_NEAR(agg(i, c), s / 2.0, 1e-15);
    }

  const auto zero = gi_neighbor_aggregate<double>(f, {0, 0, 0}, g);
  for (double v : zero.flat()) EXPECT_EQ(v, 0.0);
  const auto mean = gi_neighbor_aggregate<double>(f, {1, 1, 1}, g);
  EXPECT_NEAR(mean(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(mean(1, 0), 4.5, 1e-15);

  const auto h = std::vector<double>{0.3, 0.3, 0.3};
  for (double v : graphical_information_gain(h, h)) EXPECT_EQ(v, 0.0);
}

TEST(GainAndAggregate, GiNonNegativeAndZeroOnConstantGraphs) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto g = support::random_graph(60, 8, rng);
    const auto p = softmax_rows(support::random_matrix(60, 4, rng, 3.0));
    const auto h = point_entropy(p);
    for (double v : graphical_information_gain(h, calibrated_entropy(h, g))) EXPECT_GE(v, 0.0);
    // Every point shares one probability row.
    Matrix same(60, 4);
    for (std::size_t i = 0; i < 60; ++i)
      for (std::size_t c = 0; c < 4; ++c) same(i, c) = p(0, c);
    const auto hs = point_entropy(same);
    for (double v : graphical_information_gain(hs, calibrated_entropy(hs, g))) EXPECT_EQ(v, 0.0);
  }
}

TEST(EntropyBlock, UniformRowsMeanNoAttention) {
  std::mt19937_64 rng(6);
  const auto g = support::random_graph(20, 5, rng);
  auto p = support::random_block(6, 4, rng);
  p.proj_in.fill(0.0);  // every projected row is the bias: one shared distribution
  const Matrix x = support::random_matrix(20, 6, rng);
  EntropyBlockCache cache;
  const Matrix out = entropy_block_forward(x, g, p, {}, cache);
  for (double v : cache.field.gi) EXPECT_EQ(v, 0.0);
  const Matrix plain = matmul(matmul(x, p.proj_in, &p.bias_in), p.proj_out, &p.bias_out);
  EXPECT_LT(support::max_abs_diff(out, plain), 1e-14);
}

TEST(EntropyBlock, ConfidentPointAmongUncertainNeighborsHasMaxGain) {
  // Point 0 is one-hot, points 1..4 are uniform; all mutual neighbors.
  PointCloud c;
  c.resize(5);
  for (std::size_t i = 0; i < 5; ++i) c.coords[i] = {0.1 * double(i), 0, 0};
  const auto g = build_knn_graph(c, 4);
  EntropyBlockParams p{Matrix(2, 3), Matrix(1, 3), Matrix(3, 2), Matrix(1, 2)};
  p.proj_in(0, 0) = 60.0;  // feature 0 drives class 0 hard
  Matrix x(5, 2);
  x(0, 0) = 1.0;
  EntropyBlockCache cache;
  entropy_block_forward(x, g, p, {}, cache);
  const auto& gi = cache.field.gi;
  EXPECT_NEAR(cache.field.h[0], 0.0, 1e-20);
  EXPECT_NEAR(cache.field.h[1], std::log(3.0), 1e-12);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_GT(gi[0], gi[i]);
}

TEST(EntropyBlock, MatchesLoopOracle) {
  std::mt19937_64 rng(7);
  const std::array<EntropyBlockOptions, 5> variants{{
      {},
      {Calibration::plain_sum, EntropyUpdate::full, false},
      {Calibration::inverse_square, EntropyUpdate::attention_only, false},
      {Calibration::inverse_square, EntropyUpdate::unnormalized, false},
      {Calibration::inverse_square, EntropyUpdate::full, true},
  }};
  for (int t = 0; t < 50; ++t) {
    const auto opt = variants[static_cast<std::size_t>(t) % variants.size()];
    const std::size_t n = 64, d = 5, y = 4;
    const auto g = support::random_graph(n, 1 + static_cast<std::size_t>(t) % 12, rng);
    const auto p = support::random_block(d, y, rng);
    const Matrix x = support::random_matrix(n, d, rng);
    EntropyBlockCache cache;
    const Matrix out = entropy_block_forward(x, g, p, opt, cache);
    const auto ref = oracle::entropy_block(x, g, p, opt);
    EXPECT_LT(support::max_abs_diff(out, ref.out), 1e-10);
    EXPECT_LT(support::max_abs_diff(cache.field.h, ref.h), 1e-10);
    EXPECT_LT(support::max_abs_diff(cache.field.h_cal, ref.h_cal), 1e-10);
    EXPECT_LT(support::max_abs_diff(cache.field.gi, ref.gi), 1e-10);
  }
}

TEST(EntropyBlock, AblationVariantsDiffer) {
  std::mt19937_64 rng(8);
  const auto g = support::random_graph(40, 6, rng);
  const auto p = support::random_block(5, 4, rng);
  const Matrix x = support::random_matrix(40, 5, rng);
  auto run = [&](EntropyBlockOptions o) {
    EntropyBlockCache c;
    return entropy_block_forward(x, g, p, o, c);
  };
  const Matrix full = run({});
  EXPECT_GT(support::max_abs_diff(full, run({Calibration::plain_sum, EntropyUpdate::full, false})), 1e-6);
  EXPECT_GT(support::max_abs_diff(full, run({Calibration::inverse_square, EntropyUpdate::attention_only, false})), 1e-6);
}

namespace {

// Scalar loss on the block output: sum of output * fixed random weights.
double weighted_sum(const Matrix& out, const Matrix& w) {
  double s = 0.0;
  for (std::size_t k = 0; k < out.size(); ++k) s += out.flat()[k] * w.flat()[k];
  return s;
}

}  // namespace

TEST(EntropyBlock, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 12; ++t) {
    EntropyBlockOptions opt;
    opt.normalize_gi = t % 3 == 2;
    opt.update = t % 2 ? EntropyUpdate::full : EntropyUpdate::unnormalized;
    const std::size_t n = 10, d = 4, y = 3;
    const auto g = support::random_graph(n, 4, rng);
    const auto p = support::random_block(d, y, rng);
    Matrix x = support::random_matrix(n, d, rng);
    const Matrix w = support::random_matrix(n, d, rng);
    EntropyBlockCache cache;
    entropy_block_forward(x, g, p, opt, cache);
    EntropyBlockParams grad{Matrix(d, y), Matrix(1, y), Matrix(y, d), Matrix(1, d)};
    const Matrix dx = entropy_block_backward(cache, p, w, grad);
    const auto sign = cache.kink_sign;
    const auto argmax = cache.gi_argmax;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double orig = x.flat()[k];
      EntropyBlockCache c2;
      x.flat()[k] = orig + support::kFdStep;
      const double up = weighted_sum(entropy_block_forward(x, g, p, opt, c2), w);
      const bool same_up = c2.kink_sign == sign && c2.gi_argmax == argmax;
      x.flat()[k] = orig - support::kFdStep;
      const double down = weighted_sum(entropy_block_forward(x, g, p, opt, c2), w);
      const bool same_down = c2.kink_sign == sign && c2.gi_argmax == argmax;
      x.flat()[k] = orig;
      if (!same_up || !same_down) continue;
      const double numeric = (up - down) / (2 * support::kFdStep);
      EXPECT_LT(support::relative_error(dx.flat()[k], numeric), support::kRelTolerance)
          << "trial " << t << " coordinate " << k;
    }
  }
}

TEST(EntropyBlock, KinkGivesFiniteZeroSubgradient) {
  // Every point has the same distribution, so h == h_cal everywhere.
  std::mt19937_64 rng(10);
  const auto g = support::random_graph(12, 3, rng);
  auto p = support::random_block(3, 3, rng);
  p.proj_in.fill(0.0);
  const Matrix x = support::random_matrix(12, 3, rng);
  EntropyBlockCache cache;
  entropy_block_forward(x, g, p, {}, cache);
  for (double s : cache.kink_sign) EXPECT_EQ(s, 0.0);
  EntropyBlockParams grad{Matrix(3, 3), Matrix(1, 3), Matrix(3, 3), Matrix(1, 3)};
  const Matrix dx = entropy_block_backward(cache, p, support::random_matrix(12, 3, rng), grad);
  for (double v : dx.flat()) EXPECT_TRUE(std::isfinite(v));
  for (double v : grad.bias_in.flat()) EXPECT_TRUE(std::isfinite(v));
}

TEST(EntropyBlock, BackwardWithoutForward) {
  EntropyBlockCache cache;
  EntropyBlockParams p{Matrix(2, 2), Matrix(1, 2), Matrix(2, 2), Matrix(1, 2)};
  auto g = p;
  EXPECT_THROW(entropy_block_backward(cache, p, Matrix(1, 2), g), Error);
}
