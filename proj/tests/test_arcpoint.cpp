#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "support.hpp"

using namespace gaia;

namespace {

Matrix col_protos(std::vector<std::vector<double>> cols) {
  Matrix w(cols[0].size(), cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t r = 0; r < cols[c].size(); ++r) w(r, c) = cols[c][r];
  return w;
}

Matrix row_feats(std::vector<std::vector<double>> r) {
  Matrix m(r.size(), r[0].size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t c = 0; c < r[i].size(); ++c) m(i, c) = r[i][c];
  return m;
}

}  // namespace

TEST(CosineLogits, Examples) {
  const Matrix w = col_protos({{2, 0}, {0, 3}});
  const Matrix l = cosine_logits(row_feats({{5, 0}}), w, 16.0);
  EXPECT_DOUBLE_EQ(l(0, 0), 16.0);
  EXPECT_DOUBLE_EQ(l(0, 1), 0.0);
}

TEST(CosineLogits, MatchesDirectFormula) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const Matrix f = support::random_matrix(5, 4, rng);
    const Matrix w = support::random_matrix(4, 3, rng);
    const Matrix l = cosine_logits(f, w, 16.0);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(l(i, c), 16.0 * oracle::cosine(oracle::row(f, i), oracle::column(w, c)), 1e-12);
  }
}

TEST(CosineLogits, DegenerateEmbedding) {
  try {
    cosine_logits(row_feats({{0, 0}}), col_protos({{1, 0}}), 16.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "degenerate embedding");
  }
}

TEST(MarginedLogit, ClosedForms) {
  const std::vector<double> a{1, 0}, b{0, 1};
  // Aligned vectors sit on the clamp, which moves the angle by about 4.5e-4.
  EXPECT_NEAR(margined_logit(a, a, 16, 0.1), 16 * std::cos(std::acos(kCosineClamp) + 0.1), 1e-12);
  EXPECT_NEAR(margined_logit(a, a, 16, 0.1), 16 * std::cos(0.1), 1e-3);
  EXPECT_NEAR(margined_logit(a, b, 16, 0.1), 16 * std::cos(std::numbers::pi / 2 + 0.1), 1e-12);
  EXPECT_NEAR(margined_logit(a, b, 16, 0.1), -16 * std::sin(0.1), 1e-12);
  const std::vector<double> c{0.3, -0.8};
  EXPECT_NEAR(margined_logit(c, b, 16, 0.0), 16 * oracle::cosine(c, b), 1e-12);
  EXPECT_THROW(margined_logit(std::vector<double>{0, 0}, a, 16, 0.1), Error);
}

TEST(MarginedLogit, MonotoneInMargin) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    const double c = u(rng);
    double m1 = std::fabs(u(rng)) * 0.7, m2 = std::fabs(u(rng)) * 0.7;
    if (m1 > m2) std::swap(m1, m2);
    if (std::acos(c) + m2 > std::numbers::pi) continue;
    EXPECT_LE(margin_term(c, 16, m2).value, margin_term(c, 16, m1).value + 1e-12);
  }
}

TEST(Quantile, Examples) {
  EXPECT_NEAR(quantile({0.1, 0.2, 0.3, 0.4}, 0.5), 0.25, 1e-15);
  EXPECT_EQ(select_above_quantile({0.1, 0.2, 0.3, 0.4}, 0.5), (std::vector<std::size_t>{2, 3}));
  EXPECT_TRUE(select_above_quantile({0.4, 0.1, 0.3}, 1.0).empty());
  EXPECT_EQ(select_above_quantile({0.2, 0.1, 0.3, 0.1}, 0.0), (std::vector<std::size_t>{0, 2}));
  EXPECT_TRUE(select_above_quantile({}, 0.5).empty());
  EXPECT_TRUE(select_high_entropy(Matrix(0, 3), 0.5).empty());
}

TEST(Quantile, MatchesSortOracleUpTo10k) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t n : {1u, 2u, 3u, 10u, 101u, 1000u, 10000u}) {
    for (int t = 0; t < 5; ++t) {
      const auto p = softmax_rows(support::random_matrix(n, 4, rng, 2.0));
      const double gamma = t == 0 ? 0.0 : t == 1 ? 1.0 : u(rng);
      std::vector<double> h = point_entropy(p);
      EXPECT_EQ(select_high_entropy(p, gamma), oracle::select_above(h, gamma));
      EXPECT_NEAR(quantile(h, gamma), oracle::quantile(h, gamma), 1e-15);
    }
  }
}

TEST(NearestAnchor, Examples) {
  const Matrix anchors = row_feats({{1, 0}, {0, 1}, {1, 1}});
  const std::vector<std::int32_t> labels{2, 5, 7};
  EXPECT_EQ(nearest_anchor(anchors, labels, std::vector<double>{0, 1}), 5);
  // Equidistant between anchors 0 and 1: lower index wins.
  const Matrix two = row_feats({{1, 0}, {0, 1}});
  EXPECT_EQ(nearest_anchor(two, {2, 5}, std::vector<double>{1, 1}), 2);
  try {
    nearest_anchor(Matrix(0, 2), {}, std::vector<double>{1, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "no labeled points");
  }
}

TEST(NearestAnchor, MatchesArgmaxOracleAndIsScaleInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(0.1, 10.0);
  for (int t = 0; t < 50; ++t) {
    const Matrix anchors = support::random_matrix(100, 6, rng);
    std::vector<std::int32_t> labels(100);
    for (std::size_t a = 0; a < 100; ++a) labels[a] = static_cast<std::int32_t>(a % 9);
    const Matrix q = support::random_matrix(1, 6, rng);
    std::size_t best = 0;
    for (std::size_t a = 1; a < 100; ++a)
      if (oracle::cosine(oracle::row(anchors, a), oracle::row(q, 0)) >
          oracle::cosine(oracle::row(anchors, best), oracle::row(q, 0)))
        best = a;
    const auto got = nearest_anchor(anchors, labels, q.row(0));
    EXPECT_EQ(got, labels[best]);
    Matrix scaled = anchors;
    for (std::size_t a = 0; a < 100; ++a) {
      const double s = pos(rng);
      for (auto& v : scaled.row(a)) v *= s;
    }
    std::vector<double> qs(q.row(0).begin(), q.row(0).end());
    const double qscale = pos(rng);
    for (auto& v : qs) v *= qscale;
    EXPECT_EQ(nearest_anchor(scaled, labels, qs), got);
  }
}

TEST(ArcPointLogits, NoMarginsWhenNothingQualifies) {
  std::mt19937_64 rng(5);
  const Matrix f = support::random_matrix(10, 4, rng);
  const Matrix w = support::random_matrix(4, 3, rng);
  const std::vector<std::int32_t> labels(10, kNoLabel);
  const std::vector<std::uint8_t> ann(10, 0);
  ArcConfig cfg;
  cfg.gamma = 1.0;
  const auto lf = arcpoint_logits(f, w, labels, ann, cfg);
  EXPECT_EQ(lf.rows, cosine_logits(f, w, cfg.s));
  for (auto m : lf.margin_applied) EXPECT_EQ(m, 0);
}

TEST(ArcPointLogits, SingleAnchorOnlyLowersItsTrueColumn) {
  std::mt19937_64 rng(6);
  const Matrix f = support::random_matrix(6, 4, rng);
  const Matrix w = support::random_matrix(4, 3, rng);
  std::vector<std::int32_t> labels(6, kNoLabel);
  std::vector<std::uint8_t> ann(6, 0);
  labels[2] = 1;
  ann[2] = 1;
  ArcConfig cfg;
  cfg.gamma = 1.0;
  const auto lf = arcpoint_logits(f, w, labels, ann, cfg);
  const Matrix plain = cosine_logits(f, w, cfg.s);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      if (i == 2 && c == 1)
        EXPECT_LT(lf.rows(i, c), plain(i, c));
      else
        EXPECT_EQ(lf.rows(i, c), plain(i, c));
    }
}

TEST(ArcPointLogits, MatchesPerPointReference) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 20, y = 4;
    const Matrix f = support::random_matrix(n, 5, rng);
    const Matrix w = support::random_matrix(5, y, rng);
    std::vector<std::int32_t> labels(n, kNoLabel);
    std::vector<std::uint8_t> ann(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      if (i < 2 || u(rng) < 0.2) {
        ann[i] = 1;
        labels[i] = static_cast<std::int32_t>(i % y);
      }
    ArcConfig cfg;
    cfg.gamma = u(rng);
    cfg.m = 0.5 * u(rng);
    const auto mode = static_cast<MarginMode>(t % 3);
    const auto lf = arcpoint_logits(f, w, labels, ann, cfg, mode);
    const auto ref = oracle::arcpoint(f, w, labels, ann, cfg.s, cfg.m, cfg.gamma, mode);
    EXPECT_LT(support::max_abs_diff(lf.rows, ref.rows), 1e-10);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(lf.margin_column[i], ref.margin_column[i]);
      EXPECT_EQ(lf.routed_class[i], ref.routed[i]);
      EXPECT_EQ(lf.margin_applied[i], ref.margin_column[i] >= 0);
      // Routed iff margined and unannotated.
      EXPECT_EQ(lf.routed_class[i] != kNoLabel, lf.margin_applied[i] && !ann[i]);
    }
  }
}

TEST(ArcPointLogits, ZeroMarginKeepsArgmax) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.1, 40.0);
  for (int t = 0; t < 100; ++t) {
    const Matrix f = support::random_matrix(30, 5, rng);
    const Matrix w = support::random_matrix(5, 4, rng);
    std::vector<std::int32_t> labels(30, kNoLabel);
    std::vector<std::uint8_t> ann(30, 0);
    for (std::size_t i = 0; i < 4; ++i) {
      labels[i] = static_cast<std::int32_t>(i);
      ann[i] = 1;
    }
    ArcConfig cfg;
    cfg.m = 0.0;
    cfg.s = u(rng);
    const auto lf = arcpoint_logits(f, w, labels, ann, cfg);
    EXPECT_EQ(eval::argmax_rows(lf.rows), eval::argmax_rows(cosine_logits(f, w, cfg.s)));
  }
}

TEST(LossCe, Examples) {
  // Saturated: the true logit dominates.
  const Matrix z = row_feats({{400, 0, 0}});
  EXPECT_NEAR(loss_ce(z, {0}, {1}).value, 0.0, 1e-12);
  EXPECT_NEAR(loss_ce(Matrix(2, 5), {1, 3}, {1, 1}).value, std::log(5.0), 1e-14);
  try {
    loss_ce(Matrix(2, 5), {1, 3}, {0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "no supervision");
  }
}

TEST(LossCe, MatchesFormulaOracle) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 50; ++t) {
    const Matrix z = support::random_matrix(3, 4, rng, 5.0);
    const std::vector<std::int32_t> labels{0, 3, 2};
    const std::vector<std::uint8_t> ann{1, static_cast<std::uint8_t>(t % 2), 1};
    EXPECT_NEAR(loss_ce(z, labels, ann).value, oracle::cross_entropy(z, labels, ann), 1e-10);
  }
}

TEST(LossSiamese, Examples) {
  std::mt19937_64 rng(10);
  const Matrix p = softmax_rows(support::random_matrix(7, 3, rng));
  EXPECT_EQ(loss_siamese(p, p).value, 0.0);
  EXPECT_EQ(loss_siamese(p, p, SiameseReduction::averaged).value, 0.0);
  const Matrix a = row_feats({{1, 0, 0}}), b = row_feats({{0, 1, 0}});
  EXPECT_NEAR(loss_siamese(a, b).value, std::sqrt(2.0), 1e-15);  // N = 1
  EXPECT_NEAR(loss_siamese(a, b, SiameseReduction::averaged).value, std::sqrt(2.0), 1e-15);
}

TEST(LossSiamese, MatchesNormOracle) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const Matrix p = softmax_rows(support::random_matrix(9, 4, rng));
    const Matrix q = softmax_rows(support::random_matrix(9, 4, rng));
    for (auto mode : {SiameseReduction::per_point, SiameseReduction::averaged})
      EXPECT_NEAR(loss_siamese(p, q, mode).value, oracle::siamese(p, q, mode), 1e-12);
  }
}

namespace {

// loss_ce(arcpoint_logits(f, w)) and its gradient with respect to f and w.
struct HeadLoss {
  double value;
  Matrix df, dw;
};

HeadLoss head_loss(const Matrix& f, const Matrix& w, const std::vector<std::int32_t>& labels,
                   const std::vector<std::uint8_t>& ann, const ArcConfig& cfg) {
  const auto lf = arcpoint_logits(f, w, labels, ann, cfg);
  const auto ce = loss_ce(lf.rows, labels, ann);
  Matrix dw(w.rows(), w.cols());
  Matrix df = logits_backward(lf, f, w, ce.d_logits, dw);
  return {ce.value, std::move(df), std::move(dw)};
}

void check_head_gradient(Matrix f, Matrix w, const std::vector<std::int32_t>& labels,
                         const std::vector<std::uint8_t>& ann, const ArcConfig& cfg) {
  const auto base = head_loss(f, w, labels, ann, cfg);
  const auto columns = arcpoint_logits(f, w, labels, ann, cfg).margin_column;
  for (Matrix* m : {&f, &w}) {
    const Matrix& analytic = m == &f ? base.df : base.dw;
    for (std::size_t k = 0; k < m->size(); ++k) {
      const double orig = m->flat()[k];
      m->flat()[k] = orig + support::kFdStep;
      const double up = head_loss(f, w, labels, ann, cfg).value;
      const bool same_up = arcpoint_logits(f, w, labels, ann, cfg).margin_column == columns;
      m->flat()[k] = orig - support::kFdStep;
      const double down = head_loss(f, w, labels, ann, cfg).value;
      const bool same_down = arcpoint_logits(f, w, labels, ann, cfg).margin_column == columns;
      m->flat()[k] = orig;
      if (!same_up || !same_down) continue;
      const double numeric = (up - down) / (2 * support::kFdStep);
      EXPECT_LT(support::relative_error(analytic.flat()[k], numeric), support::kRelTolerance)
          << (m == &f ? "feats" : "protos") << "[" << k << "]";
    }
  }
}

}  // namespace

TEST(ArcPointGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const Matrix f = support::random_matrix(8, 4, rng);
    const Matrix w = support::random_matrix(4, 3, rng);
    std::vector<std::int32_t> labels{0, 1, 2, 0, 1, 2, 0, 1};
    std::vector<std::uint8_t> ann{1, 1, 1, 0, 0, 0, 0, static_cast<std::uint8_t>(t % 2)};
    ArcConfig cfg;
    cfg.gamma = 0.3;
    check_head_gradient(f, w, labels, ann, cfg);
  }
}

TEST(ArcPointGradient, ClampActiveAtParallelAnchor) {
  // Anchor 0 lies exactly on its prototype, so the clamp holds the margined
  // logit flat; the remaining columns still carry gradient.
  std::mt19937_64 rng(13);
  Matrix w = support::random_matrix(4, 3, rng);
  Matrix f = support::random_matrix(8, 4, rng);
  for (std::size_t r = 0; r < 4; ++r) f(0, r) = 2.0 * w(r, 0);
  std::vector<std::int32_t> labels{0, 1, 2, 0, 1, 2, 0, 1};
  std::vector<std::uint8_t> ann{1, 1, 1, 0, 0, 0, 0, 0};
  ArcConfig cfg;
  const auto lf = arcpoint_logits(f, w, labels, ann, cfg);
  ASSERT_GE(lf.table.cos(0, 0), kCosineClamp);
  EXPECT_EQ(margin_term(lf.table.cos(0, 0), cfg.s, cfg.m).slope, 0.0);
  const auto hl = head_loss(f, w, labels, ann, cfg);
  for (double v : hl.df.flat()) EXPECT_TRUE(std::isfinite(v));
  check_head_gradient(f, w, labels, ann, cfg);
}
