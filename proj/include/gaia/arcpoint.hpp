#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "gaia/geometry.hpp"
#include "gaia/matrix.hpp"
#include "gaia/uncertainty.hpp"

namespace gaia {

/// Hypersphere classifier settings: logit scale, additive angular margin
/// (radians) and the entropy quantile above which unlabeled points get the
/// margin.
struct ArcConfig {
  double s = 16.0;
  double m = 0.1;
  double gamma = 0.5;
};

inline void validate(const ArcConfig& c) {
  require(c.s > 0.0, "invalid arc config");
  require(c.m >= 0.0 && c.m < std::numbers::pi / 2, "invalid arc config");
  require(c.gamma >= 0.0 && c.gamma <= 1.0, "invalid arc config");
}

/// Which points receive the angular margin during training.
enum class MarginMode {
  none,      // plain s-scaled cosine softmax
  arcface,   // annotated points at their true class
  arcpoint,  // annotated points + high-entropy unlabeled points via anchors
};

// Cosines are clamped to this band before arccos so the slope stays finite.
inline constexpr double kCosineClamp = 1.0 - 1e-7;

/// s * cos(arccos(c) + m) and its derivative with respect to c.
struct MarginTerm {
  double value;
  double slope;
};

inline MarginTerm margin_term(double cosine, double s, double m) {
  const double c = std::clamp(cosine, -kCosineClamp, kCosineClamp);
  const double theta = std::acos(c);
  const bool inside = cosine > -kCosineClamp && cosine < kCosineClamp;
  const double slope =
      inside ? s * std::sin(theta + m) / std::sqrt(1.0 - c * c) : 0.0;
  return {s * std::cos(theta + m), slope};
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// Cosine similarities between every feature row and every prototype column,
/// with the norms kept for the backward pass.
struct CosineTable {
  Matrix cos;  // N x Y
  std::vector<double> feat_norm;
  std::vector<double> proto_norm;
};

inline CosineTable cosine_table(const Matrix& feats, const Matrix& protos) {
  require(feats.cols() == protos.rows(), "shape mismatch");
  const std::size_t n = feats.rows(), d = protos.rows(), y = protos.cols();
  CosineTable t;
  t.proto_norm.assign(y, 0.0);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < y; ++c) t.proto_norm[c] += protos(r, c) * protos(r, c);
  for (auto& v : t.proto_norm) {
    v = std::sqrt(v);
    require(v > 0.0, "degenerate prototype");
  }
  t.feat_norm.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.feat_norm[i] = norm(feats.row(i));
    require(t.feat_norm[i] > 0.0 && std::isfinite(t.feat_norm[i]),
            "degenerate embedding");
  }
  t.cos = matmul(feats, protos);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < y; ++c)
      t.cos(i, c) /= t.feat_norm[i] * t.proto_norm[c];
  return t;
}

/// Inference logits s * cos(x_i, W_y), no margin.
inline Matrix cosine_logits(const Matrix& feats, const Matrix& protos,
                            double s) {
  Matrix l = cosine_table(feats, protos).cos;
  for (auto& v : l.flat()) v *= s;
  return l;
}

inline double margined_logit(std::span<const double> feat,
                             std::span<const double> proto, double s,
                             double m) {
  require(feat.size() == proto.size(), "shape mismatch");
  const double nf = norm(feat), np = norm(proto);
  require(nf > 0.0 && np > 0.0, "degenerate embedding");
  return margin_term(dot(feat, proto) / (nf * np), s, m).value;
}

/// gamma-quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> values, double gamma) {
  require(!values.empty(), "empty input");
  std::sort(values.begin(), values.end());
  const double pos = gamma * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (pos - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

/// Positions whose entropy is strictly above the gamma-quantile.
inline std::vector<std::size_t> select_above_quantile(
    const std::vector<double>& entropy, double gamma) {
  std::vector<std::size_t> out;
  if (entropy.empty()) return out;
  const double f = quantile(entropy, gamma);
  for (std::size_t i = 0; i < entropy.size(); ++i)
    if (entropy[i] > f) out.push_back(i);
  return out;
}

inline std::vector<std::size_t> select_high_entropy(const Matrix& probs_u,
                                                    double gamma) {
  if (probs_u.rows() == 0) return {};
  return select_above_quantile(point_entropy(probs_u), gamma);
}

/// Label of the anchor with the largest cosine similarity to `point`;
/// ties go to the lowest anchor index.
inline std::int32_t nearest_anchor(const Matrix& anchors,
                                   const std::vector<std::int32_t>& labels,
                                   std::span<const double> point) {
  require(anchors.rows() > 0, "no labeled points");
  require(anchors.rows() == labels.size() && anchors.cols() == point.size(),
          "shape mismatch");
  const double np = norm(point);
  require(np > 0.0, "degenerate embedding");
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t a = 0; a < anchors.rows(); ++a) {
    const double na = norm(anchors.row(a));
    require(na > 0.0, "degenerate embedding");
    const double sim = dot(anchors.row(a), point) / (na * np);
    if (sim > best_sim) {
      best_sim = sim;
      best = a;
    }
  }
  return labels[best];
}

/// Training logits: s*cos everywhere, with s*cos(theta+m) at one column for
/// margined points. `margin_column[i]` is that column or kNoLabel.
struct LogitField {
  Matrix rows;
  std::vector<std::uint8_t> margin_applied;
  std::vector<std::int32_t> routed_class;  // set for routed unlabeled points
  std::vector<std::int32_t> margin_column;
  CosineTable table;
  double s = 0.0;
  double m = 0.0;
};

inline LogitField arcpoint_logits(const Matrix& feats, const Matrix& protos,
                                  const std::vector<std::int32_t>& labels,
                                  const std::vector<std::uint8_t>& annotated,
                                  const ArcConfig& cfg,
                                  MarginMode mode = MarginMode::arcpoint) {
  validate(cfg);
  const std::size_t n = feats.rows();
  require(labels.size() == n && annotated.size() == n, "shape mismatch");

  LogitField out;
  out.s = cfg.s;
  out.m = cfg.m;
  out.table = cosine_table(feats, protos);
  out.rows = out.table.cos;
  for (auto& v : out.rows.flat()) v *= cfg.s;
  out.margin_applied.assign(n, 0);
  out.routed_class.assign(n, kNoLabel);
  out.margin_column.assign(n, kNoLabel);
  if (mode == MarginMode::none) return out;

  auto apply = [&](std::size_t i, std::int32_t col) {
    out.margin_applied[i] = 1;
    out.margin_column[i] = col;
    out.rows(i, static_cast<std::size_t>(col)) =
        margin_term(out.table.cos(i, static_cast<std::size_t>(col)), cfg.s, cfg.m)
            .value;
  };

  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < n; ++i) {
    if (annotated[i]) {
      require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < protos.cols(),
              "label out of range");
      apply(i, labels[i]);
    } else {
      unlabeled.push_back(i);
    }
  }
  if (mode != MarginMode::arcpoint || unlabeled.empty()) return out;

  // Selection entropy comes from the unmargined s-scaled cosine logits.
  std::vector<double> h(unlabeled.size());
  const Matrix plain = [&] {
    Matrix l = out.table.cos;
    for (auto& v : l.flat()) v *= cfg.s;
    return l;
  }();
  for (std::size_t u = 0; u < unlabeled.size(); ++u)
    h[u] = softmax_entropy(plain.row(unlabeled[u]));
  const auto selected = select_above_quantile(h, cfg.gamma);
  if (selected.empty()) return out;

  const std::size_t n_anchor = n - unlabeled.size();
  Matrix anchors(n_anchor, feats.cols());
  std::vector<std::int32_t> anchor_labels;
  anchor_labels.reserve(n_anchor);
  for (std::size_t i = 0, a = 0; i < n; ++i)
    if (annotated[i]) {
      std::copy(feats.row(i).begin(), feats.row(i).end(), anchors.row(a++).begin());
      anchor_labels.push_back(labels[i]);
    }
  for (auto u : selected) {
    const auto i = unlabeled[u];
    const auto cls = nearest_anchor(anchors, anchor_labels, feats.row(i));
    out.routed_class[i] = cls;
    apply(i, cls);
  }
  return out;
}

/// Loss value with its gradient with respect to the logit rows.
struct LossWithGrad {
  double value = 0.0;
  Matrix d_logits;
};

/// Mean cross-entropy over annotated points of the (margined) logits.
inline LossWithGrad loss_ce(const Matrix& logits,
                            const std::vector<std::int32_t>& labels,
                            const std::vector<std::uint8_t>& annotated) {
  const std::size_t n = logits.rows(), y = logits.cols();
  require(labels.size() == n && annotated.size() == n, "shape mismatch");
  std::size_t a = 0;
  for (auto f : annotated) a += f ? 1 : 0;
  require(a > 0, "no supervision");

  LossWithGrad out;
  out.d_logits = Matrix(n, y);
  std::vector<double> p(y);
  const double inv = 1.0 / static_cast<double>(a);
  for (std::size_t i = 0; i < n; ++i) {
    if (!annotated[i]) continue;
    const auto t = static_cast<std::size_t>(labels[i]);
    require(t < y, "label out of range");
    auto z = logits.row(i);
    double mx = z[0];
    for (auto v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (auto v : z) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    out.value += inv * (lse - z[t]);
    for (std::size_t c = 0; c < y; ++c)
      out.d_logits(i, c) = inv * (std::exp(z[c] - lse) - (c == t ? 1.0 : 0.0));
  }
  return out;
}

enum class SiameseReduction {
  per_point,  // ||P - P'||_F / N
  averaged,   // || mean_i P_i - mean_i P'_i ||_2
};

struct SiameseLoss {
  double value = 0.0;
  Matrix d_orig;  // d loss / d P
  Matrix d_aff;   // d loss / d P'
};

inline SiameseLoss loss_siamese(const Matrix& p_orig, const Matrix& p_aff,
                                SiameseReduction mode = SiameseReduction::per_point) {
  require(p_orig.same_shape(p_aff) && p_orig.rows() > 0, "shape mismatch");
  const std::size_t n = p_orig.rows(), y = p_orig.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  SiameseLoss out;
  out.d_orig = Matrix(n, y);
  out.d_aff = Matrix(n, y);
  if (mode == SiameseReduction::per_point) {
    double sq = 0.0;
    for (std::size_t k = 0; k < p_orig.size(); ++k) {
      const double d = p_orig.flat()[k] - p_aff.flat()[k];
      sq += d * d;
    }
    const double nrm = std::sqrt(sq);
    out.value = nrm * inv_n;
    if (nrm > 0.0)
      for (std::size_t k = 0; k < p_orig.size(); ++k) {
        const double g = (p_orig.flat()[k] - p_aff.flat()[k]) * inv_n / nrm;
        out.d_orig.flat()[k] = g;
        out.d_aff.flat()[k] = -g;
      }
  } else {
    std::vector<double> diff(y, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < y; ++c)
        diff[c] += (p_orig(i, c) - p_aff(i, c)) * inv_n;
    const double nrm = std::sqrt(dot<double>(diff, diff));
    out.value = nrm;
    if (nrm > 0.0)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < y; ++c) {
          const double g = diff[c] * inv_n / nrm;
          out.d_orig(i, c) = g;
          out.d_aff(i, c) = -g;
        }
  }
  return out;
}

/// Given d loss / d softmax(z) per row, returns d loss / d z.
inline Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs) {
  Matrix dz(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const double inner = dot(probs.row(i), d_probs.row(i));
    for (std::size_t c = 0; c < probs.cols(); ++c)
      dz(i, c) = probs(i, c) * (d_probs(i, c) - inner);
  }
  return dz;
}

/// Back-propagates d loss / d logits to the features (returned) and
/// accumulates into `d_protos`. Routing and selection are constants.
inline Matrix logits_backward(const LogitField& lf, const Matrix& feats,
                              const Matrix& protos, const Matrix& d_logits,
                              Matrix& d_protos) {
  const auto& t = lf.table;
  const std::size_t n = feats.rows(), d = feats.cols(), y = protos.cols();
  require(d_logits.rows() == n && d_logits.cols() == y, "shape mismatch");
  // d loss / d cos
  Matrix d_cos(n, y);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < y; ++c) {
      double slope = lf.s;
      if (lf.margin_column[i] == static_cast<std::int32_t>(c))
        slope = margin_term(t.cos(i, c), lf.s, lf.m).slope;
      d_cos(i, c) = d_logits(i, c) * slope;
    }
  // cos = x.w / (|x||w|):
  //   d/dx = w/(|x||w|) - cos x/|x|^2,  d/dw = x/(|x||w|) - cos w/|w|^2
  Matrix d_feats(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double nx = t.feat_norm[i];
    for (std::size_t c = 0; c < y; ++c) {
      const double g = d_cos(i, c);
      if (g == 0.0) continue;
      const double nw = t.proto_norm[c];
      const double a = g / (nx * nw), b = g * t.cos(i, c) / (nx * nx);
      const double bw = g * t.cos(i, c) / (nw * nw);
      for (std::size_t r = 0; r < d; ++r) {
        d_feats(i, r) += a * protos(r, c) - b * feats(i, r);
        d_protos(r, c) += a * feats(i, r) - bw * protos(r, c);
      }
    }
  }
  return d_feats;
}

}  // namespace gaia
