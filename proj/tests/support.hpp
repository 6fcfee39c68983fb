#pragma once
// Random instance builders and the finite-difference gradient checker shared
// by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gaia/gaia.hpp"

namespace support {

using gaia::Matrix;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.flat()) v = nd(rng);
  return m;
}

/// Random cloud in the unit cube with every class present and at least one
/// annotated point per class.
inline gaia::PointCloud random_cloud(std::size_t n, int classes, std::mt19937_64& rng,
                                     double annotate_p = 0.2) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  gaia::PointCloud c;
  c.num_classes = classes;
  c.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      c.coords[i][a] = u(rng);
      c.colors[i][a] = u(rng);
    }
    c.labels[i] = static_cast<std::int32_t>(i % static_cast<std::size_t>(classes));
    c.annotated[i] = (i < static_cast<std::size_t>(classes) || u(rng) < annotate_p) ? 1 : 0;
  }
  return c;
}

inline gaia::KnnGraph random_graph(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  gaia::PointCloud c;
  c.resize(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& p : c.coords)
    for (auto& v : p) v = u(rng);
  return gaia::build_knn_graph(c, k);
}

inline gaia::EntropyBlockParams random_block(std::size_t d, std::size_t y, std::mt19937_64& rng,
                                             double scale = 1.0) {
  return {random_matrix(d, y, rng, scale), random_matrix(1, y, rng, scale),
          random_matrix(y, d, rng, scale), random_matrix(1, d, rng, scale)};
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    m = std::max(m, std::fabs(a.flat()[k] - b.flat()[k]));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::fabs(a[k] - b[k]));
  return m;
}

// ---------------------------------------------------------------------------
// Gradient checking

inline constexpr double kFdStep = 1e-5;
inline constexpr double kRelTolerance = 1e-4;
// Gradients smaller than this are compared absolutely (relative to it).
inline constexpr double kRelFloor = 1e-4;

inline double relative_error(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), kRelFloor});
}

/// Everything discrete the loss depends on: ReLU masks, the sign of every
/// h - h_cal, the GI argmax, which column gets a margin and whether the
/// cosine clamp is hit. A central difference is only meaningful when this
/// does not change across the stencil.
inline std::vector<std::int64_t> loss_signature(const gaia::SceneContext& ctx,
                                                const gaia::ModelParams& p,
                                                const gaia::TrainConfig& cfg, int epoch,
                                                const std::optional<gaia::PointCloud>& aug) {
  std::vector<std::int64_t> sig;
  auto add_view = [&](const gaia::PointCloud& cloud, std::span<const gaia::KnnGraph> graphs) {
    auto v = gaia::training_detail::evaluate_view(cloud, graphs, ctx.train_labels, p, cfg);
    for (std::size_t b = 0; b < gaia::kEncoderBlocks; ++b) {
      for (double x : v.fp.normed[b].flat()) sig.push_back(x > 0.0);
      if (v.fp.options.entropy_block[b]) {
        for (double s : v.fp.blocks[b].kink_sign) sig.push_back(static_cast<std::int64_t>(s));
        sig.push_back(static_cast<std::int64_t>(v.fp.blocks[b].gi_argmax));
      }
    }
    for (std::size_t i = 0; i < v.logits.margin_column.size(); ++i) {
      const auto col = v.logits.margin_column[i];
      sig.push_back(col);
      if (col >= 0) {
        const double c = v.logits.table.cos(i, static_cast<std::size_t>(col));
        sig.push_back(std::fabs(c) < gaia::kCosineClamp);
      }
    }
  };
  add_view(ctx.cloud, ctx.graphs);
  if (cfg.siamese && epoch >= cfg.siamese_enabled_after && aug) {
    const auto graphs = gaia::build_graphs(*aug, cfg);
    add_view(*aug, graphs);
  }
  return sig;
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // stencil crossed a kink
  double max_rel = 0.0;
  std::string worst;  // tensor[index] of the worst coordinate
};

/// Central differences of total_loss over every parameter coordinate.
inline GradCheck check_total_loss(const gaia::SceneContext& ctx, const gaia::ModelParams& params,
                                  const gaia::TrainConfig& cfg, int epoch,
                                  const std::optional<gaia::PointCloud>& aug) {
  GradCheck out;
  const auto analytic = gaia::total_loss(ctx, params, cfg, epoch, aug).grad;
  const auto base_sig = loss_signature(ctx, params, cfg, epoch, aug);
  gaia::ModelParams p = params;
  auto tensors = p.tensors();
  const auto grads = analytic.partials.tensors();
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto flat = tensors[t]->flat();
    for (std::size_t k = 0; k < flat.size(); ++k) {
      const double orig = flat[k];
      flat[k] = orig + kFdStep;
      const double up = gaia::total_loss(ctx, p, cfg, epoch, aug).value;
      const bool same_up = loss_signature(ctx, p, cfg, epoch, aug) == base_sig;
      flat[k] = orig - kFdStep;
      const double down = gaia::total_loss(ctx, p, cfg, epoch, aug).value;
      const bool same_down = loss_signature(ctx, p, cfg, epoch, aug) == base_sig;
      flat[k] = orig;
      if (!same_up || !same_down) {
        ++out.skipped;
        continue;
      }
      ++out.checked;
      const double numeric = (up - down) / (2.0 * kFdStep);
      const double rel = relative_error(grads[t]->flat()[k], numeric);
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = std::string(gaia::ModelParams::kTensorNames[t]) + "[" + std::to_string(k) + "]";
      }
    }
  }
  return out;
}

struct GradInstance {
  gaia::TrainConfig cfg;
  gaia::SceneContext ctx;
  gaia::ModelParams params;
  std::optional<gaia::PointCloud> aug;
  int epoch = 0;
  std::string label;
};

/// Small random training problem. `variant` bits: 1 margin, 2 entropy
/// block, 4 Siamese branch.
inline GradInstance gradient_instance(std::uint64_t seed, unsigned variant, std::size_t n = 8) {
  std::mt19937_64 rng(seed);
  GradInstance g;
  auto& cfg = g.cfg;
  cfg.shape = {8, 6, 3};
  cfg.k_schedule = {4, 3};
  cfg.margin = (variant & 1) ? gaia::MarginMode::arcpoint : gaia::MarginMode::none;
  cfg.entropy_block = (variant & 2) != 0;
  cfg.siamese = (variant & 4) != 0;
  cfg.siamese_enabled_after = 1;
  cfg.arc.gamma = 0.4;
  cfg.augment.rot_axis = gaia::Axis::Z;
  cfg.augment.elastic_granularity = 0.5;
  cfg.augment.elastic_magnitude = 0.05;
  cfg.seed = seed;
  g.epoch = cfg.siamese ? 2 : 0;
  auto cloud = random_cloud(n, 3, rng, 0.0);
  g.ctx = gaia::make_context(cloud, cfg, 0);
  g.params = gaia::init_params(cfg.shape, seed * 7 + 1);
  // Nonzero biases so every code path sees generic values.
  for (auto* t : g.params.tensors())
    if (t->rows() == 1)
      for (auto& v : t->flat()) v = std::normal_distribution<double>(0.0, 0.3)(rng);
  if (cfg.siamese)
    g.aug = gaia::augmented_view(g.ctx.cloud, cfg.augment, seed + 99);
  g.label = std::string("margin=") + ((variant & 1) ? "on" : "off") +
            " eb=" + ((variant & 2) ? "on" : "off") + " siamese=" + ((variant & 4) ? "on" : "off");
  return g;
}

}  // namespace support
