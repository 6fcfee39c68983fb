#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "gaia/arcpoint.hpp"
#include "gaia/checkpoint.hpp"
#include "gaia/config.hpp"
#include "gaia/evaluation.hpp"
#include "gaia/geometry.hpp"
#include "gaia/model.hpp"

namespace gaia {

/// splitmix64 finalizer over a running combination of the inputs.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ull;
  for (auto p : parts) {
    h += p + 0x9E3779B97F4A7C15ull;
    h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ull;
    h = (h ^ (h >> 27)) * 0x94D049BB133111EBull;
    h ^= h >> 31;
  }
  return h;
}

struct SparseLabels {
  PointCloud cloud;
  std::vector<std::string> warnings;
};

/// Marks the supervised subset. Ground-truth labels stay on every point (for
/// evaluation); training code only reads labels where `annotated` is set.
inline SparseLabels sample_sparse_labels(const PointCloud& cloud,
                                         const LabelScheme& scheme,
                                         std::uint64_t seed) {
  require(cloud.size() >= 1, "empty input");
  for (auto l : cloud.labels) require(l != kNoLabel, "input must be fully labeled");
  SparseLabels out{cloud, {}};
  std::fill(out.cloud.annotated.begin(), out.cloud.annotated.end(), std::uint8_t{0});

  std::map<std::int32_t, std::vector<std::uint32_t>> by_class;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    by_class[cloud.labels[i]].push_back(static_cast<std::uint32_t>(i));

  std::map<std::int32_t, std::size_t> want;
  switch (scheme.kind) {
    case LabelScheme::Kind::one_point:
      for (const auto& [c, idx] : by_class) want[c] = 1;
      break;
    case LabelScheme::Kind::twenty_points: {
      // Round-robin over present classes in ascending id.
      const std::size_t classes = by_class.size();
      std::size_t r = 0;
      for (const auto& [c, idx] : by_class) {
        want[c] = 20 / classes + (r < 20 % classes ? 1 : 0);
        ++r;
      }
      break;
    }
    case LabelScheme::Kind::percent:
      for (const auto& [c, idx] : by_class)
        want[c] = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(scheme.fraction * static_cast<double>(idx.size()))));
      break;
  }

  std::mt19937_64 rng(seed);
  for (auto& [c, idx] : by_class) {
    std::size_t k = want[c];
    if (k > idx.size()) {
      out.warnings.push_back("class " + std::to_string(c) + " has " +
                             std::to_string(idx.size()) + " points, fewer than the " +
                             std::to_string(k) + " requested; annotating all");
      k = idx.size();
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t t = 0; t < k; ++t) out.cloud.annotated[idx[t]] = 1;
  }
  return out;
}

/// A scene prepared for training: sparse labels, masked label vector and
/// the per-block k-NN graphs of the original view.
struct SceneContext {
  PointCloud cloud;
  std::vector<std::int32_t> train_labels;  // kNoLabel where not annotated
  std::array<KnnGraph, kEncoderBlocks> graphs;
  std::size_t index = 0;
};

inline std::array<KnnGraph, kEncoderBlocks> build_graphs(const PointCloud& cloud,
                                                         const TrainConfig& cfg) {
  std::array<KnnGraph, kEncoderBlocks> g;
  if (!cfg.entropy_block) return g;
  for (std::size_t b = 0; b < kEncoderBlocks; ++b) g[b] = build_knn_graph(cloud, cfg.k_schedule[b]);
  return g;
}

inline std::vector<std::int32_t> masked_labels(const PointCloud& c) {
  std::vector<std::int32_t> out(c.size(), kNoLabel);
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c.annotated[i]) out[i] = c.labels[i];
  return out;
}

/// Builds a context from a cloud whose `annotated` flags are already set.
inline SceneContext make_context(PointCloud cloud, const TrainConfig& cfg, std::size_t index) {
  validate(cloud);
  require(cloud.num_classes == static_cast<int>(cfg.shape.classes), "class count mismatch");
  SceneContext ctx;
  ctx.train_labels = masked_labels(cloud);
  ctx.graphs = build_graphs(cloud, cfg);
  ctx.cloud = std::move(cloud);
  ctx.index = index;
  return ctx;
}

struct LossComponents {
  double ce = 0.0;
  double ce_aff = 0.0;
  double sia = 0.0;
  double total() const { return ce + ce_aff + sia; }
};

struct LossResult {
  double value = 0.0;
  LossComponents components;
  GradientTape grad;
  double mean_entropy = 0.0;    // inference entropy on the original view
  std::size_t selected = 0;     // margin-routed unlabeled points
};

namespace training_detail {

struct ViewEval {
  ForwardPass fp;
  LogitField logits;
  Matrix probs;
};

inline ViewEval evaluate_view(const PointCloud& cloud,
                              std::span<const KnnGraph> graphs,
                              const std::vector<std::int32_t>& labels,
                              const ModelParams& params, const TrainConfig& cfg) {
  ViewEval v;
  v.fp = forward(cloud, graphs, params, cfg.model_options());
  v.logits = arcpoint_logits(v.fp.embedding, params.protos, labels, cloud.annotated,
                             cfg.arc, cfg.margin);
  v.probs = softmax_rows(v.logits.rows);
  return v;
}

inline void backprop_view(const ViewEval& v, const ModelParams& params,
                          const Matrix& d_logits, GradientTape& tape) {
  const Matrix d_emb = logits_backward(v.logits, v.fp.embedding, params.protos, d_logits,
                                       tape.partials.protos);
  tape += backward(v.fp, params, d_emb);
}

}  // namespace training_detail

/// The augmented view used by the Siamese branch: affine jitter/flip/rotate
/// followed by elastic distortion.
inline PointCloud augmented_view(const PointCloud& cloud, const AugmentParams& aug,
                                 std::uint64_t seed) {
  PointCloud out = affine_augment(cloud, aug, mix_seed({seed, 1}));
  if (aug.elastic_magnitude > 0.0 && aug.elastic_granularity > 0.0)
    out = elastic_distort(out, aug, mix_seed({seed, 2}));
  return out;
}

inline std::uint64_t augment_seed(const TrainConfig& cfg, int epoch, std::size_t scene) {
  return mix_seed({cfg.seed, 0xA11A, static_cast<std::uint64_t>(epoch), scene});
}

/// L = L_ce (+ L_ce^aff + L_sia once the Siamese branch is active) and its
/// gradient with respect to every parameter.
inline LossResult total_loss(const SceneContext& ctx, const ModelParams& params,
                             const TrainConfig& cfg, int epoch,
                             const std::optional<PointCloud>& aug_override = std::nullopt) {
  using namespace training_detail;
  require(ctx.cloud.annotated_count() >= 1, "no annotated points");
  LossResult r;
  r.grad = GradientTape(params.shape());

  const ViewEval orig = evaluate_view(ctx.cloud, ctx.graphs, ctx.train_labels, params, cfg);
  const LossWithGrad ce = loss_ce(orig.logits.rows, ctx.train_labels, ctx.cloud.annotated);
  r.components.ce = ce.value;
  Matrix d_orig = ce.d_logits;

  double h_sum = 0.0;
  for (std::size_t i = 0; i < orig.logits.table.cos.rows(); ++i) {
    std::vector<double> z(orig.logits.table.cos.row(i).begin(), orig.logits.table.cos.row(i).end());
    for (auto& v : z) v *= cfg.arc.s;
    h_sum += softmax_entropy<double>(z);
  }
  r.mean_entropy = h_sum / static_cast<double>(ctx.cloud.size());
  for (auto c : orig.logits.routed_class) r.selected += c != kNoLabel ? 1 : 0;

  if (cfg.siamese && epoch >= cfg.siamese_enabled_after) {
    const PointCloud aug = aug_override ? *aug_override
                                        : augmented_view(ctx.cloud, cfg.augment,
                                                         augment_seed(cfg, epoch, ctx.index));
    require(aug.size() == ctx.cloud.size(), "shape mismatch");
    const auto graphs = build_graphs(aug, cfg);
    const ViewEval av = evaluate_view(aug, graphs, ctx.train_labels, params, cfg);
    const LossWithGrad ce_aff = loss_ce(av.logits.rows, ctx.train_labels, aug.annotated);
    const SiameseLoss sia = loss_siamese(orig.probs, av.probs, cfg.siamese_reduction);
    r.components.ce_aff = ce_aff.value;
    r.components.sia = sia.value;
    d_orig += softmax_backward(orig.probs, sia.d_orig);
    Matrix d_aug = ce_aff.d_logits;
    d_aug += softmax_backward(av.probs, sia.d_aff);
    backprop_view(av, params, d_aug, r.grad);
  }
  backprop_view(orig, params, d_orig, r.grad);
  r.value = r.components.total();
  return r;
}

/// Convenience overload: builds the graphs from `cloud` first.
inline LossResult total_loss(const PointCloud& cloud, const ModelParams& params,
                             const TrainConfig& cfg, int epoch) {
  return total_loss(make_context(cloud, cfg, 0), params, cfg, epoch);
}

/// Inference: argmax of the margin-free cosine logits.
struct Prediction {
  std::vector<std::int32_t> labels;
  Matrix probs;
  ForwardPass fp;
};

inline Prediction predict(const PointCloud& cloud, std::span<const KnnGraph> graphs,
                          const ModelParams& params, const TrainConfig& cfg) {
  Prediction p;
  p.fp = forward(cloud, graphs, params, cfg.model_options());
  const Matrix logits = cosine_logits(p.fp.embedding, params.protos, cfg.arc.s);
  p.probs = softmax_rows(logits);
  p.labels = eval::argmax_rows(logits);
  return p;
}

struct SceneScore {
  eval::IoUReport iou;
  double mean_entropy = 0.0;
  std::uint64_t false_low_entropy = 0;
};

/// Pooled mIoU and entropy statistics over a set of prepared scenes.
inline SceneScore score_scenes(std::span<const SceneContext> scenes, const ModelParams& params,
                               const TrainConfig& cfg) {
  std::vector<std::int32_t> preds, truth;
  Matrix all_probs;
  std::vector<Matrix> probs;
  double h_sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : scenes) {
    auto p = predict(s.cloud, s.graphs, params, cfg);
    preds.insert(preds.end(), p.labels.begin(), p.labels.end());
    truth.insert(truth.end(), s.cloud.labels.begin(), s.cloud.labels.end());
    for (auto h : point_entropy(p.probs)) h_sum += h;
    n += s.cloud.size();
    probs.push_back(std::move(p.probs));
  }
  SceneScore sc;
  sc.iou = eval::miou(preds, truth, static_cast<int>(cfg.shape.classes));
  sc.mean_entropy = n ? h_sum / static_cast<double>(n) : 0.0;
  std::size_t offset = 0;
  for (const auto& p : probs) {
    std::vector<std::int32_t> pr(preds.begin() + static_cast<std::ptrdiff_t>(offset),
                                 preds.begin() + static_cast<std::ptrdiff_t>(offset + p.rows()));
    std::vector<std::int32_t> tr(truth.begin() + static_cast<std::ptrdiff_t>(offset),
                                 truth.begin() + static_cast<std::ptrdiff_t>(offset + p.rows()));
    sc.false_low_entropy += eval::entropy_by_correctness(p, pr, tr).false_low_entropy;
    offset += p.rows();
  }
  return sc;
}

/// One record per epoch; append-only.
struct EpochRecord {
  int epoch = 0;
  LossComponents loss;
  double mean_entropy = 0.0;
  double val_miou = 0.0;
  std::size_t selected = 0;
  std::uint64_t false_low_entropy = 0;

  bool operator==(const EpochRecord& o) const {
    return epoch == o.epoch && loss.ce == o.loss.ce && loss.ce_aff == o.loss.ce_aff &&
           loss.sia == o.loss.sia && mean_entropy == o.mean_entropy &&
           val_miou == o.val_miou && selected == o.selected &&
           false_low_entropy == o.false_low_entropy;
  }
};

struct RunLog {
  std::vector<EpochRecord> epochs;

  void append(const EpochRecord& r) {
    require(epochs.empty() || r.epoch > epochs.back().epoch, "run log is append-only");
    epochs.push_back(r);
  }
  bool operator==(const RunLog&) const = default;
};

inline void write_csv(std::ostream& os, const RunLog& log) {
  os << "epoch,loss,ce,ce_aff,sia,mean_entropy,val_miou,selected,false_low_entropy\n";
  os.precision(17);
  for (const auto& r : log.epochs)
    os << r.epoch << ',' << r.loss.total() << ',' << r.loss.ce << ',' << r.loss.ce_aff << ','
       << r.loss.sia << ',' << r.mean_entropy << ',' << r.val_miou << ',' << r.selected << ','
       << r.false_low_entropy << '\n';
}

struct TrainResult {
  ModelParams params;  // after the last epoch
  ModelParams best;    // highest validation mIoU
  double best_miou = -1.0;
  AdamState adam;
  RunLog log;
  std::vector<std::string> warnings;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
};

/// Prepares training scenes: voxelization then sparse label sampling.
inline std::vector<SceneContext> prepare_training_scenes(std::span<const PointCloud> scenes,
                                                         const TrainConfig& cfg,
                                                         std::vector<std::string>* warnings = nullptr) {
  std::vector<SceneContext> out;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    PointCloud c = cfg.voxel_size > 0 ? voxel_downsample(scenes[s], cfg.voxel_size) : scenes[s];
    auto sl = sample_sparse_labels(c, cfg.label_scheme, mix_seed({cfg.seed, 0x1ABE1, s}));
    if (warnings)
      for (auto& w : sl.warnings) warnings->push_back("scene " + std::to_string(s) + ": " + w);
    out.push_back(make_context(std::move(sl.cloud), cfg, s));
  }
  return out;
}

inline std::vector<SceneContext> prepare_eval_scenes(std::span<const PointCloud> scenes,
                                                     const TrainConfig& cfg) {
  std::vector<SceneContext> out;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    PointCloud c = cfg.voxel_size > 0 ? voxel_downsample(scenes[s], cfg.voxel_size) : scenes[s];
    std::fill(c.annotated.begin(), c.annotated.end(), std::uint8_t{0});
    out.push_back(make_context(std::move(c), cfg, s));
  }
  return out;
}

/// Two-phase schedule: cross-entropy only until `siamese_enabled_after`,
/// then the full objective. One Adam step per epoch over all training scenes
/// (gradients averaged in scene order, so results do not depend on
/// `cfg.threads`). Validation falls back to the training scenes' full
/// ground truth when no validation scenes are given.
inline TrainResult train(const TrainConfig& cfg, std::span<const PointCloud> scenes,
                         std::span<const PointCloud> val_scenes = {},
                         const TrainOptions& opt = {}) {
  validate(cfg);
  require(!scenes.empty(), "no training scenes");
  TrainResult res;
  res.params = init_params(cfg.shape, mix_seed({cfg.seed, 0x1417}));
  res.adam = AdamState::for_params(res.params);
  res.best = res.params;
  if (cfg.total_epochs == 0) return res;

  const auto train_ctx = prepare_training_scenes(scenes, cfg, &res.warnings);
  const auto val_ctx = val_scenes.empty() ? std::vector<SceneContext>{}
                                          : prepare_eval_scenes(val_scenes, cfg);
  std::span<const SceneContext> val_view =
      val_ctx.empty() ? std::span<const SceneContext>(train_ctx) : std::span<const SceneContext>(val_ctx);

  if (opt.checkpoint_dir) std::filesystem::create_directories(*opt.checkpoint_dir);

  const std::size_t n_scenes = train_ctx.size();
  std::vector<LossResult> per_scene(n_scenes);
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const std::size_t workers = std::min(cfg.threads, n_scenes);
    if (workers <= 1) {
      for (std::size_t s = 0; s < n_scenes; ++s)
        per_scene[s] = total_loss(train_ctx[s], res.params, cfg, epoch);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t s = w; s < n_scenes; s += workers)
            per_scene[s] = total_loss(train_ctx[s], res.params, cfg, epoch);
        });
    }

    GradientTape grad(res.params.shape());
    EpochRecord rec;
    rec.epoch = epoch;
    const double inv = 1.0 / static_cast<double>(n_scenes);
    for (const auto& r : per_scene) {
      grad += r.grad;
      rec.loss.ce += r.components.ce * inv;
      rec.loss.ce_aff += r.components.ce_aff * inv;
      rec.loss.sia += r.components.sia * inv;
      rec.mean_entropy += r.mean_entropy * inv;
      rec.selected += r.selected;
    }
    grad.scale(inv);
    adam_step(res.params, grad, cfg.lr, cfg.weight_decay, res.adam);

    const SceneScore score = score_scenes(val_view, res.params, cfg);
    rec.val_miou = score.iou.miou;
    rec.false_low_entropy = score.false_low_entropy;
    res.log.append(rec);
    if (rec.val_miou > res.best_miou) {
      res.best_miou = rec.val_miou;
      res.best = res.params;
      if (opt.checkpoint_dir)
        save_checkpoint((*opt.checkpoint_dir / "best.ckpt").string(), cfg, res.best, res.adam);
    }
  }
  if (opt.checkpoint_dir)
    save_checkpoint((*opt.checkpoint_dir / "final.ckpt").string(), cfg, res.params, res.adam);
  return res;
}

}  // namespace gaia
