#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gaia/geometry.hpp"
#include "gaia/matrix.hpp"

namespace gaia {

/// Per-point entropy diagnostics of one entropy block (all in nats).
struct EntropyField {
  std::vector<double> h;
  std::vector<double> h_cal;
  std::vector<double> gi;
};

/// Neighbor distances below this are clamped before the inverse-square weight.
inline constexpr double kMinNeighborDistance = 1e-6;

template <typename T>
void softmax_row(std::span<const T> logits, std::span<T> out) {
  T mx = logits[0];
  for (auto v : logits) mx = std::max(mx, v);
  T sum{};
  for (std::size_t j = 0; j < logits.size(); ++j)
    sum += out[j] = std::exp(logits[j] - mx);
  for (auto& v : out) v /= sum;
}

template <typename T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& logits) {
  BasicMatrix<T> p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i)
    softmax_row<T>(logits.row(i), p.row(i));
  return p;
}

/// Entropy of softmax(logits), computed through log-softmax so that
/// saturated rows stay exact.
template <typename T>
T softmax_entropy(std::span<const T> logits) {
  T mx = logits[0];
  for (auto v : logits) mx = std::max(mx, v);
  T sum{};
  for (auto v : logits) sum += std::exp(v - mx);
  const T lse = mx + std::log(sum);
  T h{};
  for (auto v : logits) {
    const T lp = v - lse;
    h -= std::exp(lp) * lp;
  }
  return std::max(h, T{});
}

/// Shannon entropy (natural log) of each probability row; 0 log 0 = 0.
template <typename T>
std::vector<T> point_entropy(const BasicMatrix<T>& probs) {
  std::vector<T> h(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    T sum{}, acc{};
    for (auto p : probs.row(i)) {
      require(p >= T{} && std::isfinite(p), "invalid distribution");
      sum += p;
      if (p > T{}) acc -= p * std::log(p);
    }
    require(std::abs(sum - T{1}) <= T(1e-6), "invalid distribution");
    h[i] = std::max(acc, T{});
  }
  return h;
}

enum class Calibration {
  inverse_square,  // distance-weighted mean of neighbor entropies
  plain_sum,       // unweighted sum over neighbors (ablation)
};

/// Normalized inverse-square-distance weights of row i of the graph.
inline void calibration_weights(const KnnGraph& graph, std::size_t i,
                                std::span<double> w) {
  double total = 0.0;
  for (std::size_t j = 0; j < graph.k; ++j) {
    const double d = std::max(graph.dist(i, j), kMinNeighborDistance);
    total += w[j] = 1.0 / (d * d);
  }
  for (auto& v : w) v /= total;
}

template <typename T>
std::vector<T> calibrated_entropy(const std::vector<T>& h, const KnnGraph& graph,
                                  Calibration mode = Calibration::inverse_square) {
  require(graph.size() == h.size(), "shape mismatch");
  std::vector<T> out(h.size());
  std::vector<double> w(graph.k);
  for (std::size_t i = 0; i < h.size(); ++i) {
    T acc{};
    if (mode == Calibration::inverse_square) {
      // Accumulate deviations from h[i] so a flat neighborhood reproduces
      // h[i] exactly (the weights only sum to 1 up to rounding).
      calibration_weights(graph, i, w);
      for (std::size_t j = 0; j < graph.k; ++j)
        acc += T(w[j]) * (h[graph.neighbor(i, j)] - h[i]);
      acc += h[i];
    } else {
      for (std::size_t j = 0; j < graph.k; ++j) acc += h[graph.neighbor(i, j)];
    }
    out[i] = acc;
  }
  return out;
}

template <typename T>
std::vector<T> graphical_information_gain(const std::vector<T>& h,
                                          const std::vector<T>& h_cal) {
  require(h.size() == h_cal.size(), "shape mismatch");
  std::vector<T> gi(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) gi[i] = std::abs(h[i] - h_cal[i]);
  return gi;
}

/// Row i = (sum over neighbors j of gi[j] * feats[j]) / K. With
/// `normalize = false` the division by K is skipped (ablation).
template <typename T>
BasicMatrix<T> gi_neighbor_aggregate(const BasicMatrix<T>& feats,
                                     const std::vector<T>& gi,
                                     const KnnGraph& graph,
                                     bool normalize = true) {
  require(feats.rows() == gi.size() && graph.size() == gi.size(),
          "shape mismatch");
  BasicMatrix<T> out(feats.rows(), feats.cols());
  const T scale = normalize ? T(1) / T(graph.k) : T(1);
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t j = 0; j < graph.k; ++j) {
      const auto n = graph.neighbor(i, j);
      const T g = gi[n];
      auto f = feats.row(n);
      for (std::size_t c = 0; c < o.size(); ++c) o[c] += g * f[c];
    }
    for (auto& v : o) v *= scale;
  }
  return out;
}

enum class EntropyUpdate {
  full,             // X + X*GI + X^N
  attention_only,   // X + X*GI
  unnormalized,     // X + X*GI + K * X^N  (neighbor sum without /K)
};

struct EntropyBlockOptions {
  Calibration calibration = Calibration::inverse_square;
  EntropyUpdate update = EntropyUpdate::full;
  bool normalize_gi = false;  // divide GI by its per-cloud maximum
};

/// Learned maps around the block: d -> Y going in, Y -> d coming out.
struct EntropyBlockParams {
  Matrix proj_in;   // d x Y
  Matrix bias_in;   // 1 x Y
  Matrix proj_out;  // Y x d
  Matrix bias_out;  // 1 x d
};

/// Intermediates kept by the forward pass for the backward pass.
struct EntropyBlockCache {
  const KnnGraph* graph = nullptr;
  EntropyBlockOptions options;
  Matrix input;      // N x d
  Matrix projected;  // N x Y, the field the block attends over
  Matrix log_probs;  // N x Y
  Matrix updated;    // N x Y
  EntropyField field;
  std::vector<double> gi_used;
  std::vector<double> kink_sign;  // sign(h - h_cal), 0 at the kink
  std::size_t gi_argmax = 0;
  double gi_max = 0.0;
};

/// Forward pass of the entropy block. Returns the d-wide output; the block's
/// entropy diagnostics land in `cache.field`.
inline Matrix entropy_block_forward(const Matrix& input, const KnnGraph& graph,
                                    const EntropyBlockParams& p,
                                    const EntropyBlockOptions& opt,
                                    EntropyBlockCache& cache) {
  const std::size_t n = input.rows();
  require(graph.size() == n, "shape mismatch");
  require(p.proj_in.rows() == input.cols() &&
              p.proj_out.cols() == p.bias_out.cols() &&
              p.proj_in.cols() == p.proj_out.rows(),
          "shape mismatch");
  const std::size_t y = p.proj_in.cols();

  cache.graph = &graph;
  cache.options = opt;
  cache.input = input;
  cache.projected = matmul(input, p.proj_in, &p.bias_in);
  const Matrix& t = cache.projected;

  cache.log_probs = Matrix(n, y);
  auto& field = cache.field;
  field.h.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = t.row(i);
    double mx = z[0];
    for (auto v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (auto v : z) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    double h = 0.0;
    for (std::size_t c = 0; c < y; ++c) {
      const double lp = z[c] - lse;
      cache.log_probs(i, c) = lp;
      h -= std::exp(lp) * lp;
    }
    field.h[i] = std::max(h, 0.0);
  }
  field.h_cal = calibrated_entropy(field.h, graph, opt.calibration);
  field.gi = graphical_information_gain(field.h, field.h_cal);

  cache.kink_sign.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = field.h[i] - field.h_cal[i];
    cache.kink_sign[i] = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
  }

  cache.gi_used = field.gi;
  cache.gi_max = 0.0;
  cache.gi_argmax = 0;
  if (opt.normalize_gi) {
    for (std::size_t i = 0; i < n; ++i)
      if (field.gi[i] > cache.gi_max) {
        cache.gi_max = field.gi[i];
        cache.gi_argmax = i;
      }
    for (auto& g : cache.gi_used) g = cache.gi_max > 0 ? g / cache.gi_max : 0.0;
  }

  cache.updated = Matrix(n, y);
  const auto& gi = cache.gi_used;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < y; ++c)
      cache.updated(i, c) = t(i, c) * (1.0 + gi[i]);
  if (opt.update != EntropyUpdate::attention_only) {
    const Matrix agg =
        gi_neighbor_aggregate(t, gi, graph, opt.update == EntropyUpdate::full);
    cache.updated += agg;
  }
  return matmul(cache.updated, p.proj_out, &p.bias_out);
}

/// Accumulates parameter partials into `grad` and returns d loss / d input.
/// Neighbor distances are constants; the |.| subgradient at 0 is 0.
inline Matrix entropy_block_backward(const EntropyBlockCache& cache,
                                     const EntropyBlockParams& p,
                                     const Matrix& d_out,
                                     EntropyBlockParams& grad) {
  require(cache.graph != nullptr, "backward without forward");
  const KnnGraph& graph = *cache.graph;
  const Matrix& t = cache.projected;
  const std::size_t n = t.rows(), y = t.cols(), k = graph.k;
  require(d_out.rows() == n && d_out.cols() == p.proj_out.cols(),
          "shape mismatch");

  add_matmul_at(grad.proj_out, cache.updated, d_out);
  add_colsum(grad.bias_out, d_out);
  const Matrix d_upd = matmul_bt(d_out, p.proj_out);  // N x Y

  Matrix d_t(n, y);
  std::vector<double> d_gi(n, 0.0);
  const auto& gi = cache.gi_used;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < y; ++c) {
      d_t(i, c) = d_upd(i, c) * (1.0 + gi[i]);
      acc += d_upd(i, c) * t(i, c);
    }
    d_gi[i] = acc;
  }
  if (cache.options.update != EntropyUpdate::attention_only) {
    const double scale =
        cache.options.update == EntropyUpdate::full ? 1.0 / double(k) : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto du = d_upd.row(i);
      for (std::size_t j = 0; j < k; ++j) {
        const auto m = graph.neighbor(i, j);
        const double g = gi[m] * scale;
        double acc = 0.0;
        for (std::size_t c = 0; c < y; ++c) {
          d_t(m, c) += g * du[c];
          acc += du[c] * t(m, c);
        }
        d_gi[m] += scale * acc;
      }
    }
  }

  // Through the optional max-normalization: g' = g / g_max.
  std::vector<double> d_raw(n, 0.0);
  if (cache.options.normalize_gi) {
    if (cache.gi_max > 0) {
      double cross = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d_raw[i] = d_gi[i] / cache.gi_max;
        cross += d_gi[i] * cache.field.gi[i];
      }
      d_raw[cache.gi_argmax] -= cross / (cache.gi_max * cache.gi_max);
    }
  } else {
    d_raw = d_gi;
  }

  // gi = |h - h_cal|, h_cal = sum_j w_ij h_j.
  std::vector<double> d_h(n, 0.0);
  std::vector<double> w(k, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = cache.kink_sign[i] * d_raw[i];
    if (s == 0.0) continue;
    d_h[i] += s;
    if (cache.options.calibration == Calibration::inverse_square)
      calibration_weights(graph, i, w);
    for (std::size_t j = 0; j < k; ++j) d_h[graph.neighbor(i, j)] -= w[j] * s;
  }

  // dH/dz_c = -p_c (log p_c + H)
  for (std::size_t i = 0; i < n; ++i) {
    if (d_h[i] == 0.0) continue;
    const double h = cache.field.h[i];
    for (std::size_t c = 0; c < y; ++c) {
      const double lp = cache.log_probs(i, c);
      d_t(i, c) += -d_h[i] * std::exp(lp) * (lp + h);
    }
  }

  add_matmul_at(grad.proj_in, cache.input, d_t);
  add_colsum(grad.bias_in, d_t);
  return matmul_bt(d_t, p.proj_in);
}

}  // namespace gaia
