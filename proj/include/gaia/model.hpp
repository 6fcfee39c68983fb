#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gaia/geometry.hpp"
#include "gaia/matrix.hpp"
#include "gaia/uncertainty.hpp"

namespace gaia {

inline constexpr std::size_t kInputChannels = 6;  // xyz (centered) + rgb
inline constexpr std::size_t kEncoderBlocks = 2;
inline constexpr double kStandardizeEps = 1e-5;

struct ModelShape {
  std::size_t width1 = 32;
  std::size_t width2 = 32;
  std::size_t classes = 4;

  bool operator==(const ModelShape&) const = default;
};

/// Encoder weights, entropy-block projections and the class prototypes W
/// (columns are class directions on the hypersphere).
struct ModelParams {
  Matrix enc1_w, enc1_b;
  Matrix enc2_w, enc2_b;
  EntropyBlockParams eb1, eb2;
  Matrix protos;

  static ModelParams zeros(const ModelShape& s) {
    ModelParams p;
    p.enc1_w = Matrix(kInputChannels, s.width1);
    p.enc1_b = Matrix(1, s.width1);
    p.enc2_w = Matrix(s.width1, s.width2);
    p.enc2_b = Matrix(1, s.width2);
    p.eb1 = {Matrix(s.width1, s.classes), Matrix(1, s.classes),
             Matrix(s.classes, s.width1), Matrix(1, s.width1)};
    p.eb2 = {Matrix(s.width2, s.classes), Matrix(1, s.classes),
             Matrix(s.classes, s.width2), Matrix(1, s.width2)};
    p.protos = Matrix(s.width2, s.classes);
    return p;
  }

  ModelShape shape() const {
    return {enc1_w.cols(), enc2_w.cols(), protos.cols()};
  }

  // Fixed order; checkpoints and the optimizer rely on it.
  std::array<Matrix*, 13> tensors() {
    return {&enc1_w, &enc1_b, &enc2_w, &enc2_b,
            &eb1.proj_in, &eb1.bias_in, &eb1.proj_out, &eb1.bias_out,
            &eb2.proj_in, &eb2.bias_in, &eb2.proj_out, &eb2.bias_out,
            &protos};
  }
  std::array<const Matrix*, 13> tensors() const {
    auto t = const_cast<ModelParams*>(this)->tensors();
    std::array<const Matrix*, 13> out{};
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i];
    return out;
  }
  static constexpr std::array<const char*, 13> kTensorNames{
      "enc1_w", "enc1_b", "enc2_w", "enc2_b",
      "eb1_proj_in", "eb1_bias_in", "eb1_proj_out", "eb1_bias_out",
      "eb2_proj_in", "eb2_bias_in", "eb2_proj_out", "eb2_bias_out",
      "protos"};

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto* t : tensors()) n += t->size();
    return n;
  }

  bool operator==(const ModelParams& o) const {
    auto a = tensors();
    auto b = o.tensors();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(*a[i] == *b[i])) return false;
    return true;
  }
};

/// He-normal weights, zero biases, unit-normal prototypes.
inline ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(shape);
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& m, double stddev) {
    std::normal_distribution<double> nd(0.0, stddev);
    for (auto& v : m.flat()) v = nd(rng);
  };
  fill(p.enc1_w, std::sqrt(2.0 / kInputChannels));
  fill(p.enc2_w, std::sqrt(2.0 / shape.width1));
  fill(p.eb1.proj_in, std::sqrt(1.0 / shape.width1));
  fill(p.eb1.proj_out, std::sqrt(1.0 / shape.classes));
  fill(p.eb2.proj_in, std::sqrt(1.0 / shape.width2));
  fill(p.eb2.proj_out, std::sqrt(1.0 / shape.classes));
  fill(p.protos, 1.0);
  return p;
}

/// Partials of a scalar loss for every ModelParams tensor.
struct GradientTape {
  ModelParams partials;

  GradientTape() = default;
  explicit GradientTape(const ModelShape& s) : partials(ModelParams::zeros(s)) {}

  void zero() {
    for (auto* t : partials.tensors()) t->fill(0.0);
  }
  GradientTape& operator+=(const GradientTape& o) {
    auto a = partials.tensors();
    auto b = o.partials.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) *a[i] += *b[i];
    return *this;
  }
  void scale(double f) {
    for (auto* t : partials.tensors())
      for (auto& v : t->flat()) v *= f;
  }
};

struct ModelOptions {
  std::array<bool, kEncoderBlocks> entropy_block{true, true};
  EntropyBlockOptions block;
};

/// Network input: coordinates centered on the cloud mean, colors centered on
/// mid-grey.
inline Matrix input_features(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  Vec3 mean{};
  for (const auto& p : cloud.coords)
    for (int a = 0; a < 3; ++a) mean[a] += p[a];
  for (auto& v : mean) v /= static_cast<double>(n);
  Matrix x(n, kInputChannels);
  for (std::size_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) {
      x(i, static_cast<std::size_t>(a)) = cloud.coords[i][a] - mean[a];
      x(i, static_cast<std::size_t>(a) + 3) = cloud.colors[i][a] - 0.5;
    }
  return x;
}

namespace layers {

/// Per-row standardization (zero mean, unit variance across channels).
inline Matrix standardize(const Matrix& z, std::vector<double>& inv_sigma) {
  Matrix out(z.rows(), z.cols());
  inv_sigma.resize(z.rows());
  const double inv_d = 1.0 / static_cast<double>(z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    double mu = 0.0;
    for (auto v : r) mu += v;
    mu *= inv_d;
    double var = 0.0;
    for (auto v : r) var += (v - mu) * (v - mu);
    var *= inv_d;
    const double is = 1.0 / std::sqrt(var + kStandardizeEps);
    inv_sigma[i] = is;
    for (std::size_t c = 0; c < r.size(); ++c) out(i, c) = (r[c] - mu) * is;
  }
  return out;
}

inline Matrix standardize_backward(const Matrix& out,
                                   const std::vector<double>& inv_sigma,
                                   const Matrix& d_out) {
  Matrix dz(out.rows(), out.cols());
  const double inv_d = 1.0 / static_cast<double>(out.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double mean_g = 0.0, mean_gy = 0.0;
    for (std::size_t c = 0; c < out.cols(); ++c) {
      mean_g += d_out(i, c);
      mean_gy += d_out(i, c) * out(i, c);
    }
    mean_g *= inv_d;
    mean_gy *= inv_d;
    for (std::size_t c = 0; c < out.cols(); ++c)
      dz(i, c) = inv_sigma[i] * (d_out(i, c) - mean_g - out(i, c) * mean_gy);
  }
  return dz;
}

inline Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (auto& v : y.flat()) v = v > 0.0 ? v : 0.0;
  return y;
}

inline Matrix relu_backward(const Matrix& x, const Matrix& d_out) {
  Matrix dx = d_out;
  for (std::size_t k = 0; k < dx.size(); ++k)
    if (!(x.flat()[k] > 0.0)) dx.flat()[k] = 0.0;
  return dx;
}

/// y = x W + b backward: accumulates dW, db and returns dx.
inline Matrix linear_backward(const Matrix& x, const Matrix& w,
                              const Matrix& d_out, Matrix& dw, Matrix& db) {
  add_matmul_at(dw, x, d_out);
  add_colsum(db, d_out);
  return matmul_bt(d_out, w);
}

}  // namespace layers

/// Everything the backward pass needs from one forward evaluation.
struct ForwardPass {
  bool recorded = false;
  ModelOptions options;
  Matrix input;
  std::array<Matrix, kEncoderBlocks> pre;     // linear outputs
  std::array<Matrix, kEncoderBlocks> normed;  // standardized
  std::array<std::vector<double>, kEncoderBlocks> inv_sigma;
  std::array<Matrix, kEncoderBlocks> act;     // after ReLU
  std::array<EntropyBlockCache, kEncoderBlocks> blocks;
  std::array<Matrix, kEncoderBlocks> out;     // block outputs
  Matrix embedding;

  /// Entropy diagnostics of block b, or nullptr when that block is disabled.
  const EntropyField* entropy(std::size_t b) const {
    return options.entropy_block[b] ? &blocks[b].field : nullptr;
  }
};

/// Two (linear, standardize, ReLU) encoder blocks, each optionally followed
/// by an entropy block over its k-NN graph. `graphs[b]` serves block b.
inline ForwardPass forward(const PointCloud& cloud,
                           std::span<const KnnGraph> graphs,
                           const ModelParams& params,
                           const ModelOptions& options = {}) {
  const std::size_t n = cloud.size();
  require(n >= 1, "empty input");
  require(graphs.size() == kEncoderBlocks, "shape mismatch");
  for (std::size_t b = 0; b < kEncoderBlocks; ++b) {
    if (!options.entropy_block[b]) continue;
    require(graphs[b].k >= 1, "fan-out must be positive");
    require(graphs[b].size() == n, "shape mismatch");
  }

  ForwardPass fp;
  fp.options = options;
  fp.input = input_features(cloud);
  const std::array<const Matrix*, kEncoderBlocks> w{&params.enc1_w, &params.enc2_w};
  const std::array<const Matrix*, kEncoderBlocks> bias{&params.enc1_b, &params.enc2_b};
  const std::array<const EntropyBlockParams*, kEncoderBlocks> eb{&params.eb1, &params.eb2};
  const Matrix* x = &fp.input;
  for (std::size_t b = 0; b < kEncoderBlocks; ++b) {
    fp.pre[b] = matmul(*x, *w[b], bias[b]);
    fp.normed[b] = layers::standardize(fp.pre[b], fp.inv_sigma[b]);
    fp.act[b] = layers::relu(fp.normed[b]);
    if (options.entropy_block[b]) {
      fp.out[b] = entropy_block_forward(fp.act[b], graphs[b], *eb[b],
                                        options.block, fp.blocks[b]);
    } else {
      fp.out[b] = fp.act[b];
    }
    x = &fp.out[b];
  }
  fp.embedding = fp.out[kEncoderBlocks - 1];
  fp.recorded = true;
  return fp;
}

/// Reverse-mode partials of a scalar loss given d loss / d embedding.
/// Prototype partials are left untouched (the loss head adds them).
inline GradientTape backward(const ForwardPass& fp, const ModelParams& params,
                             const Matrix& d_embedding) {
  require(fp.recorded, "backward without forward");
  require(d_embedding.same_shape(fp.embedding), "shape mismatch");
  GradientTape tape(params.shape());
  auto& g = tape.partials;
  const std::array<const Matrix*, kEncoderBlocks> w{&params.enc1_w, &params.enc2_w};
  const std::array<Matrix*, kEncoderBlocks> dw{&g.enc1_w, &g.enc2_w};
  const std::array<Matrix*, kEncoderBlocks> db{&g.enc1_b, &g.enc2_b};
  const std::array<const EntropyBlockParams*, kEncoderBlocks> eb{&params.eb1, &params.eb2};
  const std::array<EntropyBlockParams*, kEncoderBlocks> deb{&g.eb1, &g.eb2};

  Matrix d = d_embedding;
  for (std::size_t b = kEncoderBlocks; b-- > 0;) {
    if (fp.options.entropy_block[b])
      d = entropy_block_backward(fp.blocks[b], *eb[b], d, *deb[b]);
    d = layers::relu_backward(fp.normed[b], d);
    d = layers::standardize_backward(fp.normed[b], fp.inv_sigma[b], d);
    const Matrix& x = b == 0 ? fp.input : fp.out[b - 1];
    d = layers::linear_backward(x, *w[b], d, *dw[b], *db[b]);
  }
  return tape;
}

/// First/second moment estimates, one per parameter tensor.
struct AdamState {
  std::vector<Matrix> m, v;
  std::uint64_t step = 0;

  static AdamState for_params(const ModelParams& p) {
    AdamState s;
    for (const auto* t : p.tensors()) {
      s.m.emplace_back(t->rows(), t->cols());
      s.v.emplace_back(t->rows(), t->cols());
    }
    return s;
  }
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay.
inline void adam_step(ModelParams& params, const GradientTape& tape, double lr,
                      double weight_decay, AdamState& state,
                      const AdamHyper& h = {}) {
  auto ps = params.tensors();
  auto gs = tape.partials.tensors();
  require(state.m.size() == ps.size() && state.v.size() == ps.size(),
          "shape mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < ps.size(); ++t) {
    auto p = ps[t]->flat();
    auto g = gs[t]->flat();
    auto m = state.m[t].flat();
    auto v = state.v[t].flat();
    require(p.size() == g.size() && p.size() == m.size(), "shape mismatch");
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1, vhat = v[k] / bc2;
      p[k] -= lr * (mhat / (std::sqrt(vhat) + h.eps) + weight_decay * p[k]);
    }
  }
}

}  // namespace gaia
