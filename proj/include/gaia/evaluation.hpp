#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "gaia/arcpoint.hpp"
#include "gaia/matrix.hpp"
#include "gaia/uncertainty.hpp"

namespace gaia::eval {

/// Per-class IoU. Classes absent from both truth and predictions are not
/// evaluated (nullopt) and do not enter the mean.
struct IoUReport {
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [truth][pred]
};

inline IoUReport miou(const std::vector<std::int32_t>& preds,
                      const std::vector<std::int32_t>& truth, int num_classes) {
  require(preds.size() == truth.size(), "length mismatch");
  require(num_classes >= 1, "invalid class count");
  const auto y = static_cast<std::size_t>(num_classes);
  IoUReport r;
  r.confusion.assign(y, std::vector<std::uint64_t>(y, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth[i] < 0) continue;  // unlabeled ground truth is ignored
    require(truth[i] < num_classes && preds[i] >= 0 && preds[i] < num_classes,
            "label out of range");
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(preds[i])];
  }
  r.per_class_iou.assign(y, std::nullopt);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < y; ++c) {
    std::uint64_t tp = r.confusion[c][c], fn = 0, fp = 0;
    for (std::size_t o = 0; o < y; ++o) {
      if (o == c) continue;
      fn += r.confusion[c][o];
      fp += r.confusion[o][c];
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class_iou[c] = iou;
    sum += iou;
    ++counted;
  }
  r.miou = counted ? sum / static_cast<double>(counted) : 0.0;
  return r;
}

inline nlohmann::json to_json(const IoUReport& r) {
  nlohmann::json j;
  j["miou"] = r.miou;
  auto& pc = j["per_class_iou"] = nlohmann::json::array();
  for (const auto& v : r.per_class_iou) pc.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  j["confusion"] = r.confusion;
  return j;
}

inline std::vector<std::int32_t> argmax_rows(const Matrix& m) {
  std::vector<std::int32_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    out[i] = static_cast<std::int32_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

inline constexpr std::size_t kEntropyBins = 50;

/// Per-class (by ground truth) entropy histograms over [0, ln Y], split by
/// whether the prediction was correct, plus the count of confident mistakes.
struct EntropyAnalysis {
  std::size_t bins = kEntropyBins;
  double max_entropy = 0.0;
  std::vector<std::vector<std::uint64_t>> correct;    // [class][bin]
  std::vector<std::vector<std::uint64_t>> incorrect;  // [class][bin]
  double low_entropy_threshold = 0.0;
  std::uint64_t false_low_entropy = 0;  // wrong predictions below threshold
};

/// Confident mistakes are wrong predictions with entropy under this
/// fraction of ln Y.
inline constexpr double kLowEntropyFraction = 0.25;

inline std::size_t entropy_bin(double h, double max_h, std::size_t bins) {
  if (!(max_h > 0.0)) return 0;
  const auto b = static_cast<std::size_t>(std::floor(h / max_h * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

inline EntropyAnalysis entropy_by_correctness(const Matrix& probs,
                                              const std::vector<std::int32_t>& preds,
                                              const std::vector<std::int32_t>& truth) {
  require(probs.rows() == preds.size() && preds.size() == truth.size(), "length mismatch");
  const std::size_t y = probs.cols();
  EntropyAnalysis a;
  a.max_entropy = std::log(static_cast<double>(y));
  a.low_entropy_threshold = kLowEntropyFraction * a.max_entropy;
  a.correct.assign(y, std::vector<std::uint64_t>(a.bins, 0));
  a.incorrect.assign(y, std::vector<std::uint64_t>(a.bins, 0));
  const auto h = point_entropy(probs);
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (truth[i] < 0) continue;
    const auto cls = static_cast<std::size_t>(truth[i]);
    require(cls < y, "label out of range");
    const auto b = entropy_bin(h[i], a.max_entropy, a.bins);
    if (preds[i] == truth[i]) {
      ++a.correct[cls][b];
    } else {
      ++a.incorrect[cls][b];
      if (h[i] < a.low_entropy_threshold) ++a.false_low_entropy;
    }
  }
  return a;
}

/// CSV rows: class,split,bin,lo,hi,count
inline void write_csv(std::ostream& os, const EntropyAnalysis& a) {
  os << "class,split,bin,lo,hi,count\n";
  const double w = a.max_entropy / static_cast<double>(a.bins);
  for (std::size_t c = 0; c < a.correct.size(); ++c)
    for (int split = 0; split < 2; ++split) {
      const auto& hist = split == 0 ? a.correct[c] : a.incorrect[c];
      for (std::size_t b = 0; b < a.bins; ++b)
        os << c << ',' << (split == 0 ? "true" : "false") << ',' << b << ','
           << w * static_cast<double>(b) << ',' << w * static_cast<double>(b + 1) << ','
           << hist[b] << '\n';
    }
}

/// Cosine similarity with anchors as rows and query points as columns.
inline Matrix similarity_matrix(const Matrix& anchors, const Matrix& points) {
  require(anchors.cols() == points.cols(), "shape mismatch");
  Matrix s(anchors.rows(), points.rows());
  std::vector<double> pn(points.rows());
  for (std::size_t j = 0; j < points.rows(); ++j) {
    pn[j] = norm(points.row(j));
    require(pn[j] > 0.0, "degenerate embedding");
  }
  for (std::size_t i = 0; i < anchors.rows(); ++i) {
    const double an = norm(anchors.row(i));
    require(an > 0.0, "degenerate embedding");
    for (std::size_t j = 0; j < points.rows(); ++j)
      s(i, j) = dot(anchors.row(i), points.row(j)) / (an * pn[j]);
  }
  return s;
}

inline void write_matrix_csv(std::ostream& os, const Matrix& m,
                             const std::vector<std::size_t>& row_ids,
                             const std::vector<std::size_t>& col_ids) {
  os << "anchor_id";
  for (auto c : col_ids) os << ',' << c;
  os << '\n';
  os.precision(17);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    os << row_ids[i];
    for (std::size_t j = 0; j < m.cols(); ++j) os << ',' << m(i, j);
    os << '\n';
  }
}

inline constexpr std::size_t kAngleBins = 36;  // 5 degree bins over [0, pi]

/// Histogram per class of the angle between each point and the prototype
/// of its class. `classes[i] < 0` skips point i.
inline std::vector<std::vector<std::uint64_t>> angle_histograms(
    const Matrix& feats, const Matrix& protos, const std::vector<std::int32_t>& classes) {
  require(feats.rows() == classes.size(), "length mismatch");
  const auto table = cosine_table(feats, protos);
  std::vector<std::vector<std::uint64_t>> hist(protos.cols(),
                                               std::vector<std::uint64_t>(kAngleBins, 0));
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    if (classes[i] < 0) continue;
    const auto c = static_cast<std::size_t>(classes[i]);
    const double theta = std::acos(std::clamp(table.cos(i, c), -1.0, 1.0));
    auto b = static_cast<std::size_t>(theta / std::numbers::pi * kAngleBins);
    ++hist[c][std::min(b, kAngleBins - 1)];
  }
  return hist;
}

}  // namespace gaia::eval
