#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <unordered_map>
#include <vector>

#include "gaia/error.hpp"

namespace gaia {

using Vec3 = std::array<double, 3>;
inline constexpr std::int32_t kNoLabel = -1;

/// N points with metric coordinates, RGB in [0,1], optional ground-truth class
/// and an `annotated` flag marking the sparse supervision subset.
struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<Vec3> colors;
  std::vector<std::int32_t> labels;  // kNoLabel when unknown
  std::vector<std::uint8_t> annotated;
  int num_classes = 0;

  std::size_t size() const { return coords.size(); }

  void resize(std::size_t n) {
    coords.resize(n);
    colors.resize(n);
    labels.resize(n, kNoLabel);
    annotated.resize(n, 0);
  }

  std::size_t annotated_count() const {
    return static_cast<std::size_t>(
        std::count(annotated.begin(), annotated.end(), std::uint8_t{1}));
  }
};

/// Throws gaia::Error when a cloud violates its invariants.
inline void validate(const PointCloud& c) {
  const std::size_t n = c.size();
  require(n >= 1, "empty input");
  require(c.colors.size() == n && c.labels.size() == n &&
              c.annotated.size() == n,
          "shape mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      require(std::isfinite(c.coords[i][a]), "non-finite coordinate");
      require(c.colors[i][a] >= 0.0 && c.colors[i][a] <= 1.0,
              "color out of range");
    }
    require(c.labels[i] == kNoLabel ||
                (c.labels[i] >= 0 && c.labels[i] < c.num_classes),
            "label out of range");
    require(!c.annotated[i] || c.labels[i] != kNoLabel,
            "annotated point without label");
  }
}

inline double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// Fixed fan-out neighbor table. Row i lists the k nearest other points of i
/// in ascending distance, ties broken by lower index.
struct KnnGraph {
  std::size_t k = 0;
  std::vector<std::uint32_t> neighbors;  // N*k
  std::vector<double> dists;             // N*k

  std::size_t size() const { return k == 0 ? 0 : neighbors.size() / k; }
  std::uint32_t neighbor(std::size_t i, std::size_t j) const {
    return neighbors[i * k + j];
  }
  double dist(std::size_t i, std::size_t j) const { return dists[i * k + j]; }
};

namespace detail {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& c) const {
    std::uint64_t h = static_cast<std::uint64_t>(c.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(c.y) * 0xC2B2AE3D27D4EB4Full + (h << 6);
    h ^= static_cast<std::uint64_t>(c.z) * 0x165667B19E3779F9ull + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

inline CellKey cell_of(const Vec3& p, double size) {
  return {static_cast<std::int64_t>(std::floor(p[0] / size)),
          static_cast<std::int64_t>(std::floor(p[1] / size)),
          static_cast<std::int64_t>(std::floor(p[2] / size))};
}

// (distance, index) lexicographic order; this is the neighbor ranking.
inline bool closer(double da, std::uint32_t ia, double db, std::uint32_t ib) {
  return da < db || (da == db && ia < ib);
}

}  // namespace detail

namespace detail {

// Median-split kd-tree over point indices. Leaves hold at most kLeaf points.
class KdTree {
 public:
  static constexpr std::size_t kLeaf = 8;

  explicit KdTree(const std::vector<Vec3>& pts) : pts_(pts), order_(pts.size()) {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
    nodes_.reserve(2 * (pts.size() / kLeaf + 1));
    build(0, order_.size());
  }

  struct Cand {
    double d;
    std::uint32_t idx;
  };
  static bool worse(const Cand& a, const Cand& b) { return closer(a.d, a.idx, b.d, b.idx); }

  // `best` becomes a max-heap (by `worse`) of the k closest points other than `self`.
  void query(std::size_t self, std::size_t k, std::vector<Cand>& best) const {
    best.clear();
    search(0, pts_[self], static_cast<std::uint32_t>(self), k, best);
  }

 private:
  struct Node {
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)});
    if (end - begin <= kLeaf) return id;
    Vec3 lo = pts_[order_[begin]], hi = lo;
    for (std::size_t t = begin; t < end; ++t)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], pts_[order_[t]][a]);
        hi[a] = std::max(hi[a], pts_[order_[t]][a]);
      }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
    if (!(hi[axis] > lo[axis])) return id;  // all coincident: keep as a leaf
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::uint32_t a, std::uint32_t b) { return pts_[a][axis] < pts_[b][axis]; });
    const double split = pts_[order_[mid]][axis];
    const auto l = build(begin, mid);
    const auto r = build(mid, end);
    auto& n = nodes_[static_cast<std::size_t>(id)];
    n.axis = axis;
    n.split = split;
    n.left = l;
    n.right = r;
    return id;
  }

  void search(std::int32_t id, const Vec3& p, std::uint32_t self, std::size_t k,
              std::vector<Cand>& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.left < 0) {
      for (std::uint32_t t = n.begin; t < n.end; ++t) {
        const std::uint32_t j = order_[t];
        if (j == self) continue;
        const Cand c{distance(p, pts_[j]), j};
        if (best.size() < k) {
          best.push_back(c);
          std::push_heap(best.begin(), best.end(), worse);
        } else if (worse(c, best.front())) {
          std::pop_heap(best.begin(), best.end(), worse);
          best.back() = c;
          std::push_heap(best.begin(), best.end(), worse);
        }
      }
      return;
    }
    // Left holds coordinates <= split, right holds >= split.
    const double diff = p[n.axis] - n.split;
    const auto near = diff < 0.0 ? n.left : n.right;
    const auto far = diff < 0.0 ? n.right : n.left;
    search(near, p, self, k, best);
    // Every far-side point is at least |diff| away. The slack covers sqrt
    // rounding so a pruned point can never tie the current k-th candidate.
    if (best.size() < k || std::abs(diff) <= best.front().d * (1.0 + 1e-12))
      search(far, p, self, k, best);
  }

  const std::vector<Vec3>& pts_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace detail

/// Exact k-nearest-neighbor graph over `cloud.coords`, via a kd-tree.
/// Neighbors are ordered by (distance, index), matching an all-pairs scan.
inline KnnGraph build_knn_graph(const PointCloud& cloud, std::size_t k) {
  const std::size_t n = cloud.size();
  require(n >= 1, "empty input");
  require(k >= 1, "fan-out must be positive");
  require(k < n, "fan-out exceeds cloud");
  require(n <= std::numeric_limits<std::uint32_t>::max(), "cloud too large");

  const detail::KdTree tree(cloud.coords);
  KnnGraph g;
  g.k = k;
  g.neighbors.resize(n * k);
  g.dists.resize(n * k);
  std::vector<detail::KdTree::Cand> best;
  best.reserve(k);
  for (std::size_t i = 0; i < n; ++i) {
    tree.query(i, k, best);
    std::sort_heap(best.begin(), best.end(), detail::KdTree::worse);
    for (std::size_t j = 0; j < k; ++j) {
      g.neighbors[i * k + j] = best[j].idx;
      g.dists[i * k + j] = best[j].d;
    }
  }
  return g;
}

/// One output point per occupied voxel. Coordinates and colors are member
/// means; the label is the majority over annotated members when any exist,
/// otherwise over labeled members (ties to the lowest class id).
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  require(cloud.size() >= 1, "empty input");
  require(voxel > 0.0 && std::isfinite(voxel), "voxel size must be positive");

  std::unordered_map<detail::CellKey, std::uint32_t, detail::CellKeyHash> slot;
  std::vector<std::vector<std::uint32_t>> members;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto key = detail::cell_of(cloud.coords[i], voxel);
    auto [it, inserted] =
        slot.try_emplace(key, static_cast<std::uint32_t>(members.size()));
    if (inserted) members.emplace_back();
    members[it->second].push_back(static_cast<std::uint32_t>(i));
  }

  PointCloud out;
  out.num_classes = cloud.num_classes;
  out.resize(members.size());
  std::vector<int> votes;
  for (std::size_t v = 0; v < members.size(); ++v) {
    const auto& m = members[v];
    Vec3 c{}, col{};
    Vec3 lo = cloud.coords[m[0]], hi = cloud.coords[m[0]];
    for (auto i : m)
      for (int a = 0; a < 3; ++a) {
        c[a] += cloud.coords[i][a];
        col[a] += cloud.colors[i][a];
        lo[a] = std::min(lo[a], cloud.coords[i][a]);
        hi[a] = std::max(hi[a], cloud.coords[i][a]);
      }
    const double inv = 1.0 / static_cast<double>(m.size());
    for (int a = 0; a < 3; ++a) {
      // Keep the mean inside the members' hull so a second pass maps each
      // point back to the same voxel.
      c[a] = std::clamp(c[a] * inv, lo[a], hi[a]);
      col[a] = std::clamp(col[a] * inv, 0.0, 1.0);
    }
    out.coords[v] = c;
    out.colors[v] = col;

    bool any_annotated = false;
    for (auto i : m) any_annotated = any_annotated || cloud.annotated[i];
    votes.assign(static_cast<std::size_t>(std::max(cloud.num_classes, 0)), 0);
    bool any_vote = false;
    for (auto i : m) {
      if (any_annotated && !cloud.annotated[i]) continue;
      const auto lab = cloud.labels[i];
      if (lab == kNoLabel) continue;
      if (static_cast<std::size_t>(lab) >= votes.size())
        votes.resize(static_cast<std::size_t>(lab) + 1, 0);
      ++votes[static_cast<std::size_t>(lab)];
      any_vote = true;
    }
    if (any_vote) {
      out.labels[v] = static_cast<std::int32_t>(
          std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
    out.annotated[v] = any_annotated ? 1 : 0;
  }
  return out;
}

enum class Axis { X = 0, Y = 1, Z = 2 };

/// Stochastic augmentation settings. Distances in meters, angles in radians.
struct AugmentParams {
  double noise_sigma = 0.005;
  double flip_x = 0.5;
  double flip_y = 0.5;
  double rot_angle_min = 0.0;
  double rot_angle_max = 2.0 * std::numbers::pi;
  Axis rot_axis = Axis::X;
  double elastic_granularity = 0.2;
  double elastic_magnitude = 0.08;

  static AugmentParams identity() {
    AugmentParams p;
    p.noise_sigma = p.flip_x = p.flip_y = 0.0;
    p.rot_angle_min = p.rot_angle_max = 0.0;
    p.elastic_magnitude = 0.0;
    return p;
  }
};

inline void validate(const AugmentParams& p) {
  require(p.noise_sigma >= 0 && p.elastic_granularity >= 0 &&
              p.elastic_magnitude >= 0,
          "invalid augmentation");
  require(p.flip_x >= 0 && p.flip_x <= 1 && p.flip_y >= 0 && p.flip_y <= 1,
          "invalid augmentation");
  require(p.rot_angle_min <= p.rot_angle_max, "invalid augmentation");
}

/// Rotation about `rot_axis` by a uniform angle, then random x/y flips, then
/// i.i.d. Gaussian jitter. Only coordinates change.
inline PointCloud affine_augment(const PointCloud& cloud,
                                 const AugmentParams& params,
                                 std::uint64_t seed) {
  validate(params);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double angle = params.rot_angle_min +
                       (params.rot_angle_max - params.rot_angle_min) * unit(rng);
  const bool fx = unit(rng) < params.flip_x;
  const bool fy = unit(rng) < params.flip_y;
  const double c = std::cos(angle), s = std::sin(angle);
  const int ax = static_cast<int>(params.rot_axis);
  const int u = (ax + 1) % 3, v = (ax + 2) % 3;

  PointCloud out = cloud;
  for (auto& p : out.coords) {
    const double pu = p[u], pv = p[v];
    p[u] = c * pu - s * pv;
    p[v] = s * pu + c * pv;
    if (fx) p[0] = -p[0];
    if (fy) p[1] = -p[1];
  }
  if (params.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, params.noise_sigma);
    for (auto& p : out.coords)
      for (int a = 0; a < 3; ++a) p[a] += noise(rng);
  }
  return out;
}

/// Smooth random warp: Gaussian noise on a lattice of spacing
/// `elastic_granularity`, blurred with a unit-sigma Gaussian (in lattice
/// units), trilinearly interpolated at every point and scaled by
/// `elastic_magnitude`.
inline PointCloud elastic_distort(const PointCloud& cloud,
                                  const AugmentParams& params,
                                  std::uint64_t seed) {
  validate(params);
  require(params.elastic_granularity > 0.0, "invalid augmentation");
  PointCloud out = cloud;
  if (params.elastic_magnitude == 0.0 || cloud.size() == 0) return out;

  const double g = params.elastic_granularity;
  constexpr int kPad = 3;
  Vec3 lo = cloud.coords[0], hi = cloud.coords[0];
  for (const auto& p : cloud.coords)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  std::array<std::size_t, 3> dim{};
  Vec3 origin{};
  for (int a = 0; a < 3; ++a) {
    dim[a] = static_cast<std::size_t>(std::ceil((hi[a] - lo[a]) / g)) + 1 +
             2 * kPad;
    origin[a] = lo[a] - kPad * g;
  }
  const std::size_t cells = dim[0] * dim[1] * dim[2];
  auto at = [&](std::size_t x, std::size_t y, std::size_t z) {
    return (x * dim[1] + y) * dim[2] + z;
  };

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<std::vector<double>, 3> field;
  for (auto& f : field) {
    f.resize(cells);
    for (auto& x : f) x = normal(rng);
  }

  // Separable Gaussian blur, sigma = 1 lattice step, radius 3, clamped edges.
  constexpr int kRadius = 3;
  std::array<double, 2 * kRadius + 1> kernel{};
  double ksum = 0.0;
  for (int t = -kRadius; t <= kRadius; ++t)
    ksum += kernel[t + kRadius] = std::exp(-0.5 * t * t);
  for (auto& w : kernel) w /= ksum;
  std::vector<double> tmp(cells);
  for (auto& f : field) {
    for (int axis = 0; axis < 3; ++axis) {
      for (std::size_t x = 0; x < dim[0]; ++x)
        for (std::size_t y = 0; y < dim[1]; ++y)
          for (std::size_t z = 0; z < dim[2]; ++z) {
            std::array<std::size_t, 3> idx{x, y, z};
            const auto centre = static_cast<std::int64_t>(idx[axis]);
            double acc = 0.0;
            for (int t = -kRadius; t <= kRadius; ++t) {
              auto q = std::clamp<std::int64_t>(
                  centre + t, 0, static_cast<std::int64_t>(dim[axis]) - 1);
              idx[axis] = static_cast<std::size_t>(q);
              acc += kernel[t + kRadius] * f[at(idx[0], idx[1], idx[2])];
            }
            tmp[at(x, y, z)] = acc;
          }
      f.swap(tmp);
    }
  }

  for (auto& p : out.coords) {
    std::array<std::size_t, 3> base{};
    Vec3 frac{};
    for (int a = 0; a < 3; ++a) {
      const double t = (p[a] - origin[a]) / g;
      const double fl = std::clamp(std::floor(t), 0.0,
                                   static_cast<double>(dim[a] - 2));
      base[a] = static_cast<std::size_t>(fl);
      frac[a] = std::clamp(t - fl, 0.0, 1.0);
    }
    Vec3 disp{};
    for (int corner = 0; corner < 8; ++corner) {
      double w = 1.0;
      std::array<std::size_t, 3> idx{};
      for (int a = 0; a < 3; ++a) {
        const bool up = (corner >> a) & 1;
        idx[a] = base[a] + (up ? 1 : 0);
        w *= up ? frac[a] : 1.0 - frac[a];
      }
      const auto cell_index = at(idx[0], idx[1], idx[2]);
      for (int a = 0; a < 3; ++a) disp[a] += w * field[a][cell_index];
    }
    for (int a = 0; a < 3; ++a) p[a] += params.elastic_magnitude * disp[a];
  }
  return out;
}

}  // namespace gaia
