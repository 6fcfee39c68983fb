#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "gaia/geometry.hpp"

namespace gaia::synth {

enum class Layout { separable_blobs, touching_planes, mixed_room };

inline const char* to_string(Layout l) {
  switch (l) {
    case Layout::separable_blobs: return "separable_blobs";
    case Layout::touching_planes: return "touching_planes";
    case Layout::mixed_room: return "mixed_room";
  }
  return "?";
}

inline Layout parse_layout(const std::string& s) {
  if (s == "separable_blobs") return Layout::separable_blobs;
  if (s == "touching_planes") return Layout::touching_planes;
  if (s == "mixed_room") return Layout::mixed_room;
  throw Error("unknown layout");
}

struct SceneSpec {
  std::size_t n_points = 5000;
  int n_classes = 4;
  double room_size = 2.0;
  Layout layout = Layout::touching_planes;
  double color_noise = 0.05;
  // Width of the band along class boundaries where colors of the two sides
  // blend into each other (touching_planes / mixed_room).
  double blend_width = 0.3;
  std::uint64_t seed = 0;
};

inline void validate(const SceneSpec& s) {
  require(s.n_classes >= 2, "invalid scene spec");
  require(s.n_points >= static_cast<std::size_t>(s.n_classes), "invalid scene spec");
  require(s.room_size > 0 && s.color_noise >= 0 && s.blend_width >= 0,
          "invalid scene spec");
}

/// Distinct base color for class c.
inline Vec3 class_color(int c) {
  static constexpr std::array<Vec3, 8> kPalette{{
      {0.55, 0.45, 0.35}, {0.80, 0.80, 0.75}, {0.65, 0.70, 0.80},
      {0.25, 0.30, 0.45}, {0.70, 0.30, 0.25}, {0.30, 0.60, 0.35},
      {0.85, 0.75, 0.30}, {0.50, 0.35, 0.60}}};
  if (c < static_cast<int>(kPalette.size())) return kPalette[static_cast<std::size_t>(c)];
  const double t = 0.618033988749895 * c;
  return {0.5 + 0.4 * std::sin(6.283 * t), 0.5 + 0.4 * std::sin(6.283 * t + 2.1),
          0.5 + 0.4 * std::sin(6.283 * t + 4.2)};
}

namespace detail {

// Balanced class sizes: n / Y each, remainder to the lowest classes.
inline std::vector<std::size_t> class_counts(std::size_t n, int y) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(y), n / static_cast<std::size_t>(y));
  for (std::size_t c = 0; c < n % static_cast<std::size_t>(y); ++c) ++counts[c];
  return counts;
}

struct Rect {  // axis-aligned patch on a wall
  int wall;    // 0: x = 0 wall (spans y, z), 1: y = 0 wall (spans x, z)
  double u0, u1, z0, z1;
  bool contains(double u, double z) const {
    return u >= u0 && u <= u1 && z >= z0 && z <= z1;
  }
};

inline std::vector<Rect> boards(int count, double room) {
  std::vector<Rect> out;
  for (int b = 0; b < count; ++b) {
    const int slot = b / 2;
    const double u0 = room * (0.2 + 0.3 * (slot % 2)) + 0.05 * (slot / 2);
    out.push_back({b % 2, u0, u0 + 0.25 * room, room * 0.35, room * 0.6});
  }
  return out;
}

// Samples a point on structural surface `cls` (0 floor, 1 wall x=0,
// 2 wall y=0, 3+ boards), rejecting wall samples hidden behind boards.
inline Vec3 sample_structural(int cls, double room, const std::vector<Rect>& rects,
                              std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, room);
  std::normal_distribution<double> jitter(0.0, 0.004);
  for (;;) {
    if (cls == 0) return {u(rng), u(rng), jitter(rng)};
    if (cls == 1 || cls == 2) {
      const double a = u(rng), z = u(rng);
      bool hidden = false;
      for (const auto& r : rects) hidden = hidden || (r.wall == cls - 1 && r.contains(a, z));
      if (hidden) continue;
      return cls == 1 ? Vec3{jitter(rng), a, z} : Vec3{a, jitter(rng), z};
    }
    const auto& r = rects[static_cast<std::size_t>(cls - 3)];
    std::uniform_real_distribution<double> ua(r.u0, r.u1), uz(r.z0, r.z1);
    const double a = ua(rng), z = uz(rng), off = 0.03 + jitter(rng);
    return r.wall == 0 ? Vec3{off, a, z} : Vec3{a, off, z};
  }
}

// Blends each point's color toward the class on the other side of the
// nearest boundary; at the boundary both sides share the midpoint color.
inline void blend_boundaries(PointCloud& c, const std::vector<Vec3>& base,
                             double width, const std::vector<std::uint8_t>& blend) {
  if (width <= 0.0) return;
  const std::size_t n = c.size();
  std::unordered_map<gaia::detail::CellKey, std::vector<std::uint32_t>,
                     gaia::detail::CellKeyHash>
      grid;
  for (std::size_t i = 0; i < n; ++i)
    if (blend[i]) grid[gaia::detail::cell_of(c.coords[i], width)].push_back(static_cast<std::uint32_t>(i));

  std::vector<Vec3> out = base;
  for (std::size_t i = 0; i < n; ++i) {
    if (!blend[i]) continue;
    double best = width;
    std::size_t other = n;
    const auto key = gaia::detail::cell_of(c.coords[i], width);
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = grid.find({key.x + dx, key.y + dy, key.z + dz});
          if (it == grid.end()) continue;
          for (auto j : it->second) {
            if (c.labels[j] == c.labels[i]) continue;
            const double d = distance(c.coords[i], c.coords[j]);
            if (d < best || (d == best && j < other)) {
              best = d;
              other = j;
            }
          }
        }
    if (other == n) continue;
    const double alpha = 0.5 * (1.0 - best / width);
    const Vec3 a = class_color(c.labels[i]), b = class_color(c.labels[other]);
    for (int k = 0; k < 3; ++k) out[i][k] += alpha * (b[k] - a[k]);
  }
  for (std::size_t i = 0; i < n; ++i) c.colors[i] = out[i];
}

}  // namespace detail

/// Fully labeled synthetic scene; coordinates in [0, room_size]^3 (meters).
inline PointCloud generate(const SceneSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  const int y = spec.n_classes;
  const double room = spec.room_size;
  const auto counts = detail::class_counts(spec.n_points, y);

  PointCloud c;
  c.num_classes = y;
  c.resize(spec.n_points);
  std::vector<std::uint8_t> blend(spec.n_points, 0);

  auto blob_point = [&](const Vec3& centre, double radius) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    Vec3 d{nd(rng), nd(rng), nd(rng)};
    const double len = std::max(std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]), 1e-12);
    const double r = radius * std::cbrt(ud(rng));
    return Vec3{centre[0] + r * d[0] / len, centre[1] + r * d[1] / len,
                centre[2] + r * d[2] / len};
  };

  std::size_t idx = 0;
  if (spec.layout == Layout::separable_blobs) {
    const double ring = 0.35 * room;
    const double gap = 2.0 * ring * std::sin(std::numbers::pi / y);
    const double radius = std::min(gap / 4.0, 0.15 * room);
    for (int cls = 0; cls < y; ++cls) {
      const double a = 2.0 * std::numbers::pi * cls / y;
      const Vec3 centre{0.5 * room + ring * std::cos(a), 0.5 * room + ring * std::sin(a),
                        0.5 * room};
      for (std::size_t k = 0; k < counts[static_cast<std::size_t>(cls)]; ++k, ++idx) {
        c.coords[idx] = blob_point(centre, radius);
        c.labels[idx] = cls;
      }
    }
  } else {
    const int structural =
        spec.layout == Layout::touching_planes ? y : std::min(y, 3);
    const auto rects = detail::boards(std::max(structural - 3, 0), room);
    for (int cls = 0; cls < structural; ++cls)
      for (std::size_t k = 0; k < counts[static_cast<std::size_t>(cls)]; ++k, ++idx) {
        c.coords[idx] = detail::sample_structural(cls, room, rects, rng);
        c.labels[idx] = cls;
        blend[idx] = 1;
      }
    // mixed_room: remaining classes are furniture blobs resting on the floor.
    for (int cls = structural; cls < y; ++cls) {
      const int f = cls - structural;
      const double radius = 0.12 * room;
      const Vec3 centre{room * (0.45 + 0.3 * (f % 2)), room * (0.45 + 0.3 * ((f / 2) % 2)),
                        radius + 0.02 + 0.05 * (f / 4)};
      for (std::size_t k = 0; k < counts[static_cast<std::size_t>(cls)]; ++k, ++idx) {
        c.coords[idx] = blob_point(centre, radius);
        c.labels[idx] = cls;
      }
    }
  }

  std::vector<Vec3> base(spec.n_points);
  for (std::size_t i = 0; i < spec.n_points; ++i) base[i] = class_color(c.labels[i]);
  c.colors = base;
  detail::blend_boundaries(c, base, spec.blend_width, blend);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& col : c.colors)
    for (auto& v : col) v = std::clamp(v + spec.color_noise * noise(rng), 0.0, 1.0);
  validate(c);
  return c;
}

}  // namespace gaia::synth
