#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "gaia/geometry.hpp"

namespace gaia::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(static_cast<bool>(is), "truncated file");
  return v;
}

}  // namespace detail

inline constexpr std::array<char, 4> kCloudMagic{'G', 'A', 'I', 'A'};

/// "GAIA", u32 N, u32 Y, then N x (f32[3] xyz, f32[3] rgb, i32 label, u8 annotated).
inline void write_cloud(std::ostream& os, const PointCloud& c) {
  os.write(kCloudMagic.data(), 4);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.num_classes));
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (int a = 0; a < 3; ++a)
      detail::put<float>(os, static_cast<float>(c.coords[i][a]));
    for (int a = 0; a < 3; ++a)
      detail::put<float>(os, static_cast<float>(c.colors[i][a]));
    detail::put<std::int32_t>(os, c.labels[i]);
    detail::put<std::uint8_t>(os, c.annotated[i] ? 1 : 0);
  }
}

inline PointCloud read_cloud(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  require(static_cast<bool>(is) && magic == kCloudMagic, "bad magic");
  PointCloud c;
  const auto n = detail::get<std::uint32_t>(is);
  c.num_classes = static_cast<int>(detail::get<std::uint32_t>(is));
  c.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) c.coords[i][a] = detail::get<float>(is);
    for (int a = 0; a < 3; ++a) c.colors[i][a] = detail::get<float>(is);
    c.labels[i] = detail::get<std::int32_t>(is);
    c.annotated[i] = detail::get<std::uint8_t>(is);
  }
  validate(c);
  return c;
}

inline void save_cloud(const std::string& path, const PointCloud& c) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot open output file");
  write_cloud(os, c);
  require(static_cast<bool>(os), "write failed");
}

inline PointCloud load_cloud(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open input file");
  return read_cloud(is);
}

/// S3DIS-style "x y z r g b [label]" lines with 0-255 colors. A seventh
/// column, when present, is taken as the ground-truth class.
inline PointCloud read_xyzrgb(std::istream& is, int num_classes = 0) {
  PointCloud c;
  c.num_classes = num_classes;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Vec3 p{}, rgb{};
    if (!(ls >> p[0] >> p[1] >> p[2] >> rgb[0] >> rgb[1] >> rgb[2])) continue;
    for (auto& v : rgb) v = std::clamp(v / 255.0, 0.0, 1.0);
    std::int32_t label = kNoLabel;
    if (long long l; ls >> l) label = static_cast<std::int32_t>(l);
    c.coords.push_back(p);
    c.colors.push_back(rgb);
    c.labels.push_back(label);
    c.annotated.push_back(0);
    if (label >= c.num_classes) c.num_classes = label + 1;
  }
  require(c.size() >= 1, "empty input");
  validate(c);
  return c;
}

}  // namespace gaia::io
