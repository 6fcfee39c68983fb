#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>

#include "gaia/config.hpp"
#include "gaia/io.hpp"
#include "gaia/model.hpp"

namespace gaia {

/// Layout (little-endian):
///   "GAIACKPT" u32 version u64 config_hash u32 config_len config_text
///   u32 tensor_count { u32 rows u32 cols f64[rows*cols] }   parameters
///   u64 adam_step, then the first- and second-moment tensors in the same form.
struct Checkpoint {
  TrainConfig config;
  ModelParams params;
  AdamState adam;
};

inline constexpr std::array<char, 8> kCheckpointMagic{'G', 'A', 'I', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void put_matrix(std::ostream& os, const Matrix& m) {
  io::detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  io::detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline Matrix get_matrix(std::istream& is) {
  const auto r = io::detail::get<std::uint32_t>(is);
  const auto c = io::detail::get<std::uint32_t>(is);
  Matrix m(r, c);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
  require(static_cast<bool>(is), "truncated file");
  return m;
}

}  // namespace ckpt_detail

inline void write_checkpoint(std::ostream& os, const TrainConfig& cfg,
                             const ModelParams& params, const AdamState& adam) {
  using io::detail::put;
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, config_hash(cfg));
  const std::string text = serialize(cfg);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto tensors = params.tensors();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) ckpt_detail::put_matrix(os, *t);
  put<std::uint64_t>(os, adam.step);
  require(adam.m.size() == tensors.size() || adam.m.empty(), "shape mismatch");
  const AdamState blank = adam.m.empty() ? AdamState::for_params(params) : AdamState{};
  const AdamState& a = adam.m.empty() ? blank : adam;
  for (const auto& m : a.m) ckpt_detail::put_matrix(os, m);
  for (const auto& v : a.v) ckpt_detail::put_matrix(os, v);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  using io::detail::get;
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  require(static_cast<bool>(is) && magic == kCheckpointMagic, "bad magic");
  require(get<std::uint32_t>(is) == kCheckpointVersion, "unsupported checkpoint version");
  const auto hash = get<std::uint64_t>(is);
  const auto len = get<std::uint32_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), len);
  require(static_cast<bool>(is), "truncated file");

  Checkpoint ck;
  ck.config = parse_config(text);
  require(config_hash(ck.config) == hash, "checkpoint config hash mismatch");
  ck.params = ModelParams::zeros(ck.config.shape);
  auto tensors = ck.params.tensors();
  require(get<std::uint32_t>(is) == tensors.size(), "checkpoint tensor count mismatch");
  for (auto* t : tensors) {
    Matrix m = ckpt_detail::get_matrix(is);
    require(m.same_shape(*t), "checkpoint tensor shape mismatch");
    *t = std::move(m);
  }
  ck.adam.step = get<std::uint64_t>(is);
  for (std::size_t i = 0; i < tensors.size(); ++i) ck.adam.m.push_back(ckpt_detail::get_matrix(is));
  for (std::size_t i = 0; i < tensors.size(); ++i) ck.adam.v.push_back(ckpt_detail::get_matrix(is));
  return ck;
}

inline void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                            const ModelParams& params, const AdamState& adam) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot open output file");
  write_checkpoint(os, cfg, params, adam);
  require(static_cast<bool>(os), "write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open input file");
  return read_checkpoint(is);
}

}  // namespace gaia
