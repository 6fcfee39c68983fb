#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gaia/arcpoint.hpp"
#include "gaia/geometry.hpp"
#include "gaia/model.hpp"
#include "gaia/synth.hpp"
#include "gaia/uncertainty.hpp"

namespace gaia {

/// Sparse supervision: one point per class, twenty per scene, or a fraction
/// of every class.
struct LabelScheme {
  enum class Kind { one_point, twenty_points, percent };
  Kind kind = Kind::one_point;
  double fraction = 1.0;  // percent only, in (0, 1]

  static LabelScheme one_point() { return {}; }
  static LabelScheme twenty_points() { return {Kind::twenty_points, 1.0}; }
  static LabelScheme percent(double p) {
    require(p > 0.0 && p <= 1.0, "invalid label scheme");
    return {Kind::percent, p};
  }

  bool operator==(const LabelScheme&) const = default;
};

inline std::string to_string(const LabelScheme& s) {
  switch (s.kind) {
    case LabelScheme::Kind::one_point: return "1pt";
    case LabelScheme::Kind::twenty_points: return "20pts";
    case LabelScheme::Kind::percent: {
      std::ostringstream os;
      os.precision(17);
      os << "percent:" << s.fraction;
      return os.str();
    }
  }
  return "?";
}

inline LabelScheme parse_label_scheme(const std::string& s) {
  if (s == "1pt") return LabelScheme::one_point();
  if (s == "20pts") return LabelScheme::twenty_points();
  if (s.rfind("percent:", 0) == 0) return LabelScheme::percent(std::stod(s.substr(8)));
  throw Error("invalid label scheme");
}

/// Synthetic data the CLI generates when no scene files are given.
struct DataConfig {
  std::vector<std::string> train_files;
  std::vector<std::string> val_files;
  synth::SceneSpec scene;
  std::size_t train_scenes = 1;
  std::size_t val_scenes = 1;
};

struct TrainConfig {
  int total_epochs = 300;
  int phase1_epochs = 100;
  int siamese_enabled_after = 100;
  double lr = 0.01;
  double weight_decay = 1e-4;
  ArcConfig arc;
  std::array<std::size_t, kEncoderBlocks> k_schedule{16, 12};
  LabelScheme label_scheme;
  std::uint64_t seed = 0;

  // Ablation switches.
  bool siamese = true;
  bool entropy_block = true;
  MarginMode margin = MarginMode::arcpoint;
  EntropyBlockOptions block;
  SiameseReduction siamese_reduction = SiameseReduction::per_point;

  ModelShape shape;
  AugmentParams augment;
  double voxel_size = 0.02;
  std::size_t threads = 1;
  DataConfig data;

  ModelOptions model_options() const {
    ModelOptions o;
    o.entropy_block = {entropy_block, entropy_block};
    o.block = block;
    return o;
  }
};

inline void validate(const TrainConfig& c) {
  require(c.total_epochs >= 0 && c.phase1_epochs >= 0 &&
              c.phase1_epochs <= c.total_epochs,
          "invalid config: phase1_epochs");
  require(c.siamese_enabled_after >= 0, "invalid config: siamese_enabled_after");
  require(c.lr > 0 && c.weight_decay >= 0, "invalid config: optimizer");
  validate(c.arc);
  validate(c.augment);
  for (auto k : c.k_schedule) require(k >= 1, "invalid config: k_schedule");
  require(c.voxel_size >= 0, "invalid config: voxel_size");
  require(c.threads >= 1, "invalid config: threads");
  require(c.shape.width1 >= 2 && c.shape.width2 >= 2 && c.shape.classes >= 2,
          "invalid config: shape");
}

/// K schedule starting at `first` and dropping by 4 per encoder block.
inline std::array<std::size_t, kEncoderBlocks> k_schedule_from(std::size_t first) {
  std::array<std::size_t, kEncoderBlocks> k{};
  for (std::size_t b = 0; b < kEncoderBlocks; ++b)
    k[b] = first > 4 * b ? first - 4 * b : 1;
  return k;
}

namespace config_detail {

inline const char* margin_name(MarginMode m) {
  switch (m) {
    case MarginMode::none: return "softmax_ce";
    case MarginMode::arcface: return "arcface";
    case MarginMode::arcpoint: return "arcpoint";
  }
  return "?";
}
inline MarginMode parse_margin(const std::string& s) {
  if (s == "softmax_ce") return MarginMode::none;
  if (s == "arcface") return MarginMode::arcface;
  if (s == "arcpoint") return MarginMode::arcpoint;
  throw Error("invalid config: loss");
}
inline const char* calibration_name(Calibration c) {
  return c == Calibration::inverse_square ? "inverse_square" : "plain_sum";
}
inline Calibration parse_calibration(const std::string& s) {
  if (s == "inverse_square") return Calibration::inverse_square;
  if (s == "plain_sum") return Calibration::plain_sum;
  throw Error("invalid config: calibration");
}
inline const char* update_name(EntropyUpdate u) {
  switch (u) {
    case EntropyUpdate::full: return "full";
    case EntropyUpdate::attention_only: return "attention_only";
    case EntropyUpdate::unnormalized: return "unnormalized";
  }
  return "?";
}
inline EntropyUpdate parse_update(const std::string& s) {
  if (s == "full") return EntropyUpdate::full;
  if (s == "attention_only") return EntropyUpdate::attention_only;
  if (s == "unnormalized") return EntropyUpdate::unnormalized;
  throw Error("invalid config: update");
}
inline const char* axis_name(Axis a) { return a == Axis::X ? "x" : a == Axis::Y ? "y" : "z"; }
inline Axis parse_axis(const std::string& s) {
  if (s == "x") return Axis::X;
  if (s == "y") return Axis::Y;
  if (s == "z") return Axis::Z;
  throw Error("invalid config: rot_axis");
}

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}
inline std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace config_detail

inline constexpr int kConfigVersion = 1;

/// Canonical "key = value" text; the first entry is the format version.
inline std::string serialize(const TrainConfig& c) {
  using namespace config_detail;
  std::ostringstream os;
  os.precision(17);
  os << "version = " << kConfigVersion << '\n'
     << "total_epochs = " << c.total_epochs << '\n'
     << "phase1_epochs = " << c.phase1_epochs << '\n'
     << "siamese_enabled_after = " << c.siamese_enabled_after << '\n'
     << "lr = " << c.lr << '\n'
     << "weight_decay = " << c.weight_decay << '\n'
     << "arc.s = " << c.arc.s << '\n'
     << "arc.m = " << c.arc.m << '\n'
     << "arc.gamma = " << c.arc.gamma << '\n'
     << "k_schedule = " << c.k_schedule[0] << ',' << c.k_schedule[1] << '\n'
     << "label_scheme = " << to_string(c.label_scheme) << '\n'
     << "seed = " << c.seed << '\n'
     << "siamese = " << c.siamese << '\n'
     << "entropy_block = " << c.entropy_block << '\n'
     << "loss = " << margin_name(c.margin) << '\n'
     << "calibration = " << calibration_name(c.block.calibration) << '\n'
     << "update = " << update_name(c.block.update) << '\n'
     << "normalize_gi = " << c.block.normalize_gi << '\n'
     << "siamese_reduction = "
     << (c.siamese_reduction == SiameseReduction::per_point ? "per_point" : "averaged") << '\n'
     << "width1 = " << c.shape.width1 << '\n'
     << "width2 = " << c.shape.width2 << '\n'
     << "classes = " << c.shape.classes << '\n'
     << "aug.noise_sigma = " << c.augment.noise_sigma << '\n'
     << "aug.flip_x = " << c.augment.flip_x << '\n'
     << "aug.flip_y = " << c.augment.flip_y << '\n'
     << "aug.rot_angle_min = " << c.augment.rot_angle_min << '\n'
     << "aug.rot_angle_max = " << c.augment.rot_angle_max << '\n'
     << "aug.rot_axis = " << axis_name(c.augment.rot_axis) << '\n'
     << "aug.elastic_granularity = " << c.augment.elastic_granularity << '\n'
     << "aug.elastic_magnitude = " << c.augment.elastic_magnitude << '\n'
     << "voxel_size = " << c.voxel_size << '\n'
     << "threads = " << c.threads << '\n'
     << "data.train_files = " << join(c.data.train_files) << '\n'
     << "data.val_files = " << join(c.data.val_files) << '\n'
     << "data.train_scenes = " << c.data.train_scenes << '\n'
     << "data.val_scenes = " << c.data.val_scenes << '\n'
     << "scene.layout = " << synth::to_string(c.data.scene.layout) << '\n'
     << "scene.n_points = " << c.data.scene.n_points << '\n'
     << "scene.n_classes = " << c.data.scene.n_classes << '\n'
     << "scene.room_size = " << c.data.scene.room_size << '\n'
     << "scene.color_noise = " << c.data.scene.color_noise << '\n'
     << "scene.blend_width = " << c.data.scene.blend_width << '\n';
  return os.str();
}

/// Parses the text format. Unknown keys are rejected; missing keys keep
/// their defaults. `siamese_enabled_after` defaults to `phase1_epochs`.
inline TrainConfig parse_config(const std::string& text) {
  using namespace config_detail;
  TrainConfig c;
  bool saw_version = false, saw_gate = false;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  auto to_bool = [](const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw Error("invalid config: boolean");
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "invalid config: expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (key == "version") {
      require(std::stoi(v) == kConfigVersion, "invalid config: unsupported version");
      saw_version = true;
    } else if (key == "total_epochs") c.total_epochs = std::stoi(v);
    else if (key == "phase1_epochs") c.phase1_epochs = std::stoi(v);
    else if (key == "siamese_enabled_after") { c.siamese_enabled_after = std::stoi(v); saw_gate = true; }
    else if (key == "lr") c.lr = std::stod(v);
    else if (key == "weight_decay") c.weight_decay = std::stod(v);
    else if (key == "arc.s") c.arc.s = std::stod(v);
    else if (key == "arc.m") c.arc.m = std::stod(v);
    else if (key == "arc.gamma") c.arc.gamma = std::stod(v);
    else if (key == "k_schedule") {
      const auto parts = split(v);
      if (parts.size() == 1) {
        c.k_schedule = k_schedule_from(std::stoul(parts[0]));
      } else {
        require(parts.size() == kEncoderBlocks, "invalid config: k_schedule");
        for (std::size_t b = 0; b < kEncoderBlocks; ++b) c.k_schedule[b] = std::stoul(parts[b]);
      }
    }
    else if (key == "label_scheme") c.label_scheme = parse_label_scheme(v);
    else if (key == "seed") c.seed = std::stoull(v);
    else if (key == "siamese") c.siamese = to_bool(v);
    else if (key == "entropy_block") c.entropy_block = to_bool(v);
    else if (key == "loss") c.margin = parse_margin(v);
    else if (key == "calibration") c.block.calibration = parse_calibration(v);
    else if (key == "update") c.block.update = parse_update(v);
    else if (key == "normalize_gi") c.block.normalize_gi = to_bool(v);
    else if (key == "siamese_reduction") {
      if (v == "per_point") c.siamese_reduction = SiameseReduction::per_point;
      else if (v == "averaged") c.siamese_reduction = SiameseReduction::averaged;
      else throw Error("invalid config: siamese_reduction");
    }
    else if (key == "width1") c.shape.width1 = std::stoul(v);
    else if (key == "width2") c.shape.width2 = std::stoul(v);
    else if (key == "classes") c.shape.classes = std::stoul(v);
    else if (key == "aug.noise_sigma") c.augment.noise_sigma = std::stod(v);
    else if (key == "aug.flip_x") c.augment.flip_x = std::stod(v);
    else if (key == "aug.flip_y") c.augment.flip_y = std::stod(v);
    else if (key == "aug.rot_angle_min") c.augment.rot_angle_min = std::stod(v);
    else if (key == "aug.rot_angle_max") c.augment.rot_angle_max = std::stod(v);
    else if (key == "aug.rot_axis") c.augment.rot_axis = parse_axis(v);
    else if (key == "aug.elastic_granularity") c.augment.elastic_granularity = std::stod(v);
    else if (key == "aug.elastic_magnitude") c.augment.elastic_magnitude = std::stod(v);
    else if (key == "voxel_size") c.voxel_size = std::stod(v);
    else if (key == "threads") c.threads = std::stoul(v);
    else if (key == "data.train_files") c.data.train_files = split(v);
    else if (key == "data.val_files") c.data.val_files = split(v);
    else if (key == "data.train_scenes") c.data.train_scenes = std::stoul(v);
    else if (key == "data.val_scenes") c.data.val_scenes = std::stoul(v);
    else if (key == "scene.layout") c.data.scene.layout = synth::parse_layout(v);
    else if (key == "scene.n_points") c.data.scene.n_points = std::stoul(v);
    else if (key == "scene.n_classes") c.data.scene.n_classes = std::stoi(v);
    else if (key == "scene.room_size") c.data.scene.room_size = std::stod(v);
    else if (key == "scene.color_noise") c.data.scene.color_noise = std::stod(v);
    else if (key == "scene.blend_width") c.data.scene.blend_width = std::stod(v);
    else throw Error("invalid config: unknown key '" + key + "' on line " + std::to_string(line_no));
  }
  require(saw_version, "invalid config: missing version");
  if (!saw_gate) c.siamese_enabled_after = c.phase1_epochs;
  validate(c);
  return c;
}

/// Reads a config file; GAIA_SEED in the environment overrides `seed`.
inline TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open config file");
  std::stringstream ss;
  ss << is.rdbuf();
  TrainConfig c = parse_config(ss.str());
  if (const char* env = std::getenv("GAIA_SEED"); env && *env)
    c.seed = std::stoull(env);
  return c;
}

/// FNV-1a over the canonical serialization.
inline std::uint64_t config_hash(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : serialize(c)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace gaia
