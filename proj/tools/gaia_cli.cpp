#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "gaia/gaia.hpp"

namespace fs = std::filesystem;
using namespace gaia;

namespace {

// Seed offsets keep synthesized training, validation and evaluation scenes
// disjoint for a given base seed.
constexpr std::uint64_t kValSeedOffset = 1000;
constexpr std::uint64_t kEvalSeedOffset = 2000;

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  require(static_cast<bool>(os), "cannot open output file");
  return os;
}

PointCloud load_scene(const std::string& path, int num_classes) {
  const auto ext = fs::path(path).extension().string();
  if (ext == ".txt" || ext == ".xyz" || ext == ".xyzrgb") {
    std::ifstream is(path);
    require(static_cast<bool>(is), "cannot open input file");
    return io::read_xyzrgb(is, num_classes);
  }
  return io::load_cloud(path);
}

std::vector<PointCloud> load_scenes(const std::vector<std::string>& files, int num_classes) {
  std::vector<PointCloud> out;
  for (const auto& f : files) out.push_back(load_scene(f, num_classes));
  return out;
}

std::vector<PointCloud> synth_scenes(synth::SceneSpec spec, std::size_t count,
                                     std::uint64_t offset) {
  std::vector<PointCloud> out;
  const auto base = spec.seed;
  for (std::size_t i = 0; i < count; ++i) {
    spec.seed = base + offset + i;
    out.push_back(synth::generate(spec));
  }
  return out;
}

synth::SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  synth::SceneSpec s;
  if (j.contains("layout")) s.layout = synth::parse_layout(j["layout"].get<std::string>());
  s.n_points = j.value("n_points", s.n_points);
  s.n_classes = j.value("n_classes", s.n_classes);
  s.room_size = j.value("room_size", s.room_size);
  s.color_noise = j.value("color_noise", s.color_noise);
  s.blend_width = j.value("blend_width", s.blend_width);
  s.seed = j.value("seed", s.seed);
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::set<std::string> known{"layout",      "n_points",    "n_classes", "room_size",
                                             "color_noise", "blend_width", "seed"};
    if (!known.count(it.key())) throw Error("invalid scene spec: unknown key '" + it.key() + "'");
  }
  return s;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
  std::ifstream is(spec_path);
  require(static_cast<bool>(is), "cannot open scene spec");
  const auto spec = scene_spec_from_json(nlohmann::json::parse(is));
  const auto cloud = synth::generate(spec);
  io::save_cloud(out, cloud);
  std::cout << "wrote " << cloud.size() << " points (" << spec.n_classes << " classes, "
            << synth::to_string(spec.layout) << ") to " << out << '\n';
  return 0;
}

int cmd_train(const std::string& config_path, const fs::path& out) {
  const TrainConfig cfg = load_config(config_path);
  const int y = static_cast<int>(cfg.shape.classes);
  const auto train_scenes = cfg.data.train_files.empty()
                                ? synth_scenes(cfg.data.scene, cfg.data.train_scenes, 0)
                                : load_scenes(cfg.data.train_files, y);
  const auto val_scenes = cfg.data.val_files.empty()
                              ? synth_scenes(cfg.data.scene, cfg.data.val_scenes, kValSeedOffset)
                              : load_scenes(cfg.data.val_files, y);
  fs::create_directories(out);
  open_out(out / "config.cfg") << serialize(cfg);

  TrainOptions opt;
  opt.checkpoint_dir = out;
  const auto res = train(cfg, train_scenes, val_scenes, opt);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  auto csv = open_out(out / "runlog.csv");
  write_csv(csv, res.log);
  if (!res.log.epochs.empty()) {
    const auto& last = res.log.epochs.back();
    std::cout << "epochs " << res.log.epochs.size() << "  final val mIoU " << last.val_miou
              << "  best " << res.best_miou << "  mean entropy " << last.mean_entropy << '\n';
  }
  return 0;
}

std::vector<PointCloud> eval_scenes(const Checkpoint& ck, const std::vector<std::string>& files) {
  if (!files.empty()) return load_scenes(files, static_cast<int>(ck.config.shape.classes));
  return synth_scenes(ck.config.data.scene, ck.config.data.val_scenes, kEvalSeedOffset);
}

int cmd_eval(const std::string& ckpt, const std::vector<std::string>& files, const fs::path& out) {
  const auto ck = load_checkpoint(ckpt);
  const auto& cfg = ck.config;
  const auto scenes = eval_scenes(ck, files);
  const auto ctx = prepare_eval_scenes(scenes, cfg);
  fs::create_directories(out);

  std::vector<std::int32_t> all_pred, all_truth;
  eval::EntropyAnalysis pooled;
  nlohmann::json per_scene = nlohmann::json::array();
  for (std::size_t s = 0; s < ctx.size(); ++s) {
    const auto p = predict(ctx[s].cloud, ctx[s].graphs, ck.params, cfg);
    const auto& truth = ctx[s].cloud.labels;
    const auto rep = eval::miou(p.labels, truth, static_cast<int>(cfg.shape.classes));
    per_scene.push_back(eval::to_json(rep));
    const auto ea = eval::entropy_by_correctness(p.probs, p.labels, truth);
    auto os = open_out(out / ("entropy_scene" + std::to_string(s) + ".csv"));
    eval::write_csv(os, ea);
    if (s == 0) {
      pooled = ea;
    } else {
      for (std::size_t c = 0; c < ea.correct.size(); ++c)
        for (std::size_t b = 0; b < ea.bins; ++b) {
          pooled.correct[c][b] += ea.correct[c][b];
          pooled.incorrect[c][b] += ea.incorrect[c][b];
        }
      pooled.false_low_entropy += ea.false_low_entropy;
    }
    all_pred.insert(all_pred.end(), p.labels.begin(), p.labels.end());
    all_truth.insert(all_truth.end(), truth.begin(), truth.end());
  }
  const auto overall = eval::miou(all_pred, all_truth, static_cast<int>(cfg.shape.classes));
  nlohmann::json j = eval::to_json(overall);
  j["scenes"] = per_scene;
  j["false_low_entropy"] = pooled.false_low_entropy;
  open_out(out / "iou.json") << j.dump(2) << '\n';
  auto os = open_out(out / "entropy.csv");
  eval::write_csv(os, pooled);
  std::cout << "mIoU " << overall.miou << " over " << ctx.size() << " scene(s)\n";
  return 0;
}

int cmd_analyze(const std::string& ckpt, const std::string& scene_file, const fs::path& out,
                std::size_t max_points) {
  const auto ck = load_checkpoint(ckpt);
  const auto& cfg = ck.config;
  const auto scenes = scene_file.empty() ? eval_scenes(ck, {})
                                         : std::vector<PointCloud>{load_scene(
                                               scene_file, static_cast<int>(cfg.shape.classes))};
  const auto ctx = prepare_training_scenes(std::span(scenes.data(), 1), cfg).front();
  fs::create_directories(out);

  const auto view = training_detail::evaluate_view(ctx.cloud, ctx.graphs, ctx.train_labels,
                                                   ck.params, cfg);
  for (std::size_t b = 0; b < kEncoderBlocks; ++b) {
    if (!cfg.entropy_block) break;
    const auto& f = view.fp.blocks[b].field;
    auto os = open_out(out / ("entropy_block" + std::to_string(b + 1) + ".csv"));
    os << "point_id,h,h_cal,gi\n";
    os.precision(17);
    for (std::size_t i = 0; i < f.h.size(); ++i)
      os << i << ',' << f.h[i] << ',' << f.h_cal[i] << ',' << f.gi[i] << '\n';
  }

  // Anchors are the annotated points; uncertain points are the unlabeled
  // ones the margin routed.
  const auto& emb = view.fp.embedding;
  std::vector<std::size_t> anchors, uncertain;
  std::vector<std::int32_t> routed(ctx.cloud.size(), kNoLabel);
  for (std::size_t i = 0; i < ctx.cloud.size(); ++i) {
    if (ctx.cloud.annotated[i]) anchors.push_back(i);
    else if (view.logits.routed_class[i] != kNoLabel && uncertain.size() < max_points) {
      uncertain.push_back(i);
      routed[i] = view.logits.routed_class[i];
    }
  }
  auto gather = [&](const std::vector<std::size_t>& idx) {
    Matrix m(idx.size(), emb.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy(emb.row(idx[r]).begin(), emb.row(idx[r]).end(), m.row(r).begin());
    return m;
  };
  {
    auto os = open_out(out / "similarity.csv");
    eval::write_matrix_csv(os, eval::similarity_matrix(gather(anchors), gather(uncertain)), anchors,
                           uncertain);
  }
  {
    const auto hist = eval::angle_histograms(emb, ck.params.protos, routed);
    auto os = open_out(out / "angles.csv");
    os << "class,bin,lo_deg,hi_deg,count\n";
    const double w = 180.0 / static_cast<double>(eval::kAngleBins);
    for (std::size_t c = 0; c < hist.size(); ++c)
      for (std::size_t b = 0; b < hist[c].size(); ++b)
        os << c << ',' << b << ',' << w * static_cast<double>(b) << ','
           << w * static_cast<double>(b + 1) << ',' << hist[c][b] << '\n';
  }
  std::cout << anchors.size() << " anchors, " << uncertain.size() << " uncertain points\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graphical-information-gain point cloud segmentation toolkit"};
  app.require_subcommand(1);

  std::string spec_path, out, config_path, ckpt, scene;
  std::vector<std::string> scenes;
  std::size_t max_points = 200;

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic labeled scene");
  synth_cmd->add_option("--spec", spec_path, "Scene spec (JSON)")->required()->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", out, "Output cloud (.gaia)")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", config_path, "Training config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "Output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on labeled scenes");
  eval_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--scenes", scenes, "Scene files; synthesized from the config if omitted");
  eval_cmd->add_option("--out", out, "Output directory")->required();

  auto* analyze_cmd = app.add_subcommand("analyze", "Dump entropy, similarity and angle data");
  analyze_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--scene", scene, "Scene file; synthesized from the config if omitted");
  analyze_cmd->add_option("--out", out, "Output directory")->required();
  analyze_cmd->add_option("--max-points", max_points, "Cap on uncertain points exported");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth_cmd) return cmd_synth(spec_path, out);
    if (*train_cmd) return cmd_train(config_path, out);
    if (*eval_cmd) return cmd_eval(ckpt, scenes, out);
    if (*analyze_cmd) return cmd_analyze(ckpt, scene, out, max_points);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
