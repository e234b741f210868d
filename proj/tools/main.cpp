// Copyright 2026 The rangefield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rangefield/checkpoint.hpp"
#include "rangefield/pipeline.hpp"
#include "rangefield/range_image_io.hpp"
#include "rangefield/run_config.hpp"

namespace fs = std::filesystem;
using namespace rangefield;

namespace {

// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
constexpr int kOkExit = 0;
constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;
constexpr int kNumericExit = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string dump_config_path;
  int threads = 0;  // 0 = take from config
};

RunConfig build_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const auto& o : args.overrides) cfg.apply_override(o);
  if (args.threads > 0) cfg.threads = args.threads;
  cfg.validate();
  set_num_threads(cfg.threads);
  return cfg;
}

Scene load_scene(const RunConfig& cfg) {
  if (cfg.dataset_dir.empty())
    throw ConfigError("dataset.dir is required (run 'synth' first or point it "
                      "at a sequence directory)");
  return assemble_scene(cfg.dataset_dir, cfg.assembly_options());
}

void write_config_snapshot(const RunConfig& cfg, const fs::path& dir) {
  std::ofstream os(dir / "config_used.txt");
  os << cfg.reference_text();
}

int cmd_synth(const RunConfig& cfg, bool force) {
  const fs::path out = cfg.out_dir;
  if (fs::exists(out) && !fs::is_empty(out) && !force)
    throw DataError("output directory " + out.string() +
                    " is not empty (use --force to overwrite)");
  fs::create_directories(out);
  const Scene scene = synth_scene(cfg.synth_config());
  write_scene_dataset(scene, out.string());
  write_config_snapshot(cfg, out);
  std::printf("wrote %d-frame synthetic scene to %s\n", scene.frame_count(),
              out.string().c_str());
  std::printf("frames: %d  classes: %d  image: %dx%d\n", scene.frame_count(),
              scene.num_classes, scene.intrinsics.beams,
              scene.intrinsics.horizontal_resolution);
  return kOkExit;
}

int cmd_train(const RunConfig& cfg, const std::string& resume_path) {
  const Scene scene = load_scene(cfg);
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);

  Model<float> model = [&] {
    if (!resume_path.empty()) {
      auto loaded = load_checkpoint(resume_path);
      std::printf("resuming from %s\n", resume_path.c_str());
      return std::move(loaded.model);
    }
    return Model<float>::create(cfg.model_config(scene.frame_count()),
                                scene.bounds);
  }();

  std::ofstream eval_log;
  EvalSnapshotFn snapshot = nullptr;
  if (cfg.train.eval_every > 0) {
    eval_log.open(out / "eval_log.txt");
    snapshot = [&](int iteration) {
      const auto report = eval_scene(model, scene);
      eval_log << "iteration " << iteration << "\n" << report.to_text() << "\n";
      eval_log.flush();
    };
  }

  fit(scene, model, cfg.train, (out / "loss_trace.csv").string(), snapshot);

  CheckpointMeta meta;
  meta.intrinsics = scene.intrinsics;
  meta.num_classes = scene.num_classes;
  meta.ignore_class = scene.ignore_class;
  const std::string ckpt = (out / "checkpoint.ckpt").string();
  save_checkpoint(ckpt, model, meta);
  write_config_snapshot(cfg, out);
  std::printf("checkpoint: %s\nloss trace: %s\n", ckpt.c_str(),
              (out / "loss_trace.csv").string().c_str());
  return kOkExit;
}

struct RenderTarget {
  Mat4 pose;
  double time = 0.0;
  std::string tag;
  bool from_frame = false;
};

int cmd_render(const RunConfig& cfg, const std::string& checkpoint_path,
               std::optional<int> frame, const std::string& pose_arg,
               std::optional<double> time_arg, bool no_raydrop_mask) {
  auto loaded = load_checkpoint(checkpoint_path);
  Scene scene = load_scene(cfg);

  RenderTarget target;
  if (frame) {
    if (*frame < 0 || *frame >= scene.frame_count())
      throw DataError("frame " + std::to_string(*frame) +
                      " outside the loaded scene window");
    target.pose = scene.scans[size_t(*frame)].pose;
    target.time = scene.scans[size_t(*frame)].timestamp;
    target.tag = "frame" + std::to_string(*frame);
    target.from_frame = true;
  } else if (!pose_arg.empty()) {
    double x = 0, y = 0, z = 0, yaw_deg = 0;
    if (std::sscanf(pose_arg.c_str(), "%lf,%lf,%lf,%lf", &x, &y, &z,
                    &yaw_deg) != 4)
      throw ConfigError("--pose expects 'x,y,z,yaw_deg'");
    target.pose = Mat4::translation(x, y, z) * Mat4::rotation_z(deg2rad(yaw_deg));
    target.time = time_arg.value_or(0.0);
    target.tag = "pose";
  } else {
    throw ConfigError("render needs --frame or --pose");
  }
  if (time_arg) target.time = *time_arg;

  if (target.time < loaded.model.bounds.t_min - 1e-9 ||
      target.time > loaded.model.bounds.t_max + 1e-9)
    std::fprintf(stderr,
                 "warning: timestamp %.3f outside the trained range "
                 "[%.3f, %.3f]; extrapolating\n",
                 target.time, loaded.model.bounds.t_min,
                 loaded.model.bounds.t_max);

  const auto frame_out =
      render_image(loaded.model, scene, target.pose, target.time,
                   /*apply_raydrop_mask=*/!no_raydrop_mask);

  const fs::path out = cfg.out_dir;
  fs::create_directories(out);
  const std::string base = (out / ("render_" + target.tag)).string();
  save_range_image(base + ".rimg", frame_out.image);
  save_range_image_npy(base + ".npy", frame_out.image);
  save_class_map_pgm(base + "_classes.pgm", frame_out.sem_class,
                     frame_out.image.height(), frame_out.image.width());
  save_palette_json(base + "_palette.json", loaded.meta.num_classes);

  const auto cloud = unproject(frame_out.image, scene.intrinsics);
  save_point_cloud_bin_label(base + ".bin", base + ".label", cloud);
  save_point_cloud_ply(base + ".ply", cloud);

  nlohmann::json meta;
  meta["pose_in_distribution"] = frame_out.pose_in_distribution;
  meta["time_extrapolated"] = frame_out.time_extrapolated;
  meta["local_feature_frame"] = frame_out.local_frame;
  meta["raydrop_mask_applied"] = !no_raydrop_mask;
  meta["kept_pixels"] = frame_out.image.valid_count();
  meta["timestamp"] = target.time;
  std::ofstream ms(base + "_meta.json");
  ms << meta.dump(2) << '\n';

  std::printf("rendered %s (%zu points kept)\n", base.c_str(), cloud.size());
  return kOkExit;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
  auto loaded = load_checkpoint(checkpoint_path);
  Scene scene = load_scene(cfg);
  const fs::path out = cfg.out_dir;
  fs::create_directories(out);

  std::vector<MetricsReport> per_frame;
  const auto report = eval_scene(loaded.model, scene, &per_frame);
  report.save_text((out / "report.txt").string());
  report.save_json((out / "report.json").string());
  for (size_t i = 0; i < per_frame.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "report_frame_%06d.json",
                  scene.test_indices[i]);
    per_frame[i].save_json((out / name).string());
  }
  std::printf("%s", report.to_text().c_str());
  std::printf("reports written to %s\n", out.string().c_str());
  return kOkExit;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rangefield: semantic neural LiDAR fields over range images"};
  app.require_subcommand(0, 1);

  CommonArgs common;
  app.add_option("--config", common.config_path, "run configuration file");
  app.add_option("--set", common.overrides,
                 "override a config key (key=value, repeatable; flags win)");
  app.add_option("--threads", common.threads, "worker thread count");
  app.add_option("--dump-config", common.dump_config_path,
                 "write a reference config with every key and default");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  bool force = false;
  synth->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "fit a model to a scene");
  std::string resume;
  train->add_option("--checkpoint", resume, "resume from a checkpoint");
  std::optional<int> iterations_override;
  train->add_option("--iterations", iterations_override,
                    "override train.iterations");

  auto* render = app.add_subcommand("render", "synthesize a view");
  std::string render_ckpt, pose_arg;
  std::optional<int> frame_arg;
  std::optional<double> time_arg;
  bool no_mask = false;
  render->add_option("--checkpoint", render_ckpt, "trained checkpoint")
      ->required();
  render->add_option("--frame", frame_arg, "render a dataset frame's pose");
  render->add_option("--pose", pose_arg, "novel pose as x,y,z,yaw_deg");
  render->add_option("--time", time_arg, "timestamp in seconds");
  render->add_flag("--no-raydrop-mask", no_mask,
                   "keep every pixel regardless of drop probability");

  auto* eval = app.add_subcommand("eval", "score held-out frames");
  std::string eval_ckpt;
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOkExit : kConfigExit;
  }

  try {
    RunConfig cfg = build_config(common);
    if (!common.dump_config_path.empty()) {
      std::ofstream os(common.dump_config_path);
      if (!os)
        throw DataError("cannot write " + common.dump_config_path);
      os << cfg.reference_text();
      std::printf("wrote config reference to %s\n",
                  common.dump_config_path.c_str());
      if (app.get_subcommands().empty()) return kOkExit;
    }
    if (synth->parsed()) return cmd_synth(cfg, force);
    if (train->parsed()) {
      if (iterations_override) cfg.train.iterations = *iterations_override;
      return cmd_train(cfg, resume);
    }
    if (render->parsed())
      return cmd_render(cfg, render_ckpt, frame_arg, pose_arg, time_arg,
                        no_mask);
    if (eval->parsed()) return cmd_eval(cfg, eval_ckpt);
    std::printf("%s\n", app.help().c_str());
    return kOkExit;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigExit;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataExit;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumericExit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
