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

#include "rangefield/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace rangefield {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError(key + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

struct Entry {
  std::string key;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
T parse_scalar(const std::string& key, const std::string& v);

template <>
int parse_scalar<int>(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not an integer");
  }
}

template <>
uint64_t parse_scalar<uint64_t>(const std::string& key, const std::string& v) {
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not an unsigned integer");
  }
}

template <>
double parse_scalar<double>(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
}

template <>
bool parse_scalar<bool>(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

template <>
std::string parse_scalar<std::string>(const std::string&, const std::string& v) {
  return v;
}

std::string to_str(int v) { return std::to_string(v); }
std::string to_str(uint64_t v) { return std::to_string(v); }
std::string to_str(bool v) { return v ? "true" : "false"; }
std::string to_str(const std::string& v) { return v; }
std::string to_str(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

template <class T>
Entry entry(const std::string& key, T RunConfig::* member,
            const std::string& doc) {
  return Entry{
      key, doc,
      [key, member](RunConfig& c, const std::string& v) {
        c.*member = parse_scalar<T>(key, v);
      },
      [member](const RunConfig& c) { return to_str(c.*member); }};
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back(Entry{
        "sensor.preset",
        "sensor preset: semantic_kitti, kitti360 or custom (use sensor.* keys)",
        [](RunConfig& c, const std::string& v) {
          if (v == "semantic_kitti")
            c.sensor = SensorIntrinsics::semantic_kitti(
                c.sensor.beams, c.sensor.horizontal_resolution);
          else if (v == "kitti360")
            c.sensor = SensorIntrinsics::kitti360(
                c.sensor.beams, c.sensor.horizontal_resolution);
          else if (v != "custom")
            throw ConfigError("sensor.preset: unknown preset '" + v + "'");
          c.sensor_preset = v;
        },
        [](const RunConfig& c) { return c.sensor_preset; }});
    e.push_back(Entry{"sensor.beams", "vertical beam count H",
                      [](RunConfig& c, const std::string& v) {
                        c.sensor.beams = parse_scalar<int>("sensor.beams", v);
                      },
                      [](const RunConfig& c) { return to_str(c.sensor.beams); }});
    e.push_back(Entry{"sensor.horizontal_resolution",
                      "horizontal steps per sweep W",
                      [](RunConfig& c, const std::string& v) {
                        c.sensor.horizontal_resolution =
                            parse_scalar<int>("sensor.horizontal_resolution", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.sensor.horizontal_resolution);
                      }});
    e.push_back(Entry{"sensor.fov_up_deg", "upper FOV edge in degrees",
                      [](RunConfig& c, const std::string& v) {
                        c.sensor.fov_up_deg =
                            parse_scalar<double>("sensor.fov_up_deg", v);
                        c.sensor_preset = "custom";
                      },
                      [](const RunConfig& c) {
                        return to_str(c.sensor.fov_up_deg);
                      }});
    e.push_back(Entry{"sensor.fov_down_deg",
                      "lower FOV edge in degrees (negative)",
                      [](RunConfig& c, const std::string& v) {
                        c.sensor.fov_down_deg =
                            parse_scalar<double>("sensor.fov_down_deg", v);
                        c.sensor_preset = "custom";
                      },
                      [](const RunConfig& c) {
                        return to_str(c.sensor.fov_down_deg);
                      }});

    e.push_back(entry("dataset.dir", &RunConfig::dataset_dir,
                      "sequence directory (velodyne/, labels/, poses.txt)"));
    e.push_back(entry("dataset.start_frame", &RunConfig::dataset_start_frame,
                      "first frame of the scene window"));
    e.push_back(entry("dataset.frame_count", &RunConfig::dataset_frame_count,
                      "consecutive frames per scene"));
    e.push_back(entry("dataset.learning_map", &RunConfig::dataset_learning_map,
                      "json remap of raw label ids (empty = identity)"));
    e.push_back(entry("dataset.num_classes", &RunConfig::dataset_num_classes,
                      "training class count including the ignore id"));
    e.push_back(entry("dataset.ignore_class", &RunConfig::dataset_ignore_class,
                      "class id excluded from semantic supervision/metrics"));
    e.push_back(entry("dataset.bounds_expansion",
                      &RunConfig::dataset_bounds_expansion,
                      "scene box padding as a fraction of extent per side"));
    e.push_back(entry("dataset.frame_period", &RunConfig::dataset_frame_period,
                      "seconds between frames when times.txt is absent"));

    e.push_back(entry("field.planar_levels", &RunConfig::field_planar_levels,
                      "comma list of plane lattice resolutions"));
    e.push_back(entry("field.planar_channels", &RunConfig::field_planar_channels,
                      "feature channels per plane"));
    e.push_back(entry("field.temporal_resolution",
                      &RunConfig::field_temporal_resolution,
                      "time lattice nodes (0 = frame count)"));
    e.push_back(entry("field.grid_levels", &RunConfig::field_grid_levels,
                      "hash grid level count"));
    e.push_back(entry("field.grid_min_res", &RunConfig::field_grid_min_res,
                      "coarsest grid lattice resolution"));
    e.push_back(entry("field.grid_max_res", &RunConfig::field_grid_max_res,
                      "finest grid lattice resolution"));
    e.push_back(entry("field.grid_channels", &RunConfig::field_grid_channels,
                      "feature channels per grid level"));
    e.push_back(entry("field.grid_log2_table", &RunConfig::field_grid_log2_table,
                      "log2 of the hash table size"));
    e.push_back(entry("field.init_scale", &RunConfig::field_init_scale,
                      "uniform init range for plane/table entries"));

    e.push_back(entry("encoder.stem_convs", &RunConfig::encoder_stem_convs,
                      "3x3 convs before the residual stages"));
    e.push_back(entry("encoder.blocks_per_stage",
                      &RunConfig::encoder_blocks_per_stage,
                      "residual blocks per stage"));
    e.push_back(entry("encoder.widths", &RunConfig::encoder_widths,
                      "comma list of the three stage widths"));
    e.push_back(entry("encoder.out_channels", &RunConfig::encoder_out_channels,
                      "local semantic feature channels"));
    e.push_back(entry("encoder.depth_scale", &RunConfig::encoder_depth_scale,
                      "meters mapped to 1.0 at the encoder input"));

    e.push_back(entry("head.hidden_dim", &RunConfig::head_hidden_dim,
                      "decoder MLP hidden width"));
    e.push_back(entry("head.layers", &RunConfig::head_layers,
                      "decoder MLP layer count"));
    e.push_back(entry("head.geo_feature_dim", &RunConfig::head_geo_feature_dim,
                      "geometry feature channels feeding shading heads"));
    e.push_back(entry("head.view_embed_levels",
                      &RunConfig::head_view_embed_levels,
                      "sin/cos frequency count for view embeddings"));

    e.push_back(entry("render.num_samples", &RunConfig::render_num_samples,
                      "samples per ray"));
    e.push_back(entry("render.near", &RunConfig::render_near,
                      "minimum sample distance in meters"));
    e.push_back(entry("render.far", &RunConfig::render_far,
                      "maximum sample distance in meters"));
    e.push_back(entry("render.opacity_includes_delta",
                      &RunConfig::render_opacity_includes_delta,
                      "use 1-e^{-sigma*delta} opacity (false: 1-e^{-sigma})"));
    e.push_back(entry("render.raydrop_threshold",
                      &RunConfig::render_raydrop_threshold,
                      "drop probability above which pixels are masked"));

    e.push_back(entry("model.ablation", &RunConfig::model_ablation,
                      "grid_only | semantic_field | full"));
    e.push_back(entry("model.init_seed", &RunConfig::model_init_seed,
                      "parameter initialization seed"));

    e.push_back(Entry{"train.iterations", "optimization steps",
                      [](RunConfig& c, const std::string& v) {
                        c.train.iterations =
                            parse_scalar<int>("train.iterations", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.iterations);
                      }});
    e.push_back(Entry{"train.rays_per_batch", "rays per optimization step",
                      [](RunConfig& c, const std::string& v) {
                        c.train.rays_per_batch =
                            parse_scalar<int>("train.rays_per_batch", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.rays_per_batch);
                      }});
    e.push_back(Entry{"train.lr_fields", "learning rate for planes/tables",
                      [](RunConfig& c, const std::string& v) {
                        c.train.lr_fields =
                            parse_scalar<double>("train.lr_fields", v);
                      },
                      [](const RunConfig& c) { return to_str(c.train.lr_fields); }});
    e.push_back(Entry{"train.lr_mlp", "learning rate for MLPs and encoder",
                      [](RunConfig& c, const std::string& v) {
                        c.train.lr_mlp = parse_scalar<double>("train.lr_mlp", v);
                      },
                      [](const RunConfig& c) { return to_str(c.train.lr_mlp); }});
    e.push_back(Entry{"train.adam_beta1", "Adam first-moment decay",
                      [](RunConfig& c, const std::string& v) {
                        c.train.adam_beta1 =
                            parse_scalar<double>("train.adam_beta1", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.adam_beta1);
                      }});
    e.push_back(Entry{"train.adam_beta2", "Adam second-moment decay",
                      [](RunConfig& c, const std::string& v) {
                        c.train.adam_beta2 =
                            parse_scalar<double>("train.adam_beta2", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.adam_beta2);
                      }});
    e.push_back(Entry{"train.adam_epsilon", "Adam denominator floor",
                      [](RunConfig& c, const std::string& v) {
                        c.train.adam_epsilon =
                            parse_scalar<double>("train.adam_epsilon", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.adam_epsilon);
                      }});
    e.push_back(Entry{"train.seed", "run seed (batching, stratified samples)",
                      [](RunConfig& c, const std::string& v) {
                        c.train.seed = parse_scalar<uint64_t>("train.seed", v);
                      },
                      [](const RunConfig& c) { return to_str(c.train.seed); }});
    e.push_back(Entry{"train.stratified",
                      "one random sample per depth bin (false: midpoints)",
                      [](RunConfig& c, const std::string& v) {
                        c.train.stratified =
                            parse_scalar<bool>("train.stratified", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.stratified);
                      }});
    e.push_back(Entry{"train.eval_every",
                      "held-out snapshot cadence in iterations (0 = off)",
                      [](RunConfig& c, const std::string& v) {
                        c.train.eval_every =
                            parse_scalar<int>("train.eval_every", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.eval_every);
                      }});
    e.push_back(Entry{"train.log_every", "stdout cadence in iterations (0 = off)",
                      [](RunConfig& c, const std::string& v) {
                        c.train.log_every =
                            parse_scalar<int>("train.log_every", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.log_every);
                      }});
    e.push_back(Entry{"loss.depth", "L1 depth term weight",
                      [](RunConfig& c, const std::string& v) {
                        c.train.loss_weights.depth =
                            parse_scalar<double>("loss.depth", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.loss_weights.depth);
                      }});
    e.push_back(Entry{"loss.semantic", "cross-entropy semantic term weight",
                      [](RunConfig& c, const std::string& v) {
                        c.train.loss_weights.semantic =
                            parse_scalar<double>("loss.semantic", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.loss_weights.semantic);
                      }});
    e.push_back(Entry{"loss.intensity", "squared intensity term weight",
                      [](RunConfig& c, const std::string& v) {
                        c.train.loss_weights.intensity =
                            parse_scalar<double>("loss.intensity", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.loss_weights.intensity);
                      }});
    e.push_back(Entry{"loss.raydrop", "squared ray-drop term weight",
                      [](RunConfig& c, const std::string& v) {
                        c.train.loss_weights.raydrop =
                            parse_scalar<double>("loss.raydrop", v);
                      },
                      [](const RunConfig& c) {
                        return to_str(c.train.loss_weights.raydrop);
                      }});

    e.push_back(entry("synth.frames", &RunConfig::synth_frames,
                      "generated frame count"));
    e.push_back(entry("synth.beams", &RunConfig::synth_beams,
                      "generated sensor beam count"));
    e.push_back(entry("synth.horizontal_resolution",
                      &RunConfig::synth_horizontal_resolution,
                      "generated sensor horizontal steps"));
    e.push_back(entry("synth.fov_up_deg", &RunConfig::synth_fov_up_deg,
                      "generated sensor upper FOV edge"));
    e.push_back(entry("synth.fov_down_deg", &RunConfig::synth_fov_down_deg,
                      "generated sensor lower FOV edge"));
    e.push_back(entry("synth.sensor_speed", &RunConfig::synth_sensor_speed,
                      "sensor forward speed in m/s"));
    e.push_back(entry("synth.frame_period", &RunConfig::synth_frame_period,
                      "seconds between generated frames"));
    e.push_back(entry("synth.max_range", &RunConfig::synth_max_range,
                      "maximum simulated return distance"));
    e.push_back(entry("synth.mover_speed", &RunConfig::synth_mover_speed,
                      "moving box speed along +x in m/s"));
    e.push_back(entry("synth.mover_label", &RunConfig::synth_mover_label,
                      "semantic class id of the moving box"));
    e.push_back(entry("synth.num_classes", &RunConfig::synth_num_classes,
                      "class count of the generated scene (incl. ignore)"));

    e.push_back(entry("out.dir", &RunConfig::out_dir,
                      "output directory for runs"));
    e.push_back(entry("threads", &RunConfig::threads,
                      "worker threads for parallel sections"));
    return e;
  }();
  return entries;
}

const Entry& find_entry(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    find_entry(key).set(*this, value);
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  find_entry(key).set(*this, value);
}

std::string RunConfig::reference_text() const {
  std::string out =
      "# rangefield run configuration reference\n"
      "# every known key with its current value\n\n";
  for (const auto& e : registry()) {
    out += "# " + e.doc + "\n";
    out += e.key + " = " + e.get(*this) + "\n\n";
  }
  return out;
}

void RunConfig::validate() const {
  resolved_sensor().validate();
  train.validate();
  if (render_num_samples < 1)
    throw ConfigError("render.num_samples must be positive");
  if (!(render_near > 0.0) || !(render_far > render_near))
    throw ConfigError("render near/far must satisfy 0 < near < far");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (synth_mover_label <= 0 || synth_mover_label >= synth_num_classes)
    throw ConfigError(
        "synth.mover_label must be a non-ignore class id below "
        "synth.num_classes");
  ablation_from_string(model_ablation);
}

SensorIntrinsics RunConfig::resolved_sensor() const { return sensor; }

ModelConfig RunConfig::model_config(int frame_count) const {
  ModelConfig m;
  m.planar.level_resolutions =
      parse_int_list("field.planar_levels", field_planar_levels);
  m.planar.channels = field_planar_channels;
  m.planar.temporal_resolution =
      field_temporal_resolution > 0 ? field_temporal_resolution : frame_count;
  m.planar.init_scale = field_init_scale;
  m.grid.num_levels = field_grid_levels;
  m.grid.min_resolution = field_grid_min_res;
  m.grid.max_resolution = field_grid_max_res;
  m.grid.channels = field_grid_channels;
  m.grid.log2_table_size = field_grid_log2_table;
  m.grid.temporal_resolution = m.planar.temporal_resolution;
  m.grid.init_scale = field_init_scale;
  m.encoder.stem_convs = encoder_stem_convs;
  m.encoder.blocks_per_stage = encoder_blocks_per_stage;
  const auto widths = parse_int_list("encoder.widths", encoder_widths);
  if (widths.size() != 3)
    throw ConfigError("encoder.widths must list exactly three stage widths");
  m.encoder.stage_widths = {widths[0], widths[1], widths[2]};
  m.encoder.out_channels = encoder_out_channels;
  m.encoder.depth_scale = encoder_depth_scale;
  m.heads.hidden_dim = head_hidden_dim;
  m.heads.layers = head_layers;
  m.heads.geo_feature_dim = head_geo_feature_dim;
  m.heads.view_embed_levels = head_view_embed_levels;
  m.heads.num_classes = dataset_num_classes;
  m.ablation = ablation_from_string(model_ablation);
  m.num_samples = render_num_samples;
  m.near = render_near;
  m.far = render_far;
  m.opacity_includes_delta = render_opacity_includes_delta;
  m.raydrop_threshold = render_raydrop_threshold;
  m.init_seed = model_init_seed;
  return m;
}

SceneAssemblyOptions RunConfig::assembly_options() const {
  SceneAssemblyOptions opts;
  opts.start_frame = dataset_start_frame;
  opts.count = dataset_frame_count;
  opts.intrinsics = resolved_sensor();
  opts.learning_map_path = dataset_learning_map;
  opts.num_classes = dataset_num_classes;
  opts.ignore_class = dataset_ignore_class;
  opts.bounds_expansion = dataset_bounds_expansion;
  opts.frame_period = dataset_frame_period;
  return opts;
}

SynthSceneConfig RunConfig::synth_config() const {
  SynthSceneConfig s = SynthSceneConfig::standard();
  s.frames = synth_frames;
  s.intrinsics = SensorIntrinsics{synth_beams, synth_horizontal_resolution,
                                  synth_fov_up_deg, synth_fov_down_deg};
  s.sensor_speed = synth_sensor_speed;
  s.frame_period = synth_frame_period;
  s.max_range = synth_max_range;
  s.num_classes = synth_num_classes;
  s.bounds_expansion = dataset_bounds_expansion;
  for (auto& prim : s.primitives) {
    if (prim.velocity[0] != 0.0 || prim.velocity[1] != 0.0 ||
        prim.velocity[2] != 0.0) {
      prim.velocity = {synth_mover_speed, 0.0, 0.0};
      prim.label = uint16_t(synth_mover_label);
    }
  }
  return s;
}

}  // namespace rangefield
