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

#pragma once

#include <string>

#include "rangefield/dataset_io.hpp"
#include "rangefield/model.hpp"
#include "rangefield/pipeline.hpp"

namespace rangefield {

/// Flat key = value run configuration. Unknown keys are rejected; every
/// key, default, and doc line can be emitted as a reference file.
struct RunConfig {
  // sensor
  std::string sensor_preset = "semantic_kitti";  // semantic_kitti|kitti360|custom
  SensorIntrinsics sensor = SensorIntrinsics::semantic_kitti();

  // dataset
  std::string dataset_dir;
  int dataset_start_frame = 0;
  int dataset_frame_count = 50;
  std::string dataset_learning_map = "data/semantic_kitti_learning_map.json";
  int dataset_num_classes = 20;
  int dataset_ignore_class = 0;
  double dataset_bounds_expansion = 0.05;
  double dataset_frame_period = 0.1;

  // fields
  std::string field_planar_levels = "64,128";
  int field_planar_channels = 8;
  int field_temporal_resolution = 0;  // 0 -> frame count
  int field_grid_levels = 8;
  int field_grid_min_res = 16;
  int field_grid_max_res = 512;
  int field_grid_channels = 2;
  int field_grid_log2_table = 19;
  double field_init_scale = 1e-4;

  // encoder
  int encoder_stem_convs = 2;
  int encoder_blocks_per_stage = 2;
  std::string encoder_widths = "16,32,64";
  int encoder_out_channels = 128;
  double encoder_depth_scale = 80.0;

  // heads
  int head_hidden_dim = 64;
  int head_layers = 3;
  int head_geo_feature_dim = 16;
  int head_view_embed_levels = 4;

  // rendering
  int render_num_samples = 768;
  double render_near = 0.5;
  double render_far = 80.0;
  bool render_opacity_includes_delta = true;
  double render_raydrop_threshold = 0.5;

  // model
  std::string model_ablation = "full";
  uint64_t model_init_seed = 1;

  // training
  TrainConfig train;

  // synthetic scenes
  int synth_frames = 5;
  int synth_beams = 32;
  int synth_horizontal_resolution = 256;
  double synth_fov_up_deg = 3.0;
  double synth_fov_down_deg = -25.0;
  double synth_sensor_speed = 1.5;
  double synth_frame_period = 0.1;
  double synth_max_range = 60.0;
  double synth_mover_speed = 1.0;
  int synth_mover_label = 4;
  int synth_num_classes = 5;

  // output
  std::string out_dir = "out";
  int threads = 1;

  /// Parses `key = value` lines ('#' comments). Unknown keys raise
  /// ConfigError naming the key.
  void load_file(const std::string& path);

  /// Applies one "key=value" override (flags win over the file).
  void apply_override(const std::string& assignment);

  /// Every key with its current value and doc line.
  std::string reference_text() const;

  void validate() const;

  SensorIntrinsics resolved_sensor() const;
  ModelConfig model_config(int frame_count) const;
  SceneAssemblyOptions assembly_options() const;
  SynthSceneConfig synth_config() const;
};

}  // namespace rangefield
