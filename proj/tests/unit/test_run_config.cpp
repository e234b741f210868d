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

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rangefield/run_config.hpp"

using namespace rangefield;
namespace fs = std::filesystem;

TEST_CASE("config file parsing with comments and overrides") {
  const auto dir = fs::temp_directory_path() / "rf_cfg";
  fs::create_directories(dir);
  const auto path = dir / "run.cfg";
  {
    std::ofstream os(path);
    os << "# a comment\n";
    os << "train.iterations = 123   # trailing comment\n";
    os << "loss.semantic = 0.25\n";
    os << "render.opacity_includes_delta = false\n";
    os << "\n";
  }
  RunConfig cfg;
  cfg.load_file(path.string());
  CHECK(cfg.train.iterations == 123);
  CHECK(cfg.train.loss_weights.semantic == doctest::Approx(0.25));
  CHECK(!cfg.render_opacity_includes_delta);

  cfg.apply_override("train.iterations=7");
  CHECK(cfg.train.iterations == 7);
  fs::remove_all(dir);
}

TEST_CASE("unknown keys and malformed values are rejected by name") {
  RunConfig cfg;
  try {
    cfg.apply_override("train.iterationz=5");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.iterationz") != std::string::npos);
  }
  try {
    cfg.apply_override("train.iterations=five");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.iterations") != std::string::npos);
  }
  CHECK_THROWS_AS(cfg.apply_override("no_equals_sign"), ConfigError);
}

TEST_CASE("bad primitive class id is a config error naming the key") {
  RunConfig cfg;
  cfg.apply_override("synth.mover_label=9");
  cfg.apply_override("synth.num_classes=5");
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("synth.mover_label") != std::string::npos);
  }
}

TEST_CASE("reference text lists every key with its default") {
  RunConfig cfg;
  const std::string ref = cfg.reference_text();
  for (const char* key :
       {"sensor.preset", "dataset.dir", "field.planar_levels",
        "encoder.widths", "head.hidden_dim", "render.num_samples",
        "model.ablation", "train.iterations", "loss.raydrop", "synth.frames",
        "out.dir", "threads"})
    CHECK_MESSAGE(ref.find(key) != std::string::npos, "missing ", key);
  CHECK(ref.find("render.num_samples = 768") != std::string::npos);
}

TEST_CASE("model config resolution from the run config") {
  RunConfig cfg;
  cfg.apply_override("field.planar_levels=8,16");
  cfg.apply_override("field.temporal_resolution=0");
  cfg.apply_override("dataset.num_classes=7");
  cfg.apply_override("model.ablation=grid_only");
  const ModelConfig m = cfg.model_config(/*frame_count=*/25);
  CHECK(m.planar.level_resolutions == std::vector<int>{8, 16});
  CHECK(m.planar.temporal_resolution == 25);
  CHECK(m.grid.temporal_resolution == 25);
  CHECK(m.heads.num_classes == 7);
  CHECK(m.ablation == AblationMode::kGridOnly);
  CHECK(!m.use_local_encoder());
  CHECK(!m.use_semantic_density());

  cfg.apply_override("encoder.widths=1,2");
  CHECK_THROWS_AS(cfg.model_config(25), ConfigError);
}

TEST_CASE("sensor presets") {
  RunConfig cfg;
  cfg.apply_override("sensor.preset=kitti360");
  CHECK(cfg.resolved_sensor().fov_up_deg == doctest::Approx(2.0));
  CHECK(cfg.resolved_sensor().fov_down_deg == doctest::Approx(-24.4));
  CHECK_THROWS_AS(cfg.apply_override("sensor.preset=velodyne128"), ConfigError);
}
