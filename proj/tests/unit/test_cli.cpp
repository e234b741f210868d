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

// End-to-end checks of the command-line binary: exit codes, file outputs,
// and byte-level determinism of synthetic datasets.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

// The binary lives next to the test executable's build tree.
std::string binary_path() {
  const char* env = std::getenv("RANGEFIELD_BIN");
  if (env) return env;
  return "tools/rangefield";
}

int run(const std::string& args) {
  const std::string cmd = binary_path() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string toy_flags(const fs::path& dir) {
  return "--set synth.frames=3 --set synth.beams=8 "
         "--set synth.horizontal_resolution=32 "
         "--set sensor.preset=custom --set sensor.beams=8 "
         "--set sensor.horizontal_resolution=32 "
         "--set dataset.frame_count=3 --set dataset.num_classes=5 "
         "--set dataset.learning_map= "
         "--set field.planar_levels=8 --set field.planar_channels=2 "
         "--set field.grid_levels=2 --set field.grid_min_res=8 "
         "--set field.grid_max_res=16 --set field.grid_log2_table=12 "
         "--set encoder.stem_convs=1 --set encoder.blocks_per_stage=1 "
         "--set encoder.widths=3,4,5 --set encoder.out_channels=4 "
         "--set head.hidden_dim=16 --set head.geo_feature_dim=4 "
         "--set head.view_embed_levels=1 --set render.num_samples=8 "
         "--set render.far=60 --set train.iterations=3 "
         "--set train.rays_per_batch=32 --set out.dir=" + dir.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("cli: bad config key exits with the config code") {
  CHECK(run("--set not.a.key=1 synth") == 2);
  CHECK(run("--set train.iterations=abc synth") == 2);
}

TEST_CASE("cli: missing dataset and checkpoint map to the right codes") {
  const auto dir = fs::temp_directory_path() / "rf_cli_codes";
  fs::remove_all(dir);
  CHECK(run("train") == 2);  // dataset.dir unset -> config error
  CHECK(run("--set dataset.dir=/nonexistent --set dataset.frame_count=3 train") ==
        3);
  CHECK(run("eval --checkpoint /nonexistent.ckpt") == 3);
  fs::remove_all(dir);
}

TEST_CASE("cli: synth is deterministic and respects --force") {
  const auto base = fs::temp_directory_path() / "rf_cli_synth";
  fs::remove_all(base);
  const auto a = base / "a";
  const auto b = base / "b";
  REQUIRE(run(toy_flags(a) + " synth") == 0);
  REQUIRE(run(toy_flags(b) + " synth") == 0);
  for (const char* rel : {"velodyne/000000.bin", "labels/000001.label",
                          "poses.txt", "meta.json"}) {
    CHECK(slurp(a / rel) == slurp(b / rel));
    CHECK(!slurp(a / rel).empty());
  }
  // Occupied directory refused without --force, accepted with it.
  CHECK(run(toy_flags(a) + " synth") == 3);
  CHECK(run(toy_flags(a) + " synth --force") == 0);
  fs::remove_all(base);
}

TEST_CASE("cli: train, render, eval round trip") {
  const auto base = fs::temp_directory_path() / "rf_cli_e2e";
  fs::remove_all(base);
  const auto data = base / "data";
  const auto out = base / "run";
  REQUIRE(run(toy_flags(data) + " synth") == 0);

  const std::string train_flags =
      toy_flags(out) + " --set dataset.dir=" + data.string();
  REQUIRE(run(train_flags + " train") == 0);
  CHECK(fs::exists(out / "checkpoint.ckpt"));
  CHECK(fs::exists(out / "loss_trace.csv"));

  // Trace rows = header + iterations.
  std::ifstream trace(out / "loss_trace.csv");
  int rows = 0;
  std::string line;
  while (std::getline(trace, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 1 + 3);

  // Resume runs.
  CHECK(run(train_flags + " train --checkpoint " +
            (out / "checkpoint.ckpt").string() + " --iterations 2") == 0);

  REQUIRE(run(train_flags + " render --checkpoint " +
              (out / "checkpoint.ckpt").string() + " --frame 0") == 0);
  for (const char* rel :
       {"render_frame0.rimg", "render_frame0.npy", "render_frame0.ply",
        "render_frame0.bin", "render_frame0.label", "render_frame0_classes.pgm",
        "render_frame0_palette.json", "render_frame0_meta.json"})
    CHECK_MESSAGE(fs::exists(out / rel), "missing ", rel);

  // Novel pose + out-of-range time renders with a warning, not an error.
  CHECK(run(train_flags + " render --checkpoint " +
            (out / "checkpoint.ckpt").string() +
            " --pose 0.5,0,0,10 --time 99 --no-raydrop-mask") == 0);

  REQUIRE(run(train_flags + " eval --checkpoint " +
              (out / "checkpoint.ckpt").string()) == 0);
  CHECK(fs::exists(out / "report.txt"));
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "report_frame_000000.json"));
  const std::string report = slurp(out / "report.txt");
  for (const char* key : {"point.cd", "depth.rmse", "semantic.miou",
                          "raydrop.acc", "intensity.ssim"})
    CHECK_MESSAGE(report.find(key) != std::string::npos, "missing ", key);
  fs::remove_all(base);
}

TEST_CASE("cli: zero iterations trains to the initialization") {
  const auto base = fs::temp_directory_path() / "rf_cli_zero";
  fs::remove_all(base);
  const auto data = base / "data";
  const auto out = base / "run0";
  REQUIRE(run(toy_flags(data) + " synth") == 0);
  REQUIRE(run(toy_flags(out) + " --set dataset.dir=" + data.string() +
              " train --iterations 0") == 0);
  CHECK(fs::exists(out / "checkpoint.ckpt"));
  fs::remove_all(base);
}
