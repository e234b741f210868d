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

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "rangefield/dataset_io.hpp"

using namespace rangefield;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const void* data, size_t size) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(data), std::streamsize(size));
}

}  // namespace

TEST_CASE("Mat4 compose, rotate, invert") {
  const Mat4 t = Mat4::translation(1, 2, 3);
  const Mat4 r = Mat4::rotation_z(kPi / 2);
  const Mat4 m = t * r;
  const auto p = m.transform_point(1, 0, 0);
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(3.0).epsilon(1e-12));

  const Mat4 inv = m.rigid_inverse();
  const auto back = inv.transform_point(p[0], p[1], p[2]);
  CHECK(back[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(back[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(back[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(m.rotation_orthonormal());
}

TEST_CASE("load_scan parses crafted fixture bytes exactly") {
  const auto dir = scratch_dir("rf_scan_fixture");
  // Two points: (1.5, -2.25, 0.5, 0.75) and (10, 0, -1, 0.125).
  const float bin[8] = {1.5f, -2.25f, 0.5f, 0.75f, 10.0f, 0.0f, -1.0f, 0.125f};
  write_bytes(dir / "scan.bin", bin, sizeof bin);
  // Labels with instance ids in the high 16 bits.
  const uint32_t labels[2] = {(7u << 16) | 10u, (3u << 16) | 40u};
  write_bytes(dir / "scan.label", labels, sizeof labels);

  LearningMap map = LearningMap::identity();
  const auto scan = load_scan((dir / "scan.bin").string(),
                              (dir / "scan.label").string(), Mat4::identity(),
                              0.5, map);
  REQUIRE(scan.points.size() == 2);
  CHECK(scan.points[0].x == 1.5f);
  CHECK(scan.points[0].y == -2.25f);
  CHECK(scan.points[0].z == 0.5f);
  CHECK(scan.points[0].intensity == 0.75f);
  CHECK(scan.points[0].label == 10);  // instance bits stripped
  CHECK(scan.points[1].label == 40);
  CHECK(scan.timestamp == 0.5);
  fs::remove_all(dir);
}

TEST_CASE("load_scan error paths") {
  const auto dir = scratch_dir("rf_scan_errors");
  const float bin[8] = {0, 0, 0, 0, 1, 1, 1, 0};
  write_bytes(dir / "two.bin", bin, sizeof bin);
  const uint32_t one_label = 10;
  write_bytes(dir / "one.label", &one_label, sizeof one_label);
  LearningMap map = LearningMap::identity();
  CHECK_THROWS_AS(load_scan((dir / "two.bin").string(),
                            (dir / "one.label").string(), Mat4::identity(),
                            0.0, map),
                  SizeMismatch);

  write_bytes(dir / "trunc.bin", bin, 13);  // not a multiple of 16
  CHECK_THROWS_AS(load_scan((dir / "trunc.bin").string(),
                            (dir / "one.label").string(), Mat4::identity(),
                            0.0, map),
                  TruncatedFile);

  // Empty files make an empty scan, not an error.
  write_bytes(dir / "empty.bin", bin, 0);
  write_bytes(dir / "empty.label", bin, 0);
  const auto empty = load_scan((dir / "empty.bin").string(),
                               (dir / "empty.label").string(),
                               Mat4::identity(), 0.0, map);
  CHECK(empty.points.empty());
  fs::remove_all(dir);
}

TEST_CASE("learning map remaps semantic ids and defaults to ignore") {
  const auto map = LearningMap::load("data/semantic_kitti_learning_map.json");
  // Spot checks against the community table.
  CHECK(map.remap(10) == 1);   // car
  CHECK(map.remap(40) == 9);   // road
  CHECK(map.remap(70) == 15);  // vegetation
  CHECK(map.remap(252) == 1);  // moving car folds to car
  CHECK(map.remap(0) == 0);
  CHECK(map.remap(12345) == 0);  // unknown raw id -> ignore
}

TEST_CASE("synthetic scene: analytic intersections") {
  SynthSceneConfig cfg;
  cfg.primitives.clear();
  SynthPrimitive wall;
  wall.kind = SynthPrimitive::Kind::kBox;
  wall.center = {10.5, 0, 0};
  wall.size = {1.0, 20.0, 20.0};  // near face at x = 10
  wall.label = 2;
  wall.reflectivity = 0.5;
  cfg.primitives.push_back(wall);

  double d, inten;
  uint16_t label;
  // Straight ahead: depth exactly 10, full cosine.
  REQUIRE(synth_trace_ray(cfg, {0, 0, 0}, {1, 0, 0}, 0.0, &d, &inten, &label));
  CHECK(d == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(inten == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(label == 2);

  // Horizontal ray above a ground plane never hits it.
  SynthSceneConfig ground_cfg;
  ground_cfg.primitives.clear();
  SynthPrimitive ground;
  ground.kind = SynthPrimitive::Kind::kGroundPlane;
  ground.plane_z = 0.0;
  ground_cfg.primitives.push_back(ground);
  CHECK(!synth_trace_ray(ground_cfg, {0, 0, 2}, {1, 0, 0}, 0.0, &d, &inten,
                         &label));

  // Moving box: near face at 20 + 2t along +x.
  SynthSceneConfig moving_cfg;
  moving_cfg.primitives.clear();
  SynthPrimitive mover;
  mover.center = {21.0, 0, 0};
  mover.size = {2.0, 4.0, 4.0};
  mover.velocity = {2.0, 0, 0};
  moving_cfg.primitives.push_back(mover);
  REQUIRE(synth_trace_ray(moving_cfg, {0, 0, 0}, {1, 0, 0}, 0.0, &d, &inten,
                          &label));
  CHECK(d == doctest::Approx(20.0).epsilon(1e-12));
  REQUIRE(synth_trace_ray(moving_cfg, {0, 0, 0}, {1, 0, 0}, 1.0, &d, &inten,
                          &label));
  CHECK(d == doctest::Approx(22.0).epsilon(1e-12));
}

TEST_CASE("synthetic scene images satisfy the projection round trip") {
  SynthSceneConfig cfg = SynthSceneConfig::standard();
  cfg.frames = 2;
  cfg.intrinsics = SensorIntrinsics{16, 64, 3.0, -25.0};
  const Scene scene = synth_scene(cfg);
  REQUIRE(scene.frame_count() == 2);

  for (int f = 0; f < 2; ++f) {
    const auto& img = scene.images[size_t(f)];
    CHECK(img.valid_count() > 0);
    const auto reproj = project_cloud(scene.scans[size_t(f)].points,
                                      scene.intrinsics);
    REQUIRE(reproj.image.pixels() == img.pixels());
    CHECK(reproj.skipped == 0);
    size_t mismatches = 0;
    double max_depth_err = 0.0;
    for (size_t i = 0; i < img.pixels(); ++i) {
      if (reproj.image.mask_data()[i] != img.mask_data()[i]) ++mismatches;
      if (img.mask_data()[i] && reproj.image.mask_data()[i])
        max_depth_err = std::max(
            max_depth_err, std::abs(double(reproj.image.depth_data()[i]) -
                                    double(img.depth_data()[i])));
    }
    CHECK(mismatches == 0);
    CHECK(max_depth_err < 1e-3);
  }
}

TEST_CASE("synthetic scene writes and reloads through the dataset layout") {
  SynthSceneConfig cfg = SynthSceneConfig::standard();
  cfg.frames = 4;
  cfg.intrinsics = SensorIntrinsics{8, 32, 3.0, -25.0};
  const Scene scene = synth_scene(cfg);

  const auto dir = scratch_dir("rf_synth_roundtrip");
  write_scene_dataset(scene, dir.string());

  SceneAssemblyOptions opts;
  opts.count = 4;
  const Scene loaded = assemble_scene(dir.string(), opts);
  REQUIRE(loaded.frame_count() == 4);
  CHECK(loaded.intrinsics.beams == 8);
  CHECK(loaded.num_classes == 5);

  // Scan payload round trip is exact (bitwise per field).
  for (int f = 0; f < 4; ++f) {
    const auto& a = scene.scans[size_t(f)].points;
    const auto& b = loaded.scans[size_t(f)].points;
    REQUIRE(a.size() == b.size());
    size_t diffs = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      if (std::memcmp(&a[i].x, &b[i].x, 4) || std::memcmp(&a[i].y, &b[i].y, 4) ||
          std::memcmp(&a[i].z, &b[i].z, 4) ||
          std::memcmp(&a[i].intensity, &b[i].intensity, 4) ||
          a[i].label != b[i].label)
        ++diffs;
    }
    CHECK(diffs == 0);
    CHECK(loaded.scans[size_t(f)].timestamp ==
          doctest::Approx(scene.scans[size_t(f)].timestamp));
  }

  // Save -> load -> save reproduces identical files.
  const auto dir2 = scratch_dir("rf_synth_roundtrip2");
  write_scene_dataset(loaded, dir2.string());
  for (int f = 0; f < 4; ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d.bin", f);
    std::ifstream fa(dir / "velodyne" / name, std::ios::binary);
    std::ifstream fb(dir2 / "velodyne" / name, std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)),
                   std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(fb)),
                   std::istreambuf_iterator<char>());
    CHECK(ba == bb);
    CHECK(!ba.empty());
  }
  fs::remove_all(dir2);
  fs::remove_all(dir);
}

TEST_CASE("scene split holds out every tenth frame") {
  SynthSceneConfig cfg = SynthSceneConfig::standard();
  cfg.frames = 20;
  cfg.intrinsics = SensorIntrinsics{4, 16, 3.0, -25.0};
  const Scene scene = synth_scene(cfg);
  CHECK(scene.test_indices == std::vector<int>{0, 10});
  CHECK(scene.train_indices.size() == 18);
  for (int t : scene.test_indices)
    for (int tr : scene.train_indices) CHECK(t != tr);

  SynthSceneConfig small = cfg;
  small.frames = 10;
  const Scene scene10 = synth_scene(small);
  CHECK(scene10.test_indices == std::vector<int>{0});
}

TEST_CASE("missing frames are reported by name") {
  SynthSceneConfig cfg = SynthSceneConfig::standard();
  cfg.frames = 3;
  cfg.intrinsics = SensorIntrinsics{4, 16, 3.0, -25.0};
  const Scene scene = synth_scene(cfg);
  const auto dir = scratch_dir("rf_missing_frame");
  write_scene_dataset(scene, dir.string());
  fs::remove(dir / "velodyne" / "000001.bin");

  SceneAssemblyOptions opts;
  opts.count = 3;
  try {
    assemble_scene(dir.string(), opts);
    FAIL("expected MissingFrame");
  } catch (const MissingFrame& e) {
    CHECK(std::string(e.what()).find("000001") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("poses compose with calibration only when calib.txt exists") {
  const auto dir = scratch_dir("rf_calib");
  SynthSceneConfig cfg = SynthSceneConfig::standard();
  cfg.frames = 1;
  cfg.intrinsics = SensorIntrinsics{4, 16, 3.0, -25.0};
  Scene scene = synth_scene(cfg);
  write_scene_dataset(scene, dir.string());

  SceneAssemblyOptions opts;
  opts.count = 1;
  const Scene plain = assemble_scene(dir.string(), opts);

  // Identity calibration leaves poses unchanged.
  std::ofstream calib(dir / "calib.txt");
  calib << "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  calib << "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  calib.close();
  const Scene with_calib = assemble_scene(dir.string(), opts);
  for (int i = 0; i < 16; ++i)
    CHECK(plain.scans[0].pose.m[size_t(i)] ==
          doctest::Approx(with_calib.scans[0].pose.m[size_t(i)]));
  fs::remove_all(dir);
}
