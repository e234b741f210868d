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

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rangefield/feature_fields.hpp"
#include "rangefield/lidar_model.hpp"

namespace rangefield {

/// Row-major 4x4 rigid transform.
struct Mat4 {
  std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  static Mat4 identity() { return Mat4{}; }
  static Mat4 translation(double x, double y, double z);
  static Mat4 rotation_z(double yaw_rad);

  Mat4 operator*(const Mat4& o) const;
  std::array<double, 3> transform_point(double x, double y, double z) const;
  std::array<double, 3> rotate(double x, double y, double z) const;
  Mat4 rigid_inverse() const;

  /// ||R^T R - I|| below tolerance.
  bool rotation_orthonormal(double tol = 1e-5) const;
};

/// Raw label id -> training class id. Ids absent from the table map to the
/// ignore class.
class LearningMap {
 public:
  static LearningMap identity();
  static LearningMap load(const std::string& json_path);

  uint16_t remap(uint16_t raw) const {
    if (identity_) return raw;
    auto it = table_.find(raw);
    return it == table_.end() ? ignore_id_ : it->second;
  }

  void set_ignore(uint16_t id) { ignore_id_ = id; }

 private:
  std::unordered_map<uint16_t, uint16_t> table_;
  uint16_t ignore_id_ = 0;
  bool identity_ = false;
};

struct LidarScan {
  std::vector<LidarPoint> points;
  double timestamp = 0.0;
  Mat4 pose;  // sensor -> world

  void validate() const;
};

struct Scene {
  std::vector<LidarScan> scans;
  std::vector<RangeImage> images;  // projected per scan, same order
  SensorIntrinsics intrinsics;
  SceneBounds bounds;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
  int num_classes = 20;
  int ignore_class = 0;

  int frame_count() const { return int(scans.size()); }
};

/// One .bin/.label pair. The .bin holds little-endian float32 (x, y, z,
/// intensity) quadruples; the .label holds little-endian uint32 whose low
/// 16 bits are the semantic id (high bits carry instance ids).
LidarScan load_scan(const std::string& bin_path, const std::string& label_path,
                    const Mat4& pose, double timestamp, const LearningMap& map);

struct SceneAssemblyOptions {
  int start_frame = 0;
  int count = 50;
  SensorIntrinsics intrinsics = SensorIntrinsics::semantic_kitti();
  std::string learning_map_path;  // empty -> identity remap
  int num_classes = 20;
  int ignore_class = 0;
  double bounds_expansion = 0.05;
  double frame_period = 0.1;  // used when times.txt is absent
};

/// Loads `count` consecutive frames from a dataset directory laid out as
/// velodyne/*.bin + labels/*.label + poses.txt (+ optional calib.txt,
/// times.txt, meta.json). Every frame at window-relative index 0 mod 10 is
/// held out as a test view.
Scene assemble_scene(const std::string& sequence_dir,
                     const SceneAssemblyOptions& opts);

/// Writes a scene back out in the same directory layout (plus meta.json
/// carrying intrinsics and class data), so synthetic and real data flow
/// through identical loading paths.
void write_scene_dataset(const Scene& scene, const std::string& dir);

// ---------------------------------------------------------------------------
// Synthetic scenes with analytic ground truth
// ---------------------------------------------------------------------------

struct SynthPrimitive {
  enum class Kind { kGroundPlane, kBox };
  Kind kind = Kind::kBox;
  double plane_z = -2.0;                      // ground plane height
  std::array<double, 3> center{0, 0, 0};      // box center at t = 0
  std::array<double, 3> size{1, 1, 1};        // box edge lengths
  std::array<double, 3> velocity{0, 0, 0};    // meters / second
  uint16_t label = 1;
  double reflectivity = 0.5;
};

struct SynthSceneConfig {
  int frames = 5;
  SensorIntrinsics intrinsics{32, 256, 3.0, -25.0};
  double frame_period = 0.1;
  double sensor_speed = 1.5;  // sensor moves along +x
  double max_range = 60.0;
  double bounds_expansion = 0.05;
  std::vector<SynthPrimitive> primitives;  // empty -> standard arrangement
  int num_classes = 5;                     // including the ignore id 0

  /// Ground plane + two static boxes + one moving box, four classes.
  static SynthSceneConfig standard();
};

/// Casts one ray per pixel through the exact sensor model; depth is the
/// nearest primitive hit, intensity is reflectivity times the cosine of
/// incidence, misses become dropped pixels.
Scene synth_scene(const SynthSceneConfig& cfg);

/// Analytic single-ray intersection against the configured primitives at
/// a given time; returns false on miss. Exposed for tests.
bool synth_trace_ray(const SynthSceneConfig& cfg,
                     const std::array<double, 3>& origin,
                     const std::array<double, 3>& dir, double time,
                     double* hit_depth, double* hit_intensity,
                     uint16_t* hit_label);

}  // namespace rangefield
