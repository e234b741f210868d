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
#include <cstdint>
#include <span>
#include <vector>

#include "rangefield/common.hpp"
#include "rangefield/errors.hpp"

namespace rangefield {

/// Spinning-LiDAR geometry: H vertical beams sweeping W horizontal steps.
/// The vertical field of view spans [fov_down_deg, fov_up_deg] with
/// fov_up_deg >= 0 >= fov_down_deg. Angles are stored in degrees.
struct SensorIntrinsics {
  int beams = 64;
  int horizontal_resolution = 1024;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;

  double vertical_fov_deg() const {
    return std::abs(fov_down_deg) + std::abs(fov_up_deg);
  }

  void validate() const;

  // Common community configurations; the up/down split is a convention,
  // not a dataset ground truth, and stays overridable.
  static SensorIntrinsics semantic_kitti(int beams = 64, int horiz = 1024) {
    return SensorIntrinsics{beams, horiz, 3.0, -25.0};
  }
  static SensorIntrinsics kitti360(int beams = 64, int horiz = 1024) {
    return SensorIntrinsics{beams, horiz, 2.0, -24.4};
  }
};

struct LidarPoint {
  float x = 0, y = 0, z = 0;
  float intensity = 0;  // [0, 1]
  uint16_t label = 0;   // semantic class id

  double depth() const {
    return std::sqrt(double(x) * x + double(y) * y + double(z) * z);
  }
};

/// H x W pseudo range image. Pixels without a projected return hold zeros
/// and mask() == false; the implied ray-drop ground truth is 1 - mask.
class RangeImage {
 public:
  RangeImage() = default;
  RangeImage(int height, int width)
      : height_(height),
        width_(width),
        depth_(size_t(height) * width, 0.0f),
        intensity_(size_t(height) * width, 0.0f),
        label_(size_t(height) * width, 0),
        mask_(size_t(height) * width, 0) {}

  int height() const { return height_; }
  int width() const { return width_; }
  size_t pixels() const { return depth_.size(); }
  size_t index(int h, int w) const { return size_t(h) * width_ + w; }

  float depth(int h, int w) const { return depth_[index(h, w)]; }
  float intensity(int h, int w) const { return intensity_[index(h, w)]; }
  uint16_t label(int h, int w) const { return label_[index(h, w)]; }
  bool mask(int h, int w) const { return mask_[index(h, w)] != 0; }

  std::span<const float> depth_data() const { return depth_; }
  std::span<const float> intensity_data() const { return intensity_; }
  std::span<const uint16_t> label_data() const { return label_; }
  std::span<const uint8_t> mask_data() const { return mask_; }

  std::span<float> depth_data() { return depth_; }
  std::span<float> intensity_data() { return intensity_; }
  std::span<uint16_t> label_data() { return label_; }
  std::span<uint8_t> mask_data() { return mask_; }

  void set(int h, int w, float depth, float intensity, uint16_t label) {
    const size_t i = index(h, w);
    depth_[i] = depth;
    intensity_[i] = intensity;
    label_[i] = label;
    mask_[i] = 1;
  }

  size_t valid_count() const;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> depth_;
  std::vector<float> intensity_;
  std::vector<uint16_t> label_;
  std::vector<uint8_t> mask_;
};

struct PixelAngles {
  double pitch_rad;
  double yaw_rad;
};

struct PixelCoord {
  double h;
  double w;
  double depth;
};

/// Continuous image coordinates -> (pitch, yaw). Out-of-range inputs
/// extrapolate; callers validate.
PixelAngles pixel_to_angles(double h, double w, const SensorIntrinsics& intr);

/// (pitch, yaw) -> unit direction in the sensor frame.
std::array<double, 3> angles_to_direction(double pitch_rad, double yaw_rad);

/// Sensor-frame point -> continuous image coordinates plus range.
/// Throws ZeroDepth for the degenerate origin point.
PixelCoord point_to_pixel(double x, double y, double z,
                          const SensorIntrinsics& intr);

inline PixelCoord point_to_pixel(const LidarPoint& p,
                                 const SensorIntrinsics& intr) {
  return point_to_pixel(p.x, p.y, p.z, intr);
}

struct ProjectionResult {
  RangeImage image;
  size_t skipped = 0;  // points outside the vertical FOV
};

/// Z-buffered rasterization of a whole scan. Pixel ownership is
/// floor(h), floor(w); the nearest depth wins, ties keep the earlier
/// input point.
ProjectionResult project_cloud(std::span<const LidarPoint> points,
                               const SensorIntrinsics& intr);

/// One point per masked pixel, cast through the pixel center (h+0.5, w+0.5).
std::vector<LidarPoint> unproject(const RangeImage& img,
                                  const SensorIntrinsics& intr);

}  // namespace rangefield
