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

#include "rangefield/lidar_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rangefield {

void SensorIntrinsics::validate() const {
  if (beams < 1) throw ConfigError("sensor beams must be >= 1");
  if (horizontal_resolution < 2)
    throw ConfigError("sensor horizontal_resolution must be >= 2");
  if (fov_up_deg <= fov_down_deg)
    throw ConfigError("sensor fov_up_deg must exceed fov_down_deg");
  if (vertical_fov_deg() <= 0.0)
    throw ConfigError("sensor vertical FOV must be positive");
}

size_t RangeImage::valid_count() const {
  return std::accumulate(mask_.begin(), mask_.end(), size_t{0},
                         [](size_t acc, uint8_t m) { return acc + (m != 0); });
}

PixelAngles pixel_to_angles(double h, double w, const SensorIntrinsics& intr) {
  const double fv = intr.vertical_fov_deg();
  const double pitch_deg =
      std::abs(intr.fov_up_deg) - h * fv / double(intr.beams);
  const double yaw_rad =
      -(2.0 * w - intr.horizontal_resolution) * kPi /
      double(intr.horizontal_resolution);
  return PixelAngles{deg2rad(pitch_deg), yaw_rad};
}

std::array<double, 3> angles_to_direction(double pitch_rad, double yaw_rad) {
  const double cp = std::cos(pitch_rad);
  return {cp * std::cos(yaw_rad), cp * std::sin(yaw_rad), std::sin(pitch_rad)};
}

PixelCoord point_to_pixel(double x, double y, double z,
                          const SensorIntrinsics& intr) {
  const double d = std::sqrt(x * x + y * y + z * z);
  if (d == 0.0) throw ZeroDepth();
  const double fv = intr.vertical_fov_deg();
  const double pitch_deg = rad2deg(std::asin(z / d));
  const double h =
      (1.0 - (pitch_deg + std::abs(intr.fov_down_deg)) / fv) * intr.beams;
  const double w =
      0.5 * (1.0 - std::atan2(y, x) / kPi) * intr.horizontal_resolution;
  return PixelCoord{h, w, d};
}

ProjectionResult project_cloud(std::span<const LidarPoint> points,
                               const SensorIntrinsics& intr) {
  intr.validate();
  ProjectionResult result;
  result.image = RangeImage(intr.beams, intr.horizontal_resolution);
  RangeImage& img = result.image;

  const int H = intr.beams;
  const int W = intr.horizontal_resolution;
  for (const LidarPoint& p : points) {
    const double d = p.depth();
    if (d == 0.0 || !std::isfinite(d)) {
      ++result.skipped;
      continue;
    }
    const PixelCoord px = point_to_pixel(p.x, p.y, p.z, intr);
    int hi = int(std::floor(px.h));
    int wi = int(std::floor(px.w));
    if (wi == W) wi = 0;  // the azimuth seam wraps
    if (hi < 0 || hi >= H || wi < 0 || wi >= W) {
      ++result.skipped;
      continue;
    }
    const size_t idx = img.index(hi, wi);
    const bool occupied = img.mask_data()[idx] != 0;
    if (!occupied || float(d) < img.depth_data()[idx]) {
      img.set(hi, wi, float(d), p.intensity, p.label);
    }
  }
  return result;
}

std::vector<LidarPoint> unproject(const RangeImage& img,
                                  const SensorIntrinsics& intr) {
  std::vector<LidarPoint> points;
  points.reserve(img.valid_count());
  for (int h = 0; h < img.height(); ++h) {
    for (int w = 0; w < img.width(); ++w) {
      if (!img.mask(h, w)) continue;
      const PixelAngles a = pixel_to_angles(h + 0.5, w + 0.5, intr);
      const auto dir = angles_to_direction(a.pitch_rad, a.yaw_rad);
      const double d = img.depth(h, w);
      LidarPoint p;
      p.x = float(dir[0] * d);
      p.y = float(dir[1] * d);
      p.z = float(dir[2] * d);
      p.intensity = img.intensity(h, w);
      p.label = img.label(h, w);
      points.push_back(p);
    }
  }
  return points;
}

}  // namespace rangefield
