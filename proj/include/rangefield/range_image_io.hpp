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

#include "rangefield/lidar_model.hpp"

namespace rangefield {

// Flat binary container for range images:
//   magic "RIMG" | u32 version | u32 H | u32 W | u32 channels (3)
//   row-major f32 planes: depth, intensity, label
//   H*W mask bytes (0/1)
// All fields little-endian.
void save_range_image(const std::string& path, const RangeImage& img);
RangeImage load_range_image(const std::string& path);

/// Lossless NPY export: float32 array of shape (4, H, W) holding
/// depth, intensity, label, mask planes.
void save_range_image_npy(const std::string& path, const RangeImage& img);

/// Writes a little-endian float32 NPY (version 1.0) with the given shape.
void save_npy(const std::string& path, const float* data, size_t count,
              const std::vector<size_t>& shape);

/// 8-bit class-id image (binary PGM). Ids above 255 are clamped.
void save_class_map_pgm(const std::string& path,
                        std::span<const uint16_t> class_ids, int height,
                        int width);

/// JSON sidecar mapping class ids to deterministic display colors.
void save_palette_json(const std::string& path, int num_classes);

/// ASCII PLY with per-point intensity and class id.
void save_point_cloud_ply(const std::string& path,
                          std::span<const LidarPoint> points);

/// Raw float32 xyzi plus uint32 label files (the dataset layout pair).
void save_point_cloud_bin_label(const std::string& bin_path,
                                const std::string& label_path,
                                std::span<const LidarPoint> points);

}  // namespace rangefield
