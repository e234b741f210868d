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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rangefield/errors.hpp"

namespace rangefield {

using Point3 = std::array<double, 3>;

/// Exact nearest-neighbor queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(std::span<const Point3> points);

  /// Squared distance to the nearest stored point.
  double nearest_sq(const Point3& q) const;

 private:
  struct Node {
    int axis = -1;       // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf point range
  };
  int build(int begin, int end, int depth);

  std::vector<Point3> pts_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

struct ChamferResult {
  double sum = 0.0;   // raw summed squared distances, both directions
  double mean = 0.0;  // per-side means added (the headline number)
};

/// Symmetric squared-nearest-neighbor distance between point sets.
ChamferResult chamfer(std::span<const Point3> a, std::span<const Point3> b);

/// Harmonic mean of precision/recall at distance threshold tau (meters).
double f_score(std::span<const Point3> a, std::span<const Point3> b,
               double tau = 0.05);

struct ImageMetricsResult {
  double rmse = 0.0;   // masked pixels
  double medae = 0.0;  // masked pixels
  double psnr = 0.0;   // full image, peak-normalized; +inf when identical
  double ssim = 0.0;   // full image, peak-normalized
};

/// RMSE/MedAE over masked pixels; PSNR and SSIM over the full image divided
/// by `peak` (80 m for depth, 1 for intensity). SSIM uses an 11x11 Gaussian
/// window (sigma 1.5, K1 0.01, K2 0.03) with symmetric boundary reflection.
ImageMetricsResult image_metrics(std::span<const float> pred,
                                 std::span<const float> gt,
                                 std::span<const uint8_t> mask, int height,
                                 int width, double peak);

/// K x K confusion counts with an excluded ignore class.
class ConfusionMatrix {
 public:
  ConfusionMatrix(int num_classes, int ignore_class)
      : k_(num_classes),
        ignore_(ignore_class),
        counts_(size_t(num_classes) * num_classes, 0) {}

  void add(int pred, int gt) {
    if (gt == ignore_) return;
    counts_[size_t(gt) * k_ + pred] += 1;
  }

  int64_t count(int gt, int pred) const {
    return counts_[size_t(gt) * k_ + pred];
  }
  int num_classes() const { return k_; }
  int ignore_class() const { return ignore_; }

  double pixel_accuracy() const;
  /// Mean IoU over classes appearing in gt or pred (ignore excluded).
  double mean_iou() const;

 private:
  int k_;
  int ignore_;
  std::vector<int64_t> counts_;
};

struct SegmentationResult {
  double pixel_accuracy = 0.0;
  double miou = 0.0;
};

SegmentationResult segmentation_metrics(std::span<const uint16_t> pred,
                                        std::span<const uint16_t> gt,
                                        std::span<const uint8_t> valid,
                                        int num_classes, int ignore_class);

struct RaydropResult {
  double rmse = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

/// RMSE on probabilities over all pixels; accuracy/F1 after thresholding at
/// 0.5 with "dropped" as the positive class.
RaydropResult raydrop_metrics(std::span<const float> prob,
                              std::span<const uint8_t> gt_dropped);

/// Flat key -> value report with text and JSON writers.
struct MetricsReport {
  std::map<std::string, double> values;

  void set(const std::string& key, double v) { values[key] = v; }
  double get(const std::string& key) const;
  bool has(const std::string& key) const { return values.count(key) > 0; }
  void save_text(const std::string& path) const;
  void save_json(const std::string& path) const;
  std::string to_text() const;
};

}  // namespace rangefield
