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

#include "rangefield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

namespace rangefield {

// ---------------------------------------------------------------------------
// KdTree
// ---------------------------------------------------------------------------

namespace {

inline double sq_dist(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

constexpr int kLeafSize = 16;

}  // namespace

KdTree::KdTree(std::span<const Point3> points)
    : pts_(points.begin(), points.end()) {
  if (pts_.empty()) throw EmptySet("kd-tree over empty point set");
  nodes_.reserve(2 * pts_.size() / kLeafSize + 4);
  root_ = build(0, int(pts_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
  Node node;
  if (end - begin <= kLeafSize) {
    node.begin = begin;
    node.end = end;
    nodes_.push_back(node);
    return int(nodes_.size()) - 1;
  }
  // Split on the widest axis at the median.
  Point3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (int i = begin; i < end; ++i)
    for (int a = 0; a < 3; ++a) {
      lo[size_t(a)] = std::min(lo[size_t(a)], pts_[size_t(i)][size_t(a)]);
      hi[size_t(a)] = std::max(hi[size_t(a)], pts_[size_t(i)][size_t(a)]);
    }
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (hi[size_t(a)] - lo[size_t(a)] > hi[size_t(axis)] - lo[size_t(axis)])
      axis = a;
  const int mid = (begin + end) / 2;
  std::nth_element(pts_.begin() + begin, pts_.begin() + mid,
                   pts_.begin() + end,
                   [axis](const Point3& a, const Point3& b) {
                     return a[size_t(axis)] < b[size_t(axis)];
                   });
  node.axis = axis;
  node.split = pts_[size_t(mid)][size_t(axis)];
  const int self = int(nodes_.size());
  nodes_.push_back(node);
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[size_t(self)].left = left;
  nodes_[size_t(self)].right = right;
  return self;
}

double KdTree::nearest_sq(const Point3& q) const {
  double best = std::numeric_limits<double>::infinity();
  // Explicit stack; (node, squared distance to its slab).
  std::array<std::pair<int, double>, 64> stack;
  int top = 0;
  stack[size_t(top++)] = {root_, 0.0};
  while (top > 0) {
    const auto [ni, slab_sq] = stack[size_t(--top)];
    if (slab_sq >= best) continue;
    const Node& n = nodes_[size_t(ni)];
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i)
        best = std::min(best, sq_dist(q, pts_[size_t(i)]));
      continue;
    }
    const double diff = q[size_t(n.axis)] - n.split;
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    stack[size_t(top++)] = {far, diff * diff};
    stack[size_t(top++)] = {near, slab_sq};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Point cloud metrics
// ---------------------------------------------------------------------------

ChamferResult chamfer(std::span<const Point3> a, std::span<const Point3> b) {
  if (a.empty() || b.empty())
    throw EmptySet("chamfer distance requires two non-empty sets");
  KdTree tree_a(a);
  KdTree tree_b(b);
  double sum_ab = 0.0, sum_ba = 0.0;
  for (const auto& p : a) sum_ab += tree_b.nearest_sq(p);
  for (const auto& p : b) sum_ba += tree_a.nearest_sq(p);
  ChamferResult r;
  r.sum = sum_ab + sum_ba;
  r.mean = sum_ab / double(a.size()) + sum_ba / double(b.size());
  return r;
}

double f_score(std::span<const Point3> a, std::span<const Point3> b,
               double tau) {
  if (a.empty() || b.empty())
    throw EmptySet("f-score requires two non-empty sets");
  const double tau_sq = tau * tau;
  KdTree tree_a(a);
  KdTree tree_b(b);
  size_t hit_a = 0, hit_b = 0;
  for (const auto& p : a)
    if (tree_b.nearest_sq(p) <= tau_sq) ++hit_a;
  for (const auto& p : b)
    if (tree_a.nearest_sq(p) <= tau_sq) ++hit_b;
  const double precision = double(hit_a) / double(a.size());
  const double recall = double(hit_b) / double(b.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Image metrics
// ---------------------------------------------------------------------------

namespace {

// Symmetric reflection: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
inline int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

std::vector<double> gaussian_kernel(int radius, double sigma) {
  std::vector<double> k(size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[size_t(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[size_t(i + radius)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with symmetric reflection at the borders.
std::vector<double> gauss_blur(const std::vector<double>& img, int h, int w,
                               const std::vector<double>& kernel) {
  const int radius = int(kernel.size() / 2);
  std::vector<double> tmp(size_t(h) * w, 0.0), out(size_t(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[size_t(k + radius)] *
               img[size_t(y) * w + reflect(x + k, w)];
      tmp[size_t(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[size_t(k + radius)] * tmp[size_t(reflect(y + k, h)) * w + x];
      out[size_t(y) * w + x] = acc;
    }
  return out;
}

}  // namespace

ImageMetricsResult image_metrics(std::span<const float> pred,
                                 std::span<const float> gt,
                                 std::span<const uint8_t> mask, int height,
                                 int width, double peak) {
  const size_t n = size_t(height) * width;
  if (pred.size() != n || gt.size() != n || mask.size() != n)
    throw ShapeMismatch("image_metrics: plane sizes disagree with " +
                        std::to_string(height) + "x" + std::to_string(width));
  ImageMetricsResult r;

  // Masked RMSE / MedAE.
  double se = 0.0;
  std::vector<double> abs_err;
  abs_err.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double e = double(pred[i]) - double(gt[i]);
    se += e * e;
    abs_err.push_back(std::abs(e));
  }
  if (!abs_err.empty()) {
    r.rmse = std::sqrt(se / double(abs_err.size()));
    auto mid = abs_err.begin() + long(abs_err.size() / 2);
    std::nth_element(abs_err.begin(), mid, abs_err.end());
    double med = *mid;
    if (abs_err.size() % 2 == 0) {
      auto lower = std::max_element(abs_err.begin(), mid);
      med = 0.5 * (med + *lower);
    }
    r.medae = med;
  }

  // Full-image PSNR / SSIM on peak-normalized planes.
  std::vector<double> x(n), y(n);
  for (size_t i = 0; i < n; ++i) {
    x[i] = double(pred[i]) / peak;
    y[i] = double(gt[i]) / peak;
  }
  double mse = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    mse += d * d;
  }
  mse /= double(n);
  r.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity()
                      : -10.0 * std::log10(mse);

  const auto kernel = gaussian_kernel(5, 1.5);
  const auto mu_x = gauss_blur(x, height, width, kernel);
  const auto mu_y = gauss_blur(y, height, width, kernel);
  std::vector<double> xx(n), yy(n), xy(n);
  for (size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mu_xx = gauss_blur(xx, height, width, kernel);
  const auto mu_yy = gauss_blur(yy, height, width, kernel);
  const auto mu_xy = gauss_blur(xy, height, width, kernel);
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  double ssim_acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double var_x = mu_xx[i] - mu_x[i] * mu_x[i];
    const double var_y = mu_yy[i] - mu_y[i] * mu_y[i];
    const double cov = mu_xy[i] - mu_x[i] * mu_y[i];
    const double num = (2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * cov + c2);
    const double den =
        (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (var_x + var_y + c2);
    ssim_acc += num / den;
  }
  r.ssim = ssim_acc / double(n);
  return r;
}

// ---------------------------------------------------------------------------
// Segmentation metrics
// ---------------------------------------------------------------------------

double ConfusionMatrix::pixel_accuracy() const {
  int64_t correct = 0, total = 0;
  for (int g = 0; g < k_; ++g) {
    if (g == ignore_) continue;
    for (int p = 0; p < k_; ++p) {
      total += count(g, p);
      if (p == g) correct += count(g, p);
    }
  }
  return total == 0 ? 0.0 : double(correct) / double(total);
}

double ConfusionMatrix::mean_iou() const {
  std::set<int> present;
  for (int g = 0; g < k_; ++g)
    for (int p = 0; p < k_; ++p) {
      if (count(g, p) == 0) continue;
      if (g != ignore_) present.insert(g);
      if (p != ignore_) present.insert(p);
    }
  if (present.empty()) return 0.0;
  double acc = 0.0;
  for (int c : present) {
    int64_t tp = count(c, c), fp = 0, fn = 0;
    for (int g = 0; g < k_; ++g)
      if (g != c && g != ignore_) fp += count(g, c);
    for (int p = 0; p < k_; ++p)
      if (p != c) fn += count(c, p);
    const int64_t denom = tp + fp + fn;
    acc += denom == 0 ? 0.0 : double(tp) / double(denom);
  }
  return acc / double(present.size());
}

SegmentationResult segmentation_metrics(std::span<const uint16_t> pred,
                                        std::span<const uint16_t> gt,
                                        std::span<const uint8_t> valid,
                                        int num_classes, int ignore_class) {
  if (pred.size() != gt.size() || pred.size() != valid.size())
    throw ShapeMismatch("segmentation_metrics: plane sizes disagree");
  ConfusionMatrix cm(num_classes, ignore_class);
  for (size_t i = 0; i < pred.size(); ++i)
    if (valid[i]) cm.add(pred[i], gt[i]);
  return {cm.pixel_accuracy(), cm.mean_iou()};
}

RaydropResult raydrop_metrics(std::span<const float> prob,
                              std::span<const uint8_t> gt_dropped) {
  if (prob.size() != gt_dropped.size())
    throw ShapeMismatch("raydrop_metrics: plane sizes disagree");
  RaydropResult r;
  if (prob.empty()) return r;
  double se = 0.0;
  int64_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (size_t i = 0; i < prob.size(); ++i) {
    const double target = gt_dropped[i] ? 1.0 : 0.0;
    const double e = double(prob[i]) - target;
    se += e * e;
    const bool pred_drop = prob[i] > 0.5f;
    const bool is_drop = gt_dropped[i] != 0;
    if (pred_drop == is_drop) ++correct;
    if (pred_drop && is_drop) ++tp;
    if (pred_drop && !is_drop) ++fp;
    if (!pred_drop && is_drop) ++fn;
  }
  r.rmse = std::sqrt(se / double(prob.size()));
  r.accuracy = double(correct) / double(prob.size());
  r.f1 = (2 * tp + fp + fn) == 0
             ? 1.0
             : 2.0 * double(tp) / double(2 * tp + fp + fn);
  return r;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

double MetricsReport::get(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw DataError("missing metric key: " + key);
  return it->second;
}

std::string MetricsReport::to_text() const {
  std::string out;
  char buf[128];
  for (const auto& [k, v] : values) {
    std::snprintf(buf, sizeof buf, "%-24s %.6f\n", k.c_str(), v);
    out += buf;
  }
  return out;
}

void MetricsReport::save_text(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << to_text();
}

void MetricsReport::save_json(const std::string& path) const {
  nlohmann::json j;
  for (const auto& [k, v] : values) {
    if (std::isfinite(v))
      j[k] = v;
    else
      j[k] = nullptr;  // +inf PSNR sentinel serializes as null
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << j.dump(2) << '\n';
}

}  // namespace rangefield
