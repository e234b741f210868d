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

#include <functional>
#include <string>
#include <vector>

#include "rangefield/dataset_io.hpp"
#include "rangefield/metrics.hpp"
#include "rangefield/model.hpp"

namespace rangefield {

// ---------------------------------------------------------------------------
// Ray batches
// ---------------------------------------------------------------------------

/// Training rays with aligned ground truth, grouped by source frame
/// (frame indices non-decreasing).
struct RayBatch {
  std::vector<int> frame;
  std::vector<int> pixel_h;
  std::vector<int> pixel_w;
  std::vector<float> gt_depth;
  std::vector<float> gt_intensity;
  std::vector<uint16_t> gt_label;
  std::vector<uint8_t> gt_return;
  std::vector<int> frames_used;

  int size() const { return int(frame.size()); }
};

/// Uniform draw over (training frame, pixel); deterministic in
/// (seed, iteration).
RayBatch make_batch(const Scene& scene, int rays_per_batch, uint64_t seed,
                    int64_t iteration);

/// World-space rays plus the feature-map lookup describing where each ray
/// reads its local features: `local_frame` names a scene frame (grouped,
/// non-decreasing) and (px_h, px_w) the continuous pixel in that map.
struct RaySpec {
  std::vector<std::array<double, 3>> origins;
  std::vector<std::array<double, 3>> dirs;  // unit, world frame
  std::vector<double> times;                // seconds
  std::vector<double> px_h;
  std::vector<double> px_w;
  std::vector<int> local_frame;
  /// Pre-encoded (H*W x C_local) feature map shared by all rays; when set it
  /// replaces the per-frame encoder pass (gradient-free rendering only).
  std::span<const float> local_map;

  int size() const { return int(origins.size()); }
};

/// Expands a training batch into world rays through pixel centers.
RaySpec batch_to_rays(const Scene& scene, const RayBatch& batch);

// ---------------------------------------------------------------------------
// Differentiable forward pass
// ---------------------------------------------------------------------------

template <class S>
struct ForwardOutput {
  RayRender<S> render;
  std::vector<uint8_t> in_bounds;  // per input ray
  std::vector<int> row_of_ray;     // input ray -> render row, -1 when outside
  int rows = 0;                    // rays actually on the tape
  int n_samples = 0;
};

/// Samples every in-bounds ray inside the scene box, queries fields and
/// heads, and composites. Rays that never meet the bounds box within
/// [near, far] stay off the tape and render as definite drops.
template <class S>
ForwardOutput<S> forward_rays(ad::Tape<S>& tape, Model<S>& model,
                              const Scene& scene, const RaySpec& rays,
                              bool stratified, Pcg32& sample_rng);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossWeights {
  double depth = 1.0;
  double semantic = 0.1;
  double intensity = 1.0;
  double raydrop = 0.1;

  void validate() const {
    if (depth < 0 || semantic < 0 || intensity < 0 || raydrop < 0)
      throw ConfigError("loss weights must be non-negative");
  }
};

struct LossComponents {
  double total = 0, depth = 0, semantic = 0, intensity = 0, raydrop = 0;
};

template <class S>
struct LossResult {
  ad::Value<S> total;
  LossComponents components;  // unweighted per-component means
};

/// Masked L1 depth, cross-entropy semantics, squared intensity error over
/// true returns; squared ray-drop error over every ray. Each term is
/// mean-normalized by its own ray count.
template <class S>
LossResult<S> compute_losses(ad::Tape<S>& tape, const ForwardOutput<S>& fwd,
                             const RayBatch& batch, const LossWeights& weights,
                             int ignore_class);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int iterations = 3000;
  int rays_per_batch = 1024;
  double lr_fields = 1e-2;
  double lr_mlp = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  LossWeights loss_weights;
  uint64_t seed = 42;
  bool stratified = true;
  int eval_every = 0;  // snapshot cadence, 0 disables
  int log_every = 0;   // stdout cadence, 0 silent

  void validate() const {
    if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
    if (rays_per_batch <= 0)
      throw ConfigError("train.rays_per_batch must be positive");
    loss_weights.validate();
  }
};

struct FitResult {
  std::vector<LossComponents> trace;
};

using EvalSnapshotFn = std::function<void(int iteration)>;

/// Forward/backward/adam loop. Writes one trace row per iteration to
/// trace_path when given. Throws NonFiniteLoss with iteration, component,
/// and gradient diagnostics if the loss leaves the reals.
FitResult fit(const Scene& scene, Model<float>& model, const TrainConfig& cfg,
              const std::string& trace_path = "",
              const EvalSnapshotFn& snapshot = nullptr);

// ---------------------------------------------------------------------------
// Rendering and evaluation
// ---------------------------------------------------------------------------

struct RenderedFrame {
  RangeImage image;  // mask = kept pixels after ray-drop thresholding
  std::vector<float> depth_raw;      // rendered depth before drop masking
  std::vector<float> intensity_raw;  // rendered intensity before masking
  std::vector<float> raydrop_prob;
  std::vector<uint16_t> sem_class;  // argmax over non-ignore classes
  std::vector<float> sem_confidence;
  std::vector<float> weight_sum;  // per-pixel sum of compositing weights
  bool time_extrapolated = false;
  bool pose_in_distribution = false;
  int local_frame = -1;
};

/// One ray per pixel center at an arbitrary pose/timestamp. Local features
/// come from the timestamp-nearest training frame; rendering is chunked and
/// gradient-free.
RenderedFrame render_image(Model<float>& model, const Scene& scene,
                           const Mat4& pose, double time,
                           bool apply_raydrop_mask = true,
                           int chunk_rays = 4096);

/// Renders every held-out frame and aggregates the full metric family
/// (point cloud, depth, intensity, ray drop, semantics).
MetricsReport eval_scene(Model<float>& model, const Scene& scene,
                         std::vector<MetricsReport>* per_frame = nullptr);

}  // namespace rangefield
