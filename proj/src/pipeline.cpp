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

#include "rangefield/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace rangefield {

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

RayBatch make_batch(const Scene& scene, int rays_per_batch, uint64_t seed,
                    int64_t iteration) {
  if (scene.train_indices.empty())
    throw EmptyScene("scene has no training frames");
  Pcg32 rng(mix_seed(seed, 0x6261746368ULL + uint64_t(iteration)));

  const int H = scene.intrinsics.beams;
  const int W = scene.intrinsics.horizontal_resolution;
  struct Draw {
    int frame, pixel;
  };
  std::vector<Draw> draws(static_cast<size_t>(rays_per_batch));
  for (auto& d : draws) {
    d.frame = scene.train_indices[rng.uniform_index(
        uint32_t(scene.train_indices.size()))];
    d.pixel = int(rng.uniform_index(uint32_t(H * W)));
  }
  std::stable_sort(draws.begin(), draws.end(),
                   [](const Draw& a, const Draw& b) { return a.frame < b.frame; });

  RayBatch batch;
  batch.frame.reserve(draws.size());
  for (const auto& d : draws) {
    const RangeImage& img = scene.images[size_t(d.frame)];
    const int h = d.pixel / W, w = d.pixel % W;
    batch.frame.push_back(d.frame);
    batch.pixel_h.push_back(h);
    batch.pixel_w.push_back(w);
    batch.gt_depth.push_back(img.depth(h, w));
    batch.gt_intensity.push_back(img.intensity(h, w));
    batch.gt_label.push_back(img.label(h, w));
    batch.gt_return.push_back(img.mask(h, w) ? 1 : 0);
    if (batch.frames_used.empty() || batch.frames_used.back() != d.frame)
      batch.frames_used.push_back(d.frame);
  }
  return batch;
}

RaySpec batch_to_rays(const Scene& scene, const RayBatch& batch) {
  RaySpec rays;
  const int n = batch.size();
  rays.origins.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    const LidarScan& scan = scene.scans[size_t(batch.frame[size_t(i)])];
    const auto ang = pixel_to_angles(batch.pixel_h[size_t(i)] + 0.5,
                                     batch.pixel_w[size_t(i)] + 0.5,
                                     scene.intrinsics);
    const auto dir_sensor = angles_to_direction(ang.pitch_rad, ang.yaw_rad);
    rays.origins.push_back(scan.pose.transform_point(0, 0, 0));
    rays.dirs.push_back(
        scan.pose.rotate(dir_sensor[0], dir_sensor[1], dir_sensor[2]));
    rays.times.push_back(scan.timestamp);
    rays.px_h.push_back(double(batch.pixel_h[size_t(i)]));
    rays.px_w.push_back(double(batch.pixel_w[size_t(i)]));
    rays.local_frame.push_back(batch.frame[size_t(i)]);
  }
  return rays;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace {

/// Clips a ray against the scene box intersected with [near, far].
bool clip_to_bounds(const SceneBounds& b, const std::array<double, 3>& o,
                    const std::array<double, 3>& d, double near, double far,
                    double* t0, double* t1) {
  double lo = near, hi = far;
  for (int a = 0; a < 3; ++a) {
    const double da = d[size_t(a)];
    if (std::abs(da) < 1e-12) {
      if (o[size_t(a)] < b.xyz_min[size_t(a)] ||
          o[size_t(a)] > b.xyz_max[size_t(a)])
        return false;
      continue;
    }
    double ta = (b.xyz_min[size_t(a)] - o[size_t(a)]) / da;
    double tb = (b.xyz_max[size_t(a)] - o[size_t(a)]) / da;
    if (ta > tb) std::swap(ta, tb);
    lo = std::max(lo, ta);
    hi = std::min(hi, tb);
    if (lo >= hi) return false;
  }
  // Shrink slightly so normalized samples stay strictly inside [0, 1].
  const double pad = 1e-6 * (hi - lo);
  *t0 = lo + pad;
  *t1 = hi - pad;
  return *t1 - *t0 > 1e-4;
}

}  // namespace

template <class S>
ForwardOutput<S> forward_rays(ad::Tape<S>& tape, Model<S>& model,
                              const Scene& scene, const RaySpec& rays,
                              bool stratified, Pcg32& sample_rng) {
  const int n_in = rays.size();
  const int N = model.cfg.num_samples;
  ForwardOutput<S> out;
  out.n_samples = N;
  out.in_bounds.assign(size_t(n_in), 0);
  out.row_of_ray.assign(size_t(n_in), -1);

  std::vector<int> kept;
  std::vector<double> seg0, seg1;
  kept.reserve(size_t(n_in));
  for (int r = 0; r < n_in; ++r) {
    double t0, t1;
    if (clip_to_bounds(model.bounds, rays.origins[size_t(r)],
                       rays.dirs[size_t(r)], model.cfg.near, model.cfg.far,
                       &t0, &t1)) {
      out.in_bounds[size_t(r)] = 1;
      out.row_of_ray[size_t(r)] = int(kept.size());
      kept.push_back(r);
      seg0.push_back(t0);
      seg1.push_back(t1);
    }
  }
  const int R = int(kept.size());
  out.rows = R;
  if (R == 0) return out;

  // Sample distances, deltas, normalized 4D queries, view embeddings.
  const int L = model.cfg.heads.view_embed_levels;
  const int view_dim = 6 * L;
  std::vector<S> distances(size_t(R) * N);
  std::vector<S> deltas(size_t(R) * N);
  std::vector<S> qdata(size_t(R) * N * 4);
  std::vector<S> view(size_t(R) * N * view_dim);
  const SceneBounds& b = model.bounds;

  for (int k = 0; k < R; ++k) {
    const int r = kept[size_t(k)];
    const auto& o = rays.origins[size_t(r)];
    const auto& d = rays.dirs[size_t(r)];
    const auto dist = sample_ray_distances(seg0[size_t(k)], seg1[size_t(k)], N,
                                           stratified, sample_rng);
    const double qt = std::clamp(
        (rays.times[size_t(r)] - b.t_min) / (b.t_max - b.t_min), 0.0, 1.0);
    std::array<double, 3> dird{d[0], d[1], d[2]};
    const auto emb =
        positional_encode(std::span<const double>(dird.data(), 3), L);
    for (int n = 0; n < N; ++n) {
      const size_t i = size_t(k) * N + n;
      const double t = dist[size_t(n)];
      distances[i] = S(t);
      deltas[i] = S(n + 1 < N ? dist[size_t(n) + 1] - t : seg1[size_t(k)] - t);
      const double px = o[0] + t * d[0];
      const double py = o[1] + t * d[1];
      const double pz = o[2] + t * d[2];
      const auto q = b.normalize(px, py, pz, 0.0);
      qdata[i * 4 + 0] = S(std::clamp(q[0], 0.0, 1.0));
      qdata[i * 4 + 1] = S(std::clamp(q[1], 0.0, 1.0));
      qdata[i * 4 + 2] = S(std::clamp(q[2], 0.0, 1.0));
      qdata[i * 4 + 3] = S(qt);
      for (int j = 0; j < view_dim; ++j)
        view[i * view_dim + j] = S(emb[size_t(j)]);
    }
  }

  ad::Value<S> q = tape.constant(R * N, 4, qdata);
  ad::Value<S> view_emb = tape.constant(R * N, view_dim, view);

  std::vector<ad::Value<S>> feature_parts;
  feature_parts.push_back(sample_planar(tape, model.planar, q));
  feature_parts.push_back(sample_grid(tape, model.grid, q));

  if (model.cfg.use_local_encoder()) {
    const int H = scene.intrinsics.beams;
    const int W = scene.intrinsics.horizontal_resolution;
    ad::Value<S> local_rows;
    if (!rays.local_map.empty()) {
      // Pre-encoded map shared by every ray (novel-view rendering).
      const int C = model.encoder.out_channels();
      ad::Value<S> map = tape.alloc(H * W, C, false);
      {
        S* pm = map.data().data();
        for (size_t i = 0; i < rays.local_map.size(); ++i)
          pm[i] = S(rays.local_map[i]);
      }
      std::vector<S> coords(size_t(R) * 2);
      for (int k = 0; k < R; ++k) {
        coords[size_t(k) * 2] = S(rays.px_h[size_t(kept[size_t(k)])]);
        coords[size_t(k) * 2 + 1] = S(rays.px_w[size_t(kept[size_t(k)])]);
      }
      local_rows = ad::bilinear_gather(map, std::span<const S>(coords), H, W);
    } else {
      // One encoder pass per frame present in the batch.
      std::vector<ad::Value<S>> groups;
      int g0 = 0;
      while (g0 < R) {
        int g1 = g0;
        const int frame = rays.local_frame[size_t(kept[size_t(g0)])];
        while (g1 < R && rays.local_frame[size_t(kept[size_t(g1)])] == frame)
          ++g1;
        ad::Value<S> map = model.encoder.encode(
            tape, scene.images[size_t(frame)].depth_data(), H, W);
        std::vector<S> coords(size_t(g1 - g0) * 2);
        for (int k = g0; k < g1; ++k) {
          coords[size_t(k - g0) * 2] = S(rays.px_h[size_t(kept[size_t(k)])]);
          coords[size_t(k - g0) * 2 + 1] =
              S(rays.px_w[size_t(kept[size_t(k)])]);
        }
        groups.push_back(
            ad::bilinear_gather(map, std::span<const S>(coords), H, W));
        g0 = g1;
      }
      local_rows = groups.size() == 1
                       ? groups[0]
                       : ad::concat_rows(std::span<const ad::Value<S>>(
                             groups.data(), groups.size()));
    }
    feature_parts.push_back(ad::repeat_rows(local_rows, N));
  }

  ad::Value<S> features =
      feature_parts.size() == 1
          ? feature_parts[0]
          : ad::concat_cols(std::span<const ad::Value<S>>(
                feature_parts.data(), feature_parts.size()));

  auto heads = model.heads.query(tape, features, view_emb);
  out.render = render_rays(tape, heads.sigma_geo, heads.sigma_sem,
                           heads.intensity, heads.raydrop, heads.logits,
                           std::span<const S>(distances),
                           std::span<const S>(deltas), R, N,
                           model.cfg.opacity_includes_delta,
                           model.cfg.use_semantic_density());
  return out;
}

template ForwardOutput<float> forward_rays(ad::Tape<float>&, Model<float>&,
                                           const Scene&, const RaySpec&, bool,
                                           Pcg32&);
template ForwardOutput<double> forward_rays(ad::Tape<double>&, Model<double>&,
                                            const Scene&, const RaySpec&, bool,
                                            Pcg32&);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <class S>
LossResult<S> compute_losses(ad::Tape<S>& tape, const ForwardOutput<S>& fwd,
                             const RayBatch& batch, const LossWeights& weights,
                             int ignore_class) {
  weights.validate();
  const int n = batch.size();
  if (n != int(fwd.in_bounds.size()))
    throw MisalignedBatch("batch has " + std::to_string(n) + " rays, forward " +
                          std::to_string(fwd.in_bounds.size()));

  std::vector<int> valid_rows;
  std::vector<S> depth_gt, intensity_gt;
  std::vector<int> sem_rows, sem_labels;
  std::vector<S> drop_target(size_t(fwd.rows), S(0));
  double off_tape_drop_sq = 0.0;

  for (int r = 0; r < n; ++r) {
    const bool has_return = batch.gt_return[size_t(r)] != 0;
    const int row = fwd.row_of_ray[size_t(r)];
    if (row < 0) {
      // Outside the modeled volume the prediction is a definite drop.
      const double target = has_return ? 0.0 : 1.0;
      off_tape_drop_sq += (1.0 - target) * (1.0 - target);
      continue;
    }
    drop_target[size_t(row)] = has_return ? S(0) : S(1);
    if (has_return) {
      valid_rows.push_back(row);
      depth_gt.push_back(S(batch.gt_depth[size_t(r)]));
      intensity_gt.push_back(S(batch.gt_intensity[size_t(r)]));
      if (batch.gt_label[size_t(r)] != ignore_class) {
        sem_rows.push_back(row);
        sem_labels.push_back(int(batch.gt_label[size_t(r)]));
      }
    }
  }

  LossResult<S> result;
  ad::Value<S> zero = tape.scalar(S(0));

  ad::Value<S> l_depth = zero, l_intensity = zero;
  if (!valid_rows.empty()) {
    ad::Value<S> pred_d =
        ad::gather_rows(fwd.render.depth, std::span<const int>(valid_rows));
    ad::Value<S> gt_d =
        tape.constant(int(valid_rows.size()), 1, std::span<const S>(depth_gt));
    l_depth = ad::mean(ad::vabs(ad::sub(pred_d, gt_d)));

    ad::Value<S> pred_i = ad::gather_rows(fwd.render.intensity,
                                          std::span<const int>(valid_rows));
    ad::Value<S> gt_i = tape.constant(int(valid_rows.size()), 1,
                                      std::span<const S>(intensity_gt));
    ad::Value<S> di = ad::sub(pred_i, gt_i);
    l_intensity = ad::mean(ad::mul(di, di));
  }

  ad::Value<S> l_semantic = zero;
  if (!sem_rows.empty()) {
    ad::Value<S> logits = ad::gather_rows(fwd.render.sem_logits,
                                          std::span<const int>(sem_rows));
    ad::Value<S> logp =
        ad::select_col(ad::log_softmax(logits), std::span<const int>(sem_labels));
    l_semantic = ad::scale(ad::mean(logp), S(-1));
  }

  ad::Value<S> l_raydrop = zero;
  {
    ad::Value<S> sum_on = zero;
    if (fwd.rows > 0) {
      ad::Value<S> target =
          tape.constant(fwd.rows, 1, std::span<const S>(drop_target));
      ad::Value<S> dr = ad::sub(fwd.render.raydrop, target);
      sum_on = ad::sum(ad::mul(dr, dr));
    }
    l_raydrop = ad::scale(ad::add(sum_on, tape.scalar(S(off_tape_drop_sq))),
                          S(1.0 / double(n)));
  }

  result.components.depth = double(l_depth.item());
  result.components.semantic = double(l_semantic.item());
  result.components.intensity = double(l_intensity.item());
  result.components.raydrop = double(l_raydrop.item());

  ad::Value<S> total = ad::scale(l_depth, S(weights.depth));
  total = ad::add(total, ad::scale(l_semantic, S(weights.semantic)));
  total = ad::add(total, ad::scale(l_intensity, S(weights.intensity)));
  total = ad::add(total, ad::scale(l_raydrop, S(weights.raydrop)));
  result.total = total;
  result.components.total = double(total.item());
  return result;
}

template LossResult<float> compute_losses(ad::Tape<float>&,
                                          const ForwardOutput<float>&,
                                          const RayBatch&, const LossWeights&,
                                          int);
template LossResult<double> compute_losses(ad::Tape<double>&,
                                           const ForwardOutput<double>&,
                                           const RayBatch&, const LossWeights&,
                                           int);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

FitResult fit(const Scene& scene, Model<float>& model, const TrainConfig& cfg,
              const std::string& trace_path, const EvalSnapshotFn& snapshot) {
  cfg.validate();
  model.set_learning_rates(cfg.lr_fields);
  ad::AdamConfig adam;
  adam.learning_rate = cfg.lr_mlp;
  adam.beta1 = cfg.adam_beta1;
  adam.beta2 = cfg.adam_beta2;
  adam.epsilon = cfg.adam_epsilon;
  adam.validate();
  auto params = model.params();

  std::ofstream trace;
  if (!trace_path.empty()) {
    trace.open(trace_path);
    if (!trace) throw DataError("cannot open trace file: " + trace_path);
    trace << "iteration,total,depth,semantic,intensity,raydrop\n";
  }

  FitResult result;
  result.trace.reserve(size_t(cfg.iterations));
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    RayBatch batch = make_batch(scene, cfg.rays_per_batch, cfg.seed, iter);
    RaySpec rays = batch_to_rays(scene, batch);
    Pcg32 sample_rng(mix_seed(cfg.seed, 0x73616d70ULL + uint64_t(iter)));

    ad::Tape<float> tape;
    auto fwd = forward_rays(tape, model, scene, rays, cfg.stratified,
                            sample_rng);
    auto loss =
        compute_losses(tape, fwd, batch, cfg.loss_weights, scene.ignore_class);
    tape.backward(loss.total);

    const LossComponents& c = loss.components;
    const bool finite = std::isfinite(c.total) && std::isfinite(c.depth) &&
                        std::isfinite(c.semantic) &&
                        std::isfinite(c.intensity) && std::isfinite(c.raydrop);
    if (!finite) {
      const char* component =
          !std::isfinite(c.depth)       ? "depth"
          : !std::isfinite(c.semantic)  ? "semantic"
          : !std::isfinite(c.intensity) ? "intensity"
          : !std::isfinite(c.raydrop)   ? "raydrop"
                                        : "total";
      double max_grad = 0.0;
      for (auto* p : params)
        for (float g : p->grad)
          if (std::isfinite(g)) max_grad = std::max(max_grad, double(std::abs(g)));
      throw NonFiniteLoss("non-finite " + std::string(component) +
                          " loss at iteration " + std::to_string(iter) +
                          " (max finite gradient " + std::to_string(max_grad) +
                          ")");
    }

    ad::adam_step(params, adam);
    result.trace.push_back(c);
    if (trace.is_open()) {
      char row[192];
      std::snprintf(row, sizeof row, "%d,%.8g,%.8g,%.8g,%.8g,%.8g\n", iter,
                    c.total, c.depth, c.semantic, c.intensity, c.raydrop);
      trace << row;
    }
    if (cfg.log_every > 0 && (iter % cfg.log_every == 0)) {
      std::printf("iter %6d  total %.5f  depth %.5f  sem %.5f  int %.5f  drop %.5f\n",
                  iter, c.total, c.depth, c.semantic, c.intensity, c.raydrop);
      std::fflush(stdout);
    }
    if (snapshot && cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0)
      snapshot(iter);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

RenderedFrame render_image(Model<float>& model, const Scene& scene,
                           const Mat4& pose, double time,
                           bool apply_raydrop_mask, int chunk_rays) {
  const SensorIntrinsics& intr = scene.intrinsics;
  const int H = intr.beams;
  const int W = intr.horizontal_resolution;
  const int K = model.cfg.heads.num_classes;
  const int ignore = scene.ignore_class;

  RenderedFrame out;
  out.image = RangeImage(H, W);
  out.raydrop_prob.assign(size_t(H) * W, 1.0f);
  out.sem_class.assign(size_t(H) * W, uint16_t(ignore));
  out.sem_confidence.assign(size_t(H) * W, 0.0f);
  out.weight_sum.assign(size_t(H) * W, 0.0f);
  out.time_extrapolated =
      time < model.bounds.t_min - 1e-9 || time > model.bounds.t_max + 1e-9;

  // Local features come from the timestamp-nearest training frame.
  std::vector<float> local_map;
  if (model.cfg.use_local_encoder()) {
    int best = scene.train_indices.empty() ? 0 : scene.train_indices[0];
    double best_dt = 1e300;
    for (int idx : scene.train_indices) {
      const double dt = std::abs(scene.scans[size_t(idx)].timestamp - time);
      if (dt < best_dt) {
        best_dt = dt;
        best = idx;
      }
    }
    out.local_frame = best;
    ad::Tape<float> enc_tape;
    enc_tape.set_grad_enabled(false);
    ad::Value<float> map = model.encoder.encode(
        enc_tape, scene.images[size_t(best)].depth_data(), H, W);
    local_map.assign(map.data().begin(), map.data().end());
  }

  for (int idx : scene.train_indices) {
    const Mat4& p = scene.scans[size_t(idx)].pose;
    double diff = 0;
    for (int i = 0; i < 16; ++i) diff += std::abs(p.m[size_t(i)] - pose.m[size_t(i)]);
    if (diff < 1e-9) out.pose_in_distribution = true;
  }

  const auto origin = pose.transform_point(0, 0, 0);
  Pcg32 unused_rng(0);

  out.depth_raw.assign(size_t(H) * W, 0.0f);
  out.intensity_raw.assign(size_t(H) * W, 0.0f);
  std::vector<float>& depth_raw = out.depth_raw;
  std::vector<float>& intensity_raw = out.intensity_raw;

  const int total = H * W;
  for (int p0 = 0; p0 < total; p0 += chunk_rays) {
    const int p1 = std::min(p0 + chunk_rays, total);
    RaySpec rays;
    rays.local_map = std::span<const float>(local_map);
    for (int p = p0; p < p1; ++p) {
      const int h = p / W, w = p % W;
      const auto ang = pixel_to_angles(h + 0.5, w + 0.5, intr);
      const auto dir_sensor = angles_to_direction(ang.pitch_rad, ang.yaw_rad);
      rays.origins.push_back(origin);
      rays.dirs.push_back(
          pose.rotate(dir_sensor[0], dir_sensor[1], dir_sensor[2]));
      rays.times.push_back(time);
      rays.px_h.push_back(double(h));
      rays.px_w.push_back(double(w));
      rays.local_frame.push_back(out.local_frame < 0 ? 0 : out.local_frame);
    }

    ad::Tape<float> tape;
    tape.set_grad_enabled(false);
    auto fwd = forward_rays(tape, model, scene, rays, /*stratified=*/false,
                            unused_rng);

    ad::Value<float> sem_prob;
    if (fwd.rows > 0) sem_prob = ad::softmax(fwd.render.sem_logits);
    for (int p = p0; p < p1; ++p) {
      const int row = fwd.row_of_ray[size_t(p - p0)];
      if (row < 0) continue;  // stays a definite drop
      depth_raw[size_t(p)] = fwd.render.depth.data()[size_t(row)];
      intensity_raw[size_t(p)] = fwd.render.intensity.data()[size_t(row)];
      out.raydrop_prob[size_t(p)] = fwd.render.raydrop.data()[size_t(row)];
      out.weight_sum[size_t(p)] =
          fwd.render.weight_sum_geo.data()[size_t(row)];
      const float* probs = sem_prob.data().data() + size_t(row) * K;
      int best = -1;
      for (int c = 0; c < K; ++c) {
        if (c == ignore) continue;
        if (best < 0 || probs[c] > probs[best]) best = c;
      }
      out.sem_class[size_t(p)] = uint16_t(best);
      out.sem_confidence[size_t(p)] = probs[best];
    }
  }

  for (int p = 0; p < total; ++p) {
    const bool keep = !apply_raydrop_mask ||
                      out.raydrop_prob[size_t(p)] <= model.cfg.raydrop_threshold;
    if (keep) {
      out.image.set(p / W, p % W, depth_raw[size_t(p)],
                    intensity_raw[size_t(p)], out.sem_class[size_t(p)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

std::vector<Point3> to_point3(const std::vector<LidarPoint>& pts) {
  std::vector<Point3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back({double(p.x), double(p.y), double(p.z)});
  return out;
}

MetricsReport eval_frame(Model<float>& model, const Scene& scene, int frame) {
  const RangeImage& gt = scene.images[size_t(frame)];
  RenderedFrame pred = render_image(model, scene, scene.scans[size_t(frame)].pose,
                                    scene.scans[size_t(frame)].timestamp);
  const int H = gt.height(), W = gt.width();
  const size_t n = gt.pixels();

  MetricsReport r;

  // Point cloud metrics on back-projected clouds (sensor frame).
  const auto gt_cloud = to_point3(unproject(gt, scene.intrinsics));
  const auto pred_cloud = to_point3(unproject(pred.image, scene.intrinsics));
  if (!gt_cloud.empty() && !pred_cloud.empty()) {
    const auto cd = chamfer(pred_cloud, gt_cloud);
    r.set("point.cd", cd.mean);
    r.set("point.cd_sum", cd.sum);
    r.set("point.fscore", f_score(pred_cloud, gt_cloud, 0.05));
  } else {
    r.set("point.cd", std::numeric_limits<double>::infinity());
    r.set("point.cd_sum", std::numeric_limits<double>::infinity());
    r.set("point.fscore", 0.0);
  }

  // Depth / intensity image metrics. RMSE and MedAE compare raw renderings
  // on true-return pixels; PSNR and SSIM compare the drop-masked images.
  const auto dm_raw =
      image_metrics(pred.depth_raw, gt.depth_data(), gt.mask_data(), H, W,
                    80.0);
  const auto dm_masked = image_metrics(pred.image.depth_data(),
                                       gt.depth_data(), gt.mask_data(), H, W,
                                       80.0);
  r.set("depth.rmse", dm_raw.rmse);
  r.set("depth.medae", dm_raw.medae);
  r.set("depth.psnr", dm_masked.psnr);
  r.set("depth.ssim", dm_masked.ssim);
  const auto im_raw = image_metrics(pred.intensity_raw, gt.intensity_data(),
                                    gt.mask_data(), H, W, 1.0);
  const auto im_masked =
      image_metrics(pred.image.intensity_data(), gt.intensity_data(),
                    gt.mask_data(), H, W, 1.0);
  r.set("intensity.rmse", im_raw.rmse);
  r.set("intensity.medae", im_raw.medae);
  r.set("intensity.psnr", im_masked.psnr);
  r.set("intensity.ssim", im_masked.ssim);

  // Ray drop.
  std::vector<uint8_t> gt_dropped(n);
  for (size_t i = 0; i < n; ++i) gt_dropped[i] = gt.mask_data()[i] ? 0 : 1;
  const auto rd = raydrop_metrics(pred.raydrop_prob, gt_dropped);
  r.set("raydrop.rmse", rd.rmse);
  r.set("raydrop.acc", rd.accuracy);
  r.set("raydrop.f1", rd.f1);

  // Semantics on true returns.
  const auto seg =
      segmentation_metrics(pred.sem_class, gt.label_data(), gt.mask_data(),
                           scene.num_classes, scene.ignore_class);
  r.set("semantic.pa", seg.pixel_accuracy);
  r.set("semantic.miou", seg.miou);
  return r;
}

}  // namespace

MetricsReport eval_scene(Model<float>& model, const Scene& scene,
                         std::vector<MetricsReport>* per_frame) {
  if (scene.test_indices.empty())
    throw EmptyScene("scene has no held-out frames to evaluate");
  MetricsReport agg;
  for (int frame : scene.test_indices) {
    MetricsReport fr = eval_frame(model, scene, frame);
    for (const auto& [k, v] : fr.values)
      agg.values[k] += v / double(scene.test_indices.size());
    if (per_frame) per_frame->push_back(std::move(fr));
  }
  agg.set("frames", double(scene.test_indices.size()));
  return agg;
}

}  // namespace rangefield
