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

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "rangefield/checkpoint.hpp"
#include "rangefield/pipeline.hpp"
#include "rangefield/run_config.hpp"

using namespace rangefield;
using ad::Tape;
using ad::Value;

namespace {

Scene tiny_scene(int frames = 3, int beams = 8, int horiz = 32) {
  SynthSceneConfig cfg = SynthSceneConfig::standard();
  cfg.frames = frames;
  cfg.intrinsics = SensorIntrinsics{beams, horiz, 3.0, -25.0};
  return synth_scene(cfg);
}

ModelConfig tiny_model_config(const Scene& scene) {
  ModelConfig cfg;
  cfg.planar.level_resolutions = {8};
  cfg.planar.channels = 2;
  cfg.planar.temporal_resolution = scene.frame_count();
  cfg.grid.num_levels = 2;
  cfg.grid.min_resolution = 8;
  cfg.grid.max_resolution = 16;
  cfg.grid.channels = 2;
  cfg.grid.log2_table_size = 12;
  cfg.grid.temporal_resolution = scene.frame_count();
  cfg.encoder.stem_convs = 1;
  cfg.encoder.blocks_per_stage = 1;
  cfg.encoder.stage_widths = {4, 6, 8};
  cfg.encoder.out_channels = 8;
  cfg.heads.hidden_dim = 16;
  cfg.heads.layers = 3;
  cfg.heads.geo_feature_dim = 8;
  cfg.heads.view_embed_levels = 2;
  cfg.heads.num_classes = scene.num_classes;
  cfg.num_samples = 16;
  cfg.near = 0.5;
  cfg.far = 60.0;
  cfg.init_seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("make_batch is deterministic and avoids held-out frames") {
  const Scene scene = tiny_scene(20, 4, 16);
  const auto a = make_batch(scene, 512, 11, 3);
  const auto b = make_batch(scene, 512, 11, 3);
  CHECK(a.frame == b.frame);
  CHECK(a.pixel_h == b.pixel_h);
  CHECK(a.pixel_w == b.pixel_w);

  const auto c = make_batch(scene, 512, 11, 4);
  CHECK(a.frame != c.frame);  // different iteration, different draw

  for (int iter = 0; iter < 20; ++iter) {
    const auto batch = make_batch(scene, 256, 5, iter);
    for (int f : batch.frame) {
      CHECK(f % 10 != 0);  // held-out frames never sampled
      CHECK(f < scene.frame_count());
    }
    // Grouped by frame.
    for (size_t i = 1; i < batch.frame.size(); ++i)
      CHECK(batch.frame[i] >= batch.frame[i - 1]);
  }
}

TEST_CASE("large batches cover several frames (seed-pinned)") {
  const Scene scene = tiny_scene(12, 4, 16);
  const auto batch = make_batch(scene, 1024, 42, 0);
  CHECK(batch.frames_used.size() >= 2);
}

TEST_CASE("batch ground truth aligns with the projected images") {
  const Scene scene = tiny_scene(3, 8, 32);
  const auto batch = make_batch(scene, 128, 9, 1);
  for (int i = 0; i < batch.size(); ++i) {
    const auto& img = scene.images[size_t(batch.frame[size_t(i)])];
    const int h = batch.pixel_h[size_t(i)], w = batch.pixel_w[size_t(i)];
    CHECK(batch.gt_depth[size_t(i)] == img.depth(h, w));
    CHECK(batch.gt_label[size_t(i)] == img.label(h, w));
    CHECK((batch.gt_return[size_t(i)] != 0) == img.mask(h, w));
  }
}

TEST_CASE("crafted forward outputs give hand-computed losses") {
  // Two rays, both in bounds: first has a return at depth 5, second dropped.
  RayBatch batch;
  batch.frame = {1, 1};
  batch.pixel_h = {0, 0};
  batch.pixel_w = {0, 1};
  batch.gt_depth = {5.0f, 0.0f};
  batch.gt_intensity = {0.25f, 0.0f};
  batch.gt_label = {2, 0};
  batch.gt_return = {1, 0};

  Tape<double> tape;
  ForwardOutput<double> fwd;
  fwd.rows = 2;
  fwd.n_samples = 4;
  fwd.in_bounds = {1, 1};
  fwd.row_of_ray = {0, 1};

  auto make_col = [&](std::initializer_list<double> vals) {
    std::vector<double> v(vals);
    return tape.constant(int(v.size()), 1, v);
  };

  SUBCASE("perfect predictions vanish") {
    fwd.render.depth = make_col({5.0, 0.0});
    fwd.render.intensity = make_col({0.25, 0.0});
    fwd.render.raydrop = make_col({0.0, 1.0});
    std::vector<double> logits(2 * 5, 0.0);
    logits[2] = 60.0;  // one-hot on the true class for ray 0
    fwd.render.sem_logits = tape.constant(2, 5, logits);

    LossWeights w;
    const auto loss = compute_losses(tape, fwd, batch, w, 0);
    CHECK(loss.components.depth == doctest::Approx(0.0));
    CHECK(loss.components.intensity == doctest::Approx(0.0));
    CHECK(loss.components.raydrop == doctest::Approx(0.0));
    CHECK(loss.components.semantic == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(loss.components.total == doctest::Approx(0.0).epsilon(1e-6));
  }

  SUBCASE("unit depth error means unit depth loss") {
    fwd.render.depth = make_col({6.0, 3.0});  // only ray 0 is supervised
    fwd.render.intensity = make_col({0.25, 0.0});
    fwd.render.raydrop = make_col({0.0, 1.0});
    fwd.render.sem_logits = tape.constant(2, 5, std::vector<double>(10, 0.0));
    LossWeights w;
    const auto loss = compute_losses(tape, fwd, batch, w, 0);
    CHECK(loss.components.depth == doctest::Approx(1.0));
  }

  SUBCASE("uniform two-class prediction costs ln 2") {
    fwd.render.depth = make_col({5.0, 0.0});
    fwd.render.intensity = make_col({0.25, 0.0});
    fwd.render.raydrop = make_col({0.0, 1.0});
    // Classes 2 and 3 tie; everything else is impossible.
    std::vector<double> logits(2 * 5, -100.0);
    logits[2] = 0.0;
    logits[3] = 0.0;
    fwd.render.sem_logits = tape.constant(2, 5, logits);
    LossWeights w;
    const auto loss = compute_losses(tape, fwd, batch, w, 0);
    CHECK(loss.components.semantic == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }

  SUBCASE("misaligned batches are rejected") {
    fwd.render.depth = make_col({5.0, 0.0});
    fwd.render.intensity = make_col({0.25, 0.0});
    fwd.render.raydrop = make_col({0.0, 1.0});
    fwd.render.sem_logits = tape.constant(2, 5, std::vector<double>(10, 0.0));
    fwd.in_bounds = {1};
    LossWeights w;
    CHECK_THROWS_AS(compute_losses(tape, fwd, batch, w, 0), MisalignedBatch);
  }
}

TEST_CASE("forward pass produces finite, bounded outputs") {
  const Scene scene = tiny_scene();
  Model<float> model = Model<float>::create(tiny_model_config(scene),
                                            scene.bounds);
  const auto batch = make_batch(scene, 64, 3, 0);
  const auto rays = batch_to_rays(scene, batch);
  Pcg32 rng(1);
  Tape<float> tape;
  const auto fwd = forward_rays(tape, model, scene, rays, true, rng);
  REQUIRE(fwd.rows > 0);
  for (int i = 0; i < fwd.rows; ++i) {
    CHECK(std::isfinite(fwd.render.depth.data()[size_t(i)]));
    const float p = fwd.render.raydrop.data()[size_t(i)];
    CHECK(p >= 0.0f);
    CHECK(p <= 1.0f);
  }
}

TEST_CASE("loss routing: weights steer gradients to the right heads") {
  const Scene scene = tiny_scene();
  auto cfg = tiny_model_config(scene);
  Model<float> model = Model<float>::create(cfg, scene.bounds);
  auto params = model.params();

  auto grads_norm = [&](const std::string& prefix) {
    double acc = 0.0;
    for (auto* p : params)
      if (p->name.rfind(prefix, 0) == 0)
        for (float g : p->grad) acc += double(g) * g;
    return std::sqrt(acc);
  };

  auto run_backward = [&](const LossWeights& w) {
    ad::zero_grads(params);
    const auto batch = make_batch(scene, 96, 5, 0);
    const auto rays = batch_to_rays(scene, batch);
    Pcg32 rng(2);
    Tape<float> tape;
    const auto fwd = forward_rays(tape, model, scene, rays, true, rng);
    const auto loss =
        compute_losses(tape, fwd, batch, w, scene.ignore_class);
    tape.backward(loss.total);
  };

  LossWeights no_semantic;
  no_semantic.semantic = 0.0;
  run_backward(no_semantic);
  CHECK(grads_norm("heads/semantic") == 0.0);
  CHECK(grads_norm("heads/geometry") > 0.0);

  LossWeights only_semantic;
  only_semantic.depth = 0.0;
  only_semantic.intensity = 0.0;
  only_semantic.raydrop = 0.0;
  only_semantic.semantic = 1.0;
  run_backward(only_semantic);
  CHECK(grads_norm("heads/intensity") == 0.0);
  CHECK(grads_norm("heads/raydrop") == 0.0);
  CHECK(grads_norm("heads/semantic") > 0.0);
}

TEST_CASE("fit runs, traces, and reproduces bitwise across runs") {
  const Scene scene = tiny_scene();

  TrainConfig tc;
  tc.iterations = 8;
  tc.rays_per_batch = 64;
  tc.seed = 21;
  tc.lr_fields = 5e-3;
  tc.lr_mlp = 1e-3;

  auto run = [&] {
    Model<float> model = Model<float>::create(tiny_model_config(scene),
                                              scene.bounds);
    const auto result = fit(scene, model, tc);
    std::vector<float> flat;
    for (auto* p : model.params())
      flat.insert(flat.end(), p->data.begin(), p->data.end());
    return std::pair{result, flat};
  };

  const auto [ra, pa] = run();
  const auto [rb, pb] = run();
  REQUIRE(ra.trace.size() == 8);
  for (const auto& row : ra.trace) {
    CHECK(std::isfinite(row.total));
    CHECK(row.depth >= 0.0);
    CHECK(row.semantic >= 0.0);
    CHECK(row.intensity >= 0.0);
    CHECK(row.raydrop >= 0.0);
  }
  CHECK(pa == pb);

  // Zero iterations leave the initialization untouched.
  Model<float> init = Model<float>::create(tiny_model_config(scene),
                                           scene.bounds);
  std::vector<float> before;
  for (auto* p : init.params())
    before.insert(before.end(), p->data.begin(), p->data.end());
  TrainConfig zero = tc;
  zero.iterations = 0;
  fit(scene, init, zero);
  std::vector<float> after;
  for (auto* p : init.params())
    after.insert(after.end(), p->data.begin(), p->data.end());
  CHECK(before == after);
}

TEST_CASE("encoder stages keep receiving gradient during joint training") {
  const Scene scene = tiny_scene();
  auto cfg = tiny_model_config(scene);
  Model<float> model = Model<float>::create(cfg, scene.bounds);

  TrainConfig tc;
  tc.iterations = 100;
  tc.rays_per_batch = 64;
  tc.seed = 31;
  fit(scene, model, tc);

  // One more forward/backward; every stage of the encoder must see gradient.
  auto params = model.params();
  ad::zero_grads(params);
  const auto batch = make_batch(scene, 96, 31, 100);
  const auto rays = batch_to_rays(scene, batch);
  Pcg32 rng(4);
  ad::Tape<float> tape;
  const auto fwd = forward_rays(tape, model, scene, rays, true, rng);
  LossWeights w;
  const auto loss = compute_losses(tape, fwd, batch, w, scene.ignore_class);
  tape.backward(loss.total);

  for (const char* stage : {"encoder/stem0", "encoder/s0", "encoder/s1",
                            "encoder/s2", "encoder/head"}) {
    double norm = 0.0;
    for (auto* p : params)
      if (p->name.rfind(stage, 0) == 0)
        for (float g : p->grad) norm += double(g) * g;
    CHECK_MESSAGE(norm > 0.0, "stage ", stage, " received no gradient");
  }
}

TEST_CASE("shipped defaults carry the reference constants") {
  ModelConfig cfg;
  CHECK(cfg.num_samples == 768);
  CHECK(cfg.heads.hidden_dim == 64);
  CHECK(cfg.heads.layers == 3);
  CHECK(cfg.heads.geo_feature_dim == 16);
  CHECK(cfg.encoder.out_channels == 128);
  CHECK(cfg.grid.log2_table_size == 19);
  SensorIntrinsics kitti = SensorIntrinsics::semantic_kitti();
  CHECK(kitti.vertical_fov_deg() == doctest::Approx(28.0));
  RunConfig run;
  CHECK(run.dataset_frame_count == 50);
  CHECK(run.render_num_samples == 768);
}

TEST_CASE("fit aborts on non-finite losses with diagnostics") {
  const Scene scene = tiny_scene();
  Model<float> model = Model<float>::create(tiny_model_config(scene),
                                            scene.bounds);
  // Poison the density output bias; softplus propagates the NaN into the
  // compositing weights and the depth loss.
  for (auto* p : model.params())
    if (p->name == "heads/geometry/b2") p->data[0] =
        std::numeric_limits<float>::quiet_NaN();
  TrainConfig tc;
  tc.iterations = 3;
  tc.rays_per_batch = 32;
  try {
    fit(scene, model, tc);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration 0") != std::string::npos);
    CHECK(msg.find("gradient") != std::string::npos);
  }
}

TEST_CASE("the standard synthetic arrangement covers four labeled classes") {
  const auto cfg = SynthSceneConfig::standard();
  std::set<int> labels;
  bool has_mover = false;
  for (const auto& prim : cfg.primitives) {
    labels.insert(prim.label);
    if (prim.velocity[0] != 0 || prim.velocity[1] != 0 || prim.velocity[2] != 0)
      has_mover = true;
  }
  CHECK(labels.size() == 4);
  CHECK(labels.count(0) == 0);  // no primitive claims the ignore id
  CHECK(has_mover);
  CHECK(cfg.frames == 5);
}

TEST_CASE("render_image produces a full frame with diagnostics") {
  const Scene scene = tiny_scene();
  Model<float> model = Model<float>::create(tiny_model_config(scene),
                                            scene.bounds);
  const auto& scan = scene.scans[1];
  const auto frame = render_image(model, scene, scan.pose, scan.timestamp);
  const size_t n = scene.images[1].pixels();
  CHECK(frame.image.pixels() == n);
  CHECK(frame.raydrop_prob.size() == n);
  CHECK(frame.sem_class.size() == n);
  CHECK(frame.depth_raw.size() == n);
  CHECK(frame.pose_in_distribution);
  CHECK(!frame.time_extrapolated);
  CHECK(frame.local_frame == 1);
  for (size_t i = 0; i < n; i += 17) {
    CHECK(std::isfinite(frame.depth_raw[i]));
    CHECK(frame.raydrop_prob[i] >= 0.0f);
    CHECK(frame.raydrop_prob[i] <= 1.0f);
    // Argmax never lands on the ignore class.
    CHECK(frame.sem_class[i] != scene.ignore_class);
  }

  // Without masking every pixel is kept.
  const auto unmasked = render_image(model, scene, scan.pose, scan.timestamp,
                                     /*apply_raydrop_mask=*/false);
  CHECK(unmasked.image.valid_count() == n);

  // Far-future timestamps are flagged as extrapolation.
  const auto extra = render_image(model, scene, scan.pose, 99.0);
  CHECK(extra.time_extrapolated);
}

TEST_CASE("eval_scene emits the full metric family") {
  const Scene scene = tiny_scene();
  Model<float> model = Model<float>::create(tiny_model_config(scene),
                                            scene.bounds);
  std::vector<MetricsReport> per_frame;
  const auto report = eval_scene(model, scene, &per_frame);
  for (const char* key :
       {"point.cd", "point.cd_sum", "point.fscore", "depth.rmse",
        "depth.medae", "depth.psnr", "depth.ssim", "intensity.rmse",
        "intensity.medae", "intensity.psnr", "intensity.ssim", "raydrop.rmse",
        "raydrop.acc", "raydrop.f1", "semantic.pa", "semantic.miou"})
    CHECK_MESSAGE(report.has(key), "missing ", key);
  CHECK(report.get("frames") == doctest::Approx(1.0));
  REQUIRE(per_frame.size() == 1);
}

TEST_CASE("checkpoints round trip parameters and optimizer state") {
  const Scene scene = tiny_scene();
  Model<float> model = Model<float>::create(tiny_model_config(scene),
                                            scene.bounds);
  TrainConfig tc;
  tc.iterations = 4;
  tc.rays_per_batch = 48;
  fit(scene, model, tc);

  const auto dir = std::filesystem::temp_directory_path() / "rf_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();
  CheckpointMeta meta;
  meta.intrinsics = scene.intrinsics;
  meta.num_classes = scene.num_classes;
  meta.ignore_class = scene.ignore_class;
  save_checkpoint(path, model, meta);

  auto loaded = load_checkpoint(path);
  CHECK(loaded.meta.intrinsics.beams == scene.intrinsics.beams);
  CHECK(loaded.meta.num_classes == scene.num_classes);
  CHECK(loaded.model.cfg.num_samples == model.cfg.num_samples);
  CHECK(loaded.model.bounds.xyz_min == model.bounds.xyz_min);

  auto pa = model.params();
  auto pb = loaded.model.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->data == pb[i]->data);
    CHECK(pa[i]->adam_m == pb[i]->adam_m);
    CHECK(pa[i]->adam_step_count == pb[i]->adam_step_count);
  }

  // Renders agree bitwise.
  const auto& scan = scene.scans[1];
  const auto fa = render_image(model, scene, scan.pose, scan.timestamp);
  const auto fb = render_image(loaded.model, scene, scan.pose, scan.timestamp);
  CHECK(std::equal(fa.depth_raw.begin(), fa.depth_raw.end(),
                   fb.depth_raw.begin()));

  // Resumed training continues without error.
  TrainConfig more = tc;
  more.iterations = 2;
  fit(scene, loaded.model, more);
  std::filesystem::remove_all(dir);
}
