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
#include <vector>

#include "rangefield/ad/grad_check.hpp"
#include "rangefield/neural_field.hpp"

using namespace rangefield;
using ad::Parameter;
using ad::Tape;
using ad::Value;

TEST_CASE("positional encoding basics") {
  std::vector<double> zero{0.0, 0.0, 0.0};
  const auto e0 = positional_encode(std::span<const double>(zero), 4);
  REQUIRE(e0.size() == 24);  // 6L for a 3-vector at L=4
  for (size_t i = 0; i < e0.size(); ++i)
    CHECK(e0[i] == doctest::Approx(i % 2 == 0 ? 0.0 : 1.0));

  std::vector<double> half_pi{kPi / 2.0};
  const auto e1 = positional_encode(std::span<const double>(half_pi), 1);
  REQUIRE(e1.size() == 2);
  CHECK(e1[0] == doctest::Approx(1.0));
  CHECK(e1[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ray sampling modes") {
  Pcg32 rng(1);
  const auto uniform = sample_ray_distances(1.0, 3.0, 2, false, rng);
  REQUIRE(uniform.size() == 2);
  CHECK(uniform[0] == doctest::Approx(1.5));
  CHECK(uniform[1] == doctest::Approx(2.5));

  for (uint64_t seed = 0; seed < 50; ++seed) {
    Pcg32 r(seed);
    const auto d = sample_ray_distances(0.5, 80.0, 32, true, r);
    const double width = (80.0 - 0.5) / 32;
    for (int i = 0; i < 32; ++i) {
      CHECK(d[size_t(i)] >= 0.5 + i * width);
      CHECK(d[size_t(i)] < 0.5 + (i + 1) * width);
      if (i > 0) CHECK(d[size_t(i)] > d[size_t(i) - 1]);
    }
  }

  CHECK_THROWS_AS(sample_ray_distances(0.0, 1.0, 4, false, rng), BadBounds);
  CHECK_THROWS_AS(sample_ray_distances(2.0, 1.0, 4, false, rng), BadBounds);
}

TEST_CASE("ray_weights closed-form cases") {
  // All-zero density: no weight anywhere.
  {
    Tape<double> t;
    Value<double> sigma = t.alloc(4, 1, false);
    std::vector<double> delta{1, 1, 1, 1};
    Value<double> w = ray_weights(sigma, std::span<const double>(delta), 1, 4,
                                  false);
    for (double v : w.data()) CHECK(v == doctest::Approx(0.0));
  }

  // Single saturated sample.
  {
    Tape<double> t;
    Value<double> sigma = t.alloc(1, 1, false);
    sigma.data()[0] = 20.0;
    std::vector<double> delta{1.0};
    Value<double> w =
        ray_weights(sigma, std::span<const double>(delta), 1, 1, false);
    CHECK(w.data()[0] == doctest::Approx(1.0 - std::exp(-20.0)).epsilon(1e-12));
  }

  // Hand-derived two-sample ray: (d, sigma) = (2, 1), (4, 5), delta = 2.
  {
    Tape<double> t;
    Value<double> sigma = t.alloc(2, 1, false);
    sigma.data()[0] = 1.0;
    sigma.data()[1] = 5.0;
    std::vector<double> delta{2.0, 2.0};
    Value<double> w =
        ray_weights(sigma, std::span<const double>(delta), 1, 2, false);
    const double w1 = 1.0 - std::exp(-1.0);
    const double w2 = std::exp(-2.0) * (1.0 - std::exp(-5.0));
    CHECK(w.data()[0] == doctest::Approx(w1).epsilon(1e-12));
    CHECK(w.data()[1] == doctest::Approx(w2).epsilon(1e-12));
    CHECK(2.0 * w.data()[0] + 4.0 * w.data()[1] ==
          doctest::Approx(1.8019347227413481).epsilon(1e-12));
  }
}

TEST_CASE("ray_weights gradients match finite differences in both variants") {
  Pcg32 rng(4);
  Parameter<double> sigma("sigma", 12, 1);
  for (auto& v : sigma.data) v = rng.uniform(0.05, 2.5);
  std::vector<double> delta(12);
  for (auto& d : delta) d = rng.uniform(0.3, 1.5);
  std::vector<double> attrs(12);
  for (auto& a : attrs) a = rng.uniform(-1.0, 1.0);
  std::vector<Parameter<double>*> params{&sigma};

  for (bool delta_in_opacity : {false, true}) {
    auto loss_fn = [&](bool with_backward) {
      Tape<double> t;
      Value<double> w = ray_weights(t.leaf(sigma),
                                    std::span<const double>(delta), 3, 4,
                                    delta_in_opacity);
      Value<double> loss =
          ad::sum(ad::mul_const(w, std::span<const double>(attrs)));
      const double v = loss.item();
      if (with_backward) t.backward(loss);
      return v;
    };
    ad::GradCheckOptions opts;
    opts.max_probes_per_param = 12;
    const auto rep = ad::check_gradients(params, loss_fn, opts);
    CHECK_MESSAGE(rep.max_rel_error < 1e-3, "variant ", delta_in_opacity,
                  " err ", rep.max_rel_error);
  }
}

TEST_CASE("transmittance invariants over random rays") {
  // The unit partition bound is a theorem only for the delta-aware opacity
  // (the weights then telescope to 1 - exp(-sum sigma*delta)); the
  // as-printed form keeps weights non-negative under a non-increasing
  // transmittance but their sum is resolution-dependent.
  Pcg32 rng(6);
  const int R = 200, N = 24;
  Tape<double> t;
  Value<double> sigma = t.alloc(R * N, 1, false);
  for (auto& v : sigma.data()) v = rng.uniform(0.0, 3.0);
  std::vector<double> delta(size_t(R) * N);
  for (auto& d : delta) d = rng.uniform(0.05, 1.0);

  for (bool delta_in_opacity : {false, true}) {
    Value<double> w = ray_weights(sigma, std::span<const double>(delta), R, N,
                                  delta_in_opacity);
    for (int r = 0; r < R; ++r) {
      double sum = 0.0, prev_trans = 1.0;
      for (int n = 0; n < N; ++n) {
        const double wi = w.data()[size_t(r) * N + n];
        CHECK(wi >= 0.0);
        sum += wi;
        double trans = prev_trans;
        if (n > 0)
          trans = prev_trans *
                  std::exp(-sigma.data()[size_t(r) * N + n - 1] *
                           delta[size_t(r) * N + n - 1]);
        CHECK(trans <= prev_trans + 1e-12);
        prev_trans = trans;
      }
      CHECK(sum >= 0.0);
      if (delta_in_opacity) {
        CHECK(sum <= 1.0 + 1e-6);
        // Exact telescoping: sum of weights = 1 - final transmittance.
        double optical = 0.0;
        for (int n = 0; n < N; ++n)
          optical += sigma.data()[size_t(r) * N + n] * delta[size_t(r) * N + n];
        CHECK(sum == doctest::Approx(1.0 - std::exp(-optical)).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("raising the first density never lowers the first weight") {
  std::vector<double> delta{0.5, 0.5, 0.5, 0.5};
  double prev = -1.0;
  for (double s1 : {0.01, 0.1, 0.5, 1.0, 3.0, 10.0}) {
    Tape<double> t;
    Value<double> sigma = t.alloc(4, 1, false);
    sigma.data()[0] = s1;
    sigma.data()[1] = 0.7;
    sigma.data()[2] = 0.2;
    sigma.data()[3] = 1.1;
    Value<double> w =
        ray_weights(sigma, std::span<const double>(delta), 1, 4, false);
    CHECK(w.data()[0] >= prev);
    prev = w.data()[0];
  }
}

TEST_CASE("render_rays zero-density output and monotonicity guard") {
  const int R = 2, N = 3, K = 4;
  Tape<double> t;
  Value<double> sigma_geo = t.alloc(R * N, 1, false);
  Value<double> sigma_sem = t.alloc(R * N, 1, false);
  Value<double> intensity = t.alloc(R * N, 1, false);
  Value<double> raydrop = t.alloc(R * N, 1, false);
  Value<double> logits = t.alloc(R * N, K, false);
  std::vector<double> dist{1, 2, 3, 1, 2, 3};
  std::vector<double> delta{1, 1, 1, 1, 1, 1};

  auto rr = render_rays(t, sigma_geo, sigma_sem, intensity, raydrop, logits,
                        std::span<const double>(dist),
                        std::span<const double>(delta), R, N, false, true);
  for (int r = 0; r < R; ++r) {
    CHECK(rr.depth.data()[size_t(r)] == doctest::Approx(0.0));
    CHECK(rr.intensity.data()[size_t(r)] == doctest::Approx(0.0));
    CHECK(rr.raydrop.data()[size_t(r)] == doctest::Approx(0.0));
    CHECK(rr.weight_sum_geo.data()[size_t(r)] == doctest::Approx(0.0));
  }
  Value<double> probs = ad::softmax(rr.sem_logits);
  for (double p : probs.data()) CHECK(p == doctest::Approx(0.25));

  std::vector<double> bad{1, 2, 2, 1, 2, 3};
  CHECK_THROWS_AS(
      render_rays(t, sigma_geo, sigma_sem, intensity, raydrop, logits,
                  std::span<const double>(bad), std::span<const double>(delta),
                  R, N, false, true),
      NonMonotoneSamples);
}

TEST_CASE("head outputs respect their activations and inputs") {
  FieldHeadsConfig cfg;
  cfg.hidden_dim = 16;
  cfg.layers = 3;
  cfg.geo_feature_dim = 8;
  cfg.view_embed_levels = 2;
  cfg.num_classes = 5;
  Pcg32 rng(8);
  const int field_dim = 12;
  FieldHeads<double> heads(cfg, field_dim, rng);

  const int n = 6;
  std::vector<double> feat(size_t(n) * field_dim);
  Pcg32 frng(9);
  for (auto& v : feat) v = frng.uniform(-1, 1);
  std::vector<double> view(size_t(n) * 12);
  for (auto& v : view) v = frng.uniform(-1, 1);

  Tape<double> t;
  auto out = heads.query(t, t.constant(n, field_dim, feat),
                         t.constant(n, 12, view));
  for (double v : out.sigma_geo.data()) CHECK(v >= 0.0);
  for (double v : out.sigma_sem.data()) CHECK(v >= 0.0);
  for (double v : out.intensity.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  for (double v : out.raydrop.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(out.logits.cols() == 5);
  CHECK(out.f_geo.cols() == 8);
}

TEST_CASE("semantic logits are bitwise identical across view directions") {
  FieldHeadsConfig cfg;
  cfg.hidden_dim = 16;
  cfg.num_classes = 4;
  cfg.geo_feature_dim = 6;
  cfg.view_embed_levels = 2;
  Pcg32 rng(10);
  FieldHeads<double> heads(cfg, 10, rng);

  std::vector<double> feat(10);
  Pcg32 frng(11);
  for (auto& v : feat) v = frng.uniform(-1, 1);

  std::vector<double> ref;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> dir{frng.uniform(-1, 1), frng.uniform(-1, 1),
                            frng.uniform(-1, 1)};
    const auto emb = positional_encode(std::span<const double>(dir), 2);
    Tape<double> t;
    auto out = heads.query(t, t.constant(1, 10, feat),
                           t.constant(1, 12, emb));
    std::vector<double> logits(out.logits.data().begin(),
                               out.logits.data().end());
    if (trial == 0)
      ref = logits;
    else
      CHECK(logits == ref);
  }
}

TEST_CASE("zeroed final geometry layer gives uniform softplus density") {
  FieldHeadsConfig cfg;
  cfg.hidden_dim = 8;
  cfg.num_classes = 3;
  cfg.geo_feature_dim = 4;
  cfg.view_embed_levels = 1;
  Pcg32 rng(12);
  FieldHeads<double> heads(cfg, 6, rng);
  std::vector<Parameter<double>*> params;
  heads.collect_params(params);
  // Zero the geometry MLP's last layer (weights + bias).
  for (auto* p : params)
    if (p->name == "heads/geometry/w2" || p->name == "heads/geometry/b2")
      std::fill(p->data.begin(), p->data.end(), 0.0);

  std::vector<double> feat(size_t(5) * 6);
  Pcg32 frng(13);
  for (auto& v : feat) v = frng.uniform(-1, 1);
  std::vector<double> view(size_t(5) * 6, 0.1);
  Tape<double> t;
  auto out = heads.query(t, t.constant(5, 6, feat), t.constant(5, 6, view));
  const double expect = std::log1p(std::exp(0.0));
  for (double v : out.sigma_geo.data())
    CHECK(v == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gradients flow through all four heads") {
  FieldHeadsConfig cfg;
  cfg.hidden_dim = 8;
  cfg.layers = 3;
  cfg.geo_feature_dim = 4;
  cfg.view_embed_levels = 1;
  cfg.num_classes = 3;
  Pcg32 rng(14);
  FieldHeads<double> heads(cfg, 5, rng);
  std::vector<Parameter<double>*> params;
  heads.collect_params(params);

  std::vector<double> feat(size_t(4) * 5), view(size_t(4) * 6);
  Pcg32 frng(15);
  for (auto& v : feat) v = frng.uniform(-1, 1);
  for (auto& v : view) v = frng.uniform(-1, 1);
  std::vector<double> dist{1, 2, 1, 2};
  std::vector<double> delta{1, 1, 1, 1};

  auto loss_fn = [&](bool with_backward) {
    Tape<double> t;
    auto out = heads.query(t, t.constant(4, 5, feat), t.constant(4, 6, view));
    auto rr = render_rays(t, out.sigma_geo, out.sigma_sem, out.intensity,
                          out.raydrop, out.logits,
                          std::span<const double>(dist),
                          std::span<const double>(delta), 2, 2, false, true);
    Value<double> probs = ad::softmax(rr.sem_logits);
    Value<double> loss = ad::add(
        ad::add(ad::sum(ad::mul(rr.depth, rr.depth)),
                ad::sum(ad::mul(rr.intensity, rr.raydrop))),
        ad::sum(ad::mul(probs, probs)));
    const double v = loss.item();
    if (with_backward) t.backward(loss);
    return v;
  };
  ad::GradCheckOptions opts;
  opts.max_probes_per_param = 6;
  const auto rep = ad::check_gradients(params, loss_fn, opts);
  CHECK_MESSAGE(rep.max_rel_error < 1e-3, "err ", rep.max_rel_error);
}
