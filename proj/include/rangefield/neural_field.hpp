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

#include <span>
#include <string>
#include <vector>

#include "rangefield/ad/tape.hpp"
#include "rangefield/common.hpp"
#include "rangefield/errors.hpp"

namespace rangefield {

/// Interleaved sin/cos frequency embedding, one component at a time:
/// (sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x), cos(2^{L-1} x)).
template <class S>
std::vector<S> positional_encode(std::span<const S> v, int levels) {
  std::vector<S> out;
  out.reserve(v.size() * 2 * size_t(levels));
  for (S x : v) {
    double freq = 1.0;
    for (int l = 0; l < levels; ++l) {
      out.push_back(S(std::sin(freq * double(x))));
      out.push_back(S(std::cos(freq * double(x))));
      freq *= 2.0;
    }
  }
  return out;
}

/// Bin-based depth sampling along a ray segment. Uniform mode returns the
/// midpoints of n equal bins; stratified mode draws one uniform point per
/// bin. Distances are strictly increasing by construction.
inline std::vector<double> sample_ray_distances(double near, double far, int n,
                                                bool stratified, Pcg32& rng) {
  if (!(near > 0.0) || !(far > near))
    throw BadBounds("ray bounds must satisfy 0 < near < far, got [" +
                    std::to_string(near) + ", " + std::to_string(far) + ")");
  std::vector<double> out(static_cast<size_t>(n));
  const double width = (far - near) / n;
  for (int i = 0; i < n; ++i) {
    const double offset = stratified ? rng.uniform() : 0.5;
    out[size_t(i)] = near + (i + offset) * width;
  }
  return out;
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

template <class S>
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, int in_dim, int hidden, int out_dim, int layers,
      Pcg32& rng) {
    int cur = in_dim;
    for (int l = 0; l < layers; ++l) {
      const int width = (l == layers - 1) ? out_dim : hidden;
      ad::Parameter<S> w(name + "/w" + std::to_string(l), cur, width);
      ad::Parameter<S> b(name + "/b" + std::to_string(l), 1, width);
      w.fill_kaiming(rng, cur);
      weights_.push_back(std::move(w));
      biases_.push_back(std::move(b));
      cur = width;
    }
  }

  ad::Value<S> forward(ad::Tape<S>& tape, ad::Value<S> x) {
    for (size_t l = 0; l < weights_.size(); ++l) {
      x = ad::add(ad::matmul(x, tape.leaf(weights_[l])),
                  tape.leaf(biases_[l]));
      if (l + 1 < weights_.size()) x = ad::relu(x);
    }
    return x;
  }

  void collect_params(std::vector<ad::Parameter<S>*>& out) {
    for (auto& w : weights_) out.push_back(&w);
    for (auto& b : biases_) out.push_back(&b);
  }

 private:
  std::vector<ad::Parameter<S>> weights_;
  std::vector<ad::Parameter<S>> biases_;
};

// ---------------------------------------------------------------------------
// Decoder heads
// ---------------------------------------------------------------------------

struct FieldHeadsConfig {
  int hidden_dim = 64;
  int layers = 3;
  int geo_feature_dim = 16;
  int view_embed_levels = 4;
  int num_classes = 20;
};

/// The four decoders. Geometry and semantics read the fused field features;
/// intensity and ray drop read the geometry feature plus the view embedding.
/// The semantic head never sees the view direction.
template <class S>
class FieldHeads {
 public:
  FieldHeads() = default;
  FieldHeads(const FieldHeadsConfig& cfg, int field_dim, Pcg32& rng)
      : cfg_(cfg) {
    const int view_dim = 6 * cfg.view_embed_levels;
    geometry_ = Mlp<S>("heads/geometry", field_dim, cfg.hidden_dim,
                       1 + cfg.geo_feature_dim, cfg.layers, rng);
    semantic_ = Mlp<S>("heads/semantic", field_dim, cfg.hidden_dim,
                       1 + cfg.num_classes, cfg.layers, rng);
    intensity_ = Mlp<S>("heads/intensity", cfg.geo_feature_dim + view_dim,
                        cfg.hidden_dim, 1, cfg.layers, rng);
    raydrop_ = Mlp<S>("heads/raydrop", cfg.geo_feature_dim + view_dim,
                      cfg.hidden_dim, 1, cfg.layers, rng);
  }

  const FieldHeadsConfig& config() const { return cfg_; }

  struct Outputs {
    ad::Value<S> sigma_geo;   // (n x 1), softplus-activated
    ad::Value<S> f_geo;       // (n x geo_feature_dim)
    ad::Value<S> sigma_sem;   // (n x 1), softplus-activated
    ad::Value<S> logits;      // (n x num_classes)
    ad::Value<S> intensity;   // (n x 1), sigmoid
    ad::Value<S> raydrop;     // (n x 1), sigmoid
  };

  /// field_features: fused (f_planar | f_grid | f_local) rows per sample.
  /// view_embedding: per-sample gamma(direction) constants.
  Outputs query(ad::Tape<S>& tape, ad::Value<S> field_features,
                ad::Value<S> view_embedding) {
    Outputs out;
    ad::Value<S> geo = geometry_.forward(tape, field_features);
    out.sigma_geo = ad::softplus(ad::slice_cols(geo, 0, 1));
    out.f_geo = ad::slice_cols(geo, 1, 1 + cfg_.geo_feature_dim);

    ad::Value<S> sem = semantic_.forward(tape, field_features);
    out.sigma_sem = ad::softplus(ad::slice_cols(sem, 0, 1));
    out.logits = ad::slice_cols(sem, 1, 1 + cfg_.num_classes);

    ad::Value<S> shade_in =
        ad::concat_cols<S>({out.f_geo, view_embedding});
    out.intensity = ad::sigmoid(intensity_.forward(tape, shade_in));
    out.raydrop = ad::sigmoid(raydrop_.forward(tape, shade_in));
    return out;
  }

  void collect_params(std::vector<ad::Parameter<S>*>& out) {
    geometry_.collect_params(out);
    semantic_.collect_params(out);
    intensity_.collect_params(out);
    raydrop_.collect_params(out);
  }

 private:
  FieldHeadsConfig cfg_;
  Mlp<S> geometry_, semantic_, intensity_, raydrop_;
};

// ---------------------------------------------------------------------------
// Volume rendering
// ---------------------------------------------------------------------------

/// Compositing weights from density. Transmittance always integrates
/// sigma * delta; the opacity factor is (1 - e^{-sigma}) by default with an
/// optional (1 - e^{-sigma*delta}) variant (delta_in_opacity).
template <class S>
ad::Value<S> ray_weights(ad::Value<S> sigma, std::span<const S> delta,
                         int n_rays, int n_samples, bool delta_in_opacity) {
  if (sigma.cols() != 1 || sigma.rows() != n_rays * n_samples)
    throw ShapeMismatch("ray_weights: sigma must be (" +
                        std::to_string(n_rays * n_samples) + "x1), got (" +
                        std::to_string(sigma.rows()) + "x" +
                        std::to_string(sigma.cols()) + ")");
  if (int64_t(delta.size()) != int64_t(n_rays) * n_samples)
    throw ShapeMismatch("ray_weights: delta size mismatch");

  ad::Tape<S>& t = sigma.tape();
  ad::Value<S> out = t.alloc(n_rays * n_samples, 1, sigma.requires_grad());
  const S* ps = sigma.data().data();
  S* po = out.data().data();
  for (int r = 0; r < n_rays; ++r) {
    S optical_depth = 0;
    for (int n = 0; n < n_samples; ++n) {
      const int64_t i = int64_t(r) * n_samples + n;
      const S transmittance = std::exp(-optical_depth);
      const S exponent = delta_in_opacity ? ps[i] * delta[size_t(i)] : ps[i];
      po[i] = transmittance * (S(1) - std::exp(-exponent));
      optical_depth += ps[i] * delta[size_t(i)];
    }
  }

  std::vector<S> kept_delta(delta.begin(), delta.end());
  t.set_backward(out, [sigma, out, kept_delta = std::move(kept_delta), n_rays,
                       n_samples, delta_in_opacity]() mutable {
    if (!sigma.requires_grad()) return;
    const S* ps = sigma.data().data();
    const S* w = out.data().data();
    const S* g = out.grad().data();
    S* gs = sigma.grad().data();
    for (int r = 0; r < n_rays; ++r) {
      const int64_t base = int64_t(r) * n_samples;
      // suffix[n] = sum_{m >= n} w_m * g_m
      S suffix = 0;
      std::vector<S> suffix_from(size_t(n_samples) + 1, S(0));
      for (int n = n_samples - 1; n >= 0; --n) {
        suffix += w[base + n] * g[base + n];
        suffix_from[size_t(n)] = suffix;
      }
      S optical_depth = 0;
      for (int n = 0; n < n_samples; ++n) {
        const int64_t i = base + n;
        const S transmittance = std::exp(-optical_depth);
        const S d = kept_delta[size_t(i)];
        S self;
        if (delta_in_opacity)
          self = transmittance * std::exp(-ps[i] * d) * d * g[i];
        else
          self = transmittance * std::exp(-ps[i]) * g[i];
        gs[i] += self - d * suffix_from[size_t(n) + 1];
        optical_depth += ps[i] * d;
      }
    }
  });
  return out;
}

template <class S>
struct RayRender {
  ad::Value<S> weights_geo;     // (n_rays*n_samples x 1)
  ad::Value<S> weights_sem;     // shares weights_geo when the semantic
                                // density branch is disabled
  ad::Value<S> depth;           // (n_rays x 1) meters
  ad::Value<S> intensity;       // (n_rays x 1)
  ad::Value<S> raydrop;         // (n_rays x 1)
  ad::Value<S> sem_logits;      // (n_rays x K) aggregated, pre-softmax
  ad::Value<S> weight_sum_geo;  // (n_rays x 1) transmittance diagnostics
  ad::Value<S> weight_sum_sem;
};

/// Composites per-sample head outputs into per-ray predictions. Distances
/// are the flat (n_rays*n_samples) sample depths, strictly increasing within
/// each ray; deltas are forward differences with the final bin closed by the
/// segment end.
template <class S>
RayRender<S> render_rays(ad::Tape<S>& tape, ad::Value<S> sigma_geo,
                         ad::Value<S> sigma_sem, ad::Value<S> intensity,
                         ad::Value<S> raydrop, ad::Value<S> logits,
                         std::span<const S> distances,
                         std::span<const S> deltas, int n_rays, int n_samples,
                         bool delta_in_opacity, bool semantic_density) {
  for (int r = 0; r < n_rays; ++r)
    for (int n = 1; n < n_samples; ++n) {
      const size_t i = size_t(r) * n_samples + n;
      if (!(distances[i] > distances[i - 1]))
        throw NonMonotoneSamples("ray " + std::to_string(r) +
                                 " has non-increasing sample distances");
    }

  RayRender<S> out;
  out.weights_geo =
      ray_weights(sigma_geo, deltas, n_rays, n_samples, delta_in_opacity);
  out.weights_sem =
      semantic_density
          ? ray_weights(sigma_sem, deltas, n_rays, n_samples, delta_in_opacity)
          : out.weights_geo;

  out.depth = ad::segment_sum(ad::mul_const(out.weights_geo, distances),
                              n_rays, n_samples);
  out.intensity = ad::segment_sum(ad::mul(out.weights_geo, intensity), n_rays,
                                  n_samples);
  out.raydrop =
      ad::segment_sum(ad::mul(out.weights_geo, raydrop), n_rays, n_samples);
  out.sem_logits = ad::segment_sum(ad::scale_rows(logits, out.weights_sem),
                                   n_rays, n_samples);
  out.weight_sum_geo = ad::segment_sum(out.weights_geo, n_rays, n_samples);
  out.weight_sum_sem = ad::segment_sum(out.weights_sem, n_rays, n_samples);
  (void)tape;
  return out;
}

}  // namespace rangefield
