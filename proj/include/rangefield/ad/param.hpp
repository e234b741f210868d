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

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rangefield/common.hpp"
#include "rangefield/errors.hpp"

namespace rangefield::ad {

/// Trainable tensor with persistent gradient buffer and Adam state.
/// Tapes view its storage directly; gradients survive tape teardown and are
/// cleared by the optimizer step.
template <class S>
struct Parameter {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<S> data;
  std::vector<S> grad;
  std::vector<S> adam_m, adam_v;
  int64_t adam_step_count = 0;
  double lr_override = 0.0;  // 0 means: use the optimizer's global rate

  Parameter() = default;
  Parameter(std::string name_, int rows_, int cols_)
      : name(std::move(name_)),
        rows(rows_),
        cols(cols_),
        data(size_t(rows_) * cols_, S(0)),
        grad(size_t(rows_) * cols_, S(0)) {}

  int64_t size() const { return int64_t(rows) * cols; }

  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }

  void fill_uniform(Pcg32& rng, double lo, double hi) {
    for (auto& v : data) v = S(rng.uniform(lo, hi));
  }

  /// Kaiming-style fan-in scaling for linear/conv weights.
  void fill_kaiming(Pcg32& rng, int fan_in) {
    const double bound = std::sqrt(6.0 / double(fan_in));
    fill_uniform(rng, -bound, bound);
  }
};

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must be in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
    if (!(learning_rate > 0.0))
      throw ConfigError("adam learning rate must be positive");
  }
};

/// Bias-corrected Adam update; gradients are cleared afterwards.
template <class S>
void adam_step(std::span<Parameter<S>* const> params, const AdamConfig& cfg) {
  cfg.validate();
  for (Parameter<S>* p : params) {
    if (p->adam_m.empty()) {
      p->adam_m.assign(size_t(p->size()), S(0));
      p->adam_v.assign(size_t(p->size()), S(0));
    }
    p->adam_step_count += 1;
    const double lr =
        p->lr_override > 0.0 ? p->lr_override : cfg.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(p->adam_step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(p->adam_step_count));
    S* x = p->data.data();
    S* g = p->grad.data();
    S* m = p->adam_m.data();
    S* v = p->adam_v.data();
    const int64_t n = p->size();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = double(g[i]);
      const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = S(mi);
      v[i] = S(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      x[i] = S(double(x[i]) - lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
      g[i] = S(0);
    }
  }
}

template <class S>
void adam_step(const std::vector<Parameter<S>*>& params,
               const AdamConfig& cfg) {
  adam_step(std::span<Parameter<S>* const>(params.data(), params.size()), cfg);
}

template <class S>
void zero_grads(const std::vector<Parameter<S>*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace rangefield::ad
