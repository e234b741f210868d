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

#include <algorithm>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rangefield/ad/param.hpp"
#include "rangefield/common.hpp"

namespace rangefield::ad {

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-3;
  // Large tensors are probed at a random sample of entries; small ones fully.
  int max_probes_per_param = 16;
  uint64_t seed = 7;
};

struct ParamGradEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int probes = 0;
};

struct GradCheckReport {
  std::vector<ParamGradEntry> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

/// Central-difference verification of analytic gradients.
///
/// loss_fn(with_backward) must evaluate the full forward pass on the current
/// parameter values, run the reverse pass when asked, and return the scalar
/// loss. It is called once with backward to capture analytic gradients and
/// then twice per probed entry for the difference quotient. The relative
/// error denominator is floored at 1e-6 so near-zero pairs compare as equal.
template <class S>
GradCheckReport check_gradients(std::span<Parameter<S>* const> params,
                                const std::function<double(bool)>& loss_fn,
                                const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  report.tolerance = opts.tolerance;

  for (auto* p : params) p->zero_grad();
  loss_fn(true);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) {
    std::vector<double> g(size_t(p->size()));
    for (int64_t i = 0; i < p->size(); ++i) g[size_t(i)] = double(p->grad[size_t(i)]);
    analytic.push_back(std::move(g));
  }

  Pcg32 rng(opts.seed);
  const double h = opts.step;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<S>* p = params[pi];
    ParamGradEntry entry;
    entry.name = p->name;

    std::vector<int64_t> probe;
    if (p->size() <= opts.max_probes_per_param) {
      for (int64_t i = 0; i < p->size(); ++i) probe.push_back(i);
    } else {
      for (int k = 0; k < opts.max_probes_per_param; ++k)
        probe.push_back(rng.uniform_index(uint32_t(p->size())));
      std::sort(probe.begin(), probe.end());
      probe.erase(std::unique(probe.begin(), probe.end()), probe.end());
    }

    for (int64_t i : probe) {
      const S saved = p->data[size_t(i)];
      p->data[size_t(i)] = S(double(saved) + h);
      const double lp = loss_fn(false);
      p->data[size_t(i)] = S(double(saved) - h);
      const double lm = loss_fn(false);
      p->data[size_t(i)] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[pi][size_t(i)];
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
      const double rel = std::abs(an - fd) / denom;
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(an - fd));
      ++entry.probes;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
  }
  return report;
}

template <class S>
GradCheckReport check_gradients(const std::vector<Parameter<S>*>& params,
                                const std::function<double(bool)>& loss_fn,
                                const GradCheckOptions& opts = {}) {
  return check_gradients(
      std::span<Parameter<S>* const>(params.data(), params.size()), loss_fn,
      opts);
}

}  // namespace rangefield::ad
