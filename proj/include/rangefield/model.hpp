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
#include <vector>

#include "rangefield/feature_fields.hpp"
#include "rangefield/neural_field.hpp"
#include "rangefield/semantic_encoder.hpp"

namespace rangefield {

/// Feature ablation switches, cumulative:
///  - kGridOnly: global planar-grid features only; semantics composited
///    with the geometry weights, no local encoder.
///  - kSemanticField: adds the separate semantic density branch.
///  - kFull: adds the local CNN encoder features.
enum class AblationMode { kGridOnly, kSemanticField, kFull };

inline AblationMode ablation_from_string(const std::string& s) {
  if (s == "grid_only") return AblationMode::kGridOnly;
  if (s == "semantic_field") return AblationMode::kSemanticField;
  if (s == "full") return AblationMode::kFull;
  throw ConfigError("unknown ablation mode '" + s +
                    "' (expected grid_only|semantic_field|full)");
}

inline std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::kGridOnly: return "grid_only";
    case AblationMode::kSemanticField: return "semantic_field";
    default: return "full";
  }
}

struct ModelConfig {
  PlanarFieldConfig planar;
  HashGridConfig grid;
  ConvEncoderConfig encoder;
  FieldHeadsConfig heads;
  AblationMode ablation = AblationMode::kFull;
  int num_samples = 768;
  double near = 0.5;
  double far = 80.0;
  // Opacity factor. With delta inside (the conventional form) the weights
  // telescope to a unit partition, which keeps composited depth, intensity
  // and drop probability inside their ranges; the delta-free variant is
  // available for comparison but its weight sums are resolution-dependent.
  bool opacity_includes_delta = true;
  double raydrop_threshold = 0.5;
  uint64_t init_seed = 1;

  bool use_local_encoder() const { return ablation == AblationMode::kFull; }
  bool use_semantic_density() const {
    return ablation != AblationMode::kGridOnly;
  }
};

template <class S>
struct Model {
  ModelConfig cfg;
  SceneBounds bounds;
  PlanarField<S> planar;
  HashGridField<S> grid;
  ConvEncoder<S> encoder;
  FieldHeads<S> heads;

  static Model create(const ModelConfig& cfg, const SceneBounds& bounds) {
    Model m;
    m.cfg = cfg;
    m.bounds = bounds;
    Pcg32 rng(mix_seed(cfg.init_seed, 0xfeed));
    m.planar = PlanarField<S>::create(cfg.planar, rng);
    m.grid = HashGridField<S>::create(cfg.grid, rng);
    m.encoder = ConvEncoder<S>(cfg.encoder, rng);
    m.heads = FieldHeads<S>(cfg.heads, m.field_dim(), rng);
    return m;
  }

  int field_dim() const {
    int dim = planar.feature_dim() + grid.feature_dim();
    if (cfg.use_local_encoder()) dim += encoder.out_channels();
    return dim;
  }

  std::vector<ad::Parameter<S>*> params() {
    std::vector<ad::Parameter<S>*> out;
    planar.collect_params(out);
    grid.collect_params(out);
    if (cfg.use_local_encoder()) encoder.collect_params(out);
    heads.collect_params(out);
    return out;
  }

  /// Field tables learn at lr_fields; MLPs and the encoder follow the
  /// optimizer's global rate.
  void set_learning_rates(double lr_fields) {
    std::vector<ad::Parameter<S>*> tables;
    planar.collect_params(tables);
    grid.collect_params(tables);
    for (auto* p : tables) p->lr_override = lr_fields;
  }
};

}  // namespace rangefield
