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

#include "rangefield/lidar_model.hpp"
#include "rangefield/model.hpp"

namespace rangefield {

// Single-file binary checkpoint:
//   magic "RFCK" | u32 version | u64 json_len | json (model + sensor config)
//   u32 tensor_count | per tensor: u32 name_len, name, u32 rows, u32 cols,
//   f32 data. Optimizer moments ride along as "adam_m/..." / "adam_v/..."
//   tensors so training can resume exactly.

struct CheckpointMeta {
  SensorIntrinsics intrinsics;
  int num_classes = 20;
  int ignore_class = 0;
};

void save_checkpoint(const std::string& path, Model<float>& model,
                     const CheckpointMeta& meta,
                     bool include_optimizer_state = true);

struct LoadedCheckpoint {
  Model<float> model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace rangefield
