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

#include "rangefield/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace rangefield {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'R', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

json config_to_json(const ModelConfig& c) {
  json j;
  j["planar"] = {{"level_resolutions", c.planar.level_resolutions},
                 {"channels", c.planar.channels},
                 {"temporal_resolution", c.planar.temporal_resolution},
                 {"init_scale", c.planar.init_scale}};
  j["grid"] = {{"num_levels", c.grid.num_levels},
               {"min_resolution", c.grid.min_resolution},
               {"max_resolution", c.grid.max_resolution},
               {"channels", c.grid.channels},
               {"log2_table_size", c.grid.log2_table_size},
               {"temporal_resolution", c.grid.temporal_resolution},
               {"init_scale", c.grid.init_scale}};
  j["encoder"] = {{"stem_convs", c.encoder.stem_convs},
                  {"blocks_per_stage", c.encoder.blocks_per_stage},
                  {"stage_widths", c.encoder.stage_widths},
                  {"out_channels", c.encoder.out_channels},
                  {"depth_scale", c.encoder.depth_scale}};
  j["heads"] = {{"hidden_dim", c.heads.hidden_dim},
                {"layers", c.heads.layers},
                {"geo_feature_dim", c.heads.geo_feature_dim},
                {"view_embed_levels", c.heads.view_embed_levels},
                {"num_classes", c.heads.num_classes}};
  j["ablation"] = to_string(c.ablation);
  j["num_samples"] = c.num_samples;
  j["near"] = c.near;
  j["far"] = c.far;
  j["opacity_includes_delta"] = c.opacity_includes_delta;
  j["raydrop_threshold"] = c.raydrop_threshold;
  j["init_seed"] = c.init_seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  const auto& p = j.at("planar");
  c.planar.level_resolutions = p.at("level_resolutions").get<std::vector<int>>();
  c.planar.channels = p.at("channels");
  c.planar.temporal_resolution = p.at("temporal_resolution");
  c.planar.init_scale = p.at("init_scale");
  const auto& g = j.at("grid");
  c.grid.num_levels = g.at("num_levels");
  c.grid.min_resolution = g.at("min_resolution");
  c.grid.max_resolution = g.at("max_resolution");
  c.grid.channels = g.at("channels");
  c.grid.log2_table_size = g.at("log2_table_size");
  c.grid.temporal_resolution = g.at("temporal_resolution");
  c.grid.init_scale = g.at("init_scale");
  const auto& e = j.at("encoder");
  c.encoder.stem_convs = e.at("stem_convs");
  c.encoder.blocks_per_stage = e.at("blocks_per_stage");
  c.encoder.stage_widths = e.at("stage_widths");
  c.encoder.out_channels = e.at("out_channels");
  c.encoder.depth_scale = e.at("depth_scale");
  const auto& h = j.at("heads");
  c.heads.hidden_dim = h.at("hidden_dim");
  c.heads.layers = h.at("layers");
  c.heads.geo_feature_dim = h.at("geo_feature_dim");
  c.heads.view_embed_levels = h.at("view_embed_levels");
  c.heads.num_classes = h.at("num_classes");
  c.ablation = ablation_from_string(j.at("ablation"));
  c.num_samples = j.at("num_samples");
  c.near = j.at("near");
  c.far = j.at("far");
  c.opacity_includes_delta = j.at("opacity_includes_delta");
  c.raydrop_threshold = j.at("raydrop_threshold");
  c.init_seed = j.at("init_seed");
  return c;
}

void write_tensor(std::ofstream& os, const std::string& name, int rows,
                  int cols, const float* data) {
  const uint32_t name_len = uint32_t(name.size());
  os.write(reinterpret_cast<const char*>(&name_len), 4);
  os.write(name.data(), name_len);
  const uint32_t r = uint32_t(rows), c = uint32_t(cols);
  os.write(reinterpret_cast<const char*>(&r), 4);
  os.write(reinterpret_cast<const char*>(&c), 4);
  os.write(reinterpret_cast<const char*>(data),
           std::streamsize(size_t(rows) * cols * sizeof(float)));
}

}  // namespace

void save_checkpoint(const std::string& path, Model<float>& model,
                     const CheckpointMeta& meta, bool include_optimizer_state) {
  json j;
  j["model"] = config_to_json(model.cfg);
  j["bounds"] = {{"xyz_min", model.bounds.xyz_min},
                 {"xyz_max", model.bounds.xyz_max},
                 {"t_min", model.bounds.t_min},
                 {"t_max", model.bounds.t_max}};
  j["sensor"] = {{"beams", meta.intrinsics.beams},
                 {"horizontal_resolution", meta.intrinsics.horizontal_resolution},
                 {"fov_up_deg", meta.intrinsics.fov_up_deg},
                 {"fov_down_deg", meta.intrinsics.fov_down_deg}};
  j["num_classes"] = meta.num_classes;
  j["ignore_class"] = meta.ignore_class;

  auto params = model.params();
  json steps = json::object();
  if (include_optimizer_state)
    for (auto* p : params) steps[p->name] = p->adam_step_count;
  j["adam_steps"] = steps;

  const std::string blob = j.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  os.write(reinterpret_cast<const char*>(&kVersion), 4);
  const uint64_t blob_len = blob.size();
  os.write(reinterpret_cast<const char*>(&blob_len), 8);
  os.write(blob.data(), std::streamsize(blob.size()));

  uint32_t count = uint32_t(params.size());
  if (include_optimizer_state) {
    for (auto* p : params)
      if (!p->adam_m.empty()) count += 2;
  }
  os.write(reinterpret_cast<const char*>(&count), 4);
  for (auto* p : params) {
    write_tensor(os, p->name, p->rows, p->cols, p->data.data());
    if (include_optimizer_state && !p->adam_m.empty()) {
      write_tensor(os, "adam_m/" + p->name, p->rows, p->cols, p->adam_m.data());
      write_tensor(os, "adam_v/" + p->name, p->rows, p->cols, p->adam_v.data());
    }
  }
  if (!os) throw DataError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version in " + path);
  uint64_t blob_len = 0;
  is.read(reinterpret_cast<char*>(&blob_len), 8);
  std::string blob(blob_len, '\0');
  if (!is.read(blob.data(), std::streamsize(blob_len)))
    throw TruncatedFile("truncated checkpoint: " + path);
  json j = json::parse(blob);

  SceneBounds bounds;
  bounds.xyz_min = j.at("bounds").at("xyz_min");
  bounds.xyz_max = j.at("bounds").at("xyz_max");
  bounds.t_min = j.at("bounds").at("t_min");
  bounds.t_max = j.at("bounds").at("t_max");

  LoadedCheckpoint out{Model<float>::create(config_from_json(j.at("model")),
                                            bounds),
                       CheckpointMeta{}};
  const auto& s = j.at("sensor");
  out.meta.intrinsics.beams = s.at("beams");
  out.meta.intrinsics.horizontal_resolution = s.at("horizontal_resolution");
  out.meta.intrinsics.fov_up_deg = s.at("fov_up_deg");
  out.meta.intrinsics.fov_down_deg = s.at("fov_down_deg");
  out.meta.num_classes = j.at("num_classes");
  out.meta.ignore_class = j.at("ignore_class");

  auto params = out.model.params();
  std::unordered_map<std::string, ad::Parameter<float>*> by_name;
  for (auto* p : params) by_name[p->name] = p;
  const auto adam_steps = j.at("adam_steps");

  uint32_t count = 0;
  is.read(reinterpret_cast<char*>(&count), 4);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = 0, rows = 0, cols = 0;
    if (!is.read(reinterpret_cast<char*>(&name_len), 4))
      throw TruncatedFile("truncated checkpoint: " + path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    is.read(reinterpret_cast<char*>(&rows), 4);
    is.read(reinterpret_cast<char*>(&cols), 4);
    std::vector<float> data(size_t(rows) * cols);
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 std::streamsize(data.size() * sizeof(float))))
      throw TruncatedFile("truncated checkpoint tensor " + name);

    std::string base = name;
    enum { kData, kM, kV } slot = kData;
    if (name.rfind("adam_m/", 0) == 0) {
      base = name.substr(7);
      slot = kM;
    } else if (name.rfind("adam_v/", 0) == 0) {
      base = name.substr(7);
      slot = kV;
    }
    auto it = by_name.find(base);
    if (it == by_name.end())
      throw DataError("checkpoint tensor " + name +
                      " does not match the model configuration");
    ad::Parameter<float>* p = it->second;
    if (p->rows != int(rows) || p->cols != int(cols))
      throw DataError("checkpoint tensor " + name + " has shape (" +
                      std::to_string(rows) + "x" + std::to_string(cols) +
                      "), model expects (" + std::to_string(p->rows) + "x" +
                      std::to_string(p->cols) + ")");
    if (slot == kData)
      p->data = std::move(data);
    else if (slot == kM)
      p->adam_m = std::move(data);
    else
      p->adam_v = std::move(data);
    if (slot == kData && adam_steps.contains(p->name))
      p->adam_step_count = adam_steps.at(p->name).get<int64_t>();
  }
  return out;
}

}  // namespace rangefield
