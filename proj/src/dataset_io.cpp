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

#include "rangefield/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace rangefield {

// ---------------------------------------------------------------------------
// Mat4
// ---------------------------------------------------------------------------

Mat4 Mat4::translation(double x, double y, double z) {
  Mat4 t;
  t.m[3] = x;
  t.m[7] = y;
  t.m[11] = z;
  return t;
}

Mat4 Mat4::rotation_z(double yaw) {
  Mat4 r;
  const double c = std::cos(yaw), s = std::sin(yaw);
  r.m[0] = c;
  r.m[1] = -s;
  r.m[4] = s;
  r.m[5] = c;
  return r;
}

Mat4 Mat4::operator*(const Mat4& o) const {
  Mat4 out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += m[size_t(i * 4 + k)] * o.m[size_t(k * 4 + j)];
      out.m[size_t(i * 4 + j)] = acc;
    }
  return out;
}

std::array<double, 3> Mat4::transform_point(double x, double y,
                                            double z) const {
  return {m[0] * x + m[1] * y + m[2] * z + m[3],
          m[4] * x + m[5] * y + m[6] * z + m[7],
          m[8] * x + m[9] * y + m[10] * z + m[11]};
}

std::array<double, 3> Mat4::rotate(double x, double y, double z) const {
  return {m[0] * x + m[1] * y + m[2] * z, m[4] * x + m[5] * y + m[6] * z,
          m[8] * x + m[9] * y + m[10] * z};
}

Mat4 Mat4::rigid_inverse() const {
  Mat4 out;
  // R^T block
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.m[size_t(i * 4 + j)] = m[size_t(j * 4 + i)];
  const double tx = m[3], ty = m[7], tz = m[11];
  out.m[3] = -(out.m[0] * tx + out.m[1] * ty + out.m[2] * tz);
  out.m[7] = -(out.m[4] * tx + out.m[5] * ty + out.m[6] * tz);
  out.m[11] = -(out.m[8] * tx + out.m[9] * ty + out.m[10] * tz);
  return out;
}

bool Mat4::rotation_orthonormal(double tol) const {
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k)
        dot += m[size_t(k * 4 + i)] * m[size_t(k * 4 + j)];
      err += std::abs(dot - (i == j ? 1.0 : 0.0));
    }
  return err < tol;
}

void LidarScan::validate() const {
  if (!pose.rotation_orthonormal())
    throw DataError("scan pose rotation is not orthonormal");
}

// ---------------------------------------------------------------------------
// LearningMap
// ---------------------------------------------------------------------------

LearningMap LearningMap::identity() {
  LearningMap m;
  m.identity_ = true;
  return m;
}

LearningMap LearningMap::load(const std::string& json_path) {
  std::ifstream is(json_path);
  if (!is) throw DataError("cannot open learning map: " + json_path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw DataError("bad learning map json: " + std::string(e.what()));
  }
  LearningMap m;
  for (auto it = j.begin(); it != j.end(); ++it)
    m.table_[uint16_t(std::stoi(it.key()))] = uint16_t(it.value().get<int>());
  return m;
}

// ---------------------------------------------------------------------------
// Scan loading
// ---------------------------------------------------------------------------

namespace {

std::vector<char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("cannot open: " + path);
  const std::streamsize size = is.tellg();
  is.seekg(0);
  std::vector<char> buf(static_cast<size_t>(size));
  if (size > 0 && !is.read(buf.data(), size))
    throw TruncatedFile("short read: " + path);
  return buf;
}

}  // namespace

LidarScan load_scan(const std::string& bin_path, const std::string& label_path,
                    const Mat4& pose, double timestamp,
                    const LearningMap& map) {
  const auto bin = read_file(bin_path);
  if (bin.size() % 16 != 0)
    throw TruncatedFile(bin_path + ": size " + std::to_string(bin.size()) +
                        " is not a multiple of 16 bytes");
  const size_t n = bin.size() / 16;

  const auto lab = read_file(label_path);
  if (lab.size() % 4 != 0)
    throw TruncatedFile(label_path + ": size " + std::to_string(lab.size()) +
                        " is not a multiple of 4 bytes");
  if (lab.size() / 4 != n)
    throw SizeMismatch(bin_path + " has " + std::to_string(n) + " points but " +
                       label_path + " has " + std::to_string(lab.size() / 4) +
                       " labels");

  LidarScan scan;
  scan.timestamp = timestamp;
  scan.pose = pose;
  scan.points.resize(n);
  const float* f = reinterpret_cast<const float*>(bin.data());
  const uint32_t* l = reinterpret_cast<const uint32_t*>(lab.data());
  for (size_t i = 0; i < n; ++i) {
    LidarPoint& p = scan.points[i];
    p.x = f[4 * i + 0];
    p.y = f[4 * i + 1];
    p.z = f[4 * i + 2];
    p.intensity = f[4 * i + 3];
    p.label = map.remap(uint16_t(l[i] & 0xFFFFu));
  }
  scan.validate();
  return scan;
}

// ---------------------------------------------------------------------------
// Scene assembly
// ---------------------------------------------------------------------------

namespace {

std::vector<Mat4> load_poses(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open poses: " + path);
  std::vector<Mat4> poses;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Mat4 p;
    for (int i = 0; i < 12; ++i)
      if (!(ls >> p.m[size_t(i)]))
        throw DataError("bad pose row " + std::to_string(poses.size()) +
                        " in " + path);
    poses.push_back(p);
  }
  return poses;
}

std::optional<Mat4> load_calib_tr(const std::string& path) {
  std::ifstream is(path);
  if (!is) return std::nullopt;
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("Tr:", 0) != 0) continue;
    std::istringstream ls(line.substr(3));
    Mat4 tr;
    for (int i = 0; i < 12; ++i)
      if (!(ls >> tr.m[size_t(i)])) throw DataError("bad Tr row in " + path);
    return tr;
  }
  return std::nullopt;
}

std::vector<double> load_times(const std::string& path) {
  std::ifstream is(path);
  std::vector<double> out;
  if (!is) return out;
  double t;
  while (is >> t) out.push_back(t);
  return out;
}

std::string frame_name(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", idx);
  return buf;
}

void finalize_scene(Scene& scene, double bounds_expansion) {
  // Project every scan and fit spacetime bounds over world-frame returns.
  BoundsAccumulator acc;
  scene.images.clear();
  scene.images.reserve(scene.scans.size());
  for (auto& scan : scene.scans) {
    scene.images.push_back(project_cloud(scan.points, scene.intrinsics).image);
    acc.add_time(scan.timestamp);
    for (const auto& p : scan.points) {
      const auto w = scan.pose.transform_point(p.x, p.y, p.z);
      acc.add_point(w[0], w[1], w[2]);
    }
  }
  scene.bounds = acc.finalize(bounds_expansion);

  scene.train_indices.clear();
  scene.test_indices.clear();
  for (int i = 0; i < scene.frame_count(); ++i) {
    if (i % 10 == 0)
      scene.test_indices.push_back(i);
    else
      scene.train_indices.push_back(i);
  }
}

}  // namespace

Scene assemble_scene(const std::string& sequence_dir,
                     const SceneAssemblyOptions& opts) {
  Scene scene;
  scene.intrinsics = opts.intrinsics;
  scene.num_classes = opts.num_classes;
  scene.ignore_class = opts.ignore_class;

  LearningMap map = opts.learning_map_path.empty()
                        ? LearningMap::identity()
                        : LearningMap::load(opts.learning_map_path);

  // A synthetic sidecar overrides sensor and class configuration so that
  // generated datasets round-trip without extra flags.
  const fs::path meta_path = fs::path(sequence_dir) / "meta.json";
  if (fs::exists(meta_path)) {
    std::ifstream is(meta_path);
    nlohmann::json j;
    is >> j;
    if (j.contains("intrinsics")) {
      const auto& ji = j["intrinsics"];
      scene.intrinsics.beams = ji.value("beams", scene.intrinsics.beams);
      scene.intrinsics.horizontal_resolution =
          ji.value("horizontal_resolution",
                   scene.intrinsics.horizontal_resolution);
      scene.intrinsics.fov_up_deg =
          ji.value("fov_up_deg", scene.intrinsics.fov_up_deg);
      scene.intrinsics.fov_down_deg =
          ji.value("fov_down_deg", scene.intrinsics.fov_down_deg);
    }
    scene.num_classes = j.value("num_classes", scene.num_classes);
    scene.ignore_class = j.value("ignore_class", scene.ignore_class);
    if (j.value("identity_label_map", false)) map = LearningMap::identity();
  }
  scene.intrinsics.validate();

  const auto poses = load_poses((fs::path(sequence_dir) / "poses.txt").string());
  const auto calib =
      load_calib_tr((fs::path(sequence_dir) / "calib.txt").string());
  const auto times =
      load_times((fs::path(sequence_dir) / "times.txt").string());

  for (int k = 0; k < opts.count; ++k) {
    const int idx = opts.start_frame + k;
    const auto bin =
        fs::path(sequence_dir) / "velodyne" / (frame_name(idx) + ".bin");
    const auto lab =
        fs::path(sequence_dir) / "labels" / (frame_name(idx) + ".label");
    if (!fs::exists(bin))
      throw MissingFrame("missing frame " + frame_name(idx) + ": " +
                         bin.string());
    if (!fs::exists(lab))
      throw MissingFrame("missing labels for frame " + frame_name(idx) + ": " +
                         lab.string());
    if (size_t(idx) >= poses.size())
      throw MissingFrame("no pose row for frame " + frame_name(idx));

    // KITTI odometry poses transform camera points to world; composing with
    // Tr (velodyne -> camera) yields the sensor-to-world pose.
    Mat4 pose = poses[size_t(idx)];
    if (calib) pose = pose * *calib;
    const double t =
        size_t(idx) < times.size() ? times[size_t(idx)] : idx * opts.frame_period;
    scene.scans.push_back(
        load_scan(bin.string(), lab.string(), pose, t, map));
  }

  finalize_scene(scene, opts.bounds_expansion);
  return scene;
}

void write_scene_dataset(const Scene& scene, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "velodyne");
  fs::create_directories(fs::path(dir) / "labels");

  std::ofstream poses(fs::path(dir) / "poses.txt");
  std::ofstream times(fs::path(dir) / "times.txt");
  poses.precision(12);
  times.precision(9);
  for (int i = 0; i < scene.frame_count(); ++i) {
    const auto& scan = scene.scans[size_t(i)];
    for (int r = 0; r < 12; ++r)
      poses << scan.pose.m[size_t(r)] << (r == 11 ? '\n' : ' ');
    times << scan.timestamp << '\n';

    std::ofstream bin(fs::path(dir) / "velodyne" / (frame_name(i) + ".bin"),
                      std::ios::binary);
    std::ofstream lab(fs::path(dir) / "labels" / (frame_name(i) + ".label"),
                      std::ios::binary);
    for (const auto& p : scan.points) {
      const float xyzi[4] = {p.x, p.y, p.z, p.intensity};
      bin.write(reinterpret_cast<const char*>(xyzi), 16);
      const uint32_t l = p.label;
      lab.write(reinterpret_cast<const char*>(&l), 4);
    }
  }

  nlohmann::json meta;
  meta["intrinsics"] = {
      {"beams", scene.intrinsics.beams},
      {"horizontal_resolution", scene.intrinsics.horizontal_resolution},
      {"fov_up_deg", scene.intrinsics.fov_up_deg},
      {"fov_down_deg", scene.intrinsics.fov_down_deg}};
  meta["num_classes"] = scene.num_classes;
  meta["ignore_class"] = scene.ignore_class;
  meta["identity_label_map"] = true;
  std::ofstream ms(fs::path(dir) / "meta.json");
  ms << meta.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

SynthSceneConfig SynthSceneConfig::standard() {
  SynthSceneConfig cfg;
  SynthPrimitive ground;
  ground.kind = SynthPrimitive::Kind::kGroundPlane;
  ground.plane_z = -2.0;
  ground.label = 1;
  ground.reflectivity = 0.4;

  SynthPrimitive box_a;
  box_a.center = {12.0, -5.0, -0.75};
  box_a.size = {4.0, 4.0, 2.5};
  box_a.label = 2;
  box_a.reflectivity = 0.8;

  SynthPrimitive box_b;
  box_b.center = {16.0, 6.0, -0.5};
  box_b.size = {3.5, 3.5, 3.0};
  box_b.label = 3;
  box_b.reflectivity = 0.6;

  SynthPrimitive mover;
  mover.center = {18.0, 0.5, -0.9};
  mover.size = {3.0, 3.0, 2.2};
  mover.velocity = {1.0, 0.0, 0.0};
  mover.label = 4;
  mover.reflectivity = 0.9;

  cfg.primitives = {ground, box_a, box_b, mover};
  return cfg;
}

namespace {

bool intersect_plane_z(double z0, const std::array<double, 3>& o,
                       const std::array<double, 3>& d, double* t,
                       std::array<double, 3>* normal) {
  if (std::abs(d[2]) < 1e-12) return false;
  const double hit = (z0 - o[2]) / d[2];
  if (hit <= 1e-3) return false;
  *t = hit;
  *normal = {0, 0, d[2] > 0 ? -1.0 : 1.0};
  return true;
}

bool intersect_aabb(const std::array<double, 3>& lo,
                    const std::array<double, 3>& hi,
                    const std::array<double, 3>& o,
                    const std::array<double, 3>& d, double* t,
                    std::array<double, 3>* normal) {
  double t_enter = -1e30, t_exit = 1e30;
  int enter_axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[size_t(a)]) < 1e-12) {
      if (o[size_t(a)] < lo[size_t(a)] || o[size_t(a)] > hi[size_t(a)])
        return false;
      continue;
    }
    double t0 = (lo[size_t(a)] - o[size_t(a)]) / d[size_t(a)];
    double t1 = (hi[size_t(a)] - o[size_t(a)]) / d[size_t(a)];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_enter) {
      t_enter = t0;
      enter_axis = a;
    }
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return false;
  }
  if (t_enter <= 1e-3 || enter_axis < 0) return false;
  *t = t_enter;
  std::array<double, 3> n{0, 0, 0};
  n[size_t(enter_axis)] = d[size_t(enter_axis)] > 0 ? -1.0 : 1.0;
  *normal = n;
  return true;
}

}  // namespace

bool synth_trace_ray(const SynthSceneConfig& cfg,
                     const std::array<double, 3>& origin,
                     const std::array<double, 3>& dir, double time,
                     double* hit_depth, double* hit_intensity,
                     uint16_t* hit_label) {
  double best_t = cfg.max_range;
  bool hit = false;
  for (const auto& prim : cfg.primitives) {
    double t;
    std::array<double, 3> normal;
    bool ok = false;
    if (prim.kind == SynthPrimitive::Kind::kGroundPlane) {
      ok = intersect_plane_z(prim.plane_z, origin, dir, &t, &normal);
    } else {
      std::array<double, 3> c = prim.center;
      for (int a = 0; a < 3; ++a) c[size_t(a)] += prim.velocity[size_t(a)] * time;
      const std::array<double, 3> lo{c[0] - prim.size[0] / 2,
                                     c[1] - prim.size[1] / 2,
                                     c[2] - prim.size[2] / 2};
      const std::array<double, 3> hi{c[0] + prim.size[0] / 2,
                                     c[1] + prim.size[1] / 2,
                                     c[2] + prim.size[2] / 2};
      ok = intersect_aabb(lo, hi, origin, dir, &t, &normal);
    }
    if (ok && t < best_t) {
      best_t = t;
      hit = true;
      const double cosine = std::abs(dir[0] * normal[0] + dir[1] * normal[1] +
                                     dir[2] * normal[2]);
      *hit_depth = t;
      *hit_intensity = prim.reflectivity * cosine;
      *hit_label = prim.label;
    }
  }
  return hit;
}

Scene synth_scene(const SynthSceneConfig& cfg) {
  SynthSceneConfig conf = cfg;
  if (conf.primitives.empty()) conf.primitives = SynthSceneConfig::standard().primitives;
  conf.intrinsics.validate();

  Scene scene;
  scene.intrinsics = conf.intrinsics;
  scene.num_classes = conf.num_classes;
  scene.ignore_class = 0;

  const int H = conf.intrinsics.beams;
  const int W = conf.intrinsics.horizontal_resolution;
  for (int f = 0; f < conf.frames; ++f) {
    const double t = f * conf.frame_period;
    LidarScan scan;
    scan.timestamp = t;
    scan.pose = Mat4::translation(conf.sensor_speed * t, 0.0, 0.0);

    RangeImage img(H, W);
    const std::array<double, 3> origin =
        scan.pose.transform_point(0.0, 0.0, 0.0);
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        const auto ang = pixel_to_angles(h + 0.5, w + 0.5, conf.intrinsics);
        const auto dir_sensor = angles_to_direction(ang.pitch_rad, ang.yaw_rad);
        const auto dir = scan.pose.rotate(dir_sensor[0], dir_sensor[1],
                                          dir_sensor[2]);
        double depth, intensity;
        uint16_t label;
        if (synth_trace_ray(conf, origin, dir, t, &depth, &intensity, &label))
          img.set(h, w, float(depth), float(intensity), label);
      }
    }
    scan.points = unproject(img, conf.intrinsics);
    scene.scans.push_back(std::move(scan));
    scene.images.push_back(std::move(img));
  }

  // Bounds over world returns, as for loaded scenes.
  BoundsAccumulator acc;
  for (const auto& scan : scene.scans) {
    acc.add_time(scan.timestamp);
    for (const auto& p : scan.points) {
      const auto w = scan.pose.transform_point(p.x, p.y, p.z);
      acc.add_point(w[0], w[1], w[2]);
    }
  }
  scene.bounds = acc.finalize(conf.bounds_expansion);
  for (int i = 0; i < scene.frame_count(); ++i) {
    if (i % 10 == 0)
      scene.test_indices.push_back(i);
    else
      scene.train_indices.push_back(i);
  }
  return scene;
}

}  // namespace rangefield
