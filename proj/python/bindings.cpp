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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "rangefield/checkpoint.hpp"
#include "rangefield/pipeline.hpp"
#include "rangefield/range_image_io.hpp"
#include "rangefield/run_config.hpp"

namespace py = pybind11;
using namespace rangefield;

namespace {

RunConfig config_from_dict(const py::dict& overrides) {
  RunConfig cfg;
  for (const auto& item : overrides) {
    const std::string key = py::str(item.first);
    const std::string value = py::str(item.second);
    cfg.apply_override(key + "=" + value);
  }
  cfg.validate();
  set_num_threads(cfg.threads);
  return cfg;
}

std::vector<LidarPoint> points_from_arrays(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& xyz,
    const py::array_t<double, py::array::c_style | py::array::forcecast>& intensity,
    const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& labels) {
  if (xyz.ndim() != 2 || xyz.shape(1) != 3)
    throw ShapeMismatch("points must be an (N, 3) array");
  const py::ssize_t n = xyz.shape(0);
  if (intensity.size() != n || labels.size() != n)
    throw ShapeMismatch("intensity/labels must have one entry per point");
  std::vector<LidarPoint> pts(static_cast<size_t>(n));
  auto x = xyz.unchecked<2>();
  auto inten = intensity.unchecked<1>();
  auto lab = labels.unchecked<1>();
  for (py::ssize_t i = 0; i < n; ++i) {
    pts[size_t(i)].x = float(x(i, 0));
    pts[size_t(i)].y = float(x(i, 1));
    pts[size_t(i)].z = float(x(i, 2));
    pts[size_t(i)].intensity = float(inten(i));
    pts[size_t(i)].label = uint16_t(lab(i));
  }
  return pts;
}

py::dict image_to_dict(const RangeImage& img) {
  const int h = img.height(), w = img.width();
  py::array_t<float> depth({h, w});
  py::array_t<float> intensity({h, w});
  py::array_t<int> labels({h, w});
  py::array_t<bool> mask({h, w});
  auto d = depth.mutable_unchecked<2>();
  auto i = intensity.mutable_unchecked<2>();
  auto l = labels.mutable_unchecked<2>();
  auto m = mask.mutable_unchecked<2>();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      d(y, x) = img.depth(y, x);
      i(y, x) = img.intensity(y, x);
      l(y, x) = img.label(y, x);
      m(y, x) = img.mask(y, x);
    }
  py::dict out;
  out["depth"] = depth;
  out["intensity"] = intensity;
  out["labels"] = labels;
  out["mask"] = mask;
  return out;
}

std::vector<Point3> cloud_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 3)
    throw ShapeMismatch("point set must be an (N, 3) array");
  std::vector<Point3> pts(static_cast<size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    pts[size_t(i)] = {r(i, 0), r(i, 1), r(i, 2)};
  return pts;
}

Mat4 pose_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.size() != 16) throw ShapeMismatch("pose must be a 4x4 array");
  Mat4 m;
  std::copy(a.data(), a.data() + 16, m.m.begin());
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Semantic neural LiDAR fields over range images";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");

  py::class_<SensorIntrinsics>(m, "SensorIntrinsics")
      .def(py::init([](int beams, int horizontal_resolution, double fov_up_deg,
                       double fov_down_deg) {
             SensorIntrinsics intr{beams, horizontal_resolution, fov_up_deg,
                                   fov_down_deg};
             intr.validate();
             return intr;
           }),
           py::arg("beams") = 64, py::arg("horizontal_resolution") = 1024,
           py::arg("fov_up_deg") = 3.0, py::arg("fov_down_deg") = -25.0)
      .def_readonly("beams", &SensorIntrinsics::beams)
      .def_readonly("horizontal_resolution",
                    &SensorIntrinsics::horizontal_resolution)
      .def_readonly("fov_up_deg", &SensorIntrinsics::fov_up_deg)
      .def_readonly("fov_down_deg", &SensorIntrinsics::fov_down_deg)
      .def_property_readonly("vertical_fov_deg",
                             &SensorIntrinsics::vertical_fov_deg)
      .def_static("semantic_kitti", &SensorIntrinsics::semantic_kitti,
                  py::arg("beams") = 64, py::arg("horiz") = 1024)
      .def_static("kitti360", &SensorIntrinsics::kitti360,
                  py::arg("beams") = 64, py::arg("horiz") = 1024);

  // -- lidar model ---------------------------------------------------------
  m.def("pixel_to_angles",
        [](double h, double w, const SensorIntrinsics& intr) {
          const auto a = pixel_to_angles(h, w, intr);
          return py::make_tuple(a.pitch_rad, a.yaw_rad);
        },
        py::arg("h"), py::arg("w"), py::arg("intrinsics"));
  m.def("angles_to_direction",
        [](double pitch, double yaw) {
          const auto d = angles_to_direction(pitch, yaw);
          return py::make_tuple(d[0], d[1], d[2]);
        },
        py::arg("pitch_rad"), py::arg("yaw_rad"));
  m.def("point_to_pixel",
        [](double x, double y, double z, const SensorIntrinsics& intr) {
          const auto p = point_to_pixel(x, y, z, intr);
          return py::make_tuple(p.h, p.w, p.depth);
        },
        py::arg("x"), py::arg("y"), py::arg("z"), py::arg("intrinsics"));

  m.def(
      "project_cloud",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& xyz,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& intensity,
         const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& labels,
         const SensorIntrinsics& intr) {
        const auto pts = points_from_arrays(xyz, intensity, labels);
        const auto res = project_cloud(pts, intr);
        py::dict out = image_to_dict(res.image);
        out["skipped"] = res.skipped;
        return out;
      },
      py::arg("xyz"), py::arg("intensity"), py::arg("labels"),
      py::arg("intrinsics"),
      "Z-buffered projection of a point cloud into a pseudo range image.");

  m.def(
      "unproject",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& depth,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& intensity,
         const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& labels,
         const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask,
         const SensorIntrinsics& intr) {
        if (depth.ndim() != 2) throw ShapeMismatch("depth must be 2-D");
        const int h = int(depth.shape(0)), w = int(depth.shape(1));
        RangeImage img(h, w);
        auto d = depth.unchecked<2>();
        auto i = intensity.unchecked<2>();
        auto l = labels.unchecked<2>();
        auto mk = mask.unchecked<2>();
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            if (mk(y, x)) img.set(y, x, d(y, x), i(y, x), uint16_t(l(y, x)));
        const auto pts = unproject(img, intr);
        py::array_t<double> out({py::ssize_t(pts.size()), py::ssize_t(5)});
        auto o = out.mutable_unchecked<2>();
        for (size_t k = 0; k < pts.size(); ++k) {
          o(py::ssize_t(k), 0) = pts[k].x;
          o(py::ssize_t(k), 1) = pts[k].y;
          o(py::ssize_t(k), 2) = pts[k].z;
          o(py::ssize_t(k), 3) = pts[k].intensity;
          o(py::ssize_t(k), 4) = pts[k].label;
        }
        return out;
      },
      py::arg("depth"), py::arg("intensity"), py::arg("labels"),
      py::arg("mask"), py::arg("intrinsics"),
      "Back-projects a range image to an (N, 5) [x y z intensity label] array.");

  // -- metrics ---------------------------------------------------------------
  m.def("chamfer",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
          const auto r = chamfer(cloud_from_array(a), cloud_from_array(b));
          py::dict out;
          out["mean"] = r.mean;
          out["sum"] = r.sum;
          return out;
        },
        py::arg("a"), py::arg("b"));
  m.def("f_score",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b,
           double tau) {
          return f_score(cloud_from_array(a), cloud_from_array(b), tau);
        },
        py::arg("a"), py::arg("b"), py::arg("tau") = 0.05);
  m.def("image_metrics",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& gt,
           const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask,
           double peak) {
          if (pred.ndim() != 2) throw ShapeMismatch("pred must be 2-D");
          const int h = int(pred.shape(0)), w = int(pred.shape(1));
          std::vector<uint8_t> m8(static_cast<size_t>(mask.size()));
          for (py::ssize_t i = 0; i < mask.size(); ++i)
            m8[size_t(i)] = mask.data()[i] ? 1 : 0;
          const auto r = image_metrics(
              std::span<const float>(pred.data(), size_t(pred.size())),
              std::span<const float>(gt.data(), size_t(gt.size())), m8, h, w,
              peak);
          py::dict out;
          out["rmse"] = r.rmse;
          out["medae"] = r.medae;
          out["psnr"] = r.psnr;
          out["ssim"] = r.ssim;
          return out;
        },
        py::arg("pred"), py::arg("gt"), py::arg("mask"), py::arg("peak"));
  m.def("segmentation_metrics",
        [](const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& gt,
           const py::array_t<bool, py::array::c_style | py::array::forcecast>& valid,
           int num_classes, int ignore_class) {
          std::vector<uint16_t> p(static_cast<size_t>(pred.size())), g(static_cast<size_t>(gt.size()));
          std::vector<uint8_t> v(static_cast<size_t>(valid.size()));
          for (py::ssize_t i = 0; i < pred.size(); ++i) {
            p[size_t(i)] = uint16_t(pred.data()[i]);
            g[size_t(i)] = uint16_t(gt.data()[i]);
            v[size_t(i)] = valid.data()[i] ? 1 : 0;
          }
          const auto r = segmentation_metrics(p, g, v, num_classes,
                                              ignore_class);
          py::dict out;
          out["pixel_accuracy"] = r.pixel_accuracy;
          out["miou"] = r.miou;
          return out;
        },
        py::arg("pred"), py::arg("gt"), py::arg("valid"),
        py::arg("num_classes"), py::arg("ignore_class") = 0);
  m.def("raydrop_metrics",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& prob,
           const py::array_t<bool, py::array::c_style | py::array::forcecast>& dropped) {
          std::vector<uint8_t> d(static_cast<size_t>(dropped.size()));
          for (py::ssize_t i = 0; i < dropped.size(); ++i)
            d[size_t(i)] = dropped.data()[i] ? 1 : 0;
          const auto r = raydrop_metrics(
              std::span<const float>(prob.data(), size_t(prob.size())), d);
          py::dict out;
          out["rmse"] = r.rmse;
          out["accuracy"] = r.accuracy;
          out["f1"] = r.f1;
          return out;
        },
        py::arg("prob"), py::arg("dropped"));

  // -- pipeline ---------------------------------------------------------------
  m.def("config_reference",
        [](const py::dict& overrides) {
          return config_from_dict(overrides).reference_text();
        },
        py::arg("overrides") = py::dict(),
        "Reference text listing every config key, value and doc line.");

  m.def(
      "synth_dataset",
      [](const std::string& out_dir, const py::dict& overrides) {
        RunConfig cfg = config_from_dict(overrides);
        const Scene scene = synth_scene(cfg.synth_config());
        std::filesystem::create_directories(out_dir);
        write_scene_dataset(scene, out_dir);
        py::dict out;
        out["frames"] = scene.frame_count();
        out["num_classes"] = scene.num_classes;
        out["beams"] = scene.intrinsics.beams;
        out["horizontal_resolution"] = scene.intrinsics.horizontal_resolution;
        return out;
      },
      py::arg("out_dir"), py::arg("overrides") = py::dict(),
      "Writes an analytic synthetic scene in the dataset layout.");

  m.def(
      "train",
      [](const py::dict& overrides) {
        RunConfig cfg = config_from_dict(overrides);
        if (cfg.dataset_dir.empty())
          throw ConfigError("overrides must set dataset.dir");
        Scene scene = assemble_scene(cfg.dataset_dir, cfg.assembly_options());
        Model<float> model = Model<float>::create(
            cfg.model_config(scene.frame_count()), scene.bounds);
        std::filesystem::create_directories(cfg.out_dir);
        const auto trace_path =
            (std::filesystem::path(cfg.out_dir) / "loss_trace.csv").string();
        const auto result = fit(scene, model, cfg.train, trace_path);
        CheckpointMeta meta{scene.intrinsics, scene.num_classes,
                            scene.ignore_class};
        const auto ckpt =
            (std::filesystem::path(cfg.out_dir) / "checkpoint.ckpt").string();
        save_checkpoint(ckpt, model, meta);
        py::dict out;
        out["checkpoint"] = ckpt;
        out["loss_trace"] = trace_path;
        if (!result.trace.empty()) {
          out["final_total"] = result.trace.back().total;
          out["final_depth"] = result.trace.back().depth;
        }
        return out;
      },
      py::arg("overrides"),
      "Fits a model to the configured scene; returns checkpoint paths.");

  m.def(
      "render",
      [](const std::string& checkpoint, const py::dict& overrides,
         py::object frame, py::object pose, py::object time,
         bool apply_raydrop_mask) {
        RunConfig cfg = config_from_dict(overrides);
        auto loaded = load_checkpoint(checkpoint);
        Scene scene = assemble_scene(cfg.dataset_dir, cfg.assembly_options());
        Mat4 target_pose;
        double target_time = 0.0;
        if (!frame.is_none()) {
          const int f = frame.cast<int>();
          target_pose = scene.scans.at(size_t(f)).pose;
          target_time = scene.scans.at(size_t(f)).timestamp;
        } else if (!pose.is_none()) {
          target_pose = pose_from_array(
              pose.cast<py::array_t<double,
                                    py::array::c_style | py::array::forcecast>>());
        } else {
          throw ConfigError("render needs frame= or pose=");
        }
        if (!time.is_none()) target_time = time.cast<double>();
        const auto rf = render_image(loaded.model, scene, target_pose,
                                     target_time, apply_raydrop_mask);
        py::dict out = image_to_dict(rf.image);
        const int h = rf.image.height(), w = rf.image.width();
        py::array_t<float> drop({h, w});
        py::array_t<int> classes({h, w});
        std::copy(rf.raydrop_prob.begin(), rf.raydrop_prob.end(),
                  drop.mutable_data());
        auto c = classes.mutable_unchecked<2>();
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            c(y, x) = rf.sem_class[size_t(y) * w + x];
        out["raydrop_prob"] = drop;
        out["classes"] = classes;
        out["time_extrapolated"] = rf.time_extrapolated;
        out["pose_in_distribution"] = rf.pose_in_distribution;
        return out;
      },
      py::arg("checkpoint"), py::arg("overrides"), py::arg("frame") = py::none(),
      py::arg("pose") = py::none(), py::arg("time") = py::none(),
      py::arg("apply_raydrop_mask") = true,
      "Renders range/intensity/semantic/drop images at a pose and time.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const py::dict& overrides) {
        RunConfig cfg = config_from_dict(overrides);
        auto loaded = load_checkpoint(checkpoint);
        Scene scene = assemble_scene(cfg.dataset_dir, cfg.assembly_options());
        const auto report = eval_scene(loaded.model, scene);
        py::dict out;
        for (const auto& [k, v] : report.values) out[py::str(k)] = v;
        return out;
      },
      py::arg("checkpoint"), py::arg("overrides"),
      "Scores every held-out frame and returns the aggregate metric dict.");
}
