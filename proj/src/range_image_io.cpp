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

#include "rangefield/range_image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace rangefield {

namespace {

constexpr char kMagic[4] = {'R', 'I', 'M', 'G'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  // Host is little-endian on every supported target.
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw TruncatedFile("truncated range image: " + path);
  return v;
}

}  // namespace

void save_range_image(const std::string& path, const RangeImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, uint32_t(img.height()));
  write_u32(os, uint32_t(img.width()));
  write_u32(os, 3);

  const size_t n = img.pixels();
  os.write(reinterpret_cast<const char*>(img.depth_data().data()),
           std::streamsize(n * sizeof(float)));
  os.write(reinterpret_cast<const char*>(img.intensity_data().data()),
           std::streamsize(n * sizeof(float)));
  std::vector<float> labels(n);
  for (size_t i = 0; i < n; ++i) labels[i] = float(img.label_data()[i]);
  os.write(reinterpret_cast<const char*>(labels.data()),
           std::streamsize(n * sizeof(float)));
  os.write(reinterpret_cast<const char*>(img.mask_data().data()),
           std::streamsize(n));
  if (!os) throw DataError("write failed: " + path);
}

RangeImage load_range_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a range image container: " + path);
  const uint32_t version = read_u32(is, path);
  if (version != kVersion)
    throw DataError("unsupported range image version in " + path);
  const uint32_t h = read_u32(is, path);
  const uint32_t w = read_u32(is, path);
  const uint32_t channels = read_u32(is, path);
  if (channels != 3)
    throw DataError("unexpected channel count in " + path);

  RangeImage img{int(h), int(w)};
  const size_t n = img.pixels();
  if (!is.read(reinterpret_cast<char*>(img.depth_data().data()),
               std::streamsize(n * sizeof(float))))
    throw TruncatedFile("truncated range image: " + path);
  if (!is.read(reinterpret_cast<char*>(img.intensity_data().data()),
               std::streamsize(n * sizeof(float))))
    throw TruncatedFile("truncated range image: " + path);
  std::vector<float> labels(n);
  if (!is.read(reinterpret_cast<char*>(labels.data()),
               std::streamsize(n * sizeof(float))))
    throw TruncatedFile("truncated range image: " + path);
  for (size_t i = 0; i < n; ++i)
    img.label_data()[i] = uint16_t(labels[i]);
  if (!is.read(reinterpret_cast<char*>(img.mask_data().data()),
               std::streamsize(n)))
    throw TruncatedFile("truncated range image: " + path);
  return img;
}

void save_npy(const std::string& path, const float* data, size_t count,
              const std::vector<size_t>& shape) {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (";
  for (size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  // Pad so that the full header is a multiple of 64 bytes, per the format.
  size_t header_len = 10 + dict.size() + 1;
  const size_t padded = (header_len + 63) / 64 * 64;
  dict.append(padded - header_len, ' ');
  dict.push_back('\n');

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  const unsigned char magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  os.write(reinterpret_cast<const char*>(magic), 8);
  const uint16_t hlen = uint16_t(dict.size());
  os.write(reinterpret_cast<const char*>(&hlen), 2);
  os.write(dict.data(), std::streamsize(dict.size()));
  os.write(reinterpret_cast<const char*>(data),
           std::streamsize(count * sizeof(float)));
  if (!os) throw DataError("write failed: " + path);
}

void save_class_map_pgm(const std::string& path,
                        std::span<const uint16_t> class_ids, int height,
                        int width) {
  if (int64_t(class_ids.size()) != int64_t(height) * width)
    throw DataError("class map size does not match " + std::to_string(height) +
                    "x" + std::to_string(width));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "P5\n" << width << " " << height << "\n255\n";
  for (uint16_t id : class_ids) {
    const uint8_t v = uint8_t(id > 255 ? 255 : id);
    os.write(reinterpret_cast<const char*>(&v), 1);
  }
}

void save_palette_json(const std::string& path, int num_classes) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "{\n";
  for (int c = 0; c < num_classes; ++c) {
    // Deterministic, well-spread hues via a Weyl sequence.
    const double hue = std::fmod(0.61803398875 * c, 1.0) * 6.0;
    const int i = int(hue);
    const double f = hue - i;
    const int q = int(255 * (1.0 - f));
    const int t = int(255 * f);
    int r = 0, g = 0, b = 0;
    switch (i % 6) {
      case 0: r = 255; g = t; break;
      case 1: r = q; g = 255; break;
      case 2: g = 255; b = t; break;
      case 3: g = q; b = 255; break;
      case 4: r = t; b = 255; break;
      default: r = 255; b = q; break;
    }
    if (c == 0) r = g = b = 0;  // ignore class renders black
    os << "  \"" << c << "\": {\"name\": \"class_" << c << "\", \"rgb\": [" << r
       << ", " << g << ", " << b << "]}" << (c + 1 < num_classes ? "," : "")
       << "\n";
  }
  os << "}\n";
}

void save_point_cloud_ply(const std::string& path,
                          std::span<const LidarPoint> points) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "ply\nformat ascii 1.0\n";
  os << "element vertex " << points.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  os << "property float intensity\nproperty ushort class\n";
  os << "end_header\n";
  char line[128];
  for (const auto& p : points) {
    std::snprintf(line, sizeof line, "%.6f %.6f %.6f %.6f %u\n", p.x, p.y, p.z,
                  p.intensity, unsigned(p.label));
    os << line;
  }
}

void save_point_cloud_bin_label(const std::string& bin_path,
                                const std::string& label_path,
                                std::span<const LidarPoint> points) {
  std::ofstream bin(bin_path, std::ios::binary);
  std::ofstream lab(label_path, std::ios::binary);
  if (!bin || !lab)
    throw DataError("cannot open point cloud outputs for writing");
  for (const auto& p : points) {
    const float xyzi[4] = {p.x, p.y, p.z, p.intensity};
    bin.write(reinterpret_cast<const char*>(xyzi), 16);
    const uint32_t l = p.label;
    lab.write(reinterpret_cast<const char*>(&l), 4);
  }
}

void save_range_image_npy(const std::string& path, const RangeImage& img) {
  const size_t n = img.pixels();
  std::vector<float> planes(4 * n);
  std::copy(img.depth_data().begin(), img.depth_data().end(), planes.begin());
  std::copy(img.intensity_data().begin(), img.intensity_data().end(),
            planes.begin() + n);
  for (size_t i = 0; i < n; ++i) {
    planes[2 * n + i] = float(img.label_data()[i]);
    planes[3 * n + i] = float(img.mask_data()[i]);
  }
  save_npy(path, planes.data(), planes.size(),
           {4, size_t(img.height()), size_t(img.width())});
}

}  // namespace rangefield
