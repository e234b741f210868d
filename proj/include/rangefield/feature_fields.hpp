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

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rangefield/ad/tape.hpp"
#include "rangefield/common.hpp"
#include "rangefield/errors.hpp"

namespace rangefield {

// ---------------------------------------------------------------------------
// Scene normalization
// ---------------------------------------------------------------------------

/// Axis-aligned spacetime box mapping world (x, y, z, t) into [0,1]^4.
struct SceneBounds {
  std::array<double, 3> xyz_min{0, 0, 0};
  std::array<double, 3> xyz_max{1, 1, 1};
  double t_min = 0.0;
  double t_max = 1.0;

  void validate() const {
    for (int a = 0; a < 3; ++a)
      if (!(xyz_max[a] > xyz_min[a]))
        throw BadBounds("degenerate scene bounds on axis " + std::to_string(a));
    if (!(t_max > t_min)) throw BadBounds("degenerate time range");
  }

  std::array<double, 4> normalize(double x, double y, double z,
                                  double t) const {
    return {(x - xyz_min[0]) / (xyz_max[0] - xyz_min[0]),
            (y - xyz_min[1]) / (xyz_max[1] - xyz_min[1]),
            (z - xyz_min[2]) / (xyz_max[2] - xyz_min[2]),
            (t - t_min) / (t_max - t_min)};
  }

  std::array<double, 3> extent() const {
    return {xyz_max[0] - xyz_min[0], xyz_max[1] - xyz_min[1],
            xyz_max[2] - xyz_min[2]};
  }
};

/// Streaming min/max accumulator so whole scenes never need to be
/// materialized as one point list.
class BoundsAccumulator {
 public:
  void add_point(double x, double y, double z) {
    lo_[0] = std::min(lo_[0], x);
    lo_[1] = std::min(lo_[1], y);
    lo_[2] = std::min(lo_[2], z);
    hi_[0] = std::max(hi_[0], x);
    hi_[1] = std::max(hi_[1], y);
    hi_[2] = std::max(hi_[2], z);
    has_points_ = true;
  }

  void add_time(double t) {
    t_lo_ = std::min(t_lo_, t);
    t_hi_ = std::max(t_hi_, t);
    has_time_ = true;
  }

  /// Expands the box by `expansion` x extent per side. A box without
  /// positive extent on every spatial axis is rejected.
  SceneBounds finalize(double expansion) const;

 private:
  std::array<double, 3> lo_{1e300, 1e300, 1e300};
  std::array<double, 3> hi_{-1e300, -1e300, -1e300};
  double t_lo_ = 1e300, t_hi_ = -1e300;
  bool has_points_ = false;
  bool has_time_ = false;
};

inline SceneBounds BoundsAccumulator::finalize(double expansion) const {
  if (!has_points_) throw EmptyScene("no points to fit bounds over");
  SceneBounds b;
  for (int a = 0; a < 3; ++a) {
    const double extent = hi_[a] - lo_[a];
    b.xyz_min[a] = lo_[a] - expansion * extent;
    b.xyz_max[a] = hi_[a] + expansion * extent;
  }
  b.t_min = has_time_ ? t_lo_ : 0.0;
  b.t_max = has_time_ ? t_hi_ : 0.0;
  if (!(b.t_max > b.t_min)) {
    // Single-timestamp scenes get a symmetric pad so normalization is finite.
    b.t_min -= 0.5;
    b.t_max += 0.5;
  }
  b.validate();
  return b;
}

inline SceneBounds fit_bounds(std::span<const std::array<double, 3>> points,
                              std::span<const double> timestamps,
                              double expansion) {
  BoundsAccumulator acc;
  for (const auto& p : points) acc.add_point(p[0], p[1], p[2]);
  for (double t : timestamps) acc.add_time(t);
  return acc.finalize(expansion);
}

// ---------------------------------------------------------------------------
// Factored multi-plane field (static xy/xz/yz + dynamic xt/yt/zt)
// ---------------------------------------------------------------------------

struct PlanarFieldConfig {
  std::vector<int> level_resolutions{64, 128};
  int channels = 8;
  int temporal_resolution = 50;
  double init_scale = 1e-4;
};

// Plane a/b axes in 4D (x,y,z,t) order; the first three are static.
inline constexpr int kPlaneAxes[6][2] = {{0, 1}, {0, 2}, {1, 2},
                                         {0, 3}, {1, 3}, {2, 3}};
inline constexpr const char* kPlaneNames[6] = {"xy", "xz", "yz",
                                               "xt", "yt", "zt"};

template <class S>
struct PlanarField {
  struct Level {
    int spatial_res = 0;
    int temporal_res = 0;
    // Six planes, each (res_a * res_b) x channels.
    std::array<ad::Parameter<S>, 6> planes;

    int res_for_axis(int axis) const {
      return axis == 3 ? temporal_res : spatial_res;
    }
  };

  std::vector<Level> levels;
  int channels = 0;

  /// Per level: static product (C) then dynamic product (C).
  int feature_dim() const { return int(levels.size()) * 2 * channels; }

  static PlanarField create(const PlanarFieldConfig& cfg, Pcg32& rng) {
    PlanarField f;
    f.channels = cfg.channels;
    for (size_t li = 0; li < cfg.level_resolutions.size(); ++li) {
      Level lvl;
      lvl.spatial_res = cfg.level_resolutions[li];
      lvl.temporal_res = std::max(2, cfg.temporal_resolution);
      for (int p = 0; p < 6; ++p) {
        const int ra = lvl.res_for_axis(kPlaneAxes[p][0]);
        const int rb = lvl.res_for_axis(kPlaneAxes[p][1]);
        lvl.planes[p] = ad::Parameter<S>(
            "planar/l" + std::to_string(li) + "/" + kPlaneNames[p], ra * rb,
            cfg.channels);
        lvl.planes[p].fill_uniform(rng, -cfg.init_scale, cfg.init_scale);
      }
      f.levels.push_back(std::move(lvl));
    }
    return f;
  }

  void collect_params(std::vector<ad::Parameter<S>*>& out) {
    for (auto& lvl : levels)
      for (auto& p : lvl.planes) out.push_back(&p);
  }
};

// ---------------------------------------------------------------------------
// Multi-level hash grid (static xyz + dynamic xyt/xzt/yzt)
// ---------------------------------------------------------------------------

struct HashGridConfig {
  int num_levels = 8;
  int min_resolution = 16;
  int max_resolution = 512;
  int channels = 2;
  int log2_table_size = 19;
  int temporal_resolution = 50;
  double init_scale = 1e-4;
};

// Volume axes in 4D (x,y,z,t) order; volume 0 is the static xyz grid.
inline constexpr int kVolumeAxes[4][3] = {
    {0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
inline constexpr const char* kVolumeNames[4] = {"xyz", "xyt", "xzt", "yzt"};
inline constexpr uint32_t kHashPrimes[4] = {1u, 2654435761u, 805459861u,
                                            3674653429u};

/// Lattice cell -> table slot. Below the injectivity threshold (dense size
/// fits the table) indexing is the identity flattening; above it the
/// coordinate-prime XOR hash compresses the lattice into the table.
inline uint32_t hash_index(const std::array<int, 3>& coords,
                           const std::array<int, 3>& axes,
                           const std::array<int, 3>& res,
                           uint32_t table_size) {
  const int64_t dense =
      int64_t(res[0]) * res[1] * res[2];
  if (dense <= int64_t(table_size)) {
    return uint32_t(coords[0] +
                    int64_t(res[0]) * (coords[1] + int64_t(res[1]) * coords[2]));
  }
  uint32_t h = 0;
  for (int a = 0; a < 3; ++a)
    h ^= uint32_t(coords[a]) * kHashPrimes[axes[a]];
  return h % table_size;
}

template <class S>
struct HashGridField {
  struct Level {
    int spatial_res = 0;
    int temporal_res = 0;
    std::array<ad::Parameter<S>, 4> tables;
    std::array<uint32_t, 4> table_rows{};

    int res_for_axis(int axis) const {
      return axis == 3 ? temporal_res : spatial_res;
    }
  };

  std::vector<Level> levels;
  int channels = 0;

  /// Per level: four volumes, each contributing `channels` dims.
  int feature_dim() const { return int(levels.size()) * 4 * channels; }

  static std::vector<int> level_resolutions(const HashGridConfig& cfg) {
    std::vector<int> out;
    if (cfg.num_levels == 1) {
      out.push_back(cfg.min_resolution);
      return out;
    }
    const double ratio = std::pow(
        double(cfg.max_resolution) / cfg.min_resolution,
        1.0 / double(cfg.num_levels - 1));
    for (int l = 0; l < cfg.num_levels; ++l) {
      const int r = int(std::round(cfg.min_resolution * std::pow(ratio, l)));
      out.push_back(std::max(2, r));
    }
    return out;
  }

  static HashGridField create(const HashGridConfig& cfg, Pcg32& rng) {
    HashGridField f;
    f.channels = cfg.channels;
    const uint32_t table_size = uint32_t(1) << cfg.log2_table_size;
    const auto resolutions = level_resolutions(cfg);
    for (size_t li = 0; li < resolutions.size(); ++li) {
      Level lvl;
      lvl.spatial_res = resolutions[li];
      lvl.temporal_res = std::max(2, cfg.temporal_resolution);
      for (int v = 0; v < 4; ++v) {
        int64_t dense = 1;
        for (int a = 0; a < 3; ++a)
          dense *= lvl.res_for_axis(kVolumeAxes[v][a]);
        lvl.table_rows[v] = uint32_t(std::min<int64_t>(dense, table_size));
        lvl.tables[v] = ad::Parameter<S>(
            "grid/l" + std::to_string(li) + "/" + kVolumeNames[v],
            int(lvl.table_rows[v]), cfg.channels);
        lvl.tables[v].fill_uniform(rng, -cfg.init_scale, cfg.init_scale);
      }
      f.levels.push_back(std::move(lvl));
    }
    return f;
  }

  void collect_params(std::vector<ad::Parameter<S>*>& out) {
    for (auto& lvl : levels)
      for (auto& t : lvl.tables) out.push_back(&t);
  }
};

// ---------------------------------------------------------------------------
// Differentiable sampling
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void validate_queries(ad::Value<S> q) {
  if (q.cols() != 4)
    throw ShapeMismatch("field queries must be (n x 4), got (" +
                        std::to_string(q.rows()) + "x" +
                        std::to_string(q.cols()) + ")");
  const S* p = q.data().data();
  for (int64_t i = 0; i < q.size(); ++i)
    if (!(p[i] >= S(-1e-6) && p[i] <= S(1) + S(1e-6)))
      throw OutOfBounds("normalized query component " + std::to_string(p[i]) +
                        " outside [0,1]");
}

/// Align-corners lattice coordinate: node index plus fraction.
template <class S>
inline void lattice_coord(S q, int res, int& i0, S& frac) {
  S u = q * S(res - 1);
  if (u < S(0)) u = S(0);
  const S max_u = S(res - 1);
  if (u > max_u) u = max_u;
  i0 = int(u);
  if (i0 > res - 2) i0 = res - 2;
  frac = u - S(i0);
}

}  // namespace detail

/// Bilinear sampling of all six planes per level; static and dynamic
/// triplets are combined by elementwise product and concatenated as
/// [static | dynamic] per level. Differentiable w.r.t. plane entries and q.
template <class S>
ad::Value<S> sample_planar(ad::Tape<S>& tape, PlanarField<S>& field,
                           ad::Value<S> q) {
  detail::validate_queries(q);
  const int n = q.rows();
  const int C = field.channels;
  const int L = int(field.levels.size());
  ad::Value<S> out = tape.alloc(n, 2 * C * L, tape.grad_enabled());

  struct Stencil {
    int i0, j0;
    S fu, fv;
  };
  // [sample][level*6 + plane]
  auto stencils = std::make_shared<std::vector<Stencil>>(size_t(n) * L * 6);
  // Cached per-plane interpolated vectors, [sample][level*6+plane][c]
  auto plane_vals =
      std::make_shared<std::vector<S>>(size_t(n) * L * 6 * C);

  const S* pq = q.data().data();
  S* po = out.data().data();

  for (int s = 0; s < n; ++s) {
    const S* qs = pq + int64_t(s) * 4;
    S* orow = po + int64_t(s) * 2 * C * L;
    for (int l = 0; l < L; ++l) {
      auto& lvl = field.levels[size_t(l)];
      S* static_out = orow + int64_t(l) * 2 * C;
      S* dynamic_out = static_out + C;
      for (int c = 0; c < C; ++c) {
        static_out[c] = S(1);
        dynamic_out[c] = S(1);
      }
      for (int p = 0; p < 6; ++p) {
        const int ra = lvl.res_for_axis(kPlaneAxes[p][0]);
        const int rb = lvl.res_for_axis(kPlaneAxes[p][1]);
        Stencil st;
        detail::lattice_coord(qs[kPlaneAxes[p][0]], ra, st.i0, st.fu);
        detail::lattice_coord(qs[kPlaneAxes[p][1]], rb, st.j0, st.fv);
        (*stencils)[(size_t(s) * L + l) * 6 + p] = st;

        const S* tbl = lvl.planes[size_t(p)].data.data();
        const S w00 = (S(1) - st.fu) * (S(1) - st.fv);
        const S w01 = (S(1) - st.fu) * st.fv;
        const S w10 = st.fu * (S(1) - st.fv);
        const S w11 = st.fu * st.fv;
        const int64_t r00 = (int64_t(st.i0) * rb + st.j0) * C;
        const int64_t r01 = r00 + C;
        const int64_t r10 = r00 + int64_t(rb) * C;
        const int64_t r11 = r10 + C;
        S* vals =
            plane_vals->data() + ((size_t(s) * L + l) * 6 + p) * C;
        S* combined = p < 3 ? static_out : dynamic_out;
        for (int c = 0; c < C; ++c) {
          const S v = w00 * tbl[r00 + c] + w01 * tbl[r01 + c] +
                      w10 * tbl[r10 + c] + w11 * tbl[r11 + c];
          vals[c] = v;
          combined[c] *= v;
        }
      }
    }
  }

  tape.set_backward(out, [&field, q, out, stencils, plane_vals, n, C,
                          L]() mutable {
    const S* g = out.grad().data();
    const bool dq = q.requires_grad();
    S* gq = dq ? q.grad().data() : nullptr;
    for (int s = 0; s < n; ++s) {
      const S* grow = g + int64_t(s) * 2 * C * L;
      for (int l = 0; l < L; ++l) {
        auto& lvl = field.levels[size_t(l)];
        const S* gstatic = grow + int64_t(l) * 2 * C;
        const S* gdynamic = gstatic + C;
        for (int p = 0; p < 6; ++p) {
          const int axis_a = kPlaneAxes[p][0];
          const int axis_b = kPlaneAxes[p][1];
          const int ra = lvl.res_for_axis(axis_a);
          const int rb = lvl.res_for_axis(axis_b);
          const Stencil& st = (*stencils)[(size_t(s) * L + l) * 6 + p];
          const S* gsel = p < 3 ? gstatic : gdynamic;
          // Product of the other two triplet members per channel.
          const int base = p < 3 ? 0 : 3;
          const S* v1 = plane_vals->data() +
                        ((size_t(s) * L + l) * 6 + base + (p - base + 1) % 3) * C;
          const S* v2 = plane_vals->data() +
                        ((size_t(s) * L + l) * 6 + base + (p - base + 2) % 3) * C;

          const S w00 = (S(1) - st.fu) * (S(1) - st.fv);
          const S w01 = (S(1) - st.fu) * st.fv;
          const S w10 = st.fu * (S(1) - st.fv);
          const S w11 = st.fu * st.fv;
          const int64_t r00 = (int64_t(st.i0) * rb + st.j0) * C;
          const int64_t r01 = r00 + C;
          const int64_t r10 = r00 + int64_t(rb) * C;
          const int64_t r11 = r10 + C;
          S* gtbl = lvl.planes[size_t(p)].grad.data();
          const S* tbl = lvl.planes[size_t(p)].data.data();
          S dfu_acc = 0, dfv_acc = 0;
          for (int c = 0; c < C; ++c) {
            const S go = gsel[c] * v1[c] * v2[c];  // d out / d plane_value
            gtbl[r00 + c] += go * w00;
            gtbl[r01 + c] += go * w01;
            gtbl[r10 + c] += go * w10;
            gtbl[r11 + c] += go * w11;
            if (dq) {
              const S t00 = tbl[r00 + c], t01 = tbl[r01 + c];
              const S t10 = tbl[r10 + c], t11 = tbl[r11 + c];
              dfu_acc += go * ((S(1) - st.fv) * (t10 - t00) + st.fv * (t11 - t01));
              dfv_acc += go * ((S(1) - st.fu) * (t01 - t00) + st.fu * (t11 - t10));
            }
          }
          if (dq) {
            gq[int64_t(s) * 4 + axis_a] += dfu_acc * S(ra - 1);
            gq[int64_t(s) * 4 + axis_b] += dfv_acc * S(rb - 1);
          }
        }
      }
    }
  });
  return out;
}

/// Trilinear sampling of the static xyz volume and each dynamic volume at
/// every level; features concatenate level-major as [xyz|xyt|xzt|yzt].
/// Differentiable w.r.t. table entries and q.
template <class S>
ad::Value<S> sample_grid(ad::Tape<S>& tape, HashGridField<S>& field,
                         ad::Value<S> q) {
  detail::validate_queries(q);
  const int n = q.rows();
  const int C = field.channels;
  const int L = int(field.levels.size());
  ad::Value<S> out = tape.alloc(n, 4 * C * L, tape.grad_enabled());

  struct Stencil {
    uint32_t corner[8];
    S f0, f1, f2;
  };
  auto stencils = std::make_shared<std::vector<Stencil>>(size_t(n) * L * 4);

  const S* pq = q.data().data();
  S* po = out.data().data();

  for (int s = 0; s < n; ++s) {
    const S* qs = pq + int64_t(s) * 4;
    S* orow = po + int64_t(s) * 4 * C * L;
    for (int l = 0; l < L; ++l) {
      auto& lvl = field.levels[size_t(l)];
      for (int v = 0; v < 4; ++v) {
        const std::array<int, 3> axes{kVolumeAxes[v][0], kVolumeAxes[v][1],
                                      kVolumeAxes[v][2]};
        const std::array<int, 3> res{lvl.res_for_axis(axes[0]),
                                     lvl.res_for_axis(axes[1]),
                                     lvl.res_for_axis(axes[2])};
        int i0[3];
        S fr[3];
        for (int a = 0; a < 3; ++a)
          detail::lattice_coord(qs[axes[a]], res[a], i0[a], fr[a]);

        Stencil& st = (*stencils)[(size_t(s) * L + l) * 4 + v];
        st.f0 = fr[0];
        st.f1 = fr[1];
        st.f2 = fr[2];
        const uint32_t rows = lvl.table_rows[size_t(v)];
        for (int corner = 0; corner < 8; ++corner) {
          const std::array<int, 3> cc{i0[0] + (corner & 1),
                                      i0[1] + ((corner >> 1) & 1),
                                      i0[2] + ((corner >> 2) & 1)};
          st.corner[corner] = hash_index(cc, axes, res, rows);
        }

        const S* tbl = lvl.tables[size_t(v)].data.data();
        S* dst = orow + (int64_t(l) * 4 + v) * C;
        for (int c = 0; c < C; ++c) dst[c] = S(0);
        for (int corner = 0; corner < 8; ++corner) {
          const S w = ((corner & 1) ? fr[0] : S(1) - fr[0]) *
                      (((corner >> 1) & 1) ? fr[1] : S(1) - fr[1]) *
                      (((corner >> 2) & 1) ? fr[2] : S(1) - fr[2]);
          const S* row = tbl + int64_t(st.corner[corner]) * C;
          for (int c = 0; c < C; ++c) dst[c] += w * row[c];
        }
      }
    }
  }

  tape.set_backward(out, [&field, q, out, stencils, n, C, L]() mutable {
    const S* g = out.grad().data();
    const bool dq = q.requires_grad();
    S* gq = dq ? q.grad().data() : nullptr;
    for (int s = 0; s < n; ++s) {
      const S* grow = g + int64_t(s) * 4 * C * L;
      for (int l = 0; l < L; ++l) {
        auto& lvl = field.levels[size_t(l)];
        for (int v = 0; v < 4; ++v) {
          const Stencil& st = (*stencils)[(size_t(s) * L + l) * 4 + v];
          const S* gsel = grow + (int64_t(l) * 4 + v) * C;
          S* gtbl = lvl.tables[size_t(v)].grad.data();
          const S* tbl = lvl.tables[size_t(v)].data.data();
          const S fr[3] = {st.f0, st.f1, st.f2};
          S dfr[3] = {0, 0, 0};
          for (int corner = 0; corner < 8; ++corner) {
            const S wa = (corner & 1) ? fr[0] : S(1) - fr[0];
            const S wb = ((corner >> 1) & 1) ? fr[1] : S(1) - fr[1];
            const S wc = ((corner >> 2) & 1) ? fr[2] : S(1) - fr[2];
            const S w = wa * wb * wc;
            S* trow = gtbl + int64_t(st.corner[corner]) * C;
            for (int c = 0; c < C; ++c) trow[c] += gsel[c] * w;
            if (dq) {
              const S* vrow = tbl + int64_t(st.corner[corner]) * C;
              S gdot = 0;
              for (int c = 0; c < C; ++c) gdot += gsel[c] * vrow[c];
              const S sa = (corner & 1) ? S(1) : S(-1);
              const S sb = ((corner >> 1) & 1) ? S(1) : S(-1);
              const S sc = ((corner >> 2) & 1) ? S(1) : S(-1);
              dfr[0] += gdot * sa * wb * wc;
              dfr[1] += gdot * wa * sb * wc;
              dfr[2] += gdot * wa * wb * sc;
            }
          }
          if (dq) {
            const std::array<int, 3> axes{kVolumeAxes[v][0], kVolumeAxes[v][1],
                                          kVolumeAxes[v][2]};
            for (int a = 0; a < 3; ++a) {
              const int res = lvl.res_for_axis(axes[a]);
              gq[int64_t(s) * 4 + axes[a]] += dfr[a] * S(res - 1);
            }
          }
        }
      }
    }
  });
  return out;
}

template <class S>
struct CombinedFeatures {
  ad::Value<S> planar;
  ad::Value<S> grid;
};

/// Both field families evaluated at the same normalized queries.
template <class S>
CombinedFeatures<S> combined_features(ad::Tape<S>& tape,
                                      PlanarField<S>& planar,
                                      HashGridField<S>& grid,
                                      ad::Value<S> q) {
  return {sample_planar(tape, planar, q), sample_grid(tape, grid, q)};
}

}  // namespace rangefield
