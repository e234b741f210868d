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

#include <memory>

#include "rangefield/ad/tape.hpp"

namespace rangefield::ad {

// Image-shaped tensors are (H*W x C) nodes with row-major pixels; the
// spatial extent travels alongside as explicit arguments.

namespace detail {

template <class S>
void panel_matmul(const S* panel, const S* w, S* out, int rows, int k, int n) {
  for (int i = 0; i < rows; ++i) {
    S* orow = out + int64_t(i) * n;
    const S* prow = panel + int64_t(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const S v = prow[kk];
      if (v == S(0)) continue;
      const S* wrow = w + int64_t(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += v * wrow[j];
    }
  }
}

}  // namespace detail

/// 3x3 convolution with zero padding 1 and stride 1 or 2.
/// x: (H*W x Cin); weight: (9*Cin x Cout) with taps ordered
/// (dy, dx) row-major; bias: (1 x Cout). Output is (Ho*Wo x Cout) with
/// Ho = floor((H-1)/stride)+1.
template <class S>
Value<S> conv3x3(Value<S> x, Value<S> weight, Value<S> bias, int H, int W,
                 int stride) {
  const int cin = x.cols();
  if (weight.rows() != 9 * cin)
    throw ShapeMismatch("conv3x3: weight rows " + std::to_string(weight.rows()) +
                        " vs 9*Cin=" + std::to_string(9 * cin));
  const int cout = weight.cols();
  if (bias.rows() != 1 || bias.cols() != cout)
    throw ShapeMismatch("conv3x3: bias must be (1x" + std::to_string(cout) +
                        ")");
  if (int64_t(x.rows()) != int64_t(H) * W)
    throw ShapeMismatch("conv3x3: input rows " + std::to_string(x.rows()) +
                        " vs H*W=" + std::to_string(int64_t(H) * W));
  const int Ho = (H - 1) / stride + 1;
  const int Wo = (W - 1) / stride + 1;

  Tape<S>& t = x.tape();
  Value<S> out = t.alloc(Ho * Wo, cout,
                         x.requires_grad() || weight.requires_grad() ||
                             bias.requires_grad());

  const S* px = x.data().data();
  const S* pw = weight.data().data();
  const S* pb = bias.data().data();
  S* po = out.data().data();

  constexpr int kStrip = 256;  // output pixels per im2col panel
  const int k = 9 * cin;

  auto fill_panel = [&](int64_t p0, int64_t p1, S* panel) {
    for (int64_t p = p0; p < p1; ++p) {
      const int oy = int(p / Wo), ox = int(p % Wo);
      const int iy = oy * stride, ix = ox * stride;
      S* prow = panel + (p - p0) * k;
      for (int tap = 0; tap < 9; ++tap) {
        const int dy = tap / 3 - 1, dx = tap % 3 - 1;
        const int sy = iy + dy, sx = ix + dx;
        S* dst = prow + tap * cin;
        if (sy < 0 || sy >= H || sx < 0 || sx >= W) {
          for (int c = 0; c < cin; ++c) dst[c] = S(0);
        } else {
          const S* src = px + (int64_t(sy) * W + sx) * cin;
          for (int c = 0; c < cin; ++c) dst[c] = src[c];
        }
      }
    }
  };

  const int64_t total = int64_t(Ho) * Wo;
  parallel_for((total + kStrip - 1) / kStrip, [&](int64_t s0, int64_t s1) {
    std::vector<S> panel(size_t(kStrip) * k);
    for (int64_t strip = s0; strip < s1; ++strip) {
      const int64_t p0 = strip * kStrip;
      const int64_t p1 = std::min<int64_t>(p0 + kStrip, total);
      fill_panel(p0, p1, panel.data());
      detail::panel_matmul(panel.data(), pw, po + p0 * cout, int(p1 - p0), k,
                           cout);
    }
  });
  for (int64_t p = 0; p < total; ++p) {
    S* orow = po + p * cout;
    for (int j = 0; j < cout; ++j) orow[j] += pb[j];
  }

  t.set_backward(out, [x, weight, bias, out, H, W, stride, Ho, Wo]() mutable {
    const int cin = x.cols();
    const int cout = weight.cols();
    const int k = 9 * cin;
    const int64_t total = int64_t(Ho) * Wo;
    const S* g = out.grad().data();
    const S* px = x.data().data();

    if (bias.requires_grad()) {
      S* gb = bias.grad().data();
      for (int64_t p = 0; p < total; ++p) {
        const S* grow = g + p * cout;
        for (int j = 0; j < cout; ++j) gb[j] += grow[j];
      }
    }

    const bool need_dx = x.requires_grad();
    const bool need_dw = weight.requires_grad();
    S* gx = need_dx ? x.grad().data() : nullptr;
    S* gw = need_dw ? weight.grad().data() : nullptr;

    std::vector<S> wt;  // (cout x k) transpose for the input gradient
    if (need_dx) {
      const S* pw = weight.data().data();
      wt.resize(size_t(cout) * k);
      for (int kk = 0; kk < k; ++kk)
        for (int j = 0; j < cout; ++j)
          wt[size_t(j) * k + kk] = pw[int64_t(kk) * cout + j];
    }

    constexpr int kStrip = 256;
    std::vector<S> panel(size_t(kStrip) * k);
    std::vector<S> dpanel(size_t(kStrip) * k);
    for (int64_t p0 = 0; p0 < total; p0 += kStrip) {
      const int64_t p1 = std::min<int64_t>(p0 + kStrip, total);
      const int rows = int(p1 - p0);
      // Rebuild the forward panel for this strip.
      for (int64_t p = p0; p < p1; ++p) {
        const int oy = int(p / Wo), ox = int(p % Wo);
        const int iy = oy * stride, ix = ox * stride;
        S* prow = panel.data() + (p - p0) * k;
        for (int tap = 0; tap < 9; ++tap) {
          const int dy = tap / 3 - 1, dx = tap % 3 - 1;
          const int sy = iy + dy, sx = ix + dx;
          S* dst = prow + tap * cin;
          if (sy < 0 || sy >= H || sx < 0 || sx >= W) {
            for (int c = 0; c < cin; ++c) dst[c] = S(0);
          } else {
            const S* src = px + (int64_t(sy) * W + sx) * cin;
            for (int c = 0; c < cin; ++c) dst[c] = src[c];
          }
        }
      }
      if (need_dw) {
        // dW += panel^T * dY
        for (int i = 0; i < rows; ++i) {
          const S* prow = panel.data() + int64_t(i) * k;
          const S* grow = g + (p0 + i) * cout;
          for (int kk = 0; kk < k; ++kk) {
            const S v = prow[kk];
            if (v == S(0)) continue;
            S* gwrow = gw + int64_t(kk) * cout;
            for (int j = 0; j < cout; ++j) gwrow[j] += v * grow[j];
          }
        }
      }
      if (need_dx) {
        std::fill(dpanel.begin(), dpanel.begin() + int64_t(rows) * k, S(0));
        detail::panel_matmul(g + p0 * cout, wt.data(), dpanel.data(), rows,
                             cout, k);
        // Scatter dpanel back through the taps.
        for (int64_t p = p0; p < p1; ++p) {
          const int oy = int(p / Wo), ox = int(p % Wo);
          const int iy = oy * stride, ix = ox * stride;
          const S* prow = dpanel.data() + (p - p0) * k;
          for (int tap = 0; tap < 9; ++tap) {
            const int dy = tap / 3 - 1, dx = tap % 3 - 1;
            const int sy = iy + dy, sx = ix + dx;
            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
            S* dst = gx + (int64_t(sy) * W + sx) * cin;
            const S* src = prow + tap * cin;
            for (int c = 0; c < cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  });
  return out;
}

/// Bilinear resize from (Hi x Wi) to (Ho x Wo), half-pixel-center sampling.
template <class S>
Value<S> bilinear_upsample(Value<S> x, int Hi, int Wi, int Ho, int Wo) {
  const int c = x.cols();
  if (int64_t(x.rows()) != int64_t(Hi) * Wi)
    throw ShapeMismatch("bilinear_upsample: input rows " +
                        std::to_string(x.rows()) + " vs Hi*Wi=" +
                        std::to_string(int64_t(Hi) * Wi));
  Tape<S>& t = x.tape();
  Value<S> out = t.alloc(Ho * Wo, c, x.requires_grad());

  struct Stencil {
    int i0, j0;
    S fu, fv;
  };
  auto stencils = std::make_shared<std::vector<Stencil>>(size_t(Ho) * Wo);
  const double sy = double(Hi) / Ho, sx = double(Wi) / Wo;
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      double u = (oy + 0.5) * sy - 0.5;
      double v = (ox + 0.5) * sx - 0.5;
      u = std::min(std::max(u, 0.0), double(Hi - 1));
      v = std::min(std::max(v, 0.0), double(Wi - 1));
      Stencil st;
      st.i0 = std::min(int(u), Hi - 2 >= 0 ? Hi - 2 : 0);
      st.j0 = std::min(int(v), Wi - 2 >= 0 ? Wi - 2 : 0);
      st.fu = S(u - st.i0);
      st.fv = S(v - st.j0);
      (*stencils)[size_t(oy) * Wo + ox] = st;
    }
  }

  const S* px = x.data().data();
  S* po = out.data().data();
  const int i_step = Hi > 1 ? Wi : 0;
  const int j_step = Wi > 1 ? 1 : 0;
  for (int64_t p = 0; p < int64_t(Ho) * Wo; ++p) {
    const Stencil& st = (*stencils)[size_t(p)];
    const int64_t r00 = (int64_t(st.i0) * Wi + st.j0);
    const S* v00 = px + r00 * c;
    const S* v01 = px + (r00 + j_step) * c;
    const S* v10 = px + (r00 + i_step) * c;
    const S* v11 = px + (r00 + i_step + j_step) * c;
    const S w00 = (S(1) - st.fu) * (S(1) - st.fv);
    const S w01 = (S(1) - st.fu) * st.fv;
    const S w10 = st.fu * (S(1) - st.fv);
    const S w11 = st.fu * st.fv;
    S* orow = po + p * c;
    for (int ch = 0; ch < c; ++ch)
      orow[ch] = w00 * v00[ch] + w01 * v01[ch] + w10 * v10[ch] + w11 * v11[ch];
  }

  t.set_backward(out, [x, out, stencils, Hi, Wi, Ho, Wo]() mutable {
    if (!x.requires_grad()) return;
    const int c = x.cols();
    const S* g = out.grad().data();
    S* gx = x.grad().data();
    const int i_step = Hi > 1 ? Wi : 0;
    const int j_step = Wi > 1 ? 1 : 0;
    for (int64_t p = 0; p < int64_t(Ho) * Wo; ++p) {
      const Stencil& st = (*stencils)[size_t(p)];
      const int64_t r00 = (int64_t(st.i0) * Wi + st.j0);
      const S w00 = (S(1) - st.fu) * (S(1) - st.fv);
      const S w01 = (S(1) - st.fu) * st.fv;
      const S w10 = st.fu * (S(1) - st.fv);
      const S w11 = st.fu * st.fv;
      const S* grow = g + p * c;
      for (int ch = 0; ch < c; ++ch) {
        gx[r00 * c + ch] += w00 * grow[ch];
        gx[(r00 + j_step) * c + ch] += w01 * grow[ch];
        gx[(r00 + i_step) * c + ch] += w10 * grow[ch];
        gx[(r00 + i_step + j_step) * c + ch] += w11 * grow[ch];
      }
    }
  });
  return out;
}

/// Bilinear lookup of continuous pixel coordinates in an (H x W) feature
/// map. Integer coordinates hit rows exactly; coordinates clamp to the
/// image border. coords is a flat (h0, w0, h1, w1, ...) list.
template <class S>
Value<S> bilinear_gather(Value<S> map, std::span<const S> coords, int H,
                         int W) {
  const int c = map.cols();
  if (int64_t(map.rows()) != int64_t(H) * W)
    throw ShapeMismatch("bilinear_gather: map rows " +
                        std::to_string(map.rows()) + " vs H*W=" +
                        std::to_string(int64_t(H) * W));
  if (coords.size() % 2 != 0)
    throw ShapeMismatch("bilinear_gather: odd coordinate list");
  const int n = int(coords.size() / 2);

  struct Stencil {
    int i0, j0;
    S fu, fv;
  };
  auto stencils = std::make_shared<std::vector<Stencil>>(size_t(n));
  for (int i = 0; i < n; ++i) {
    double u = double(coords[size_t(2 * i)]);
    double v = double(coords[size_t(2 * i + 1)]);
    if (!(u >= -1e-6 && u <= H - 1 + 1e-6 && v >= -1e-6 && v <= W - 1 + 1e-6))
      throw OutOfBounds("pixel (" + std::to_string(u) + ", " +
                        std::to_string(v) + ") outside feature map");
    u = std::min(std::max(u, 0.0), double(H - 1));
    v = std::min(std::max(v, 0.0), double(W - 1));
    Stencil st;
    st.i0 = std::min(int(u), H >= 2 ? H - 2 : 0);
    st.j0 = std::min(int(v), W >= 2 ? W - 2 : 0);
    st.fu = S(u - st.i0);
    st.fv = S(v - st.j0);
    (*stencils)[size_t(i)] = st;
  }

  Tape<S>& t = map.tape();
  Value<S> out = t.alloc(n, c, map.requires_grad());
  const S* pm = map.data().data();
  S* po = out.data().data();
  const int i_step = H > 1 ? W : 0;
  const int j_step = W > 1 ? 1 : 0;
  for (int i = 0; i < n; ++i) {
    const Stencil& st = (*stencils)[size_t(i)];
    const int64_t r00 = int64_t(st.i0) * W + st.j0;
    const S w00 = (S(1) - st.fu) * (S(1) - st.fv);
    const S w01 = (S(1) - st.fu) * st.fv;
    const S w10 = st.fu * (S(1) - st.fv);
    const S w11 = st.fu * st.fv;
    const S* v00 = pm + r00 * c;
    const S* v01 = pm + (r00 + j_step) * c;
    const S* v10 = pm + (r00 + i_step) * c;
    const S* v11 = pm + (r00 + i_step + j_step) * c;
    S* orow = po + int64_t(i) * c;
    for (int ch = 0; ch < c; ++ch)
      orow[ch] = w00 * v00[ch] + w01 * v01[ch] + w10 * v10[ch] + w11 * v11[ch];
  }

  t.set_backward(out, [map, out, stencils, H, W, n]() mutable {
    if (!map.requires_grad()) return;
    const int c = map.cols();
    const S* g = out.grad().data();
    S* gm = map.grad().data();
    const int i_step = H > 1 ? W : 0;
    const int j_step = W > 1 ? 1 : 0;
    for (int i = 0; i < n; ++i) {
      const Stencil& st = (*stencils)[size_t(i)];
      const int64_t r00 = int64_t(st.i0) * W + st.j0;
      const S w00 = (S(1) - st.fu) * (S(1) - st.fv);
      const S w01 = (S(1) - st.fu) * st.fv;
      const S w10 = st.fu * (S(1) - st.fv);
      const S w11 = st.fu * st.fv;
      const S* grow = g + int64_t(i) * c;
      for (int ch = 0; ch < c; ++ch) {
        gm[r00 * c + ch] += w00 * grow[ch];
        gm[(r00 + j_step) * c + ch] += w01 * grow[ch];
        gm[(r00 + i_step) * c + ch] += w10 * grow[ch];
        gm[(r00 + i_step + j_step) * c + ch] += w11 * grow[ch];
      }
    }
  });
  return out;
}

}  // namespace rangefield::ad
