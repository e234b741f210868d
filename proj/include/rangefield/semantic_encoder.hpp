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
#include <span>
#include <string>
#include <vector>

#include "rangefield/ad/image_ops.hpp"
#include "rangefield/ad/tape.hpp"
#include "rangefield/common.hpp"

namespace rangefield {

/// Small trainable residual encoder over the 1-channel range image.
/// Stem convs at full resolution, three stages with stride-2 downsampling
/// into the later two, bilinear upsample back to H x W, then a 1x1
/// projection to out_channels. Activations are hardswish throughout.
struct ConvEncoderConfig {
  int stem_convs = 2;
  int blocks_per_stage = 2;
  std::array<int, 3> stage_widths{16, 32, 64};
  int out_channels = 128;
  double depth_scale = 80.0;  // meters mapped to 1.0 at the input
  double init_seed_salt = 0;
};

template <class S>
class ConvEncoder {
 public:
  ConvEncoder() = default;

  ConvEncoder(const ConvEncoderConfig& cfg, Pcg32& rng) : cfg_(cfg) {
    int cin = 1;
    for (int i = 0; i < cfg.stem_convs; ++i) {
      add_conv("encoder/stem" + std::to_string(i), cin, cfg.stage_widths[0],
               rng);
      cin = cfg.stage_widths[0];
    }
    for (int stage = 0; stage < 3; ++stage) {
      const int width = cfg.stage_widths[size_t(stage)];
      for (int b = 0; b < cfg.blocks_per_stage; ++b) {
        const std::string tag =
            "encoder/s" + std::to_string(stage) + "b" + std::to_string(b);
        add_conv(tag + "/c1", cin, width, rng);
        add_conv(tag + "/c2", width, width, rng);
        if (cin != width) add_linear(tag + "/skip", cin, width, rng);
        cin = width;
      }
    }
    add_linear("encoder/head", cin, cfg.out_channels, rng);
  }

  const ConvEncoderConfig& config() const { return cfg_; }
  int out_channels() const { return cfg_.out_channels; }

  /// Range image depth channel -> (H*W x out_channels) feature map.
  /// Invalid pixels must already hold 0.
  ad::Value<S> encode(ad::Tape<S>& tape, std::span<const float> depth, int H,
                      int W) {
    if (int64_t(depth.size()) != int64_t(H) * W)
      throw ShapeMismatch("encode: depth size " + std::to_string(depth.size()) +
                          " vs H*W=" + std::to_string(int64_t(H) * W));
    ad::Value<S> x = tape.alloc(H * W, 1, false);
    {
      S* px = x.data().data();
      const S inv = S(1.0 / cfg_.depth_scale);
      for (size_t i = 0; i < depth.size(); ++i) px[i] = S(depth[i]) * inv;
    }

    int h = H, w = W;
    size_t conv_i = 0, lin_i = 0;
    for (int i = 0; i < cfg_.stem_convs; ++i)
      x = ad::hardswish(apply_conv(tape, convs_[conv_i++], x, h, w, 1));

    for (int stage = 0; stage < 3; ++stage) {
      const int width = cfg_.stage_widths[size_t(stage)];
      for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
        const int stride = (stage > 0 && b == 0) ? 2 : 1;
        ad::Value<S> skip = x;
        const int h_in = h, w_in = w;
        ad::Value<S> y =
            ad::hardswish(apply_conv(tape, convs_[conv_i++], x, h, w, stride));
        if (stride == 2) {
          h = (h - 1) / 2 + 1;
          w = (w - 1) / 2 + 1;
        }
        y = apply_conv(tape, convs_[conv_i++], y, h, w, 1);
        if (skip.cols() != width) {
          if (stride == 2) skip = strided_pick(tape, skip, h_in, w_in);
          auto& lin = linears_[lin_i++];
          skip = ad::add(ad::matmul(skip, tape.leaf(lin.w)), tape.leaf(lin.b));
        } else if (stride == 2) {
          skip = strided_pick(tape, skip, h_in, w_in);
        }
        x = ad::hardswish(ad::add(y, skip));
      }
    }

    x = ad::bilinear_upsample(x, h, w, H, W);
    auto& head = linears_[lin_i];
    return ad::add(ad::matmul(x, tape.leaf(head.w)), tape.leaf(head.b));
  }

  void collect_params(std::vector<ad::Parameter<S>*>& out) {
    for (auto& c : convs_) {
      out.push_back(&c.w);
      out.push_back(&c.b);
    }
    for (auto& l : linears_) {
      out.push_back(&l.w);
      out.push_back(&l.b);
    }
  }

 private:
  struct ConvLayer {
    ad::Parameter<S> w, b;
  };
  struct LinearLayer {
    ad::Parameter<S> w, b;
  };

  void add_conv(const std::string& name, int cin, int cout, Pcg32& rng) {
    ConvLayer layer{ad::Parameter<S>(name + "/w", 9 * cin, cout),
                    ad::Parameter<S>(name + "/b", 1, cout)};
    layer.w.fill_kaiming(rng, 9 * cin);
    convs_.push_back(std::move(layer));
  }

  void add_linear(const std::string& name, int cin, int cout, Pcg32& rng) {
    LinearLayer layer{ad::Parameter<S>(name + "/w", cin, cout),
                      ad::Parameter<S>(name + "/b", 1, cout)};
    layer.w.fill_kaiming(rng, cin);
    linears_.push_back(std::move(layer));
  }

  ad::Value<S> apply_conv(ad::Tape<S>& tape, ConvLayer& layer, ad::Value<S> x,
                          int h, int w, int stride) {
    return ad::conv3x3(x, tape.leaf(layer.w), tape.leaf(layer.b), h, w,
                       stride);
  }

  /// Keeps every second pixel in both directions (the residual shortcut
  /// companion to a stride-2 conv).
  static ad::Value<S> strided_pick(ad::Tape<S>& tape, ad::Value<S> x, int h,
                                   int w) {
    (void)tape;
    const int ho = (h - 1) / 2 + 1, wo = (w - 1) / 2 + 1;
    std::vector<int> idx;
    idx.reserve(size_t(ho) * wo);
    for (int i = 0; i < h; i += 2)
      for (int j = 0; j < w; j += 2) idx.push_back(i * w + j);
    return ad::gather_rows(x, std::span<const int>(idx));
  }

  ConvEncoderConfig cfg_;
  std::vector<ConvLayer> convs_;
  std::vector<LinearLayer> linears_;
};

/// Per-ray feature lookup at continuous pixel coordinates; the same vector
/// is attached to every sample along the ray.
template <class S>
ad::Value<S> query_local(ad::Value<S> feature_map, std::span<const S> coords,
                         int H, int W) {
  return ad::bilinear_gather(feature_map, coords, H, W);
}

}  // namespace rangefield
