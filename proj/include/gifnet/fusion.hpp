// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "gifnet/image.hpp"
#include "gifnet/network.hpp"

namespace gifnet {

/// Which input donates chrominance when the fused output should be color.
enum class ColorSource { A, B, None };
ColorSource parse_color_source(const std::string& s);
std::string color_source_name(ColorSource c);

struct FusionRequest {
  Image input_a;
  Image input_b;
  ColorSource color_source = ColorSource::A;
  bool use_cfgm = true;  // mirror of the training-time gating switch
};

/// Task-agnostic pair fusion: both lumas go through the shared encoder,
/// the coupled branches run in lockstep, and the global decoder renders the
/// MM stream. Inputs must match in size and reach the attention window;
/// non-window-multiple sizes are edge-padded internally and cropped back.
/// Output is RGB when the chroma donor has color, gray otherwise.
Image fuse_pair(const Model& m, const FusionRequest& req);

/// fuse_pair with both inputs set to x and chroma from x.
Image enhance_single(const Model& m, const Image& x);

}  // namespace gifnet
