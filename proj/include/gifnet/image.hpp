// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "gifnet/tensor.hpp"

namespace gifnet {

/// Floating-point raster, HWC layout, values nominally in [0,1].
/// channels is 1 (gray) or 3 (RGB). Out-of-range values may exist on
/// intermediate results; load_image enforces the invariants and save_image
/// clamps on write.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;  // height * width * channels

  Image() = default;
  Image(int h, int w, int c)
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, 0.0f) {}

  float& at(int y, int x, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  int64_t pixel_count() const { return static_cast<int64_t>(height) * width; }
  bool same_size(const Image& o) const {
    return height == o.height && width == o.width;
  }
};

/// Minimum spatial extent accepted by load_image (windowed attention floor).
inline constexpr int kMinImageSide = 8;

/// Loads an 8-bit PNG or BMP file. Values are divided by 255; an alpha
/// channel, if present, is stripped. Throws std::runtime_error on missing
/// files, unsupported formats/bit depths, or images smaller than 8x8.
Image load_image(const std::string& path);

/// Writes img as an 8-bit PNG (gray or RGB). Values are clamped to [0,1]
/// and quantized with round(v*255). Throws std::runtime_error if the path
/// is unwritable.
void save_image(const Image& img, const std::string& path);

/// ITU-R BT.601 full-range RGB -> YCbCr. luma gets Y, chroma gets (Cb, Cr)
/// as a 2-channel plane. Requires a 3-channel input.
void rgb_to_ycbcr(const Image& rgb, Image& luma, Image& chroma);

/// Inverse BT.601 conversion; output clamped to [0,1]. Requires matching
/// spatial sizes (luma 1ch, chroma 2ch).
Image ycbcr_to_rgb(const Image& luma, const Image& chroma);

/// Returns the image itself when 1-channel, otherwise its BT.601 luma.
Image to_luma(const Image& img);

/// True iff all samples are finite and within [0,1].
bool image_in_range(const Image& img);

/// [H,W,C] tensor view of the raster (copied).
Tensor image_to_tensor(const Image& img);

/// Inverse of image_to_tensor; requires rank 3 and 1-3 channels.
Image tensor_to_image(const Tensor& t);

}  // namespace gifnet
