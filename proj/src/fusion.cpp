// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/fusion.hpp"

#include <algorithm>
#include <stdexcept>

namespace gifnet {

namespace {

Image pad_to_multiple(const Image& img, int window) {
  const int h2 = (img.height + window - 1) / window * window;
  const int w2 = (img.width + window - 1) / window * window;
  if (h2 == img.height && w2 == img.width) return img;
  Image out(h2, w2, img.channels);
  for (int y = 0; y < h2; ++y)
    for (int x = 0; x < w2; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) =
            img.at(std::min(y, img.height - 1), std::min(x, img.width - 1), c);
  return out;
}

Image crop_to(const Image& img, int h, int w) {
  if (img.height == h && img.width == w) return img;
  Image out(h, w, img.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

}  // namespace

ColorSource parse_color_source(const std::string& s) {
  if (s == "a") return ColorSource::A;
  if (s == "b") return ColorSource::B;
  if (s == "none") return ColorSource::None;
  throw std::invalid_argument("unknown color source: " + s);
}

std::string color_source_name(ColorSource c) {
  switch (c) {
    case ColorSource::A: return "a";
    case ColorSource::B: return "b";
    case ColorSource::None: return "none";
  }
  throw std::invalid_argument("unknown color source value");
}

Image fuse_pair(const Model& m, const FusionRequest& req) {
  const Image& a = req.input_a;
  const Image& b = req.input_b;
  if (a.height <= 0 || b.height <= 0)
    throw std::invalid_argument("fuse_pair: empty input image");
  if (!a.same_size(b))
    throw std::invalid_argument("fuse_pair: input sizes differ");
  const int window = m.arch().window;
  if (a.height < window || a.width < window)
    throw std::invalid_argument("fuse_pair: input smaller than the attention window");

  const Image pa = pad_to_multiple(to_luma(a), window);
  const Image pb = pad_to_multiple(to_luma(b), window);

  auto fa = senc_forward(m, ad::constant(image_to_tensor(pa)));
  auto fb = senc_forward(m, ad::constant(image_to_tensor(pb)));
  auto outs = run_branches(m, fa, fb, req.use_cfgm);
  auto dec = gdec_forward(m, outs.mm);

  const Image fused_luma = crop_to(tensor_to_image(dec->value), a.height, a.width);

  const Image* donor = nullptr;
  if (req.color_source == ColorSource::A) donor = &a;
  if (req.color_source == ColorSource::B) donor = &b;
  if (donor != nullptr && donor->channels == 3) {
    Image luma, chroma;
    rgb_to_ycbcr(*donor, luma, chroma);
    return ycbcr_to_rgb(fused_luma, chroma);
  }
  return fused_luma;
}

Image enhance_single(const Model& m, const Image& x) {
  FusionRequest req;
  req.input_a = x;
  req.input_b = x;
  req.color_source = ColorSource::A;
  return fuse_pair(m, req);
}

}  // namespace gifnet
