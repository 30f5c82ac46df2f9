// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace gifnet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

Image finalize_loaded(Image img, const std::string& path) {
  if (img.height < kMinImageSide || img.width < kMinImageSide) {
    fail(path + ": image smaller than " + std::to_string(kMinImageSide) + "x" +
         std::to_string(kMinImageSide));
  }
  return img;
}

// ---------------------------------------------------------------- PNG ----

Image load_png(std::FILE* fp, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path + ": png init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path + ": png init failed");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<uint8_t> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path + ": corrupt or unsupported PNG");
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path + ": 16-bit PNG not supported (8-bit only)");
  }
  // Normalize everything to 8-bit gray or RGB, dropping alpha.
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int out_channels = static_cast<int>(png_get_channels(png, info));
  if (out_channels != 1 && out_channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path + ": unsupported PNG channel count");
  }
  const size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  row_ptrs.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = pixels.data() + y * stride;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(static_cast<int>(h), static_cast<int>(w), out_channels);
  const size_t n = img.data.size();
  for (size_t i = 0, y = 0; y < h; ++y) {
    const uint8_t* row = pixels.data() + y * stride;
    for (size_t k = 0; k < static_cast<size_t>(w) * out_channels; ++k, ++i) {
      img.data[i] = static_cast<float>(row[k]) / 255.0f;
    }
  }
  (void)n;
  return img;
}

// ---------------------------------------------------------------- BMP ----

uint32_t rd_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

// Uncompressed BI_RGB bitmaps only: 24-bit BGR, or 8-bit paletted
// (a gray-ramp palette loads as 1 channel, anything else expands to RGB).
Image load_bmp(std::FILE* fp, const std::string& path) {
  uint8_t header[54];
  if (std::fread(header, 1, 54, fp) != 54 || header[0] != 'B' || header[1] != 'M') {
    fail(path + ": not a BMP file");
  }
  const uint32_t data_offset = rd_u32(header + 10);
  const uint32_t info_size = rd_u32(header + 14);
  if (info_size < 40) fail(path + ": unsupported BMP header");
  const int32_t w = static_cast<int32_t>(rd_u32(header + 18));
  const int32_t h_raw = static_cast<int32_t>(rd_u32(header + 22));
  const uint16_t bpp = rd_u16(header + 28);
  const uint32_t compression = rd_u32(header + 30);
  if (compression != 0) fail(path + ": compressed BMP not supported");
  if (bpp != 8 && bpp != 24) fail(path + ": only 8-bit and 24-bit BMP supported");
  if (w <= 0 || h_raw == 0) fail(path + ": bad BMP dimensions");
  const bool bottom_up = h_raw > 0;
  const int h = bottom_up ? h_raw : -h_raw;

  uint8_t palette[256][4];
  bool palette_gray = true;
  int palette_entries = 0;
  if (bpp == 8) {
    uint32_t colors = rd_u32(header + 46);
    palette_entries = colors == 0 ? 256 : static_cast<int>(colors);
    if (palette_entries > 256) fail(path + ": bad BMP palette");
    if (std::fseek(fp, static_cast<long>(14 + info_size), SEEK_SET) != 0) fail(path + ": truncated BMP");
    for (int i = 0; i < palette_entries; ++i) {
      if (std::fread(palette[i], 1, 4, fp) != 4) fail(path + ": truncated BMP palette");
      if (palette[i][0] != palette[i][1] || palette[i][1] != palette[i][2]) palette_gray = false;
    }
  }
  if (std::fseek(fp, static_cast<long>(data_offset), SEEK_SET) != 0) fail(path + ": truncated BMP");

  const size_t row_bytes = (static_cast<size_t>(w) * bpp / 8 + 3) & ~size_t{3};
  std::vector<uint8_t> row(row_bytes);
  const int channels = (bpp == 24 || !palette_gray) ? 3 : 1;
  Image img(h, w, channels);
  for (int r = 0; r < h; ++r) {
    if (std::fread(row.data(), 1, row_bytes, fp) != row_bytes) fail(path + ": truncated BMP data");
    const int y = bottom_up ? h - 1 - r : r;
    if (bpp == 24) {
      for (int x = 0; x < w; ++x) {
        img.at(y, x, 0) = row[x * 3 + 2] / 255.0f;
        img.at(y, x, 1) = row[x * 3 + 1] / 255.0f;
        img.at(y, x, 2) = row[x * 3 + 0] / 255.0f;
      }
    } else {
      for (int x = 0; x < w; ++x) {
        const uint8_t idx = row[x];
        if (idx >= palette_entries) fail(path + ": BMP pixel outside palette");
        if (channels == 1) {
          img.at(y, x, 0) = palette[idx][0] / 255.0f;
        } else {
          img.at(y, x, 0) = palette[idx][2] / 255.0f;
          img.at(y, x, 1) = palette[idx][1] / 255.0f;
          img.at(y, x, 2) = palette[idx][0] / 255.0f;
        }
      }
    }
  }
  return img;
}

bool has_suffix_icase(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  for (size_t i = 0; i < suffix.size(); ++i) {
    char a = s[s.size() - suffix.size() + i];
    char b = suffix[i];
    if (std::tolower(static_cast<unsigned char>(a)) != std::tolower(static_cast<unsigned char>(b)))
      return false;
  }
  return true;
}

}  // namespace

Image load_image(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(path + ": cannot open file");
  uint8_t magic[8] = {0};
  const size_t got = std::fread(magic, 1, 8, fp.get());
  std::rewind(fp.get());
  if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) {
    return finalize_loaded(load_png(fp.get(), path), path);
  }
  if (got >= 2 && magic[0] == 'B' && magic[1] == 'M') {
    return finalize_loaded(load_bmp(fp.get(), path), path);
  }
  if (has_suffix_icase(path, ".png") || has_suffix_icase(path, ".bmp")) {
    fail(path + ": corrupt or unsupported image file");
  }
  fail(path + ": unsupported format (PNG or BMP expected)");
}

void save_image(const Image& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3) fail("save_image: channels must be 1 or 3");
  if (img.height <= 0 || img.width <= 0) fail("save_image: empty image");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(path + ": cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path + ": png init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path + ": png init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path + ": PNG write failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int k = 0; k < img.width * img.channels; ++k) {
      float v = img.data[static_cast<size_t>(y) * img.width * img.channels + k];
      v = std::clamp(v, 0.0f, 1.0f);
      row[static_cast<size_t>(k)] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void rgb_to_ycbcr(const Image& rgb, Image& luma, Image& chroma) {
  if (rgb.channels != 3) fail("rgb_to_ycbcr: 3-channel input required");
  luma = Image(rgb.height, rgb.width, 1);
  chroma = Image(rgb.height, rgb.width, 2);
  const int64_t n = rgb.pixel_count();
  for (int64_t i = 0; i < n; ++i) {
    const float r = rgb.data[static_cast<size_t>(i) * 3 + 0];
    const float g = rgb.data[static_cast<size_t>(i) * 3 + 1];
    const float b = rgb.data[static_cast<size_t>(i) * 3 + 2];
    const float y = 0.299f * r + 0.587f * g + 0.114f * b;
    luma.data[static_cast<size_t>(i)] = y;
    chroma.data[static_cast<size_t>(i) * 2 + 0] = (b - y) / 1.772f + 0.5f;
    chroma.data[static_cast<size_t>(i) * 2 + 1] = (r - y) / 1.402f + 0.5f;
  }
}

Image ycbcr_to_rgb(const Image& luma, const Image& chroma) {
  if (luma.channels != 1 || chroma.channels != 2) fail("ycbcr_to_rgb: luma must be 1ch, chroma 2ch");
  if (!luma.same_size(chroma)) fail("ycbcr_to_rgb: size mismatch");
  Image rgb(luma.height, luma.width, 3);
  const int64_t n = luma.pixel_count();
  for (int64_t i = 0; i < n; ++i) {
    const float y = luma.data[static_cast<size_t>(i)];
    const float cb = chroma.data[static_cast<size_t>(i) * 2 + 0] - 0.5f;
    const float cr = chroma.data[static_cast<size_t>(i) * 2 + 1] - 0.5f;
    const float r = y + 1.402f * cr;
    const float b = y + 1.772f * cb;
    const float g = (y - 0.299f * r - 0.114f * b) / 0.587f;
    rgb.data[static_cast<size_t>(i) * 3 + 0] = std::clamp(r, 0.0f, 1.0f);
    rgb.data[static_cast<size_t>(i) * 3 + 1] = std::clamp(g, 0.0f, 1.0f);
    rgb.data[static_cast<size_t>(i) * 3 + 2] = std::clamp(b, 0.0f, 1.0f);
  }
  return rgb;
}

Image to_luma(const Image& img) {
  if (img.channels == 1) return img;
  Image luma, chroma;
  rgb_to_ycbcr(img, luma, chroma);
  return luma;
}

bool image_in_range(const Image& img) {
  for (float v : img.data) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) return false;
  }
  return true;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t({img.height, img.width, img.channels});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = img.data[static_cast<size_t>(i)];
  return t;
}

Image tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.dim(2) < 1 || t.dim(2) > 3)
    throw std::invalid_argument("tensor_to_image: need [H,W,C] with C in 1..3");
  Image img(t.dim(0), t.dim(1), t.dim(2));
  for (int64_t i = 0; i < t.size(); ++i) img.data[static_cast<size_t>(i)] = t[i];
  return img;
}

}  // namespace gifnet
