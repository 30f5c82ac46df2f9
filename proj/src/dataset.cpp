// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace gifnet {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// splitmix64; decorrelates the per-sample seeds derived from the run seed.
uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<float> gaussian_kernel(float sigma) {
  const int radius = static_cast<int>(std::ceil(3.0f * sigma));
  std::vector<float> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (static_cast<double>(i) * i) / (static_cast<double>(sigma) * sigma));
    k[static_cast<size_t>(i + radius)] = static_cast<float>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}

}  // namespace

MaskKind parse_mask_kind(const std::string& s) {
  if (s == "left-half") return MaskKind::LeftHalf;
  if (s == "top-half") return MaskKind::TopHalf;
  if (s == "centered-disk") return MaskKind::CenteredDisk;
  throw std::invalid_argument("unknown mask kind: " + s);
}

std::string mask_kind_name(MaskKind kind) {
  switch (kind) {
    case MaskKind::LeftHalf: return "left-half";
    case MaskKind::TopHalf: return "top-half";
    case MaskKind::CenteredDisk: return "centered-disk";
  }
  fail("bad mask kind");
}

Image gaussian_blur(const Image& img, float sigma) {
  if (sigma <= 0.0f) throw std::invalid_argument("gaussian_blur: sigma must be > 0");
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int h = img.height, w = img.width, c = img.channels;

  // Separable pass with edge-replicate clamping.
  Image tmp(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, w - 1);
          acc += k[static_cast<size_t>(i + radius)] * img.at(y, xx, ch);
        }
        tmp.at(y, x, ch) = acc;
      }
    }
  }
  Image out(h, w, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        float acc = 0.0f;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, h - 1);
          acc += k[static_cast<size_t>(i + radius)] * tmp.at(yy, x, ch);
        }
        out.at(y, x, ch) = acc;
      }
    }
  }
  return out;
}

Mask make_mask(int height, int width, MaskKind kind, int64_t seed) {
  Mask mask(height, width);
  switch (kind) {
    case MaskKind::LeftHalf:
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width / 2; ++x) mask.at(y, x) = 1;
      break;
    case MaskKind::TopHalf:
      for (int y = 0; y < height / 2; ++y)
        for (int x = 0; x < width; ++x) mask.at(y, x) = 1;
      break;
    case MaskKind::CenteredDisk: {
      std::mt19937_64 rng(static_cast<uint64_t>(seed));
      // uniform in [0.2, 0.4]*min(h,w) without distribution-object portability caveats
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      const double radius = (0.2 + 0.2 * u) * std::min(height, width);
      const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
      const double r2 = radius * radius;
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          const double dy = y - cy, dx = x - cx;
          if (dy * dy + dx * dx <= r2) mask.at(y, x) = 1;
        }
      }
      break;
    }
  }
  return mask;
}

void synth_multifocus_pair(const Image& vis, const Mask& mask, float sigma,
                           Image& near_out, Image& far_out) {
  if (mask.height != vis.height || mask.width != vis.width)
    throw std::invalid_argument("synth_multifocus_pair: mask size mismatch");
  if (sigma <= 0.0f) throw std::invalid_argument("synth_multifocus_pair: sigma must be > 0");
  const Image blurred = gaussian_blur(vis, sigma);
  near_out = Image(vis.height, vis.width, vis.channels);
  far_out = Image(vis.height, vis.width, vis.channels);
  for (int y = 0; y < vis.height; ++y) {
    for (int x = 0; x < vis.width; ++x) {
      const bool sharp_near = mask.at(y, x) != 0;
      for (int c = 0; c < vis.channels; ++c) {
        near_out.at(y, x, c) = sharp_near ? vis.at(y, x, c) : blurred.at(y, x, c);
        far_out.at(y, x, c) = sharp_near ? blurred.at(y, x, c) : vis.at(y, x, c);
      }
    }
  }
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path + ": cannot write manifest");
  out << "seed=" << m.seed << "\n";
  out << "sigma=" << m.blur_sigma << "\n";
  out << "mask=" << mask_kind_name(m.mask_kind) << "\n";
  for (const auto& e : m.entries) {
    out << e.id << '\t' << e.vis << '\t' << e.ir << '\t' << e.near_focus << '\t'
        << e.far_focus << "\n";
  }
  if (!out) fail(path + ": manifest write failed");
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path + ": cannot open manifest");
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  std::string line;
  int header = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header < 3) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) fail(path + ": malformed manifest header: " + line);
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "seed") m.seed = std::stoll(val);
      else if (key == "sigma") m.blur_sigma = std::stof(val);
      else if (key == "mask") m.mask_kind = parse_mask_kind(val);
      else fail(path + ": unknown manifest header key: " + key);
      ++header;
      continue;
    }
    ManifestEntry e;
    std::istringstream ss(line);
    if (!std::getline(ss, e.id, '\t') || !std::getline(ss, e.vis, '\t') ||
        !std::getline(ss, e.ir, '\t') || !std::getline(ss, e.near_focus, '\t') ||
        !std::getline(ss, e.far_focus)) {
      fail(path + ": malformed manifest entry: " + line);
    }
    m.entries.push_back(std::move(e));
  }
  if (header != 3) fail(path + ": incomplete manifest header");
  return m;
}

DatasetManifest build_dataset(const std::string& src_vis_dir,
                              const std::string& src_ir_dir,
                              const std::string& out_dir,
                              const DatasetConfig& config) {
  if (!fs::is_directory(src_vis_dir)) fail(src_vis_dir + ": not a directory");
  if (!fs::is_directory(src_ir_dir)) fail(src_ir_dir + ": not a directory");

  std::vector<fs::path> vis_files;
  for (const auto& entry : fs::directory_iterator(src_vis_dir)) {
    if (entry.is_regular_file()) vis_files.push_back(entry.path());
  }
  std::sort(vis_files.begin(), vis_files.end());
  if (vis_files.empty()) fail(src_vis_dir + ": no source images");

  fs::create_directories(out_dir);
  DatasetManifest m;
  m.root = out_dir;
  m.seed = config.seed;
  m.blur_sigma = config.blur_sigma;
  m.mask_kind = config.mask_kind;

  size_t index = 0;
  for (const auto& vis_path : vis_files) {
    const std::string name = vis_path.filename().string();
    const std::string stem = vis_path.stem().string();
    const fs::path ir_path = fs::path(src_ir_dir) / name;
    if (!fs::exists(ir_path)) fail(ir_path.string() + ": missing aligned infrared image");

    const Image vis = load_image(vis_path.string());
    const Image ir = load_image(ir_path.string());
    if (vis.channels != 3) fail(vis_path.string() + ": visible image must be RGB");
    if (!vis.same_size(ir)) fail(name + ": visible/infrared sizes differ");

    const Mask mask = make_mask(vis.height, vis.width, config.mask_kind,
                                static_cast<int64_t>(mix_seed(static_cast<uint64_t>(config.seed), index)));
    Image near_img, far_img;
    synth_multifocus_pair(vis, mask, config.blur_sigma, near_img, far_img);

    ManifestEntry e;
    e.id = stem;
    e.vis = stem + "_vis.png";
    e.ir = stem + "_ir.png";
    e.near_focus = stem + "_near.png";
    e.far_focus = stem + "_far.png";
    // Source images are copied byte-for-byte so reruns hash identically.
    fs::copy_file(vis_path, fs::path(out_dir) / e.vis, fs::copy_options::overwrite_existing);
    fs::copy_file(ir_path, fs::path(out_dir) / e.ir, fs::copy_options::overwrite_existing);
    save_image(near_img, (fs::path(out_dir) / e.near_focus).string());
    save_image(far_img, (fs::path(out_dir) / e.far_focus).string());
    m.entries.push_back(std::move(e));
    ++index;
  }
  write_manifest(m, (fs::path(out_dir) / "manifest.txt").string());
  return m;
}

JointSample load_sample(const DatasetManifest& m, size_t index) {
  if (index >= m.entries.size()) fail("load_sample: index out of range");
  const auto& e = m.entries[index];
  const fs::path root(m.root);
  JointSample s;
  s.id = e.id;
  s.vis = load_image((root / e.vis).string());
  s.ir = to_luma(load_image((root / e.ir).string()));
  s.near_focus = load_image((root / e.near_focus).string());
  s.far_focus = load_image((root / e.far_focus).string());
  s.gt = s.vis;
  return s;
}

}  // namespace gifnet
