// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gifnet/image.hpp"

namespace gifnet {

/// One aligned training record: visible RGB, infrared, synthetic near/far
/// focus pair, and the RGB ground truth (identical to vis).
struct JointSample {
  Image vis;         // 3ch
  Image ir;          // 1ch
  Image near_focus;  // 3ch
  Image far_focus;   // 3ch
  Image gt;          // 3ch, == vis
  std::string id;
};

enum class MaskKind { LeftHalf, TopHalf, CenteredDisk };

MaskKind parse_mask_kind(const std::string& s);
std::string mask_kind_name(MaskKind kind);

struct DatasetConfig {
  int64_t seed = 0;
  float blur_sigma = 3.0f;
  MaskKind mask_kind = MaskKind::CenteredDisk;
};

struct ManifestEntry {
  std::string id;
  std::string vis, ir, near_focus, far_focus;  // paths relative to root
};

struct DatasetManifest {
  std::string root;
  int64_t seed = 0;
  float blur_sigma = 0.0f;
  MaskKind mask_kind = MaskKind::CenteredDisk;
  std::vector<ManifestEntry> entries;
};

/// Binary focus mask; value 1 marks the in-focus region of the near image.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}
  uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

/// Gaussian blur with a truncated kernel of radius ceil(3*sigma) and
/// edge-replicate padding. sigma must be > 0.
Image gaussian_blur(const Image& img, float sigma);

/// Deterministic mask for (kind, seed, dims). The centered disk draws its
/// radius uniformly from [0.2, 0.4]*min(h,w) using the seeded generator.
Mask make_mask(int height, int width, MaskKind kind, int64_t seed);

/// near = vis where mask=1 and blurred elsewhere; far is the complement.
void synth_multifocus_pair(const Image& vis, const Mask& mask, float sigma,
                           Image& near_out, Image& far_out);

/// Builds the joint dataset from aligned, same-named (vis, ir) pairs.
/// Copies vis/ir byte-for-byte, synthesizes near/far, writes manifest.txt
/// under out_dir, and returns the manifest. Reproducible from the seed.
DatasetManifest build_dataset(const std::string& src_vis_dir,
                              const std::string& src_ir_dir,
                              const std::string& out_dir,
                              const DatasetConfig& config);

void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

/// Loads the images behind one manifest entry (gt aliases vis).
JointSample load_sample(const DatasetManifest& m, size_t index);

}  // namespace gifnet
