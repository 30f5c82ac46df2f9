// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "gifnet/image.hpp"

namespace gifnet {

/// All metrics operate on luma at 0-255 scale (fusion-literature
/// convention); RGB inputs are converted internally.

/// Average gradient: mean over the (H-1)x(W-1) interior of
/// sqrt((dx^2 + dy^2)/2) with forward differences.
double metric_ag(const Image& img);

/// Edge intensity: mean Sobel gradient magnitude, replicate padding.
double metric_ei(const Image& img);

/// Sum of correlation differences: r(fused-b, a) + r(fused-a, b) with
/// Pearson r; a zero-variance operand zeroes its term.
double metric_scd(const Image& fused, const Image& src_a, const Image& src_b);

/// Pixel-domain multi-scale visual information fidelity, averaged over
/// VIF(a->fused) and VIF(b->fused). Requires min(H,W) >= 17 (the coarsest
/// 17x17 window); later scales stop when the pyramid outgrows them.
double metric_vif(const Image& fused, const Image& src_a, const Image& src_b);

struct MetricRow {
  std::string id;
  double ei = 0.0, ag = 0.0, vif = 0.0, scd = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> per_image;
  MetricRow mean;  // id "MEAN", arithmetic means of per_image
};

/// Scores every fused image against the same-stem sources in a/b.
/// Throws on empty or unmatched sets; rows are sorted by id.
MetricReport evaluate_dir(const std::string& fused_dir,
                          const std::string& src_a_dir,
                          const std::string& src_b_dir);

/// TSV: header `id ei ag vif scd`, one row per image, final MEAN row.
std::string format_metric_report(const MetricReport& report);
void write_metric_report(const MetricReport& report, const std::string& path);

}  // namespace gifnet
