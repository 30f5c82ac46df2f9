// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gifnet/autodiff.hpp"
#include "gifnet/image.hpp"

namespace gifnet {

/// Scalar loss with a named breakdown for logging. Entries whose names start
/// with "w_" are informational weights; the remaining entries of public_loss
/// and the private losses sum to the scalar.
struct LossValue {
  float scalar = 0.0f;
  std::vector<std::pair<std::string, float>> parts;
};

/// Softmax mixing proportions for the multi-modal private loss.
struct MixWeights {
  float w_ir = 0.5f;
  float w_vis = 0.5f;
};

enum class SaliencyBackend { SpatialGrad, ClassifierGrad };
SaliencyBackend parse_saliency_backend(const std::string& s);
std::string saliency_backend_name(SaliencyBackend b);

// Graph-level builders used by the trainer; inputs are [H,W,1] nodes.
// The image-level functions below wrap these, so both views share one
// implementation.
namespace lossgraph {

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1=0.01^2,
/// C2=0.03^2 at dynamic range 1, averaged over valid window positions.
/// Requires spatial dims >= 11.
ad::VarPtr ssim(const ad::VarPtr& x, const ad::VarPtr& y);
ad::VarPtr ssim_loss(const ad::VarPtr& x, const ad::VarPtr& y);  // 1 - ssim
ad::VarPtr mse(const ad::VarPtr& x, const ad::VarPtr& y);

/// ssim_loss + mse, the reconstruction consistency objective.
ad::VarPtr public_loss(const ad::VarPtr& rec, const ad::VarPtr& ref);

/// w_ir * mse(fused, ir) + w_vis * mse(fused, vis).
ad::VarPtr mm_private(const ad::VarPtr& fused, const ad::VarPtr& ir,
                      const ad::VarPtr& vis, const MixWeights& w);
ad::VarPtr dp_private(const ad::VarPtr& fused, const ad::VarPtr& gt);

}  // namespace lossgraph

// Image-level evaluation (forward only). All inputs single-channel.
float ssim(const Image& x, const Image& y);
float loss_ssim(const Image& x, const Image& y);
float loss_mse(const Image& x, const Image& y);

/// parts: ssim, mse.
LossValue public_loss(const Image& rec, const Image& vis_luma);

/// Saliency energy of an image under the chosen backend.
/// - spatial-grad: phi = fixed 3x3 Laplacian response (replicate padding);
///   result is the sum of absolute forward differences of phi.
/// - classifier-grad: sum of absolute gradients of a small built-in
///   classifier's top logit with respect to its last feature map.
float gradf(SaliencyBackend backend, const Image& img);

/// softmax(g_ir/tau, g_vis/tau); tau = (g_ir+g_vis)/2 + 1e-8 unless
/// raw_softmax, which uses tau = 1.
MixWeights mixing_weights(float g_ir, float g_vis, bool raw_softmax = false);

/// parts: ir_term, vis_term (summing to scalar), w_ir, w_vis.
LossValue mm_private_loss(const Image& fused, const Image& ir,
                          const Image& vis_luma, const MixWeights& w);

/// parts: mse.
LossValue dp_private_loss(const Image& fused, const Image& gt_luma);

/// scalar = pub.scalar + pri.scalar; parts: pub, pri, then the inputs'
/// parts prefixed with "pub." / "pri.".
LossValue total_loss(const LossValue& pub, const LossValue& pri);

}  // namespace gifnet
