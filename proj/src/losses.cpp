// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gifnet/rng.hpp"

namespace gifnet {

namespace {

constexpr int kSsimWindow = 11;
constexpr float kSsimC1 = 0.01f * 0.01f;
constexpr float kSsimC2 = 0.03f * 0.03f;

void check_plane(const ad::VarPtr& v, const char* who) {
  if (v->value.rank() != 3 || v->value.dim(2) != 1)
    throw std::invalid_argument(std::string(who) + ": expected [H,W,1] input, got " +
                                v->value.shape_str());
}

ad::VarPtr ssim_kernel() {
  Tensor k({1, kSsimWindow, kSsimWindow, 1});
  constexpr double kSigma = 1.5;
  const double c = (kSsimWindow - 1) / 2.0;
  double sum = 0.0;
  for (int y = 0; y < kSsimWindow; ++y)
    for (int x = 0; x < kSsimWindow; ++x) {
      const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
      const double v = std::exp(-d2 / (2.0 * kSigma * kSigma));
      k[y * kSsimWindow + x] = static_cast<float>(v);
      sum += v;
    }
  for (int64_t i = 0; i < k.size(); ++i)
    k[i] = static_cast<float>(static_cast<double>(k[i]) / sum);
  return ad::constant(std::move(k));
}

ad::VarPtr as_plane_constant(const Image& img, const char* who) {
  if (img.channels != 1)
    throw std::invalid_argument(std::string(who) + ": single-channel input required");
  return ad::constant(image_to_tensor(img));
}

// phi: fixed 3x3 Laplacian response with replicate padding, in double.
std::vector<double> laplacian_response(const Image& luma) {
  const int h = luma.height, w = luma.width;
  std::vector<double> phi(static_cast<size_t>(h) * w);
  auto px = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return static_cast<double>(luma.at(y, x));
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      phi[static_cast<size_t>(y) * w + x] =
          px(y - 1, x) + px(y + 1, x) + px(y, x - 1) + px(y, x + 1) - 4.0 * px(y, x);
  return phi;
}

float spatial_gradf(const Image& img) {
  const Image luma = to_luma(img);
  const auto phi = laplacian_response(luma);
  const int h = luma.height, w = luma.width;
  double acc = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = phi[static_cast<size_t>(y) * w + x];
      if (y + 1 < h) acc += std::fabs(phi[static_cast<size_t>(y + 1) * w + x] - v);
      if (x + 1 < w) acc += std::fabs(phi[static_cast<size_t>(y) * w + x + 1] - v);
    }
  return static_cast<float>(acc);
}

// Fixed-weight toy classifier backing the classifier-grad backend: two conv
// layers into a 16-channel feature map, pooled into 4 logits. Weights are
// seeded once per process, never trained.
struct ToyClassifier {
  Tensor w1, b1, w2, b2, wh, bh;

  ToyClassifier() : w1({8, 3, 3, 1}), b1({8}), w2({16, 3, 3, 8}), b2({16}),
                    wh({16, 4}), bh({4}) {
    Rng rng(0x51cf00d5eedULL);
    const float bound1 = std::sqrt(6.0f / 9.0f);
    for (int64_t i = 0; i < w1.size(); ++i)
      w1[i] = static_cast<float>(rng.uniform(-bound1, bound1));
    const float bound2 = std::sqrt(6.0f / 72.0f);
    for (int64_t i = 0; i < w2.size(); ++i)
      w2[i] = static_cast<float>(rng.uniform(-bound2, bound2));
    for (int64_t i = 0; i < wh.size(); ++i)
      wh[i] = static_cast<float>(rng.normal() * 0.1);
  }
};

float classifier_gradf(const Image& img) {
  static const ToyClassifier net;
  const Image luma = to_luma(img);

  auto x = ad::constant(image_to_tensor(luma));
  auto f1 = ad::relu(ad::conv2d(x, ad::constant(net.w1), ad::constant(net.b1),
                                ad::Padding::Same));
  auto f2 = ad::relu(ad::conv2d(f1, ad::constant(net.w2), ad::constant(net.b2),
                                ad::Padding::Same));

  // Re-root the graph at the feature map so the sweep stops there.
  auto feat = ad::leaf(f2->value);
  auto logits = ad::linear(ad::reshape(ad::mean_spatial(feat), {1, 16}),
                           ad::constant(net.wh), ad::constant(net.bh));
  int64_t top = 0;
  for (int64_t i = 1; i < 4; ++i)
    if (logits->value[i] > logits->value[top]) top = i;
  ad::backward(ad::select_index(logits, top));

  double acc = 0.0;
  for (int64_t i = 0; i < feat->grad.size(); ++i) acc += std::fabs(feat->grad[i]);
  return static_cast<float>(acc);
}

void append_prefixed(std::vector<std::pair<std::string, float>>& dst,
                     const std::string& prefix, const LossValue& src) {
  for (const auto& [name, v] : src.parts) dst.emplace_back(prefix + name, v);
}

}  // namespace

SaliencyBackend parse_saliency_backend(const std::string& s) {
  if (s == "spatial-grad") return SaliencyBackend::SpatialGrad;
  if (s == "classifier-grad") return SaliencyBackend::ClassifierGrad;
  throw std::invalid_argument("unknown saliency backend: " + s);
}

std::string saliency_backend_name(SaliencyBackend b) {
  return b == SaliencyBackend::SpatialGrad ? "spatial-grad" : "classifier-grad";
}

namespace lossgraph {

ad::VarPtr ssim(const ad::VarPtr& x, const ad::VarPtr& y) {
  check_plane(x, "ssim");
  check_plane(y, "ssim");
  if (!x->value.same_shape(y->value))
    throw std::invalid_argument("ssim: shape mismatch");
  if (x->value.dim(0) < kSsimWindow || x->value.dim(1) < kSsimWindow)
    throw std::invalid_argument("ssim: spatial dims must be >= 11");

  auto k = ssim_kernel();
  auto mu_x = ad::conv2d(x, k, nullptr, ad::Padding::Valid);
  auto mu_y = ad::conv2d(y, k, nullptr, ad::Padding::Valid);
  auto sxx = ad::sub(ad::conv2d(ad::mul(x, x), k, nullptr, ad::Padding::Valid),
                     ad::mul(mu_x, mu_x));
  auto syy = ad::sub(ad::conv2d(ad::mul(y, y), k, nullptr, ad::Padding::Valid),
                     ad::mul(mu_y, mu_y));
  auto sxy = ad::sub(ad::conv2d(ad::mul(x, y), k, nullptr, ad::Padding::Valid),
                     ad::mul(mu_x, mu_y));

  auto num = ad::mul(ad::affine(ad::mul(mu_x, mu_y), 2.0f, kSsimC1),
                     ad::affine(sxy, 2.0f, kSsimC2));
  auto den = ad::mul(
      ad::affine(ad::add(ad::mul(mu_x, mu_x), ad::mul(mu_y, mu_y)), 1.0f, kSsimC1),
      ad::affine(ad::add(sxx, syy), 1.0f, kSsimC2));
  return ad::mean_all(ad::divide(num, den));
}

ad::VarPtr ssim_loss(const ad::VarPtr& x, const ad::VarPtr& y) {
  return ad::affine(ssim(x, y), -1.0f, 1.0f);
}

ad::VarPtr mse(const ad::VarPtr& x, const ad::VarPtr& y) {
  if (!x->value.same_shape(y->value))
    throw std::invalid_argument("mse: shape mismatch");
  auto d = ad::sub(x, y);
  return ad::mean_all(ad::mul(d, d));
}

ad::VarPtr public_loss(const ad::VarPtr& rec, const ad::VarPtr& ref) {
  return ad::add(ssim_loss(rec, ref), mse(rec, ref));
}

ad::VarPtr mm_private(const ad::VarPtr& fused, const ad::VarPtr& ir,
                      const ad::VarPtr& vis, const MixWeights& w) {
  return ad::add(ad::affine(mse(fused, ir), w.w_ir, 0.0f),
                 ad::affine(mse(fused, vis), w.w_vis, 0.0f));
}

ad::VarPtr dp_private(const ad::VarPtr& fused, const ad::VarPtr& gt) {
  return mse(fused, gt);
}

}  // namespace lossgraph

float ssim(const Image& x, const Image& y) {
  return ad::scalar_value(lossgraph::ssim(as_plane_constant(x, "ssim"),
                                          as_plane_constant(y, "ssim")));
}

float loss_ssim(const Image& x, const Image& y) { return 1.0f - ssim(x, y); }

float loss_mse(const Image& x, const Image& y) {
  return ad::scalar_value(lossgraph::mse(as_plane_constant(x, "loss_mse"),
                                         as_plane_constant(y, "loss_mse")));
}

LossValue public_loss(const Image& rec, const Image& vis_luma) {
  const float s = loss_ssim(rec, vis_luma);
  const float m = loss_mse(rec, vis_luma);
  LossValue out;
  out.scalar = s + m;
  out.parts = {{"ssim", s}, {"mse", m}};
  return out;
}

float gradf(SaliencyBackend backend, const Image& img) {
  switch (backend) {
    case SaliencyBackend::SpatialGrad: return spatial_gradf(img);
    case SaliencyBackend::ClassifierGrad: return classifier_gradf(img);
  }
  throw std::invalid_argument("gradf: unknown backend");
}

MixWeights mixing_weights(float g_ir, float g_vis, bool raw_softmax) {
  const double tau = raw_softmax
      ? 1.0
      : 0.5 * (static_cast<double>(g_ir) + static_cast<double>(g_vis)) + 1e-8;
  const double a = g_ir / tau;
  const double b = g_vis / tau;
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  const double w = ea / (ea + eb);
  MixWeights out;
  out.w_ir = static_cast<float>(w);
  out.w_vis = static_cast<float>(1.0 - w);
  return out;
}

LossValue mm_private_loss(const Image& fused, const Image& ir,
                          const Image& vis_luma, const MixWeights& w) {
  const float ir_term = w.w_ir * loss_mse(fused, ir);
  const float vis_term = w.w_vis * loss_mse(fused, vis_luma);
  LossValue out;
  out.scalar = ir_term + vis_term;
  out.parts = {{"ir_term", ir_term},
               {"vis_term", vis_term},
               {"w_ir", w.w_ir},
               {"w_vis", w.w_vis}};
  return out;
}

LossValue dp_private_loss(const Image& fused, const Image& gt_luma) {
  const float m = loss_mse(fused, gt_luma);
  LossValue out;
  out.scalar = m;
  out.parts = {{"mse", m}};
  return out;
}

LossValue total_loss(const LossValue& pub, const LossValue& pri) {
  LossValue out;
  out.scalar = pub.scalar + pri.scalar;
  out.parts = {{"pub", pub.scalar}, {"pri", pri.scalar}};
  append_prefixed(out.parts, "pub.", pub);
  append_prefixed(out.parts, "pri.", pri);
  return out;
}

}  // namespace gifnet
