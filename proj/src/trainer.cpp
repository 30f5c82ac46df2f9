// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>

namespace gifnet {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

Image crop_image(const Image& img, int y0, int x0, int side) {
  Image out(side, side, img.channels);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Alternation parse_alternation(const std::string& s) {
  if (s == "per-step") return Alternation::PerStep;
  if (s == "per-epoch") return Alternation::PerEpoch;
  throw std::invalid_argument("unknown alternation: " + s);
}

std::string alternation_name(Alternation a) {
  return a == Alternation::PerStep ? "per-step" : "per-epoch";
}

void TrainConfig::validate(const ArchConfig& arch) const {
  if (steps <= 0) throw std::invalid_argument("train: steps must be positive");
  if (batch <= 0) throw std::invalid_argument("train: batch must be positive");
  if (crop <= 0 || crop % arch.window != 0)
    throw std::invalid_argument(
        "train: crop must be a positive multiple of the attention window");
  if (!(lr > 0.0f)) throw std::invalid_argument("train: lr must be positive");
  if (clip_norm < 0.0f)
    throw std::invalid_argument("train: clip_norm must be non-negative");
  if (checkpoint_every < 0)
    throw std::invalid_argument("train: checkpoint_every must be non-negative");
}

std::string format_step_report(const StepReport& r) {
  if (r.loss.parts.size() < 2)
    throw std::invalid_argument("step report is missing pub/pri parts");
  std::string line = std::to_string(r.step);
  line += '\t';
  line += r.role == Branch::MM ? "MM-main" : "DP-main";
  line += '\t';
  line += fmt_float(r.loss.scalar);
  line += '\t';
  line += fmt_float(r.loss.parts[0].second);
  line += '\t';
  line += fmt_float(r.loss.parts[1].second);
  line += '\t';
  for (size_t i = 0; i < r.lambdas.size(); ++i) {
    if (i) line += ',';
    line += fmt_float(r.lambdas[i]);
  }
  return line;
}

std::vector<float> lambda_values(const Model& m) {
  std::vector<float> out;
  for (const auto& [name, node] : m.params())
    if (ends_with(name, ".lambda")) out.push_back(node->value[0]);
  return out;
}

Branch schedule_role(const TrainConfig& cfg, int step, int dataset_size) {
  if (!cfg.multi_task) return Branch::MM;
  if (cfg.alternation == Alternation::PerStep)
    return step % 2 == 0 ? Branch::MM : Branch::DP;
  const int per_epoch =
      std::max(1, (dataset_size + cfg.batch - 1) / cfg.batch);
  return (step / per_epoch) % 2 == 0 ? Branch::MM : Branch::DP;
}

Trainer::Trainer(Model model, const TrainConfig& config)
    : model_(std::move(model)),
      cfg_(config),
      crop_rng_(mix_seed(config.seed, 0xC209)) {
  cfg_.validate(model_.arch());
  opt_.resize(model_.params().size());
  for (size_t i = 0; i < opt_.size(); ++i) {
    const auto& shape = model_.params()[i].second->value.shape();
    opt_[i].m = Tensor(shape);
    opt_[i].v = Tensor(shape);
  }
}

void Trainer::zero_grads() {
  for (const auto& [name, node] : model_.params()) node->grad = Tensor();
}

void Trainer::apply_update() {
  double sq = 0.0;
  for (const auto& [name, node] : model_.params()) {
    if (!node->requires_grad || node->grad.empty()) continue;
    for (int64_t i = 0; i < node->grad.size(); ++i)
      sq += static_cast<double>(node->grad[i]) * node->grad[i];
  }
  float scale = 1.0f;
  if (cfg_.clip_norm > 0.0f &&
      sq > static_cast<double>(cfg_.clip_norm) * cfg_.clip_norm)
    scale = static_cast<float>(cfg_.clip_norm / std::sqrt(sq));

  for (size_t i = 0; i < opt_.size(); ++i) {
    const auto& node = model_.params()[i].second;
    if (!node->requires_grad || node->grad.empty()) continue;
    AdamSlot& slot = opt_[i];
    slot.t += 1;
    const float c1 =
        static_cast<float>(1.0 - std::pow(kBeta1, static_cast<double>(slot.t)));
    const float c2 =
        static_cast<float>(1.0 - std::pow(kBeta2, static_cast<double>(slot.t)));
    Tensor& p = node->value;
    for (int64_t j = 0; j < p.size(); ++j) {
      const float g = node->grad[j] * scale;
      slot.m[j] = static_cast<float>(kBeta1) * slot.m[j] +
                  static_cast<float>(1.0 - kBeta1) * g;
      slot.v[j] = static_cast<float>(kBeta2) * slot.v[j] +
                  static_cast<float>(1.0 - kBeta2) * g * g;
      const float mhat = slot.m[j] / c1;
      const float vhat = slot.v[j] / c2;
      p[j] -= cfg_.lr * mhat /
              (std::sqrt(vhat) + static_cast<float>(kAdamEps));
    }
  }
}

StepReport Trainer::train_step(const std::vector<JointSample>& batch,
                               Branch role) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const int side = cfg_.crop;

  model_.set_trainable("", true);
  model_.set_trainable(role == Branch::MM ? "dp." : "mm.", false);
  zero_grads();

  std::vector<ad::VarPtr> totals;
  totals.reserve(batch.size());
  double pub_acc = 0.0, pri_acc = 0.0, ssim_acc = 0.0, mse_acc = 0.0;
  double pri1_acc = 0.0, pri2_acc = 0.0, wir_acc = 0.0, wvis_acc = 0.0;

  for (const JointSample& sample : batch) {
    const Image& probe = sample.vis;
    if (probe.height < side || probe.width < side)
      throw std::invalid_argument("train_step: sample " + sample.id +
                                  " is smaller than the crop");
    const int y0 = static_cast<int>(crop_rng_.uniform() *
                                    static_cast<double>(probe.height - side + 1));
    const int x0 = static_cast<int>(crop_rng_.uniform() *
                                    static_cast<double>(probe.width - side + 1));

    Image a_img, b_img, ref_img;
    if (role == Branch::MM) {
      a_img = to_luma(crop_image(sample.vis, y0, x0, side));
      b_img = crop_image(sample.ir, y0, x0, side);
      ref_img = a_img;
    } else {
      a_img = to_luma(crop_image(sample.near_focus, y0, x0, side));
      b_img = to_luma(crop_image(sample.far_focus, y0, x0, side));
      ref_img = to_luma(crop_image(sample.gt, y0, x0, side));
    }

    auto fa = senc_forward(model_, ad::constant(image_to_tensor(a_img)));
    auto fb = senc_forward(model_, ad::constant(image_to_tensor(b_img)));
    auto outs = run_branches(model_, fa, fb, cfg_.use_cfgm);
    auto fused = gdec_forward(model_, role == Branch::MM ? outs.mm : outs.dp);

    // The reconstruction branch always autoencodes the multi-modal pair's
    // shared features, whichever branch is the step's main task. Disabling
    // it removes the consistency objective; training then runs on the
    // private fusion loss alone.
    auto ref_n = ad::constant(image_to_tensor(ref_img));
    ad::VarPtr pub_n;
    if (cfg_.use_rec) {
      ad::VarPtr ra = fa, rb = fb;
      if (role == Branch::DP) {
        const Image mv = to_luma(crop_image(sample.vis, y0, x0, side));
        const Image mi = crop_image(sample.ir, y0, x0, side);
        ra = senc_forward(model_, ad::constant(image_to_tensor(mv)));
        rb = senc_forward(model_, ad::constant(image_to_tensor(mi)));
      }
      auto rec_src =
          rec_forward(model_, ad::affine(ad::add(ra, rb), 0.5f, 0.0f));
      auto ssim_n = lossgraph::ssim_loss(rec_src, ref_n);
      auto mse_n = lossgraph::mse(rec_src, ref_n);
      pub_n = ad::add(ssim_n, mse_n);
      ssim_acc += ad::scalar_value(ssim_n);
      mse_acc += ad::scalar_value(mse_n);
      pub_acc += ad::scalar_value(pub_n);
    }

    ad::VarPtr pri_n;
    if (role == Branch::MM) {
      const MixWeights w =
          mixing_weights(gradf(cfg_.saliency, b_img), gradf(cfg_.saliency, a_img),
                         cfg_.raw_softmax);
      auto ir_term = ad::affine(
          lossgraph::mse(fused, ad::constant(image_to_tensor(b_img))), w.w_ir, 0.0f);
      auto vis_term = ad::affine(
          lossgraph::mse(fused, ad::constant(image_to_tensor(a_img))), w.w_vis, 0.0f);
      pri_n = ad::add(ir_term, vis_term);
      pri1_acc += ad::scalar_value(ir_term);
      pri2_acc += ad::scalar_value(vis_term);
      wir_acc += w.w_ir;
      wvis_acc += w.w_vis;
    } else {
      pri_n = lossgraph::mse(fused, ref_n);
      pri1_acc += ad::scalar_value(pri_n);
    }

    pri_acc += ad::scalar_value(pri_n);
    totals.push_back(pub_n ? ad::add(pub_n, pri_n) : pri_n);
  }

  const double n = static_cast<double>(batch.size());
  LossValue lv;
  const float pub_mean = static_cast<float>(pub_acc / n);
  const float pri_mean = static_cast<float>(pri_acc / n);
  lv.scalar = pub_mean + pri_mean;
  lv.parts = {{"pub", pub_mean},
              {"pri", pri_mean},
              {"pub.ssim", static_cast<float>(ssim_acc / n)},
              {"pub.mse", static_cast<float>(mse_acc / n)}};
  if (role == Branch::MM) {
    lv.parts.emplace_back("pri.ir_term", static_cast<float>(pri1_acc / n));
    lv.parts.emplace_back("pri.vis_term", static_cast<float>(pri2_acc / n));
    lv.parts.emplace_back("w_ir", static_cast<float>(wir_acc / n));
    lv.parts.emplace_back("w_vis", static_cast<float>(wvis_acc / n));
  } else {
    lv.parts.emplace_back("pri.mse", static_cast<float>(pri1_acc / n));
  }

  bool finite = std::isfinite(lv.scalar);
  for (const auto& [pname, pval] : lv.parts) finite &= std::isfinite(pval);
  if (!finite) {
    std::string msg = "non-finite loss at step " + std::to_string(step_) + ":";
    for (const auto& [pname, pval] : lv.parts)
      msg += " " + pname + "=" + fmt_float(pval);
    throw std::runtime_error(msg);
  }

  auto root = totals[0];
  for (size_t i = 1; i < totals.size(); ++i) root = ad::add(root, totals[i]);
  if (totals.size() > 1)
    root = ad::affine(root, 1.0f / static_cast<float>(totals.size()), 0.0f);
  ad::backward(root);
  apply_update();

  StepReport rep;
  rep.step = step_;
  rep.role = role;
  rep.loss = std::move(lv);
  rep.lambdas = lambda_values(model_);
  step_ += 1;
  return rep;
}

StepReport Trainer::train_step(const JointSample& sample, Branch role) {
  return train_step(std::vector<JointSample>{sample}, role);
}

std::vector<StepReport> Trainer::train_loop(const DatasetManifest& manifest,
                                            const std::string& out_dir) {
  if (manifest.entries.empty())
    throw std::invalid_argument("train_loop: empty manifest");
  std::filesystem::create_directories(out_dir);

  const size_t n = manifest.entries.size();
  std::vector<JointSample> cache;
  cache.reserve(n);
  for (size_t i = 0; i < n; ++i) cache.push_back(load_sample(manifest, i));

  const std::string log_path = out_dir + "/train_log.tsv";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::runtime_error(log_path + ": cannot open step log");

  std::vector<StepReport> reports;
  reports.reserve(static_cast<size_t>(cfg_.steps));
  size_t cursor = 0;
  for (int s = 0; s < cfg_.steps; ++s) {
    const Branch role = schedule_role(cfg_, step_, static_cast<int>(n));
    std::vector<JointSample> batch;
    batch.reserve(static_cast<size_t>(cfg_.batch));
    for (int b = 0; b < cfg_.batch; ++b) batch.push_back(cache[cursor++ % n]);

    StepReport rep = train_step(batch, role);
    log << format_step_report(rep) << '\n';
    reports.push_back(std::move(rep));

    if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "model_step%06d.gfck", step_);
      save_checkpoint(model_, out_dir + "/" + name);
    }
  }
  save_checkpoint(model_, out_dir + "/model_final.gfck");
  log.flush();
  if (!log) throw std::runtime_error(log_path + ": step log write failed");
  return reports;
}

}  // namespace gifnet
