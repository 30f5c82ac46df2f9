// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gifnet/dataset.hpp"
#include "gifnet/losses.hpp"
#include "gifnet/network.hpp"
#include "gifnet/rng.hpp"

namespace gifnet {

enum class Alternation { PerStep, PerEpoch };
Alternation parse_alternation(const std::string& s);
std::string alternation_name(Alternation a);

struct TrainConfig {
  int steps = 200;
  int batch = 1;
  int crop = 64;             // square crop side, multiple of the window
  float lr = 1e-4f;
  float clip_norm = 1.0f;    // global gradient norm cap; 0 disables
  uint64_t seed = 0;
  Alternation alternation = Alternation::PerStep;
  int checkpoint_every = 0;  // extra checkpoints every N steps; 0 = final only
  bool multi_task = true;    // false trains the MM role every step
  bool use_cfgm = true;      // false removes cross-branch gating
  bool use_rec = true;       // false scores the public loss on the fused image
  SaliencyBackend saliency = SaliencyBackend::SpatialGrad;
  bool raw_softmax = false;

  void validate(const ArchConfig& arch) const;
};

struct StepReport {
  int step = 0;  // 0-based global index
  Branch role = Branch::MM;
  LossValue loss;               // scalar = pub + pri; parts start {pub, pri}
  std::vector<float> lambdas;   // post-step gate values, parameter order
};

/// `step<TAB>role<TAB>total<TAB>pub<TAB>pri<TAB>lambda0,lambda1,...`
std::string format_step_report(const StepReport& r);

/// Current CFGM gate values in parameter (construction) order.
std::vector<float> lambda_values(const Model& m);

/// Role for a given 0-based step under the configured schedule.
Branch schedule_role(const TrainConfig& cfg, int step, int dataset_size);

/// Alternating two-task optimizer. Owns the model and the adaptive-moment
/// state; every source of randomness is derived from config.seed.
class Trainer {
 public:
  Trainer(Model model, const TrainConfig& config);

  const Model& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int steps_taken() const { return step_; }

  /// One update on one batch. Crops each sample at seeded shared
  /// coordinates, runs the role's task pair, freezes the auxiliary branch,
  /// and applies one adaptive-moment update to everything that received a
  /// gradient. Throws on non-finite losses with the parts in the message.
  StepReport train_step(const std::vector<JointSample>& batch, Branch role);
  StepReport train_step(const JointSample& sample, Branch role);

  /// Runs config.steps updates over the manifest in order (cycling),
  /// writing `train_log.tsv`, periodic `model_stepNNNNNN.gfck` files, and
  /// `model_final.gfck` under out_dir.
  std::vector<StepReport> train_loop(const DatasetManifest& manifest,
                                     const std::string& out_dir);

 private:
  struct AdamSlot {
    Tensor m, v;
    int64_t t = 0;
  };

  void zero_grads();
  void apply_update();

  Model model_;
  TrainConfig cfg_;
  Rng crop_rng_;
  std::vector<AdamSlot> opt_;
  int step_ = 0;
};

}  // namespace gifnet
