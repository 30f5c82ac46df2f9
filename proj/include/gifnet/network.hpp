// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gifnet/autodiff.hpp"
#include "gifnet/image.hpp"

namespace gifnet {

/// Architecture hyperparameters. Defaults are desk-scale.
struct ArchConfig {
  int base_channels = 16;
  int enc_layers = 3;
  int branch_layers = 4;  // must be even
  int embed_dim = 32;     // must be divisible by heads
  int heads = 2;
  int window = 8;         // even, >= 2
  float mlp_ratio = 2.0f;

  void validate() const;
  int shared_channels() const { return base_channels * enc_layers; }
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }
};

enum class Branch { MM, DP };
const char* branch_prefix(Branch b);  // "mm" / "dp"

/// Parameter store. Every parameter is a named autodiff leaf created in a
/// fixed construction order (encoder, REC decoder, global decoder, MM branch,
/// DP branch), which also fixes the checkpoint layout and the seeded-init
/// draw order.
class Model {
 public:
  Model() = default;
  Model(const ArchConfig& arch, uint64_t seed);

  const ArchConfig& arch() const { return arch_; }
  const std::vector<std::pair<std::string, ad::VarPtr>>& params() const {
    return params_;
  }
  /// Throws std::out_of_range for unknown names.
  const ad::VarPtr& param(const std::string& name) const;
  bool has_param(const std::string& name) const;

  /// Toggles requires_grad on every parameter whose name starts with prefix
  /// (empty prefix = all). Takes effect for graphs built afterwards.
  void set_trainable(const std::string& prefix, bool trainable);

 private:
  friend Model load_checkpoint(const std::string& path);
  void add_param(const std::string& name, Tensor value);

  ArchConfig arch_;
  std::vector<std::pair<std::string, ad::VarPtr>> params_;
  std::unordered_map<std::string, size_t> index_;
};

/// Dense shared encoder. img is a [H,W,C] node, C in {1,3}; 1-channel input
/// is replicated to the 3-channel encoder width. Output [H,W,base*layers].
ad::VarPtr senc_forward(const Model& m, const ad::VarPtr& img);

/// One branch block (1-indexed). Windowed self-attention (shifted on even
/// indices), lambda-scaled cross-attention from x_a on odd indices (skipped
/// when use_cfgm is false), then the MLP. x_m, x_a are [H,W,embed_dim] with
/// window-aligned spatial dims.
ad::VarPtr cfgm_layer(const Model& m, Branch branch, const ad::VarPtr& x_m,
                      const ad::VarPtr& x_a, int layer_index, bool use_cfgm = true);

struct BranchOutputs {
  ad::VarPtr mm;
  ad::VarPtr dp;
};

/// Runs both branch stacks in lockstep over one pair of shared feature maps:
/// each branch projects concat(shared_a, shared_b) to embed_dim, and at layer
/// i the auxiliary stream is the other branch's layer i-1 output.
BranchOutputs run_branches(const Model& m, const ad::VarPtr& shared_a,
                           const ad::VarPtr& shared_b, bool use_cfgm = true);

/// The `branch` output of run_branches on this pair.
ad::VarPtr branch_forward(const Model& m, const ad::VarPtr& shared_a,
                          const ad::VarPtr& shared_b, Branch branch);

/// Global decoder: [H,W,embed_dim] -> sigmoid-bounded [H,W,1].
ad::VarPtr gdec_forward(const Model& m, const ad::VarPtr& fused);

/// REC decoder: [H,W,base*layers] shared features -> [H,W,1].
ad::VarPtr rec_forward(const Model& m, const ad::VarPtr& shared);

/// Little-endian binary checkpoint (magic "GIFN", version 1, ArchConfig,
/// then name/shape/data per tensor in construction order). Round-trips
/// bit-exactly.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace gifnet
