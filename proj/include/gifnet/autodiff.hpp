// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "gifnet/tensor.hpp"

namespace gifnet::ad {

/// Node in a dynamically built computation graph. Graphs are built eagerly
/// (values computed at op construction) and differentiated by walking the
/// graph in reverse topological order.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily; empty until touched by backward()
  bool requires_grad = false;  // true if gradient must reach this node
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;  // null for leaves and constants

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
  void clear_grad() { grad = Tensor(); }
};

using VarPtr = std::shared_ptr<Node>;

/// Gradient sink: a parameter or an input under test.
VarPtr leaf(Tensor value);
/// Gradient-blocking input (images, fixed kernels, masks).
VarPtr constant(Tensor value);

/// Reverse-mode sweep from a scalar root (size-1 value, seeded with 1).
/// Accumulates into the .grad of every reachable node with requires_grad.
/// Call at most once per graph; re-running would re-propagate totals.
void backward(const VarPtr& root);

// ----- elementwise -----
VarPtr add(const VarPtr& a, const VarPtr& b);
VarPtr sub(const VarPtr& a, const VarPtr& b);
VarPtr mul(const VarPtr& a, const VarPtr& b);
VarPtr divide(const VarPtr& a, const VarPtr& b);
VarPtr affine(const VarPtr& x, float scale, float shift);  // scale*x + shift
VarPtr relu(const VarPtr& x);
VarPtr gelu(const VarPtr& x);
VarPtr sigmoid(const VarPtr& x);

/// out = s * x with s a learnable size-1 tensor (the gating scalar).
VarPtr scale_by(const VarPtr& s, const VarPtr& x);

// ----- shape -----
VarPtr reshape(const VarPtr& x, std::vector<int> shape);
VarPtr concat_channels(const std::vector<VarPtr>& xs);  // [H,W,Ci] -> [H,W,sum Ci]

/// Bijective row permutation: rows of x (trailing dim = row width) move to
/// out row i from x row map[i]. Backward scatters along the inverse map.
VarPtr permute_rows(const VarPtr& x, std::shared_ptr<const std::vector<int64_t>> map,
                    std::vector<int> out_shape, int row_width);

VarPtr split_heads(const VarPtr& x, int heads);  // [B,T,H*D] -> [B*H,T,D]
VarPtr merge_heads(const VarPtr& x, int heads);  // [B*H,T,D] -> [B,T,H*D]

// ----- linear algebra -----
/// x treated as rows of size w.dim(0); w is [Cin,Cout], b optional [Cout].
VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b);
VarPtr bmm(const VarPtr& a, const VarPtr& b);     // [B,M,K]x[B,K,N] -> [B,M,N]
VarPtr bmm_nt(const VarPtr& a, const VarPtr& b);  // [B,M,K]x[B,N,K] -> [B,M,N]

// ----- convolution -----
enum class Padding { Same, Valid };
/// x [H,W,Cin], w [Cout,KH,KW,Cin], b optional [Cout]. Same-padding is
/// zero-filled; odd kernel sizes only.
VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, Padding pad);

// ----- normalization / attention pieces -----
VarPtr layer_norm(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta,
                  float eps = 1e-5f);
VarPtr softmax_last(const VarPtr& x);

// ----- reductions -----
VarPtr sum_all(const VarPtr& x);     // -> [1]
VarPtr mean_all(const VarPtr& x);    // -> [1]
VarPtr mean_spatial(const VarPtr& x);  // [H,W,C] -> [C]
VarPtr select_index(const VarPtr& x, int64_t flat_index);  // -> [1]

inline float scalar_value(const VarPtr& v) { return v->value[0]; }

}  // namespace gifnet::ad
