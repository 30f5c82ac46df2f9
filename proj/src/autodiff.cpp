// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "gifnet/threading.hpp"

namespace gifnet::ad {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_same_shape(const VarPtr& a, const VarPtr& b, const char* op) {
  if (!a->value.same_shape(b->value))
    fail(std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
}

VarPtr make_op(Tensor value, std::vector<VarPtr> inputs, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs) {
    if (in->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backward_fn = std::move(bw);
  return n;
}

// C[M,N] (+)= op(A) * op(B); all row-major.
// Loop orders keep the innermost index contiguous on the streamed operands.
void matmul_nn(const float* a, const float* b, float* c, int64_t m, int64_t n, int64_t k) {
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      float* crow = c + i * n;
      const float* arow = a + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const float av = arow[p];
        if (av == 0.0f) continue;
        const float* brow = b + p * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

void matmul_nt(const float* a, const float* b, float* c, int64_t m, int64_t n, int64_t k) {
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    for (int64_t i = r0; i < r1; ++i) {
      float* crow = c + i * n;
      const float* arow = a + i * k;
      for (int64_t j = 0; j < n; ++j) {
        const float* brow = b + j * k;
        float acc = 0.0f;
        for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] += acc;
      }
    }
  });
}

// C[K,N] += A[M,K]^T * B[M,N]; parallel over K-chunks, race-free per element.
void matmul_tn(const float* a, const float* b, float* c, int64_t m, int64_t n, int64_t k) {
  parallel_for(k, [&](int64_t k0, int64_t k1) {
    for (int64_t i = 0; i < m; ++i) {
      const float* arow = a + i * k;
      const float* brow = b + i * n;
      for (int64_t p = k0; p < k1; ++p) {
        const float av = arow[p];
        if (av == 0.0f) continue;
        float* crow = c + p * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

VarPtr elementwise_binary(const VarPtr& a, const VarPtr& b, const char* name,
                          const std::function<float(float, float)>& fwd,
                          const std::function<void(Node&, Node&, Node&)>& bw) {
  check_same_shape(a, b, name);
  Tensor out(a->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(a->value[i], b->value[i]);
  return make_op(std::move(out), {a, b}, [bw](Node& self) {
    bw(self, *self.inputs[0], *self.inputs[1]);
  });
}

}  // namespace

VarPtr leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

VarPtr constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

void backward(const VarPtr& root) {
  if (root->value.size() != 1) fail("backward: root must be scalar");
  if (!root->requires_grad) return;

  // Post-order DFS; the reversed finish order is a valid reverse-topological
  // visit sequence for the backward sweep.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// --------------------------------------------------------------- basics ----

VarPtr add(const VarPtr& a, const VarPtr& b) {
  return elementwise_binary(a, b, "add",
      [](float x, float y) { return x + y; },
      [](Node& self, Node& a_, Node& b_) {
        const int64_t n = self.grad.size();
        if (a_.requires_grad) {
          Tensor& ga = a_.ensure_grad();
          for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
        }
        if (b_.requires_grad) {
          Tensor& gb = b_.ensure_grad();
          for (int64_t i = 0; i < n; ++i) gb[i] += self.grad[i];
        }
      });
}

VarPtr sub(const VarPtr& a, const VarPtr& b) {
  return elementwise_binary(a, b, "sub",
      [](float x, float y) { return x - y; },
      [](Node& self, Node& a_, Node& b_) {
        const int64_t n = self.grad.size();
        if (a_.requires_grad) {
          Tensor& ga = a_.ensure_grad();
          for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
        }
        if (b_.requires_grad) {
          Tensor& gb = b_.ensure_grad();
          for (int64_t i = 0; i < n; ++i) gb[i] -= self.grad[i];
        }
      });
}

VarPtr mul(const VarPtr& a, const VarPtr& b) {
  return elementwise_binary(a, b, "mul",
      [](float x, float y) { return x * y; },
      [](Node& self, Node& a_, Node& b_) {
        const int64_t n = self.grad.size();
        if (a_.requires_grad) {
          Tensor& ga = a_.ensure_grad();
          for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * b_.value[i];
        }
        if (b_.requires_grad) {
          Tensor& gb = b_.ensure_grad();
          for (int64_t i = 0; i < n; ++i) gb[i] += self.grad[i] * a_.value[i];
        }
      });
}

VarPtr divide(const VarPtr& a, const VarPtr& b) {
  return elementwise_binary(a, b, "divide",
      [](float x, float y) { return x / y; },
      [](Node& self, Node& a_, Node& b_) {
        const int64_t n = self.grad.size();
        if (a_.requires_grad) {
          Tensor& ga = a_.ensure_grad();
          for (int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] / b_.value[i];
        }
        if (b_.requires_grad) {
          Tensor& gb = b_.ensure_grad();
          for (int64_t i = 0; i < n; ++i) {
            const float bv = b_.value[i];
            gb[i] -= self.grad[i] * a_.value[i] / (bv * bv);
          }
        }
      });
}

VarPtr affine(const VarPtr& x, float scale, float shift) {
  Tensor out(x->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = scale * x->value[i] + shift;
  return make_op(std::move(out), {x}, [scale](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    const int64_t n = self.grad.size();
    for (int64_t i = 0; i < n; ++i) g[i] += scale * self.grad[i];
  });
}

VarPtr relu(const VarPtr& x) {
  Tensor out(x->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = x->value[i] > 0.0f ? x->value[i] : 0.0f;
  return make_op(std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    const int64_t n = self.grad.size();
    for (int64_t i = 0; i < n; ++i) {
      if (in.value[i] > 0.0f) g[i] += self.grad[i];
    }
  });
}

VarPtr gelu(const VarPtr& x) {
  constexpr float kInvSqrt2 = 0.7071067811865475f;
  constexpr float kInvSqrt2Pi = 0.3989422804014327f;
  Tensor out(x->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) {
    const float v = x->value[i];
    out[i] = 0.5f * v * (1.0f + std::erf(v * kInvSqrt2));
  }
  return make_op(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    const int64_t m = self.grad.size();
    for (int64_t i = 0; i < m; ++i) {
      const float v = in.value[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
      const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

VarPtr sigmoid(const VarPtr& x) {
  Tensor out(x->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = 1.0f / (1.0f + std::exp(-x->value[i]));
  return make_op(std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    const int64_t n = self.grad.size();
    for (int64_t i = 0; i < n; ++i) {
      const float y = self.value[i];
      g[i] += self.grad[i] * y * (1.0f - y);
    }
  });
}

VarPtr scale_by(const VarPtr& s, const VarPtr& x) {
  if (s->value.size() != 1) fail("scale_by: scale must be size-1");
  const float sv = s->value[0];
  Tensor out(x->value.shape());
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = sv * x->value[i];
  return make_op(std::move(out), {s, x}, [](Node& self) {
    Node& s_ = *self.inputs[0];
    Node& x_ = *self.inputs[1];
    const int64_t n = self.grad.size();
    if (s_.requires_grad) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(self.grad[i]) * x_.value[i];
      s_.ensure_grad()[0] += static_cast<float>(acc);
    }
    if (x_.requires_grad) {
      Tensor& g = x_.ensure_grad();
      const float sv = s_.value[0];
      for (int64_t i = 0; i < n; ++i) g[i] += sv * self.grad[i];
    }
  });
}

// ---------------------------------------------------------------- shape ----

VarPtr reshape(const VarPtr& x, std::vector<int> shape) {
  if (shape_numel(shape) != x->value.size()) fail("reshape: element count mismatch");
  Tensor out(std::move(shape));
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) out[i] = x->value[i];
  return make_op(std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    const int64_t n = self.grad.size();
    for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
  });
}

VarPtr concat_channels(const std::vector<VarPtr>& xs) {
  if (xs.empty()) fail("concat_channels: empty input list");
  const int h = xs[0]->value.dim(0), w = xs[0]->value.dim(1);
  int total_c = 0;
  for (const auto& x : xs) {
    if (x->value.rank() != 3 || x->value.dim(0) != h || x->value.dim(1) != w)
      fail("concat_channels: spatial shape mismatch");
    total_c += x->value.dim(2);
  }
  Tensor out({h, w, total_c});
  const int64_t pixels = static_cast<int64_t>(h) * w;
  int offset = 0;
  for (const auto& x : xs) {
    const int c = x->value.dim(2);
    for (int64_t p = 0; p < pixels; ++p) {
      const float* src = x->value.data() + p * c;
      float* dst = out.data() + p * total_c + offset;
      for (int i = 0; i < c; ++i) dst[i] = src[i];
    }
    offset += c;
  }
  return make_op(std::move(out), xs, [total_c, pixels](Node& self) {
    int off = 0;
    for (auto& inp : self.inputs) {
      const int c = inp->value.dim(2);
      if (inp->requires_grad) {
        Tensor& g = inp->ensure_grad();
        for (int64_t p = 0; p < pixels; ++p) {
          const float* src = self.grad.data() + p * total_c + off;
          float* dst = g.data() + p * c;
          for (int i = 0; i < c; ++i) dst[i] += src[i];
        }
      }
      off += c;
    }
  });
}

VarPtr permute_rows(const VarPtr& x, std::shared_ptr<const std::vector<int64_t>> map,
                    std::vector<int> out_shape, int row_width) {
  const int64_t rows = static_cast<int64_t>(map->size());
  if (rows * row_width != x->value.size() || shape_numel(out_shape) != x->value.size())
    fail("permute_rows: size mismatch");
  Tensor out(std::move(out_shape));
  const float* src = x->value.data();
  float* dst = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* s = src + (*map)[static_cast<size_t>(r)] * row_width;
    float* d = dst + r * row_width;
    for (int i = 0; i < row_width; ++i) d[i] = s[i];
  }
  return make_op(std::move(out), {x}, [map, rows, row_width](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const float* s = self.grad.data() + r * row_width;
      float* d = g.data() + (*map)[static_cast<size_t>(r)] * row_width;
      for (int i = 0; i < row_width; ++i) d[i] += s[i];
    }
  });
}

VarPtr split_heads(const VarPtr& x, int heads) {
  if (x->value.rank() != 3) fail("split_heads: rank-3 input required");
  const int b = x->value.dim(0), t = x->value.dim(1), c = x->value.dim(2);
  if (c % heads != 0) fail("split_heads: channels not divisible by heads");
  const int d = c / heads;
  Tensor out({b * heads, t, d});
  for (int bi = 0; bi < b; ++bi)
    for (int hi = 0; hi < heads; ++hi)
      for (int ti = 0; ti < t; ++ti) {
        const float* src = x->value.data() + (static_cast<int64_t>(bi) * t + ti) * c + hi * d;
        float* dst = out.data() + ((static_cast<int64_t>(bi) * heads + hi) * t + ti) * d;
        for (int i = 0; i < d; ++i) dst[i] = src[i];
      }
  return make_op(std::move(out), {x}, [b, t, c, heads, d](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int bi = 0; bi < b; ++bi)
      for (int hi = 0; hi < heads; ++hi)
        for (int ti = 0; ti < t; ++ti) {
          const float* src = self.grad.data() + ((static_cast<int64_t>(bi) * heads + hi) * t + ti) * d;
          float* dst = g.data() + (static_cast<int64_t>(bi) * t + ti) * c + hi * d;
          for (int i = 0; i < d; ++i) dst[i] += src[i];
        }
  });
}

VarPtr merge_heads(const VarPtr& x, int heads) {
  if (x->value.rank() != 3) fail("merge_heads: rank-3 input required");
  const int bh = x->value.dim(0), t = x->value.dim(1), d = x->value.dim(2);
  if (bh % heads != 0) fail("merge_heads: batch not divisible by heads");
  const int b = bh / heads, c = heads * d;
  Tensor out({b, t, c});
  for (int bi = 0; bi < b; ++bi)
    for (int hi = 0; hi < heads; ++hi)
      for (int ti = 0; ti < t; ++ti) {
        const float* src = x->value.data() + ((static_cast<int64_t>(bi) * heads + hi) * t + ti) * d;
        float* dst = out.data() + (static_cast<int64_t>(bi) * t + ti) * c + hi * d;
        for (int i = 0; i < d; ++i) dst[i] = src[i];
      }
  return make_op(std::move(out), {x}, [b, t, c, heads, d](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (int bi = 0; bi < b; ++bi)
      for (int hi = 0; hi < heads; ++hi)
        for (int ti = 0; ti < t; ++ti) {
          const float* src = self.grad.data() + (static_cast<int64_t>(bi) * t + ti) * c + hi * d;
          float* dst = g.data() + ((static_cast<int64_t>(bi) * heads + hi) * t + ti) * d;
          for (int i = 0; i < d; ++i) dst[i] += src[i];
        }
  });
}

// ------------------------------------------------------------- matmuls ----

VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b) {
  if (w->value.rank() != 2) fail("linear: weight must be [Cin,Cout]");
  const int cin = w->value.dim(0), cout = w->value.dim(1);
  if (x->value.size() % cin != 0) fail("linear: input width mismatch");
  const int64_t m = x->value.size() / cin;
  std::vector<int> out_shape = x->value.shape();
  out_shape.back() = cout;
  if (x->value.shape().back() != cin) fail("linear: trailing dim mismatch");

  Tensor out(out_shape);
  if (b) {
    if (b->value.size() != cout) fail("linear: bias size mismatch");
    for (int64_t i = 0; i < m; ++i) {
      float* row = out.data() + i * cout;
      for (int j = 0; j < cout; ++j) row[j] = b->value[j];
    }
  }
  matmul_nn(x->value.data(), w->value.data(), out.data(), m, cout, cin);

  std::vector<VarPtr> ins = b ? std::vector<VarPtr>{x, w, b} : std::vector<VarPtr>{x, w};
  return make_op(std::move(out), std::move(ins), [m, cin, cout](Node& self) {
    Node& x_ = *self.inputs[0];
    Node& w_ = *self.inputs[1];
    if (x_.requires_grad) {
      // dX = dY * W^T
      matmul_nt(self.grad.data(), w_.value.data(), x_.ensure_grad().data(), m, cin, cout);
    }
    if (w_.requires_grad) {
      // dW = X^T * dY
      matmul_tn(x_.value.data(), self.grad.data(), w_.ensure_grad().data(), m, cout, cin);
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor& gb = self.inputs[2]->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        const float* row = self.grad.data() + i * cout;
        for (int j = 0; j < cout; ++j) gb[j] += row[j];
      }
    }
  });
}

VarPtr bmm(const VarPtr& a, const VarPtr& b) {
  if (a->value.rank() != 3 || b->value.rank() != 3) fail("bmm: rank-3 inputs required");
  const int bt = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
  if (b->value.dim(0) != bt || b->value.dim(1) != k) fail("bmm: shape mismatch");
  const int n = b->value.dim(2);
  Tensor out({bt, m, n});
  parallel_for(bt, [&](int64_t b0, int64_t b1) {
    for (int64_t bi = b0; bi < b1; ++bi) {
      const float* ap = a->value.data() + bi * m * k;
      const float* bp = b->value.data() + bi * k * n;
      float* cp = out.data() + bi * m * n;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          const float av = ap[i * k + p];
          const float* brow = bp + p * n;
          float* crow = cp + i * n;
          for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
  });
  return make_op(std::move(out), {a, b}, [bt, m, n, k](Node& self) {
    Node& a_ = *self.inputs[0];
    Node& b_ = *self.inputs[1];
    if (a_.requires_grad) {
      Tensor& ga = a_.ensure_grad();
      parallel_for(bt, [&](int64_t b0, int64_t b1) {
        for (int64_t bi = b0; bi < b1; ++bi) {
          // dA = dC * B^T
          const float* gc = self.grad.data() + bi * m * n;
          const float* bp = b_.value.data() + bi * k * n;
          float* gap = ga.data() + bi * m * k;
          for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p) {
              const float* grow = gc + i * n;
              const float* brow = bp + p * n;
              float acc = 0.0f;
              for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              gap[i * k + p] += acc;
            }
        }
      });
    }
    if (b_.requires_grad) {
      Tensor& gb = b_.ensure_grad();
      parallel_for(bt, [&](int64_t b0, int64_t b1) {
        for (int64_t bi = b0; bi < b1; ++bi) {
          // dB = A^T * dC
          const float* gc = self.grad.data() + bi * m * n;
          const float* ap = a_.value.data() + bi * m * k;
          float* gbp = gb.data() + bi * k * n;
          for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p) {
              const float av = ap[i * k + p];
              if (av == 0.0f) continue;
              const float* grow = gc + i * n;
              float* gbrow = gbp + p * n;
              for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
        }
      });
    }
  });
}

VarPtr bmm_nt(const VarPtr& a, const VarPtr& b) {
  if (a->value.rank() != 3 || b->value.rank() != 3) fail("bmm_nt: rank-3 inputs required");
  const int bt = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
  if (b->value.dim(0) != bt || b->value.dim(2) != k) fail("bmm_nt: shape mismatch");
  const int n = b->value.dim(1);
  Tensor out({bt, m, n});
  parallel_for(bt, [&](int64_t b0, int64_t b1) {
    for (int64_t bi = b0; bi < b1; ++bi) {
      const float* ap = a->value.data() + bi * m * k;
      const float* bp = b->value.data() + bi * n * k;
      float* cp = out.data() + bi * m * n;
      for (int64_t i = 0; i < m; ++i) {
        const float* arow = ap + i * k;
        float* crow = cp + i * n;
        for (int64_t j = 0; j < n; ++j) {
          const float* brow = bp + j * k;
          float acc = 0.0f;
          for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
          crow[j] = acc;
        }
      }
    }
  });
  return make_op(std::move(out), {a, b}, [bt, m, n, k](Node& self) {
    Node& a_ = *self.inputs[0];
    Node& b_ = *self.inputs[1];
    if (a_.requires_grad) {
      Tensor& ga = a_.ensure_grad();
      parallel_for(bt, [&](int64_t b0, int64_t b1) {
        for (int64_t bi = b0; bi < b1; ++bi) {
          // dA = dC * B
          const float* gc = self.grad.data() + bi * m * n;
          const float* bp = b_.value.data() + bi * n * k;
          float* gap = ga.data() + bi * m * k;
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
              const float gv = gc[i * n + j];
              if (gv == 0.0f) continue;
              const float* brow = bp + j * k;
              float* garow = gap + i * k;
              for (int64_t p = 0; p < k; ++p) garow[p] += gv * brow[p];
            }
        }
      });
    }
    if (b_.requires_grad) {
      Tensor& gb = b_.ensure_grad();
      parallel_for(bt, [&](int64_t b0, int64_t b1) {
        for (int64_t bi = b0; bi < b1; ++bi) {
          // dB = dC^T * A
          const float* gc = self.grad.data() + bi * m * n;
          const float* ap = a_.value.data() + bi * m * k;
          float* gbp = gb.data() + bi * n * k;
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) {
              const float gv = gc[i * n + j];
              if (gv == 0.0f) continue;
              const float* arow = ap + i * k;
              float* gbrow = gbp + j * k;
              for (int64_t p = 0; p < k; ++p) gbrow[p] += gv * arow[p];
            }
        }
      });
    }
  });
}

// ----------------------------------------------------------------- conv ----

VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, Padding pad) {
  if (x->value.rank() != 3 || w->value.rank() != 4) fail("conv2d: x [H,W,C], w [O,KH,KW,C]");
  const int h = x->value.dim(0), wd = x->value.dim(1), cin = x->value.dim(2);
  const int co = w->value.dim(0), kh = w->value.dim(1), kw = w->value.dim(2);
  if (w->value.dim(3) != cin) fail("conv2d: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) fail("conv2d: odd kernel sizes only");
  const int py = pad == Padding::Same ? kh / 2 : 0;
  const int px = pad == Padding::Same ? kw / 2 : 0;
  const int oh = pad == Padding::Same ? h : h - kh + 1;
  const int ow = pad == Padding::Same ? wd : wd - kw + 1;
  if (oh <= 0 || ow <= 0) fail("conv2d: input smaller than kernel");
  if (b && b->value.size() != co) fail("conv2d: bias size mismatch");

  Tensor out({oh, ow, co});
  const float* xp = x->value.data();
  const float* wp = w->value.data();
  parallel_for(oh, [&](int64_t y0, int64_t y1) {
    for (int64_t oy = y0; oy < y1; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float* orow = out.data() + (oy * ow + ox) * co;
        if (b) {
          for (int o = 0; o < co; ++o) orow[o] = b->value[o];
        }
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = static_cast<int>(oy) + ky - py;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox + kx - px;
            if (ix < 0 || ix >= wd) continue;
            const float* xrow = xp + (static_cast<int64_t>(iy) * wd + ix) * cin;
            const float* wbase = wp + (static_cast<int64_t>(ky) * kw + kx) * cin;
            for (int o = 0; o < co; ++o) {
              const float* wrow = wbase + static_cast<int64_t>(o) * kh * kw * cin;
              float acc = 0.0f;
              for (int i = 0; i < cin; ++i) acc += xrow[i] * wrow[i];
              orow[o] += acc;
            }
          }
        }
      }
    }
  });

  std::vector<VarPtr> ins = b ? std::vector<VarPtr>{x, w, b} : std::vector<VarPtr>{x, w};
  return make_op(std::move(out), std::move(ins),
                 [h, wd, cin, co, kh, kw, py, px, oh, ow](Node& self) {
    Node& x_ = *self.inputs[0];
    Node& w_ = *self.inputs[1];
    const float* gp = self.grad.data();
    if (x_.requires_grad) {
      Tensor& gx = x_.ensure_grad();
      const float* wp = w_.value.data();
      parallel_for(h, [&](int64_t iy0, int64_t iy1) {
        for (int64_t iy = iy0; iy < iy1; ++iy) {
          for (int ix = 0; ix < wd; ++ix) {
            float* gxrow = gx.data() + (iy * wd + ix) * cin;
            for (int ky = 0; ky < kh; ++ky) {
              const int oy = static_cast<int>(iy) - ky + py;
              if (oy < 0 || oy >= oh) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ox = ix - kx + px;
                if (ox < 0 || ox >= ow) continue;
                const float* grow = gp + (static_cast<int64_t>(oy) * ow + ox) * co;
                const float* wbase = wp + (static_cast<int64_t>(ky) * kw + kx) * cin;
                for (int o = 0; o < co; ++o) {
                  const float gv = grow[o];
                  if (gv == 0.0f) continue;
                  const float* wrow = wbase + static_cast<int64_t>(o) * kh * kw * cin;
                  for (int i = 0; i < cin; ++i) gxrow[i] += gv * wrow[i];
                }
              }
            }
          }
        }
      });
    }
    if (w_.requires_grad) {
      Tensor& gw = w_.ensure_grad();
      const float* xp = x_.value.data();
      parallel_for(co, [&](int64_t o0, int64_t o1) {
        for (int64_t o = o0; o < o1; ++o) {
          float* gwo = gw.data() + o * kh * kw * cin;
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const float gv = gp[(static_cast<int64_t>(oy) * ow + ox) * co + o];
              if (gv == 0.0f) continue;
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy + ky - py;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox + kx - px;
                  if (ix < 0 || ix >= wd) continue;
                  const float* xrow = xp + (static_cast<int64_t>(iy) * wd + ix) * cin;
                  float* gwrow = gwo + (static_cast<int64_t>(ky) * kw + kx) * cin;
                  for (int i = 0; i < cin; ++i) gwrow[i] += gv * xrow[i];
                }
              }
            }
          }
        }
      });
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      Tensor& gb = self.inputs[2]->ensure_grad();
      for (int64_t p = 0; p < static_cast<int64_t>(oh) * ow; ++p) {
        const float* grow = gp + p * co;
        for (int o = 0; o < co; ++o) gb[o] += grow[o];
      }
    }
  });
}

// -------------------------------------------------- norm / softmax ----

VarPtr layer_norm(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, float eps) {
  const int c = x->value.shape().back();
  if (gamma->value.size() != c || beta->value.size() != c) fail("layer_norm: param size mismatch");
  const int64_t rows = x->value.size() / c;
  Tensor out(x->value.shape());
  auto stats = std::make_shared<Tensor>(Tensor({static_cast<int>(rows), 2}));  // mean, inv_std
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x->value.data() + r * c;
    float mean = 0.0f;
    for (int i = 0; i < c; ++i) mean += xr[i];
    mean /= static_cast<float>(c);
    float var = 0.0f;
    for (int i = 0; i < c; ++i) {
      const float d = xr[i] - mean;
      var += d * d;
    }
    var /= static_cast<float>(c);
    const float inv_std = 1.0f / std::sqrt(var + eps);
    (*stats)[r * 2] = mean;
    (*stats)[r * 2 + 1] = inv_std;
    float* orow = out.data() + r * c;
    for (int i = 0; i < c; ++i)
      orow[i] = (xr[i] - mean) * inv_std * gamma->value[i] + beta->value[i];
  }
  return make_op(std::move(out), {x, gamma, beta}, [rows, c, stats](Node& self) {
    Node& x_ = *self.inputs[0];
    Node& g_ = *self.inputs[1];
    Node& b_ = *self.inputs[2];
    const float* gp = self.grad.data();
    std::vector<float> xhat(static_cast<size_t>(c));
    Tensor* gx = x_.requires_grad ? &x_.ensure_grad() : nullptr;
    Tensor* gg = g_.requires_grad ? &g_.ensure_grad() : nullptr;
    Tensor* gb = b_.requires_grad ? &b_.ensure_grad() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
      const float mean = (*stats)[r * 2];
      const float inv_std = (*stats)[r * 2 + 1];
      const float* xr = x_.value.data() + r * c;
      const float* grow = gp + r * c;
      for (int i = 0; i < c; ++i) xhat[static_cast<size_t>(i)] = (xr[i] - mean) * inv_std;
      if (gg) {
        for (int i = 0; i < c; ++i) (*gg)[i] += grow[i] * xhat[static_cast<size_t>(i)];
      }
      if (gb) {
        for (int i = 0; i < c; ++i) (*gb)[i] += grow[i];
      }
      if (gx) {
        float sum_dh = 0.0f, sum_dh_xhat = 0.0f;
        for (int i = 0; i < c; ++i) {
          const float dh = grow[i] * g_.value[i];
          sum_dh += dh;
          sum_dh_xhat += dh * xhat[static_cast<size_t>(i)];
        }
        float* gxr = gx->data() + r * c;
        const float invc = 1.0f / static_cast<float>(c);
        for (int i = 0; i < c; ++i) {
          const float dh = grow[i] * g_.value[i];
          gxr[i] += inv_std * (dh - invc * sum_dh - xhat[static_cast<size_t>(i)] * invc * sum_dh_xhat);
        }
      }
    }
  });
}

VarPtr softmax_last(const VarPtr& x) {
  const int n = x->value.shape().back();
  const int64_t rows = x->value.size() / n;
  Tensor out(x->value.shape());
  parallel_for(rows, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const float* xr = x->value.data() + r * n;
      float* orow = out.data() + r * n;
      float mx = xr[0];
      for (int i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
      float sum = 0.0f;
      for (int i = 0; i < n; ++i) {
        const float e = std::exp(xr[i] - mx);
        orow[i] = e;
        sum += e;
      }
      const float inv = 1.0f / sum;
      for (int i = 0; i < n; ++i) orow[i] *= inv;
    }
  });
  return make_op(std::move(out), {x}, [rows, n](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const float* y = self.value.data() + r * n;
        const float* dy = self.grad.data() + r * n;
        float* gx = g.data() + r * n;
        float dot = 0.0f;
        for (int i = 0; i < n; ++i) dot += dy[i] * y[i];
        for (int i = 0; i < n; ++i) gx[i] += (dy[i] - dot) * y[i];
      }
    });
  });
}

// ------------------------------------------------------------ reductions ----

VarPtr sum_all(const VarPtr& x) {
  double acc = 0.0;
  const int64_t n = x->value.size();
  for (int64_t i = 0; i < n; ++i) acc += x->value[i];
  Tensor out({1});
  out[0] = static_cast<float>(acc);
  return make_op(std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    const float gv = self.grad[0];
    const int64_t n = g.size();
    for (int64_t i = 0; i < n; ++i) g[i] += gv;
  });
}

VarPtr mean_all(const VarPtr& x) {
  const int64_t n = x->value.size();
  return affine(sum_all(x), 1.0f / static_cast<float>(n), 0.0f);
}

VarPtr mean_spatial(const VarPtr& x) {
  if (x->value.rank() != 3) fail("mean_spatial: rank-3 input required");
  const int c = x->value.dim(2);
  const int64_t pixels = static_cast<int64_t>(x->value.dim(0)) * x->value.dim(1);
  Tensor out({c});
  std::vector<double> acc(static_cast<size_t>(c), 0.0);
  for (int64_t p = 0; p < pixels; ++p) {
    const float* row = x->value.data() + p * c;
    for (int i = 0; i < c; ++i) acc[static_cast<size_t>(i)] += row[i];
  }
  for (int i = 0; i < c; ++i) out[i] = static_cast<float>(acc[static_cast<size_t>(i)] / static_cast<double>(pixels));
  return make_op(std::move(out), {x}, [pixels, c](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    const float scale = 1.0f / static_cast<float>(pixels);
    for (int64_t p = 0; p < pixels; ++p) {
      float* row = g.data() + p * c;
      for (int i = 0; i < c; ++i) row[i] += self.grad[i] * scale;
    }
  });
}

VarPtr select_index(const VarPtr& x, int64_t flat_index) {
  if (flat_index < 0 || flat_index >= x->value.size()) fail("select_index: out of range");
  Tensor out({1});
  out[0] = x->value[flat_index];
  return make_op(std::move(out), {x}, [flat_index](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    in.ensure_grad()[flat_index] += self.grad[0];
  });
}

}  // namespace gifnet::ad
