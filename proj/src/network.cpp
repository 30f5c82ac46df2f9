// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

#include "gifnet/rng.hpp"

namespace gifnet {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

constexpr float kMaskedLogit = -1e9f;

// Precomputed window bookkeeping for one (spatial size, shift) combination:
// a pixel->window-row permutation, its inverse, and, for shifted layers, the
// additive attention mask that stops windows from mixing across the cyclic
// wrap-around seam.
struct WindowPlan {
  std::shared_ptr<const std::vector<int64_t>> fwd;
  std::shared_ptr<const std::vector<int64_t>> inv;
  std::shared_ptr<const Tensor> mask;  // [n_windows*heads, T, T]; null if unshifted
  int n_windows = 0;
  int tokens = 0;
};

const WindowPlan& window_plan(int h, int w, int window, bool shifted, int heads) {
  static std::map<std::tuple<int, int, int, bool, int>, WindowPlan> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_tuple(h, w, window, shifted, heads);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const int s = shifted ? window / 2 : 0;
  const int nwy = h / window, nwx = w / window;
  const int n_windows = nwy * nwx;
  const int t = window * window;
  const int64_t pixels = static_cast<int64_t>(h) * w;

  auto fwd = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(pixels));
  auto inv = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(pixels));
  std::vector<int> region(static_cast<size_t>(t) * n_windows);
  auto region_of = [&](int y0, int x0) {
    const int iy = y0 < h - window ? 0 : (y0 < h - s ? 1 : 2);
    const int ix = x0 < w - window ? 0 : (x0 < w - s ? 1 : 2);
    return iy * 3 + ix;
  };
  for (int wy = 0; wy < nwy; ++wy)
    for (int wx = 0; wx < nwx; ++wx)
      for (int ty = 0; ty < window; ++ty)
        for (int tx = 0; tx < window; ++tx) {
          const int win = wy * nwx + wx;
          const int tok = ty * window + tx;
          const int64_t r = static_cast<int64_t>(win) * t + tok;
          const int y0 = (wy * window + ty + s) % h;
          const int x0 = (wx * window + tx + s) % w;
          const int64_t p = static_cast<int64_t>(y0) * w + x0;
          (*fwd)[static_cast<size_t>(r)] = p;
          (*inv)[static_cast<size_t>(p)] = r;
          region[static_cast<size_t>(r)] = region_of(y0, x0);
        }

  WindowPlan plan;
  plan.fwd = fwd;
  plan.inv = inv;
  plan.n_windows = n_windows;
  plan.tokens = t;
  if (shifted) {
    auto mask = std::make_shared<Tensor>(Tensor({n_windows * heads, t, t}));
    for (int win = 0; win < n_windows; ++win)
      for (int t1 = 0; t1 < t; ++t1)
        for (int t2 = 0; t2 < t; ++t2) {
          const float v = region[static_cast<size_t>(win) * t + t1] ==
                                  region[static_cast<size_t>(win) * t + t2]
                              ? 0.0f
                              : kMaskedLogit;
          for (int hd = 0; hd < heads; ++hd)
            (*mask)[((static_cast<int64_t>(win) * heads + hd) * t + t1) * t + t2] = v;
        }
    plan.mask = mask;
  }
  return cache.emplace(key, std::move(plan)).first->second;
}

struct AttnRefs {
  ad::VarPtr wq, bq, wk, bk, wv, bv, wo, bo;
};

AttnRefs attn_refs(const Model& m, const std::string& prefix) {
  return {m.param(prefix + "wq"), m.param(prefix + "bq"),
          m.param(prefix + "wk"), m.param(prefix + "bk"),
          m.param(prefix + "wv"), m.param(prefix + "bv"),
          m.param(prefix + "wo"), m.param(prefix + "bo")};
}

ad::VarPtr norm(const Model& m, const std::string& prefix, const ad::VarPtr& x) {
  return ad::layer_norm(x, m.param(prefix + "g"), m.param(prefix + "b"));
}

// Multi-head attention over non-overlapping windows. q_src supplies queries,
// kv_src keys/values; both are [H,W,E] and share one window partition.
ad::VarPtr window_attention(const AttnRefs& p, const ad::VarPtr& q_src,
                            const ad::VarPtr& kv_src, int window, int heads,
                            bool shifted) {
  const int h = q_src->value.dim(0), w = q_src->value.dim(1), e = q_src->value.dim(2);
  const auto& plan = window_plan(h, w, window, shifted, heads);
  const std::vector<int> win_shape{plan.n_windows, plan.tokens, e};

  auto qrows = ad::permute_rows(q_src, plan.fwd, win_shape, e);
  auto kvrows = ad::permute_rows(kv_src, plan.fwd, win_shape, e);
  auto q = ad::split_heads(ad::linear(qrows, p.wq, p.bq), heads);
  auto k = ad::split_heads(ad::linear(kvrows, p.wk, p.bk), heads);
  auto v = ad::split_heads(ad::linear(kvrows, p.wv, p.bv), heads);

  const float scale = 1.0f / std::sqrt(static_cast<float>(e / heads));
  auto logits = ad::affine(ad::bmm_nt(q, k), scale, 0.0f);
  if (plan.mask) logits = ad::add(logits, ad::constant(*plan.mask));
  auto ctx = ad::merge_heads(ad::bmm(ad::softmax_last(logits), v), heads);
  auto out = ad::linear(ctx, p.wo, p.bo);
  return ad::permute_rows(out, plan.inv, {h, w, e}, e);
}

ad::VarPtr decode(const Model& m, const std::string& prefix, const ad::VarPtr& x) {
  auto hidden = ad::relu(ad::conv2d(x, m.param(prefix + "conv0.w"),
                                    m.param(prefix + "conv0.b"), ad::Padding::Same));
  return ad::sigmoid(ad::conv2d(hidden, m.param(prefix + "conv1.w"),
                                m.param(prefix + "conv1.b"), ad::Padding::Same));
}

void check_feature(const ad::VarPtr& x, int channels, int window, const char* who) {
  if (x->value.rank() != 3 || x->value.dim(2) != channels)
    fail(std::string(who) + ": expected [H,W," + std::to_string(channels) +
         "] features, got " + x->value.shape_str());
  if (x->value.dim(0) % window != 0 || x->value.dim(1) % window != 0)
    fail(std::string(who) + ": spatial dims must be multiples of window " +
         std::to_string(window));
}

// ---- checkpoint byte helpers -----------------------------------------------

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& b, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

struct Cursor {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size()) fail(path + ": truncated checkpoint");
  }
  uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

constexpr char kMagic[4] = {'G', 'I', 'F', 'N'};
constexpr uint32_t kVersion = 1;

}  // namespace

void ArchConfig::validate() const {
  if (base_channels < 1 || enc_layers < 1 || branch_layers < 1 || embed_dim < 1 ||
      heads < 1 || window < 2)
    throw std::invalid_argument("ArchConfig: all dimensions must be positive");
  if (branch_layers % 2 != 0)
    throw std::invalid_argument("ArchConfig: branch_layers must be even");
  if (embed_dim % heads != 0)
    throw std::invalid_argument("ArchConfig: embed_dim must be divisible by heads");
  if (window % 2 != 0)
    throw std::invalid_argument("ArchConfig: window must be even");
  if (!(mlp_ratio > 0.0f) || mlp_hidden() < 1)
    throw std::invalid_argument("ArchConfig: mlp_ratio must be positive");
}

const char* branch_prefix(Branch b) { return b == Branch::MM ? "mm" : "dp"; }

void Model::add_param(const std::string& name, Tensor value) {
  auto node = ad::leaf(std::move(value));
  index_.emplace(name, params_.size());
  params_.emplace_back(name, std::move(node));
}

const ad::VarPtr& Model::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].second;
}

bool Model::has_param(const std::string& name) const { return index_.count(name) > 0; }

void Model::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, node] : params_) {
    if (name.rfind(prefix, 0) == 0) node->requires_grad = trainable;
  }
}

Model::Model(const ArchConfig& arch, uint64_t seed) : arch_(arch) {
  arch_.validate();
  Rng rng(seed);

  auto conv = [&](const std::string& name, int co, int k, int ci) {
    Tensor w({co, k, k, ci});
    const float bound = std::sqrt(6.0f / static_cast<float>(k * k * ci));
    for (int64_t i = 0; i < w.size(); ++i)
      w[i] = static_cast<float>(rng.uniform(-bound, bound));
    add_param(name + ".w", std::move(w));
    add_param(name + ".b", Tensor({co}));
  };
  auto lin = [&](const std::string& wname, const std::string& bname, int ci, int co) {
    Tensor w({ci, co});
    for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.truncated_normal(0.02f);
    add_param(wname, std::move(w));
    add_param(bname, Tensor({co}));
  };
  auto lnorm = [&](const std::string& prefix, int c) {
    add_param(prefix + "g", Tensor({c}, 1.0f));
    add_param(prefix + "b", Tensor({c}));
  };
  auto attention = [&](const std::string& prefix, int e) {
    lin(prefix + "wq", prefix + "bq", e, e);
    lin(prefix + "wk", prefix + "bk", e, e);
    lin(prefix + "wv", prefix + "bv", e, e);
    lin(prefix + "wo", prefix + "bo", e, e);
  };

  int in_c = 3;
  for (int l = 0; l < arch_.enc_layers; ++l) {
    conv("senc.conv" + std::to_string(l), arch_.base_channels, 3, in_c);
    in_c += arch_.base_channels;
  }
  conv("rec.conv0", arch_.base_channels, 3, arch_.shared_channels());
  conv("rec.conv1", 1, 3, arch_.base_channels);
  conv("gdec.conv0", arch_.base_channels, 3, arch_.embed_dim);
  conv("gdec.conv1", 1, 3, arch_.base_channels);

  const int e = arch_.embed_dim;
  for (Branch br : {Branch::MM, Branch::DP}) {
    const std::string bp = branch_prefix(br);
    lin(bp + ".proj.w", bp + ".proj.b", 2 * arch_.shared_channels(), e);
    for (int i = 1; i <= arch_.branch_layers; ++i) {
      const std::string p = bp + ".blk" + std::to_string(i) + ".";
      lnorm(p + "ln1.", e);
      attention(p + "attn.", e);
      if (i % 2 == 1) {
        add_param(p + "lambda", Tensor::scalar(0.1f));
        lnorm(p + "xln_q.", e);
        lnorm(p + "xln_kv.", e);
        attention(p + "xattn.", e);
      }
      lnorm(p + "ln2.", e);
      lin(p + "mlp.w1", p + "mlp.b1", e, arch_.mlp_hidden());
      lin(p + "mlp.w2", p + "mlp.b2", arch_.mlp_hidden(), e);
    }
  }
}

ad::VarPtr senc_forward(const Model& m, const ad::VarPtr& img) {
  if (img->value.rank() != 3 ||
      (img->value.dim(2) != 1 && img->value.dim(2) != 3))
    fail("senc_forward: expected [H,W,1] or [H,W,3] input, got " +
         img->value.shape_str());
  auto x = img->value.dim(2) == 1 ? ad::concat_channels({img, img, img}) : img;

  std::vector<ad::VarPtr> outs;
  auto in = x;
  for (int l = 0; l < m.arch().enc_layers; ++l) {
    const std::string name = "senc.conv" + std::to_string(l);
    outs.push_back(ad::relu(ad::conv2d(in, m.param(name + ".w"),
                                       m.param(name + ".b"), ad::Padding::Same)));
    if (l + 1 < m.arch().enc_layers) {
      std::vector<ad::VarPtr> ins{x};
      ins.insert(ins.end(), outs.begin(), outs.end());
      in = ad::concat_channels(ins);
    }
  }
  return outs.size() == 1 ? outs[0] : ad::concat_channels(outs);
}

ad::VarPtr cfgm_layer(const Model& m, Branch branch, const ad::VarPtr& x_m,
                      const ad::VarPtr& x_a, int layer_index, bool use_cfgm) {
  const auto& arch = m.arch();
  check_feature(x_m, arch.embed_dim, arch.window, "cfgm_layer");
  if (!x_m->value.same_shape(x_a->value)) fail("cfgm_layer: main/aux shape mismatch");
  if (layer_index < 1 || layer_index > arch.branch_layers)
    fail("cfgm_layer: layer_index out of range");

  const std::string p =
      std::string(branch_prefix(branch)) + ".blk" + std::to_string(layer_index) + ".";
  const bool shifted = layer_index % 2 == 0;

  auto n1 = norm(m, p + "ln1.", x_m);
  auto x = ad::add(x_m, window_attention(attn_refs(m, p + "attn."), n1, n1,
                                         arch.window, arch.heads, shifted));
  if (layer_index % 2 == 1 && use_cfgm) {
    auto cross = window_attention(attn_refs(m, p + "xattn."),
                                  norm(m, p + "xln_q.", x),
                                  norm(m, p + "xln_kv.", x_a),
                                  arch.window, arch.heads, /*shifted=*/false);
    x = ad::add(x, ad::scale_by(m.param(p + "lambda"), cross));
  }
  auto mlp = ad::linear(
      ad::gelu(ad::linear(norm(m, p + "ln2.", x), m.param(p + "mlp.w1"),
                          m.param(p + "mlp.b1"))),
      m.param(p + "mlp.w2"), m.param(p + "mlp.b2"));
  return ad::add(x, mlp);
}

BranchOutputs run_branches(const Model& m, const ad::VarPtr& shared_a,
                           const ad::VarPtr& shared_b, bool use_cfgm) {
  const auto& arch = m.arch();
  check_feature(shared_a, arch.shared_channels(), arch.window, "run_branches");
  if (!shared_a->value.same_shape(shared_b->value))
    fail("run_branches: shared feature shape mismatch");

  auto cat = ad::concat_channels({shared_a, shared_b});
  auto xm = ad::linear(cat, m.param("mm.proj.w"), m.param("mm.proj.b"));
  auto xd = ad::linear(cat, m.param("dp.proj.w"), m.param("dp.proj.b"));
  for (int i = 1; i <= arch.branch_layers; ++i) {
    auto nm = cfgm_layer(m, Branch::MM, xm, xd, i, use_cfgm);
    auto nd = cfgm_layer(m, Branch::DP, xd, xm, i, use_cfgm);
    xm = std::move(nm);
    xd = std::move(nd);
  }
  return {xm, xd};
}

ad::VarPtr branch_forward(const Model& m, const ad::VarPtr& shared_a,
                          const ad::VarPtr& shared_b, Branch branch) {
  auto out = run_branches(m, shared_a, shared_b);
  return branch == Branch::MM ? out.mm : out.dp;
}

ad::VarPtr gdec_forward(const Model& m, const ad::VarPtr& fused) {
  if (fused->value.rank() != 3 || fused->value.dim(2) != m.arch().embed_dim)
    fail("gdec_forward: expected embed_dim channels");
  return decode(m, "gdec.", fused);
}

ad::VarPtr rec_forward(const Model& m, const ad::VarPtr& shared) {
  if (shared->value.rank() != 3 ||
      shared->value.dim(2) != m.arch().shared_channels())
    fail("rec_forward: expected shared-channel input");
  return decode(m, "rec.", shared);
}

void save_checkpoint(const Model& m, const std::string& path) {
  std::vector<uint8_t> buf;
  buf.reserve(1 << 20);
  for (char c : kMagic) buf.push_back(static_cast<uint8_t>(c));
  put_u32(buf, kVersion);
  const auto& a = m.arch();
  put_u32(buf, static_cast<uint32_t>(a.base_channels));
  put_u32(buf, static_cast<uint32_t>(a.enc_layers));
  put_u32(buf, static_cast<uint32_t>(a.branch_layers));
  put_u32(buf, static_cast<uint32_t>(a.embed_dim));
  put_u32(buf, static_cast<uint32_t>(a.heads));
  put_u32(buf, static_cast<uint32_t>(a.window));
  put_f32(buf, a.mlp_ratio);
  put_u32(buf, static_cast<uint32_t>(m.params().size()));
  for (const auto& [name, node] : m.params()) {
    put_u16(buf, static_cast<uint16_t>(name.size()));
    for (char c : name) buf.push_back(static_cast<uint8_t>(c));
    const Tensor& t = node->value;
    buf.push_back(static_cast<uint8_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put_u32(buf, static_cast<uint32_t>(t.dim(d)));
    for (int64_t i = 0; i < t.size(); ++i) put_f32(buf, t[i]);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path + ": cannot open checkpoint for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) fail(path + ": checkpoint write failed");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path + ": cannot open checkpoint");
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  Cursor c{buf, 0, path};

  const std::string magic = c.str(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) fail(path + ": bad checkpoint magic");
  const uint32_t version = c.u32();
  if (version != kVersion)
    fail(path + ": unsupported checkpoint version " + std::to_string(version));

  ArchConfig a;
  a.base_channels = static_cast<int>(c.u32());
  a.enc_layers = static_cast<int>(c.u32());
  a.branch_layers = static_cast<int>(c.u32());
  a.embed_dim = static_cast<int>(c.u32());
  a.heads = static_cast<int>(c.u32());
  a.window = static_cast<int>(c.u32());
  a.mlp_ratio = c.f32();
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    fail(path + ": invalid embedded config: " + e.what());
  }

  Model m(a, 0);
  const uint32_t count = c.u32();
  if (count != m.params().size())
    fail(path + ": tensor count " + std::to_string(count) + " does not match config");
  for (const auto& [name, node] : m.params()) {
    const uint16_t len = c.u16();
    const std::string stored = c.str(len);
    if (stored != name)
      fail(path + ": tensor '" + stored + "' where '" + name + "' expected");
    Tensor& t = node->value;
    const uint8_t rank = c.u8();
    if (rank != t.rank()) fail(path + ": rank mismatch for " + name);
    for (int d = 0; d < t.rank(); ++d) {
      if (c.u32() != static_cast<uint32_t>(t.dim(d)))
        fail(path + ": shape mismatch for " + name);
    }
    for (int64_t i = 0; i < t.size(); ++i) t[i] = c.f32();
  }
  if (c.pos != buf.size()) fail(path + ": trailing bytes after checkpoint payload");
  return m;
}

}  // namespace gifnet
