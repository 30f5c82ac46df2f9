// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/network.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "gifnet/rng.hpp"

using namespace gifnet;
namespace fs = std::filesystem;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.base_channels = 8;
  a.enc_layers = 2;
  a.branch_layers = 2;
  a.embed_dim = 16;
  a.heads = 2;
  a.window = 4;
  a.mlp_ratio = 2.0f;
  return a;
}

Tensor random_tensor(uint64_t seed, std::vector<int> shape, float lo, float hi) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  float m = 0.0f;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

void zero_param(const Model& m, const std::string& name) {
  m.param(name)->value.zero();
}

// Double-precision layer norm matching the graph op (biased var, eps 1e-5),
// with unit gain and zero shift.
std::vector<double> ln_ref(const std::vector<double>& v) {
  const size_t c = v.size();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(c);
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(c);
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  std::vector<double> out(c);
  for (size_t i = 0; i < c; ++i) out[i] = (v[i] - mean) * inv;
  return out;
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("arch config validates its dimensions") {
  ArchConfig a;
  CHECK_NOTHROW(a.validate());
  CHECK(a.shared_channels() == 48);
  CHECK(a.mlp_hidden() == 64);

  auto reject = [](auto mutate) {
    ArchConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  };
  reject([](ArchConfig& c) { c.branch_layers = 3; });
  reject([](ArchConfig& c) { c.window = 7; });
  reject([](ArchConfig& c) { c.window = 0; });
  reject([](ArchConfig& c) {
    c.embed_dim = 30;
    c.heads = 4;
  });
  reject([](ArchConfig& c) { c.enc_layers = 0; });
  reject([](ArchConfig& c) { c.mlp_ratio = 0.0f; });
}

TEST_CASE("model builds a deterministic named parameter set") {
  const Model m(ArchConfig{}, 7);

  auto shape_of = [&](const std::string& name) {
    return m.param(name)->value.shape();
  };
  CHECK(shape_of("senc.conv0.w") == std::vector<int>{16, 3, 3, 3});
  CHECK(shape_of("senc.conv1.w") == std::vector<int>{16, 3, 3, 19});
  CHECK(shape_of("senc.conv2.w") == std::vector<int>{16, 3, 3, 35});
  CHECK(shape_of("rec.conv0.w") == std::vector<int>{16, 3, 3, 48});
  CHECK(shape_of("gdec.conv0.w") == std::vector<int>{16, 3, 3, 32});
  CHECK(shape_of("mm.proj.w") == std::vector<int>{96, 32});
  CHECK(shape_of("dp.blk3.xattn.wq") == std::vector<int>{32, 32});
  CHECK(shape_of("mm.blk1.mlp.w1") == std::vector<int>{32, 64});

  CHECK(m.has_param("mm.blk1.lambda"));
  CHECK(m.has_param("mm.blk3.lambda"));
  CHECK_FALSE(m.has_param("mm.blk2.lambda"));
  CHECK(m.param("mm.blk1.lambda")->value[0] == 0.1f);
  CHECK_THROWS_AS((void)m.param("nope"), std::out_of_range);

  const Tensor& g = m.param("mm.blk1.ln1.g")->value;
  for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0f);
  const Tensor& b = m.param("senc.conv0.b")->value;
  for (int64_t i = 0; i < b.size(); ++i) CHECK(b[i] == 0.0f);

  CHECK(m.params().front().first == "senc.conv0.w");

  const Model again(ArchConfig{}, 7);
  const Model other(ArchConfig{}, 8);
  REQUIRE(again.params().size() == m.params().size());
  bool all_same = true, any_diff_seed = false;
  for (size_t i = 0; i < m.params().size(); ++i) {
    all_same &= bitwise_equal(m.params()[i].second->value,
                              again.params()[i].second->value);
    any_diff_seed |= !bitwise_equal(m.params()[i].second->value,
                                    other.params()[i].second->value);
  }
  CHECK(all_same);
  CHECK(any_diff_seed);
}

TEST_CASE("set_trainable flips gradient tracking by prefix") {
  Model m(small_arch(), 1);
  for (const auto& [name, node] : m.params()) CHECK(node->requires_grad);
  m.set_trainable("mm.", false);
  for (const auto& [name, node] : m.params()) {
    if (name.rfind("mm.", 0) == 0)
      CHECK_FALSE(node->requires_grad);
    else
      CHECK(node->requires_grad);
  }
  m.set_trainable("", true);
  for (const auto& [name, node] : m.params()) CHECK(node->requires_grad);
}

TEST_CASE("shared encoder stacks dense features") {
  const Model m(small_arch(), 2);
  auto rgb = ad::constant(random_tensor(3, {8, 8, 3}, 0.0f, 1.0f));
  auto out = senc_forward(m, rgb);
  CHECK(out->value.shape() == std::vector<int>{8, 8, 16});

  // A gray input behaves exactly like the equivalent replicated RGB.
  Tensor gray({8, 8, 1});
  Tensor rep({8, 8, 3});
  Rng rng(4);
  for (int64_t i = 0; i < gray.size(); ++i) {
    gray[i] = static_cast<float>(rng.uniform());
    for (int c = 0; c < 3; ++c) rep[i * 3 + c] = gray[i];
  }
  CHECK(bitwise_equal(senc_forward(m, ad::constant(gray))->value,
                      senc_forward(m, ad::constant(rep))->value));

  // Gradients reach every input pixel through the dense wiring.
  auto leaf_in = ad::leaf(rep);
  ad::backward(ad::mean_all(senc_forward(m, leaf_in)));
  REQUIRE(leaf_in->grad.size() == rep.size());
  int nonzero = 0;
  for (int64_t i = 0; i < leaf_in->grad.size(); ++i)
    nonzero += leaf_in->grad[i] != 0.0f;
  CHECK(nonzero > static_cast<int>(rep.size() / 2));

  CHECK_THROWS_AS((void)senc_forward(m, ad::constant(Tensor({8, 8, 2}))),
                  std::runtime_error);
}

TEST_CASE("uniform attention averages values across the window") {
  const Model m(small_arch(), 5);
  // Zeroing the query projection makes every logit zero, so attention
  // becomes a plain mean over window tokens; zeroing mlp.w2 removes the
  // feed-forward residual.
  zero_param(m, "mm.blk1.attn.wq");
  zero_param(m, "mm.blk1.attn.bq");
  zero_param(m, "mm.blk1.mlp.w2");
  zero_param(m, "mm.blk1.mlp.b2");

  const Tensor x = random_tensor(6, {4, 4, 16}, -1.0f, 1.0f);
  auto xn = ad::constant(x);
  auto out = cfgm_layer(m, Branch::MM, xn, xn, 1, /*use_cfgm=*/false);

  const Tensor& wv = m.param("mm.blk1.attn.wv")->value;
  const Tensor& wo = m.param("mm.blk1.attn.wo")->value;
  const int e = 16, tokens = 16;

  // Oracle: v = LN(x) @ wv per pixel, averaged over the single 4x4 window,
  // then projected by wo and added back to x.
  std::vector<double> vmean(e, 0.0);
  for (int p = 0; p < tokens; ++p) {
    std::vector<double> row(e);
    for (int c = 0; c < e; ++c) row[c] = x[p * e + c];
    const auto n1 = ln_ref(row);
    for (int j = 0; j < e; ++j) {
      double v = 0.0;
      for (int i = 0; i < e; ++i) v += n1[i] * wv[i * e + j];
      vmean[j] += v / tokens;
    }
  }
  double worst = 0.0;
  for (int p = 0; p < tokens; ++p)
    for (int j = 0; j < e; ++j) {
      double attn = 0.0;
      for (int i = 0; i < e; ++i) attn += vmean[i] * wo[i * e + j];
      worst = std::max(worst, std::fabs(out->value[p * e + j] - (x[p * e + j] + attn)));
    }
  CHECK(worst < 2e-4);
}

TEST_CASE("shifted attention mixes only within mask regions") {
  const Model m(small_arch(), 6);
  // Uniform attention with identity value/output projections, no MLP:
  // each pixel receives the mean of LN(x) over its mask region.
  zero_param(m, "mm.blk2.attn.wq");
  zero_param(m, "mm.blk2.attn.bq");
  zero_param(m, "mm.blk2.mlp.w2");
  zero_param(m, "mm.blk2.mlp.b2");
  Tensor& wv = m.param("mm.blk2.attn.wv")->value;
  Tensor& wo = m.param("mm.blk2.attn.wo")->value;
  wv.zero();
  wo.zero();
  for (int i = 0; i < 16; ++i) {
    wv[i * 16 + i] = 1.0f;
    wo[i * 16 + i] = 1.0f;
  }

  // Two row bands: rows 0..3 carry vector A, rows 4..7 vector B. Every
  // cyclic-shift mask region is then row-homogeneous, so the attention
  // delta at each pixel must be LN of that pixel's own band.
  std::vector<double> A(16), B(16);
  for (int c = 0; c < 16; ++c) {
    A[c] = 0.2 + 0.05 * c;
    B[c] = std::sin(0.7 * c);
  }
  Tensor x({8, 8, 16});
  for (int y = 0; y < 8; ++y)
    for (int xx = 0; xx < 8; ++xx)
      for (int c = 0; c < 16; ++c)
        x[(y * 8 + xx) * 16 + c] = static_cast<float>(y < 4 ? A[c] : B[c]);

  auto out = cfgm_layer(m, Branch::MM, ad::constant(x), ad::constant(x), 2);
  const auto lnA = ln_ref(A), lnB = ln_ref(B);
  double worst = 0.0;
  for (int y = 0; y < 8; ++y)
    for (int xx = 0; xx < 8; ++xx)
      for (int c = 0; c < 16; ++c) {
        const double want = (y < 4 ? lnA[c] : lnB[c]);
        const double delta = out->value[(y * 8 + xx) * 16 + c] - x[(y * 8 + xx) * 16 + c];
        worst = std::max(worst, std::fabs(delta - want));
      }
  CHECK(worst < 2e-4);

  // Sanity: a missing mask would blend the bands, which sits far away.
  double sep = 0.0;
  for (int c = 0; c < 16; ++c)
    sep = std::max(sep, std::fabs(lnA[c] - 0.5 * (lnA[c] + lnB[c])));
  CHECK(sep > 0.05);
}

TEST_CASE("even layers ignore the aux stream entirely") {
  const Model m(small_arch(), 9);
  auto x = ad::constant(random_tensor(10, {8, 8, 16}, -1.0f, 1.0f));
  auto a1 = ad::constant(random_tensor(11, {8, 8, 16}, -1.0f, 1.0f));
  auto a2 = ad::constant(random_tensor(12, {8, 8, 16}, -1.0f, 1.0f));

  CHECK(bitwise_equal(cfgm_layer(m, Branch::MM, x, a1, 2)->value,
                      cfgm_layer(m, Branch::MM, x, a2, 2)->value));
  // Odd layers consult the aux stream only through the gating path.
  CHECK(bitwise_equal(cfgm_layer(m, Branch::MM, x, a1, 1, false)->value,
                      cfgm_layer(m, Branch::MM, x, a2, 1, false)->value));
  CHECK(max_abs_diff(cfgm_layer(m, Branch::MM, x, a1, 1)->value,
                     cfgm_layer(m, Branch::MM, x, a2, 1)->value) > 1e-6f);
}

TEST_CASE("zero lambda decouples the branches from each other") {
  const Model m(small_arch(), 13);
  for (const auto& [name, node] : m.params())
    if (name.size() > 6 && name.compare(name.size() - 6, 6, "lambda") == 0)
      node->value.zero();

  auto fa = ad::constant(random_tensor(14, {8, 8, 16}, 0.0f, 1.0f));
  auto fb = ad::constant(random_tensor(15, {8, 8, 16}, 0.0f, 1.0f));
  auto gated = run_branches(m, fa, fb, /*use_cfgm=*/true);
  auto ungated = run_branches(m, fa, fb, /*use_cfgm=*/false);
  CHECK(max_abs_diff(gated.mm->value, ungated.mm->value) < 1e-6f);
  CHECK(max_abs_diff(gated.dp->value, ungated.dp->value) < 1e-6f);
}

TEST_CASE("nonzero lambda couples the branches") {
  const Model m(small_arch(), 16);
  auto fa = ad::constant(random_tensor(17, {8, 8, 16}, 0.0f, 1.0f));
  auto fb = ad::constant(random_tensor(18, {8, 8, 16}, 0.0f, 1.0f));
  auto gated = run_branches(m, fa, fb, true);
  auto ungated = run_branches(m, fa, fb, false);
  CHECK(max_abs_diff(gated.mm->value, ungated.mm->value) > 1e-6f);
  CHECK(gated.mm->value.shape() == std::vector<int>{8, 8, 16});
  CHECK(gated.dp->value.shape() == std::vector<int>{8, 8, 16});

  CHECK(bitwise_equal(branch_forward(m, fa, fb, Branch::MM)->value,
                      gated.mm->value));
  CHECK(bitwise_equal(branch_forward(m, fa, fb, Branch::DP)->value,
                      gated.dp->value));
}

TEST_CASE("run_branches validates its inputs") {
  const Model m(small_arch(), 19);
  auto ok = ad::constant(Tensor({8, 8, 16}, 0.1f));
  CHECK_THROWS_AS((void)run_branches(m, ok, ad::constant(Tensor({8, 4, 16}))),
                  std::runtime_error);
  CHECK_THROWS_AS(
      (void)run_branches(m, ad::constant(Tensor({8, 8, 8})),
                         ad::constant(Tensor({8, 8, 8}))),
      std::runtime_error);
  CHECK_THROWS_AS(
      (void)run_branches(m, ad::constant(Tensor({6, 8, 16})),
                         ad::constant(Tensor({6, 8, 16}))),
      std::runtime_error);
}

TEST_CASE("decoders with zero weights emit exactly one half") {
  const Model m(small_arch(), 20);
  for (const char* p : {"gdec.conv0", "gdec.conv1", "rec.conv0", "rec.conv1"}) {
    zero_param(m, std::string(p) + ".w");
    zero_param(m, std::string(p) + ".b");
  }
  auto g = gdec_forward(m, ad::constant(random_tensor(21, {8, 8, 16}, -1.0f, 1.0f)));
  CHECK(g->value.shape() == std::vector<int>{8, 8, 1});
  for (int64_t i = 0; i < g->value.size(); ++i) CHECK(g->value[i] == 0.5f);

  auto r = rec_forward(m, ad::constant(random_tensor(22, {8, 8, 16}, -1.0f, 1.0f)));
  CHECK(r->value.shape() == std::vector<int>{8, 8, 1});
  for (int64_t i = 0; i < r->value.size(); ++i) CHECK(r->value[i] == 0.5f);

  CHECK_THROWS_AS((void)gdec_forward(m, ad::constant(Tensor({8, 8, 5}))),
                  std::runtime_error);
  CHECK_THROWS_AS((void)rec_forward(m, ad::constant(Tensor({8, 8, 5}))),
                  std::runtime_error);
}

TEST_CASE("full-size forward is finite, bounded, and repeatable") {
  const Model m(ArchConfig{}, 3);
  auto fa = ad::constant(random_tensor(23, {16, 16, 48}, 0.0f, 1.0f));
  auto fb = ad::constant(random_tensor(24, {16, 16, 48}, 0.0f, 1.0f));
  auto first = run_branches(m, fa, fb);
  auto second = run_branches(m, fa, fb);
  CHECK(bitwise_equal(first.mm->value, second.mm->value));
  CHECK(bitwise_equal(first.dp->value, second.dp->value));

  auto dec = gdec_forward(m, first.mm);
  for (int64_t i = 0; i < dec->value.size(); ++i) {
    CHECK(std::isfinite(dec->value[i]));
    CHECK(dec->value[i] > 0.0f);
    CHECK(dec->value[i] < 1.0f);
  }
}

TEST_CASE("checkpoints round-trip bitwise and embed the config") {
  const auto dir = fresh_dir("gifnet_ckpt_test");
  ArchConfig a = small_arch();
  Model m(a, 11);
  m.param("senc.conv0.w")->value[0] += 0.25f;

  const std::string path = (dir / "model.gfck").string();
  save_checkpoint(m, path);

  // 40-byte header, then per tensor: u16 name length, name bytes, u8 rank,
  // u32 per dim, f32 per element.
  uintmax_t want = 40;
  for (const auto& [name, node] : m.params())
    want += 2 + name.size() + 1 + 4u * node->value.rank() + 4u * node->value.size();
  CHECK(fs::file_size(path) == want);

  const Model back = load_checkpoint(path);
  CHECK(back.arch().base_channels == a.base_channels);
  CHECK(back.arch().enc_layers == a.enc_layers);
  CHECK(back.arch().branch_layers == a.branch_layers);
  CHECK(back.arch().embed_dim == a.embed_dim);
  CHECK(back.arch().heads == a.heads);
  CHECK(back.arch().window == a.window);
  CHECK(back.arch().mlp_ratio == a.mlp_ratio);
  REQUIRE(back.params().size() == m.params().size());
  for (size_t i = 0; i < m.params().size(); ++i) {
    CHECK(back.params()[i].first == m.params()[i].first);
    CHECK(bitwise_equal(back.params()[i].second->value,
                        m.params()[i].second->value));
  }
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  const auto dir = fresh_dir("gifnet_ckpt_corrupt");
  const std::string path = (dir / "model.gfck").string();
  save_checkpoint(Model(small_arch(), 11), path);

  auto mutate = [&](const std::string& out, auto fn) {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    fn(buf);
    std::ofstream o(out, std::ios::binary);
    o.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  };

  const std::string bad = (dir / "bad.gfck").string();
  mutate(bad, [](std::vector<char>& b) { b[0] = 'X'; });
  CHECK_THROWS_AS((void)load_checkpoint(bad), std::runtime_error);

  mutate(bad, [](std::vector<char>& b) { b[4] = 9; });  // version
  CHECK_THROWS_AS((void)load_checkpoint(bad), std::runtime_error);

  mutate(bad, [](std::vector<char>& b) { b.resize(b.size() - 10); });
  CHECK_THROWS_AS((void)load_checkpoint(bad), std::runtime_error);

  mutate(bad, [](std::vector<char>& b) { b.insert(b.end(), 4, '\0'); });
  CHECK_THROWS_AS((void)load_checkpoint(bad), std::runtime_error);

  mutate(bad, [](std::vector<char>& b) { b[8] = 0; });  // base_channels = 0
  CHECK_THROWS_AS((void)load_checkpoint(bad), std::runtime_error);

  CHECK_THROWS_AS((void)load_checkpoint((dir / "missing.gfck").string()),
                  std::runtime_error);
  CHECK_THROWS_AS(save_checkpoint(Model(small_arch(), 0),
                                  (dir / "no" / "such" / "dir.gfck").string()),
                  std::runtime_error);
}
