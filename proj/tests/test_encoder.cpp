#include <cmath>
#include <numeric>

#include "doctest.h"
#include "hstmrf/attention.hpp"
#include "hstmrf/encoder.hpp"
#include "hstmrf/model.hpp"
#include "test_util.hpp"

using namespace hstmrf;
using namespace testutil;

namespace {

constexpr DType F64 = DType::f64;

ModelConfig small_cfg(int64_t c, int64_t window) {
  ModelConfig m;
  m.channels = c;
  m.window = window;
  return m;
}

void zero(Tensor t) {
  if (t.defined()) t.copy_from(Tensor::zeros(t.shape(), t.dtype()));
}

// Solves A X = B for square A (row-major n x n), B n x m, by Gaussian
// elimination with partial pivoting in long double.
std::vector<double> solve(std::vector<double> a, std::vector<double> b, int64_t n, int64_t m) {
  std::vector<long double> A(a.begin(), a.end()), B(b.begin(), b.end());
  for (int64_t c = 0; c < n; ++c) {
    int64_t p = c;
    for (int64_t r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[p * n + c])) p = r;
    for (int64_t j = 0; j < n; ++j) std::swap(A[c * n + j], A[p * n + j]);
    for (int64_t j = 0; j < m; ++j) std::swap(B[c * m + j], B[p * m + j]);
    for (int64_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const long double f = A[r * n + c] / A[c * n + c];
      for (int64_t j = 0; j < n; ++j) A[r * n + j] -= f * A[c * n + j];
      for (int64_t j = 0; j < m; ++j) B[r * m + j] -= f * B[c * m + j];
    }
  }
  std::vector<double> x(static_cast<size_t>(n * m));
  for (int64_t r = 0; r < n; ++r)
    for (int64_t j = 0; j < m; ++j) x[r * m + j] = static_cast<double>(B[r * m + j] / A[r * n + r]);
  return x;
}

std::vector<double> transpose(const std::vector<double>& a, int64_t r, int64_t c) {
  std::vector<double> t(a.size());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

HaProjections rand_proj(Rng& rng, int64_t ch, int64_t d) {
  return {rand_tensor(rng, {ch, d}), rand_tensor(rng, {ch, d}), rand_tensor(rng, {ch, d}),
          rand_tensor(rng, {ch, d}), rand_tensor(rng, {ch, d}), rand_tensor(rng, {ch, d})};
}

}  // namespace

TEST_SUITE("encoder shapes") {
  TEST_CASE("ten stage maps follow the five stage formulas") {
    for (auto [c, size, window] : {std::tuple<int64_t, int64_t, int64_t>{8, 64, 4}, {4, 32, 2}}) {
      HstMrf model(small_cfg(c, window), 1);
      Rng rng(2);
      const ModelOutput out = model.forward(rand_tensor(rng, {2, 3, size, size}, DType::f32, 0, 1), {});
      REQUIRE(out.enc.branches() == 2);
      for (int m = 1; m <= 5; ++m)
        for (int r = 1; r <= 2; ++r) {
          CAPTURE(m);
          CAPTURE(r);
          const int64_t s = size >> (m - 1);
          CHECK(out.enc.at(m, r).shape() == Shape{2, c << (m - 1), s, s});
        }
    }
  }

  TEST_CASE("the stage-1 example at C=8, 64x64") {
    HstMrf model(small_cfg(8, 4), 1);
    const ModelOutput out = model.forward(Tensor::zeros({1, 3, 64, 64}), {});
    const Shape expect[] = {{1, 8, 64, 64}, {1, 16, 32, 32}, {1, 32, 16, 16}, {1, 64, 8, 8}, {1, 128, 4, 4}};
    for (int m = 1; m <= 5; ++m) CHECK(out.enc.at(m, 1).shape() == expect[m - 1]);
  }

  TEST_CASE("indivisible inputs are rejected with the stage or size named") {
    HstMrf model(small_cfg(8, 4), 1);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 3, 60, 60}), {}), ShapeError);
    try {
      model.forward(Tensor::zeros({1, 3, 60, 60}), {});
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("encoder") != std::string::npos);
    }
  }
}

TEST_SUITE("stem, downsampling and embedding") {
  TEST_CASE("stem branches use dilation 1 and 2 with matching padding") {
    ParamStore ps(1);
    Encoder enc(ps, small_cfg(8, 4));
    REQUIRE(enc.stem.size() == 2);
    CHECK(enc.stem[0].conv.opt.dilation == 1);
    CHECK(enc.stem[0].conv.opt.padding == 1);
    CHECK(enc.stem[1].conv.opt.dilation == 2);
    CHECK(enc.stem[1].conv.opt.padding == 2);
    // Zero input with zero bias is zero before normalization.
    zero(enc.stem[1].conv.bias);
    const Tensor y = enc.stem[1].conv(Tensor::zeros({1, 3, 16, 16}));
    CHECK(y.shape() == Shape{1, 8, 16, 16});
    for (double v : y.to_vector()) CHECK(v == 0.0);
  }

  TEST_CASE("stride-2 downsampling sees only its 2x2 block") {
    ParamStore ps(1);
    Encoder enc(ps, small_cfg(8, 4));
    Rng rng(3);
    const Tensor x = rand_tensor(rng, {1, 8, 64, 64}, DType::f32);
    const Tensor y = enc.down[0].conv(x);
    CHECK(y.shape() == Shape{1, 16, 32, 32});
    Tensor x2 = x.clone();
    x2.set({0, 3, 2, 2}, 5.0);
    x2.set({0, 1, 0, 2}, -5.0);
    const Tensor y2 = enc.down[0].conv(x2);
    for (int64_t c = 0; c < 16; ++c) CHECK(y.at({0, c, 0, 0}) == y2.at({0, c, 0, 0}));
    // Averaging weights on a constant map give a constant map.
    enc.down[0].conv.weight.copy_from(Tensor::full({16, 8, 2, 2}, 1.0 / 32, DType::f32));
    zero(enc.down[0].conv.bias);
    const auto c = enc.down[0].conv(Tensor::full({1, 8, 8, 8}, 0.5f)).to_vector();
    for (double v : c) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
  }

  TEST_CASE("APE produces N=(H/4)(W/4) tokens of width 4C") {
    ParamStore ps(1);
    Encoder enc(ps, small_cfg(8, 4));
    Rng rng(4);
    const Tensor tok = enc.embed(rand_tensor(rng, {1, 16, 32, 32}, DType::f32), 1);
    CHECK(tok.shape() == Shape{1, 256, 32});
  }

  TEST_CASE("APE SoftPool component on {ln2, 0, 0, 0}") {
    const Tensor patch = Tensor::from_vector({1, 1, 2, 2}, {std::log(2.0), 0, 0, 0}, F64);
    const double v = softpool2d(patch, 2, 2).item();
    CHECK(v == doctest::Approx(2 * std::log(2.0) / 5).epsilon(1e-14));
    CHECK(std::abs(v - 0.2773) < 5e-5);
  }

  TEST_CASE("APE of an equal-valued patch with an identity-extension FC copies the value") {
    ParamStore ps(1);
    Encoder enc(ps, small_cfg(4, 2));
    ps.to(F64);
    const Linear& fc = enc.embed_fc[0];
    std::vector<double> w(8 * 16, 0.0);
    for (int i = 0; i < 8; ++i) w[i * 16 + i] = 1.0;
    Tensor fw = fc.weight;
    fw.copy_from(Tensor::from_vector({8, 16}, w, F64));
    zero(fc.bias);
    Rng rng(5);
    std::vector<double> x(8 * 4 * 4);
    for (int c = 0; c < 8; ++c) {
      const double v = rng.uniform(-1, 1);
      for (int p = 0; p < 16; ++p) x[c * 16 + p] = v;
    }
    const auto tok = enc.embed(Tensor::from_vector({1, 8, 4, 4}, x, F64), 1).to_vector();
    for (int t = 0; t < 4; ++t)
      for (int c = 0; c < 16; ++c) CHECK(tok[t * 16 + c] == doctest::Approx(c < 8 ? x[c * 16] : 0.0).epsilon(1e-14));
  }
}

TEST_SUITE("heterogeneous attention") {
  TEST_CASE("n=1 returns the value projections") {
    Rng rng(6);
    const HaProjections p = rand_proj(rng, 5, 4);
    const Tensor p1 = rand_tensor(rng, {1, 5}), p2 = rand_tensor(rng, {1, 5});
    const AttentionResult r = heterogeneous_attention(p1, p2, p);
    CHECK(r.weights.to_vector() == std::vector<double>{1.0});
    CHECK(max_abs_diff(r.z1.to_vector(), naive_matmul(p1.to_vector(), p.wv.to_vector(), 1, 5, 4)) < 1e-15);
    CHECK(max_abs_diff(r.z2.to_vector(), naive_matmul(p2.to_vector(), p.uv.to_vector(), 1, 5, 4)) < 1e-15);
  }

  TEST_CASE("zero query projections give uniform weights and mean values") {
    Rng rng(7);
    HaProjections p = rand_proj(rng, 6, 4);
    p.wq = Tensor::zeros({6, 4}, F64);
    p.uk = Tensor::zeros({6, 4}, F64);
    const int64_t n = 5;
    const Tensor p1 = rand_tensor(rng, {n, 6}), p2 = rand_tensor(rng, {n, 6});
    const AttentionResult r = heterogeneous_attention(p1, p2, p);
    for (double w : r.weights.to_vector()) CHECK(w == doctest::Approx(1.0 / n).epsilon(1e-14));
    for (auto [z, pr, v] : {std::tuple{r.z1, p1, p.wv}, std::tuple{r.z2, p2, p.uv}}) {
      const auto pv = naive_matmul(pr.to_vector(), v.to_vector(), n, 6, 4);
      const auto zv = z.to_vector();
      for (int64_t c = 0; c < 4; ++c) {
        double mean = 0;
        for (int64_t j = 0; j < n; ++j) mean += pv[j * 4 + c] / n;
        for (int64_t i = 0; i < n; ++i) CHECK(zv[i * 4 + c] == doctest::Approx(mean).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("sequence length mismatch") {
    Rng rng(8);
    const HaProjections p = rand_proj(rng, 3, 2);
    CHECK_THROWS_AS(heterogeneous_attention(rand_tensor(rng, {3, 3}), rand_tensor(rng, {4, 3}), p), ShapeError);
  }

  TEST_CASE("property: tied projections and branches degenerate to doubled-score attention") {
    for (int64_t n : {1, 2, 4, 8})
      for (int64_t d : {4, 8, 16})
        for (uint64_t seed = 1; seed <= 3; ++seed) {
          Rng rng(seed * 100 + static_cast<uint64_t>(n * 17 + d));
          const int64_t ch = 6;
          HaProjections p = rand_proj(rng, ch, d);
          p.uq = p.wq;
          p.uk = p.wk;
          p.uv = p.wv;
          const Tensor x = rand_tensor(rng, {n, ch}, F64, -2, 2);
          const AttentionResult r = heterogeneous_attention(x, x, p);
          const auto xv = x.to_vector();
          const auto q = naive_matmul(xv, p.wq.to_vector(), n, ch, d);
          const auto k = naive_matmul(xv, p.wk.to_vector(), n, ch, d);
          const auto v = naive_matmul(xv, p.wv.to_vector(), n, ch, d);
          const auto ref = oracle_attention(q, k, v, n, d, d, 2.0, 1.0 / std::sqrt(2.0 * d));
          CAPTURE(n);
          CAPTURE(d);
          CHECK(max_abs_diff(r.z1.to_vector(), ref) <= 1e-6);
          CHECK(max_abs_diff(r.z2.to_vector(), ref) <= 1e-6);
        }
  }

  TEST_CASE("property: the weights applied to both value streams are identical") {
    // With d = n the value matrices are square, so the effective weights can
    // be recovered from each branch's output independently.
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      Rng rng(seed);
      const int64_t n = 6, ch = 7;
      const HaProjections p = rand_proj(rng, ch, n);
      const Tensor p1 = rand_tensor(rng, {n, ch}), p2 = rand_tensor(rng, {n, ch});
      const AttentionResult r = heterogeneous_attention(p1, p2, p);
      const auto v1 = naive_matmul(p1.to_vector(), p.wv.to_vector(), n, ch, n);
      const auto v2 = naive_matmul(p2.to_vector(), p.uv.to_vector(), n, ch, n);
      // Z = A V  =>  V^T A^T = Z^T.
      const auto a1 = transpose(solve(transpose(v1, n, n), transpose(r.z1.to_vector(), n, n), n, n), n, n);
      const auto a2 = transpose(solve(transpose(v2, n, n), transpose(r.z2.to_vector(), n, n), n, n), n, n);
      CAPTURE(seed);
      CHECK(max_abs_diff(a1, a2) <= 1e-7);
      CHECK(max_abs_diff(a1, r.weights.to_vector()) <= 1e-7);
    }
  }
}

TEST_SUITE("windows") {
  TEST_CASE("partition and reverse round-trip bit-exactly") {
    Rng rng(9);
    for (bool shifted : {false, true})
      for (auto [h, w, win] : {std::tuple<int64_t, int64_t, int64_t>{8, 8, 4}, {8, 12, 4}, {4, 4, 2}, {4, 4, 4}}) {
        const WindowLayout l = WindowLayout::make(h, w, win, shifted);
        const Tensor x = rand_tensor(rng, {2, h * w, 3}, DType::f32);
        const Tensor p = window_partition(x, l);
        CHECK(p.shape() == Shape{2 * l.num_windows, win * win, 3});
        CHECK(bit_equal(window_reverse(p, l), x));
        if (shifted && std::min(h, w) > win) CHECK(l.shift == win / 2);
      }
    CHECK_THROWS_AS(WindowLayout::make(6, 8, 4, false), ShapeError);
  }

  TEST_CASE("8x8 grid with window 4 has 4 windows of 16 tokens") {
    const WindowLayout l = WindowLayout::make(8, 8, 4, false);
    CHECK(l.num_windows == 4);
    CHECK(l.tokens_per_window == 16);
    // Each window holds a contiguous 4x4 block.
    for (int64_t wdx = 0; wdx < 4; ++wdx)
      for (int64_t t = 0; t < 16; ++t) {
        const int64_t g = l.forward[static_cast<size_t>(wdx * 16 + t)];
        CHECK((g / 8) / 4 * 2 + (g % 8) / 4 == wdx);
      }
  }

  TEST_CASE("property: no influence across unshifted windows") {
    for (uint64_t seed = 1; seed <= 4; ++seed) {
      ParamStore ps(seed);
      WindowAttention wa(ps, "wa", 8, 8, 2, 2, true, 4, false);
      ps.to(F64);
      const WindowLayout l = WindowLayout::make(8, 8, 4, false);
      Rng rng(seed);
      const Tensor a = rand_tensor(rng, {1, 64, 8}), b = rand_tensor(rng, {1, 64, 8});
      const auto base = wa({a, b}, l);
      const int64_t tok = rng.uniform_int(0, 63);
      Tensor a2 = a.clone();
      for (int64_t c = 0; c < 8; ++c) a2.set({0, tok, c}, a.at({0, tok, c}) + 3.0);
      const auto pert = wa({a2, b}, l);
      const int64_t win = (tok / 8) / 4 * 2 + (tok % 8) / 4;
      bool inside_changed = false;
      for (int r = 0; r < 2; ++r)
        for (int64_t g = 0; g < 64; ++g) {
          const bool same_window = (g / 8) / 4 * 2 + (g % 8) / 4 == win;
          for (int64_t c = 0; c < 8; ++c) {
            const double x = base[r].at({0, g, c}), y = pert[r].at({0, g, c});
            if (same_window)
              inside_changed = inside_changed || x != y;
            else
              CHECK(x == y);
          }
        }
      CHECK(inside_changed);
    }
  }

  TEST_CASE("shifted windows give exactly zero weight across wrapped regions") {
    ParamStore ps(3);
    WindowAttention wa(ps, "wa", 8, 8, 2, 2, true, 4, false);
    ps.to(F64);
    const WindowLayout l = WindowLayout::make(8, 8, 4, true);
    REQUIRE(l.shift == 2);
    Rng rng(10);
    std::vector<Tensor> w;
    wa({rand_tensor(rng, {1, 64, 8}), rand_tensor(rng, {1, 64, 8})}, l, &w);
    REQUIRE(w.size() == 1);
    CHECK(w[0].shape() == Shape{1, 4, 2, 16, 16});
    const auto wv = w[0].to_vector();
    int64_t zeros = 0;
    for (int64_t win = 0; win < 4; ++win)
      for (int64_t h = 0; h < 2; ++h)
        for (int64_t i = 0; i < 16; ++i)
          for (int64_t j = 0; j < 16; ++j) {
            const double v = wv[static_cast<size_t>(((win * 2 + h) * 16 + i) * 16 + j)];
            if (l.region[static_cast<size_t>(win * 16 + i)] != l.region[static_cast<size_t>(win * 16 + j)]) {
              CHECK(v == 0.0);
              ++zeros;
            } else {
              CHECK(v > 0.0);
            }
          }
    CHECK(zeros > 0);
  }

  TEST_CASE("property: permuting tokens inside one window permutes outputs") {
    for (uint64_t seed = 1; seed <= 4; ++seed) {
      ParamStore ps(seed);
      WindowAttention wa(ps, "wa", 6, 8, 2, 2, true, 4, false);
      ps.to(F64);
      const WindowLayout l = WindowLayout::make(8, 8, 4, false);
      Rng rng(seed + 50);
      const Tensor a = rand_tensor(rng, {1, 64, 6}), b = rand_tensor(rng, {1, 64, 6});
      // Random permutation of the top-left window's grid positions.
      std::vector<int64_t> cells;
      for (int64_t r = 0; r < 4; ++r)
        for (int64_t c = 0; c < 4; ++c) cells.push_back(r * 8 + c);
      std::vector<int64_t> shuffled = cells;
      for (size_t i = shuffled.size() - 1; i > 0; --i)
        std::swap(shuffled[i], shuffled[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)))]);
      std::vector<int64_t> perm(64);
      std::iota(perm.begin(), perm.end(), 0);
      for (size_t i = 0; i < cells.size(); ++i) perm[static_cast<size_t>(cells[i])] = shuffled[i];
      const auto out = wa({a, b}, l);
      const auto outp = wa({index_select(a, 1, perm), index_select(b, 1, perm)}, l);
      for (int r = 0; r < 2; ++r) CHECK(max_abs_diff(index_select(out[r], 1, perm), outp[r]) < 1e-12);
    }
  }
}

TEST_SUITE("HST block and patch merging") {
  TEST_CASE("zeroed output projections make the block an identity") {
    ModelConfig cfg = small_cfg(8, 4);
    ParamStore ps(1);
    HstBlock blk(ps, "blk", 8, cfg, 2, true, true);
    for (const WindowAttention& a : blk.attn)
      for (const Linear& p : a.proj) {
        zero(p.weight);
        zero(p.bias);
      }
    for (const Mlp& m : blk.mlp) {
      zero(m.fc2.weight);
      zero(m.fc2.bias);
    }
    Rng rng(11);
    const Tensor a = rand_tensor(rng, {2, 64, 8}, DType::f32), b = rand_tensor(rng, {2, 64, 8}, DType::f32);
    const auto out = blk({a, b}, 8, 8);
    CHECK(bit_equal(out[0], a));
    CHECK(bit_equal(out[1], b));
  }

  TEST_CASE("a (W, SW) pair preserves shape and keeps constant fields constant") {
    ModelConfig cfg = small_cfg(8, 4);
    ParamStore ps(2);
    HstBlock w(ps, "w", 16, cfg, 2, true, false), sw(ps, "sw", 16, cfg, 2, true, true);
    ps.to(F64);
    Rng rng(12);
    const Tensor a = rand_tensor(rng, {1, 64, 16}), b = rand_tensor(rng, {1, 64, 16});
    const auto out = sw(w({a, b}, 8, 8), 8, 8);
    CHECK(out[0].shape() == Shape{1, 64, 16});
    CHECK(out[1].shape() == Shape{1, 64, 16});

    // Every position carries the same vector.
    const auto tile = [](const Tensor& v) { return index_select(v, 1, std::vector<int64_t>(64, 0)); };
    const Tensor ca = tile(rand_tensor(rng, {1, 1, 16})), cb = tile(rand_tensor(rng, {1, 1, 16}));
    const auto c = sw(w({ca, cb}, 8, 8), 8, 8);
    for (int r = 0; r < 2; ++r) CHECK(max_abs_diff(c[r], tile(index_select(c[r], 1, {0}))) < 1e-12);
  }

  TEST_CASE("patch merging halves the grid and doubles channels") {
    ParamStore ps(3);
    PatchMerging pm(ps, "pm", 32);
    Rng rng(13);
    const Tensor y = pm(rand_tensor(rng, {1, 256, 32}, DType::f32), 16, 16);
    CHECK(y.shape() == Shape{1, 64, 64});
    CHECK_THROWS_AS(pm(rand_tensor(rng, {1, 15, 32}, DType::f32), 3, 5), ShapeError);

    // Constant field through averaging weights stays constant.
    pm.reduction.weight.copy_from(Tensor::full({128, 64}, 1.0 / 128, DType::f32));
    const Tensor c = index_select(rand_tensor(rng, {1, 1, 32}, DType::f32), 1, std::vector<int64_t>(64, 0));
    const auto cv = pm(c, 8, 8).to_vector();
    for (double v : cv) CHECK(v == doctest::Approx(cv[0]).epsilon(1e-6));
  }

  TEST_CASE("each 2x2 corner value appears exactly once in the merged vector") {
    std::vector<double> v(4 * 4 * 2);
    std::iota(v.begin(), v.end(), 0.0);
    const Tensor t = Tensor::from_vector({1, 16, 2}, v, F64);
    const auto m = merge_neighborhoods(t, 4, 4).to_vector();
    REQUIRE(m.size() == 32);
    for (int64_t blk = 0; blk < 4; ++blk) {
      const int64_t by = blk / 2, bx = blk % 2;
      std::vector<double> got(m.begin() + blk * 8, m.begin() + (blk + 1) * 8), want;
      // Order (0,0), (1,0), (0,1), (1,1) as (row, col) offsets.
      for (auto [dy, dx] : {std::pair{0, 0}, {1, 0}, {0, 1}, {1, 1}})
        for (int c = 0; c < 2; ++c) want.push_back(v[static_cast<size_t>(((2 * by + dy) * 4 + 2 * bx + dx) * 2 + c)]);
      CHECK(got == want);
    }
  }
}

TEST_SUITE("ablated encoders") {
  TEST_CASE("one_rf keeps branch 1 with standard attention") {
    ModelConfig cfg = small_cfg(4, 2);
    cfg.ablation = flags_for(AblationState::one_rf);
    ParamStore ps(1);
    Encoder enc(ps, cfg);
    CHECK(enc.branches == 1);
    for (const auto& stage : enc.blocks)
      for (const HstBlock& b : stage) {
        REQUIRE(b.attn.size() == 1);
        CHECK_FALSE(b.attn[0].hetero);
        CHECK(b.attn[0].qkv.size() == 1);
      }
    const EncoderOutput out = enc(Tensor::zeros({1, 3, 32, 32}), {});
    CHECK(out.branches() == 1);
  }

  TEST_CASE("no_hst runs independent per-branch blocks") {
    ModelConfig cfg = small_cfg(4, 2);
    cfg.ablation = flags_for(AblationState::no_hst);
    ParamStore ps(1);
    Encoder enc(ps, cfg);
    for (const auto& stage : enc.blocks)
      for (const HstBlock& b : stage) {
        REQUIRE(b.attn.size() == 2);
        CHECK_FALSE(b.attn[0].hetero);
        CHECK_FALSE(b.attn[1].hetero);
      }
    // Perturbing branch 2 leaves branch 1 untouched through all stages.
    ps.to(F64);
    Rng rng(14);
    const Tensor t1 = rand_tensor(rng, {1, 64, 16}), t2 = rand_tensor(rng, {1, 64, 16});
    const auto o1 = enc.blocks[0][0]({t1, t2}, 8, 8);
    const auto o2 = enc.blocks[0][0]({t1, mul(t2, t2)}, 8, 8);
    CHECK(bit_equal(o1[0], o2[0]));
  }

  TEST_CASE("full model couples the branches") {
    ModelConfig cfg = small_cfg(4, 2);
    ParamStore ps(1);
    Encoder enc(ps, cfg);
    ps.to(F64);
    Rng rng(15);
    const Tensor t1 = rand_tensor(rng, {1, 64, 16}), t2 = rand_tensor(rng, {1, 64, 16});
    const auto o1 = enc.blocks[0][0]({t1, t2}, 8, 8);
    const auto o2 = enc.blocks[0][0]({t1, mul(t2, t2)}, 8, 8);
    CHECK(max_abs_diff(o1[0], o2[0]) > 0.0);
  }
}

TEST_SUITE("determinism") {
  TEST_CASE("eval-mode forward is bit-identical across runs and same-seed models") {
    Rng rng(16);
    const Tensor x = rand_tensor(rng, {2, 3, 32, 32}, DType::f32, 0, 1);
    HstMrf a(small_cfg(4, 2), 9), b(small_cfg(4, 2), 9);
    const Tensor ya = a.forward(x, {}).dec.logits;
    CHECK(bit_equal(ya, a.forward(x, {}).dec.logits));
    CHECK(bit_equal(ya, b.forward(x, {}).dec.logits));
    HstMrf c(small_cfg(4, 2), 10);
    CHECK_FALSE(bit_equal(ya, c.forward(x, {}).dec.logits));
  }
}
