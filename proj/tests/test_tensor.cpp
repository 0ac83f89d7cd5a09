#include <omp.h>

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "hstmrf/gradcheck.hpp"
#include "hstmrf/gradcheck_suite.hpp"
#include "hstmrf/losses.hpp"
#include "hstmrf/ops.hpp"
#include "test_util.hpp"

using namespace hstmrf;
using namespace testutil;

namespace {

constexpr DType F64 = DType::f64;

Tensor vec(std::vector<double> v, DType dtype = F64) {
  const auto n = static_cast<int64_t>(v.size());
  return Tensor::from_vector({n}, v, dtype);
}

// Gradient of sum(f(x) * upstream) wrt x, via the tape.
std::vector<double> grad_of(const std::function<Tensor(const Tensor&)>& f, Tensor x, const Tensor& upstream) {
  x.set_requires_grad();
  x.clear_grad();
  Tape tape;
  TapeScope scope(&tape);
  tape.backward(sum(mul(f(x), upstream)));
  return x.grad_vector();
}

template <class Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("elementwise") {
  TEST_CASE("mul, add identity and mul gradient") {
    CHECK(mul(vec({1, 2}), vec({3, 4})).to_vector() == std::vector<double>{3, 8});
    Rng rng(3);
    const Tensor x = rand_tensor(rng, {2, 3, 4});
    CHECK(bit_equal(add(x, 0.0), x));
    CHECK(bit_equal(add(x, Tensor::zeros({2, 3, 4}, F64)), x));

    const Tensor b = vec({3, 4});
    const auto g = grad_of([&](const Tensor& a) { return mul(a, b); }, vec({1, 2}), vec({1, 1}));
    CHECK(g == std::vector<double>{3, 4});
    // Finite-difference oracle with step 1e-4.
    for (int i = 0; i < 2; ++i) {
      std::vector<double> ap{1, 2}, am{1, 2};
      ap[i] += 1e-4;
      am[i] -= 1e-4;
      const double fd = (sum(mul(vec(ap), b)).item() - sum(mul(vec(am), b)).item()) / 2e-4;
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-9));
    }
  }

  TEST_CASE("per-channel broadcast and scalar forms") {
    const Tensor x = Tensor::from_vector({1, 2, 1, 2}, {1, 2, 3, 4}, F64);
    const Tensor c = Tensor::from_vector({2, 1, 1}, {10, 100}, F64);
    CHECK(mul(x, c).to_vector() == std::vector<double>{10, 20, 300, 400});
    CHECK(scale(x, 2).to_vector() == std::vector<double>{2, 4, 6, 8});
    CHECK(rsub(1, x).to_vector() == std::vector<double>{0, -1, -2, -3});
  }

  TEST_CASE("shape mismatch names both shapes") {
    const std::string msg = error_of([] { add(Tensor::zeros({2, 3}), Tensor::zeros({4})); });
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }

  TEST_CASE("non-finite results raise an error naming the op") {
    const std::string msg = error_of([] { div(vec({1}), vec({0})); });
    CHECK(msg.find("div") != std::string::npos);
    CHECK_THROWS_AS(div(vec({1}), vec({0})), NumericError);
  }

  TEST_CASE("activations") {
    CHECK(sigmoid(vec({0})).item() == 0.5);
    CHECK(relu(vec({-3, 3})).to_vector() == std::vector<double>{0, 3});
    // GELU (erf form) reference values.
    const auto g = gelu(vec({-1, 0, 1, 2})).to_vector();
    const double ref[] = {-0.15865525393145707, 0.0, 0.8413447460685429, 1.9544997361036416};
    for (int i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_SUITE("matmul") {
  TEST_CASE("identity and hand multiplication") {
    Rng rng(5);
    const Tensor a = rand_tensor(rng, {2, 2});
    const Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1}, F64);
    CHECK(bit_equal(matmul(eye, a), a));
    const Tensor m = Tensor::from_vector({2, 2}, {1, 2, 3, 4}, F64);
    const Tensor ones = Tensor::from_vector({2, 1}, {1, 1}, F64);
    const Tensor r = matmul(m, ones);
    CHECK(r.shape() == Shape{2, 1});
    CHECK(r.to_vector() == std::vector<double>{3, 7});
  }

  TEST_CASE("gradient wrt a equals upstream times b transposed") {
    Rng rng(7);
    const Tensor b = rand_tensor(rng, {4, 3});
    const Tensor up = rand_tensor(rng, {5, 3});
    const auto g = grad_of([&](const Tensor& a) { return matmul(a, b); }, rand_tensor(rng, {5, 4}), up);
    // upstream [5,3] x b^T [3,4]
    std::vector<double> bt(12);
    const auto bv = b.to_vector();
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) bt[j * 4 + i] = bv[i * 3 + j];
    CHECK(max_abs_diff(g, naive_matmul(up.to_vector(), bt, 5, 3, 4)) < 1e-14);
  }

  TEST_CASE("matches the naive product across sizes, dtypes and batching") {
    Rng rng(11);
    const int64_t dims[][3] = {{1, 1, 1}, {3, 5, 2}, {7, 33, 17}, {13, 300, 40}, {97, 260, 65}, {200, 9, 130}};
    for (DType dt : {DType::f32, DType::f64}) {
      for (const auto& d : dims) {
        const int64_t m = d[0], k = d[1], n = d[2];
        const Tensor a = rand_tensor(rng, {m, k}, dt), b = rand_tensor(rng, {k, n}, dt);
        const auto ref = naive_matmul(a.to_vector(), b.to_vector(), m, k, n);
        const double tol = dt == DType::f32 ? 1e-5 * std::sqrt(static_cast<double>(k)) : 1e-13 * k;
        CAPTURE(m);
        CAPTURE(k);
        CAPTURE(n);
        CHECK(max_abs_diff(matmul(a, b).to_vector(), ref) < tol);
      }
      // Batched with a shared right operand and with per-batch operands.
      const Tensor a = rand_tensor(rng, {3, 2, 6, 5}, dt), b = rand_tensor(rng, {5, 4}, dt);
      const Tensor bb = rand_tensor(rng, {3, 2, 5, 4}, dt);
      const Tensor r1 = matmul(a, b), r2 = matmul(a, bb);
      CHECK(r1.shape() == Shape{3, 2, 6, 4});
      const auto av = a.to_vector(), bv = b.to_vector(), bbv = bb.to_vector();
      const auto r1v = r1.to_vector(), r2v = r2.to_vector();
      for (int64_t i = 0; i < 6; ++i) {
        const std::vector<double> ai(av.begin() + i * 30, av.begin() + (i + 1) * 30);
        const std::vector<double> bi(bbv.begin() + i * 20, bbv.begin() + (i + 1) * 20);
        CHECK(max_abs_diff(naive_matmul(ai, bv, 6, 5, 4), {r1v.begin() + i * 24, r1v.begin() + (i + 1) * 24}) < 1e-5);
        CHECK(max_abs_diff(naive_matmul(ai, bi, 6, 5, 4), {r2v.begin() + i * 24, r2v.begin() + (i + 1) * 24}) < 1e-5);
      }
    }
  }

  TEST_CASE("results do not depend on the thread count") {
    Rng rng(13);
    const Tensor a = rand_tensor(rng, {150, 400}, DType::f32), b = rand_tensor(rng, {400, 90}, DType::f32);
    const int before = omp_get_max_threads();
    omp_set_num_threads(1);
    const Tensor r1 = matmul(a, b);
    omp_set_num_threads(4);
    const Tensor r4 = matmul(a, b);
    omp_set_num_threads(before);
    CHECK(bit_equal(r1, r4));
  }

  TEST_CASE("inner dimension mismatch") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("examples") {
    Rng rng(17);
    const Tensor x = rand_tensor(rng, {2, 1, 5, 5});
    CHECK(bit_equal(conv2d(x, Tensor::ones({1, 1, 1, 1}, F64), {}), x));

    const Tensor y = conv2d(Tensor::ones({1, 1, 5, 5}, F64), Tensor::ones({1, 1, 3, 3}, F64), {},
                            {.stride = 1, .dilation = 2, .padding = 2});
    CHECK(y.shape() == Shape{1, 1, 5, 5});
    CHECK(y.at({0, 0, 2, 2}) == 9.0);

    const Tensor s = conv2d(rand_tensor(rng, {1, 1, 4, 4}), rand_tensor(rng, {1, 1, 2, 2}), {}, {.stride = 2});
    CHECK(s.shape() == Shape{1, 1, 2, 2});
  }

  TEST_CASE("matches direct summation") {
    Rng rng(19);
    struct Case {
      int64_t n, cin, h, w, cout, k;
      int stride, dil, pad;
    };
    const Case cases[] = {{2, 3, 7, 6, 4, 3, 1, 1, 1}, {1, 2, 8, 8, 3, 3, 1, 2, 2}, {2, 4, 8, 6, 5, 2, 2, 1, 0},
                          {1, 3, 9, 9, 2, 3, 2, 2, 1}, {1, 1, 5, 7, 1, 1, 1, 1, 0}};
    for (const Case& c : cases) {
      const Tensor x = rand_tensor(rng, {c.n, c.cin, c.h, c.w}), w = rand_tensor(rng, {c.cout, c.cin, c.k, c.k});
      const Tensor b = rand_tensor(rng, {c.cout});
      int64_t oh = 0, ow = 0;
      const auto ref = naive_conv(x.to_vector(), w.to_vector(), b.to_vector(), c.n, c.cin, c.h, c.w, c.cout, c.k,
                                  c.stride, c.dil, c.pad, &oh, &ow);
      const Tensor y = conv2d(x, w, b, {.stride = c.stride, .dilation = c.dil, .padding = c.pad});
      CHECK(y.shape() == Shape{c.n, c.cout, oh, ow});
      CHECK(max_abs_diff(y.to_vector(), ref) < 1e-13);
    }
  }

  TEST_CASE("property: dilation equals a zero-inflated kernel") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      Rng rng(seed);
      const int dil = static_cast<int>(rng.uniform_int(2, 3));
      const int64_t k = rng.uniform_int(2, 3);
      const int64_t cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
      const Tensor x = rand_tensor(rng, {1, cin, 6, 6}), w = rand_tensor(rng, {cout, cin, k, k});
      const int64_t kk = dil * (k - 1) + 1;
      std::vector<double> inflated(static_cast<size_t>(cout * cin * kk * kk), 0.0);
      const auto wv = w.to_vector();
      for (int64_t o = 0; o < cout * cin; ++o)
        for (int64_t u = 0; u < k; ++u)
          for (int64_t v = 0; v < k; ++v) inflated[(o * kk + u * dil) * kk + v * dil] = wv[(o * k + u) * k + v];
      const int pad = static_cast<int>(kk / 2);
      const Tensor a = conv2d(x, w, {}, {.stride = 1, .dilation = dil, .padding = pad});
      const Tensor b = conv2d(x, Tensor::from_vector({cout, cin, kk, kk}, inflated, F64), {}, {.padding = pad});
      CAPTURE(seed);
      CHECK(max_abs_diff(a, b) < 1e-12);
    }
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), {}), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), {}), ShapeError);
  }
}

TEST_SUITE("softpool") {
  TEST_CASE("examples") {
    const Tensor eq = Tensor::full({1, 1, 2, 2}, 0.37, F64);
    CHECK(softpool2d(eq, 2, 2).item() == doctest::Approx(0.37).epsilon(1e-14));
    const Tensor two = Tensor::from_vector({1, 1, 1, 2}, {std::log(2.0), 0.0}, F64);
    CHECK(softpool2d(two, 1, 2).item() == doctest::Approx(2 * std::log(2.0) / 3).epsilon(1e-14));
    CHECK(std::abs(softpool2d(two, 1, 2).item() - 0.4621) < 5e-5);
    CHECK(softpool2d(Tensor::zeros({1, 1, 2, 2}, F64), 2, 2).item() == 0.0);
    CHECK_THROWS_AS(softpool2d(eq, 0, 2), ShapeError);
  }

  TEST_CASE("property: equal regions give the mean, others stay within [min, max]") {
    for (uint64_t seed = 1; seed <= 20; ++seed) {
      Rng rng(seed);
      const double v = rng.uniform(-50, 50);
      const Tensor c = Tensor::full({2, 3, 4, 6}, v, F64);
      CHECK(max_abs_diff(softpool2d(c, 2, 3), Tensor::full({2, 3, 2, 2}, v, F64)) <= 1e-12 * std::max(1.0, std::abs(v)));

      const Tensor x = rand_tensor(rng, {1, 2, 4, 4}, F64, -20, 20);
      const auto xv = x.to_vector();
      const auto p = softpool2d(x, 2, 2).to_vector();
      for (int64_t ch = 0; ch < 2; ++ch)
        for (int64_t i = 0; i < 2; ++i)
          for (int64_t j = 0; j < 2; ++j) {
            double lo = INFINITY, hi = -INFINITY;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b) {
                const double e = xv[(ch * 4 + 2 * i + a) * 4 + 2 * j + b];
                lo = std::min(lo, e);
                hi = std::max(hi, e);
              }
            const double got = p[(ch * 2 + i) * 2 + j];
            CHECK(got >= lo);
            CHECK(got <= hi);
          }
    }
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("examples") {
    CHECK(softmax(vec({0, 0})).to_vector() == std::vector<double>{0.5, 0.5});
    CHECK(softmax(vec({1000, 1000})).to_vector() == std::vector<double>{0.5, 0.5});
    const auto s = softmax(vec({std::log(1.0), std::log(2.0), std::log(3.0)})).to_vector();
    for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx((i + 1) / 6.0).epsilon(1e-14));
  }

  TEST_CASE("property: rows are distributions up to magnitude 1e4") {
    for (uint64_t seed = 1; seed <= 30; ++seed) {
      Rng rng(seed);
      const double mag = std::pow(10.0, rng.uniform(-2, 4));
      for (DType dt : {DType::f32, DType::f64}) {
        const Tensor x = rand_tensor(rng, {3, 4, 7}, dt, -mag, mag);
        for (int axis : {0, 1, 2}) {
          const Tensor s = softmax(x, axis);
          const auto sv = s.to_vector();
          for (double v : sv) CHECK(v >= 0.0);
          const auto tot = sum_axis(s.to(F64), axis).to_vector();
          for (double t : tot) CHECK(std::abs(t - 1.0) <= 1e-6);
        }
      }
    }
  }
}

TEST_SUITE("norms and dropout") {
  TEST_CASE("batchnorm normalizes with batch statistics, then uses running ones in eval") {
    // Channel with mean 5 and (biased) variance 4.
    const Tensor x = Tensor::from_vector({4, 1, 1, 1}, {3, 7, 3, 7}, F64);
    BatchNormState st{Tensor::zeros({1}, F64), Tensor::ones({1}, F64)};
    const Tensor g = Tensor::ones({1}, F64), b = Tensor::zeros({1}, F64);
    const Tensor y = batchnorm2d(x, g, b, st, true, 0.1, 1e-12);
    const auto yv = y.to_vector();
    const double ref[] = {-1, 1, -1, 1};
    for (int i = 0; i < 4; ++i) CHECK(yv[i] == doctest::Approx(ref[i]).epsilon(1e-10));
    CHECK(st.running_mean.item() == doctest::Approx(0.5).epsilon(1e-14));
    // Running variance uses the unbiased estimate 16/3.
    CHECK(st.running_var.item() == doctest::Approx(0.9 + 0.1 * 16.0 / 3.0).epsilon(1e-14));
    const Tensor e = batchnorm2d(Tensor::from_vector({1, 1, 1, 1}, {0.5}, F64), g, b, st, false, 0.1, 0.0);
    CHECK(e.item() == doctest::Approx(0.0).epsilon(1e-14));
    CHECK_THROWS(batchnorm2d(Tensor::zeros({0, 1, 1, 1}, F64), g, b, st, true));
  }

  TEST_CASE("layernorm over the last axis") {
    const Tensor x = Tensor::from_vector({2, 2}, {1, 3, -2, 2}, F64);
    const Tensor y = layernorm(x, Tensor::ones({2}, F64), Tensor::zeros({2}, F64), 0.0);
    CHECK(max_abs_diff(y.to_vector(), {-1, 1, -1, 1}) < 1e-14);
  }

  TEST_CASE("dropout is identity in eval and inverted-scaled in training") {
    Rng rng(1);
    const Tensor x = rand_tensor(rng, {1000});
    Rng r1(9);
    CHECK(bit_equal(dropout(x, 0.5, false, r1), x));
    const auto y = dropout(x, 0.25, true, r1).to_vector();
    const auto xv = x.to_vector();
    int kept = 0;
    for (size_t i = 0; i < y.size(); ++i) {
      if (y[i] != 0.0) {
        ++kept;
        CHECK(y[i] == doctest::Approx(xv[i] / 0.75).epsilon(1e-14));
      }
    }
    CHECK(kept > 650);
    CHECK(kept < 850);
  }
}

TEST_SUITE("resample") {
  TEST_CASE("examples") {
    const Tensor c = Tensor::full({1, 2, 3, 5}, 0.7, F64);
    const Tensor r = resize_bilinear(c, 7, 4);
    CHECK(r.shape() == Shape{1, 2, 7, 4});
    CHECK(max_abs_diff(r, Tensor::full({1, 2, 7, 4}, 0.7, F64)) < 1e-15);
    CHECK(upsample2x(Tensor::full({1, 1, 1, 1}, 2.5, F64)).to_vector() == std::vector<double>{2.5, 2.5, 2.5, 2.5});
    const auto line = upsample2x(Tensor::from_vector({1, 1, 1, 2}, {0, 1}, F64)).to_vector();
    // Rows duplicate; along the width align_corners=false gives 0, 0.25, 0.75, 1.
    CHECK(max_abs_diff(line, {0, 0.25, 0.75, 1, 0, 0.25, 0.75, 1}) < 1e-15);
    CHECK_THROWS_AS(resize_bilinear(c, 0, 3), ShapeError);
  }
}

TEST_SUITE("shape ops") {
  TEST_CASE("permute, concat and index_select") {
    const Tensor x = Tensor::from_vector({2, 3}, {0, 1, 2, 3, 4, 5}, F64);
    CHECK(permute(x, {1, 0}).to_vector() == std::vector<double>{0, 3, 1, 4, 2, 5});
    CHECK(concat({x, x}, 1).to_vector() == std::vector<double>{0, 1, 2, 0, 1, 2, 3, 4, 5, 3, 4, 5});
    CHECK(index_select(x, 1, {2, 2, 0}).to_vector() == std::vector<double>{2, 2, 0, 5, 5, 3});
    CHECK(sum_axis(x, 0).to_vector() == std::vector<double>{3, 5, 7});
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("examples") {
    Tensor x = Tensor::from_vector({2, 2}, {1, -2, 3, 0.5}, F64);
    x.set_requires_grad();
    {
      Tape tape;
      TapeScope s(&tape);
      tape.backward(sum(x));
    }
    CHECK(x.grad_vector() == std::vector<double>{1, 1, 1, 1});

    Tensor y = vec({1, 2});
    y.set_requires_grad();
    {
      Tape tape;
      TapeScope s(&tape);
      tape.backward(sum(mul(y, y)));
    }
    CHECK(y.grad_vector() == std::vector<double>{2, 4});

    // Two uses accumulate: d/dz [sum(3z) + sum(z*z)] = 3 + 2z.
    Tensor z = vec({1, -1});
    z.set_requires_grad();
    {
      Tape tape;
      TapeScope s(&tape);
      tape.backward(add(sum(scale(z, 3)), sum(mul(z, z))));
    }
    CHECK(z.grad_vector() == std::vector<double>{5, 1});
  }

  TEST_CASE("every record is visited once and repeated backward is deterministic") {
    Rng rng(23);
    Tensor w = rand_tensor(rng, {4, 4});
    const Tensor x = rand_tensor(rng, {3, 4});
    w.set_requires_grad();
    std::vector<double> g1, g2;
    for (auto* g : {&g1, &g2}) {
      w.zero_grad();
      Tape tape;
      TapeScope s(&tape);
      const Tensor loss = mean(softmax(gelu(matmul(x, w)), -1));
      CHECK(tape.backward(loss) == tape.size());
      *g = w.grad_vector();
    }
    CHECK(g1 == g2);
  }

  TEST_CASE("errors") {
    Tensor x = vec({1, 2});
    x.set_requires_grad();
    Tape tape;
    TapeScope s(&tape);
    CHECK_THROWS_AS(tape.backward(mul(x, x)), ShapeError);
    Tape other;
    const Tensor loss = sum(mul(x, x));
    CHECK_THROWS(other.backward(loss));
  }

  TEST_CASE("same seed gives the same stream") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
      const uint64_t va = a.next_u64();
      CHECK(va == b.next_u64());
      differs = differs || va != c.next_u64();
    }
    CHECK(differs);
    CHECK(Rng(5).split("x").next_u64() == Rng(5).split("x").next_u64());
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("sum is exact") {
    Rng rng(29);
    const Tensor x = rand_tensor(rng, {3, 3});
    const GradcheckReport r = gradcheck([&] { return sum(x); }, {x});
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-9);
  }

  TEST_CASE("Tversky loss on 4x4 soft masks") {
    Rng rng(31);
    const Tensor logits = rand_tensor(rng, {1, 1, 4, 4}, F64, -2, 2);
    const Tensor gt = rand_binary(rng, {1, 1, 4, 4}, 0.5);
    const GradcheckReport r =
        gradcheck([&] { return tversky_loss(logits, gt, LossWeights{}); }, {logits}, {.step = 1e-4, .tol = 1e-4});
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
  }

  TEST_CASE("a wrong gradient is caught") {
    Rng rng(37);
    const Tensor x = rand_tensor(rng, {4});
    // The detached square contributes to the value but not to the tape.
    const auto f = [&] { return add(sum(x), sum(mul(x.detach(), x.detach()))); };
    CHECK_FALSE(gradcheck(f, {x}).passed);
  }

  TEST_CASE("op scope passes for five seeds") {
    const auto reports = run_gradcheck_suite(GradcheckScope::op, 1, 5);
    CHECK(reports.size() > 20);
    for (const auto& r : reports) {
      CAPTURE(r.target);
      CHECK(r.passed);
      CHECK(r.max_rel_error <= 1e-4);
    }
  }
}
