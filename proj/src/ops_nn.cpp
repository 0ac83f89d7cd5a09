#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "detail/autograd.hpp"
#include "hstmrf/ops.hpp"

namespace hstmrf {

namespace {

void require_rank(const Tensor& x, int rank, std::string_view op) {
  if (x.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// SoftPool
// ---------------------------------------------------------------------------

Tensor softpool2d(const Tensor& x, int64_t kernel_h, int64_t kernel_w) {
  require_rank(x, 4, "softpool2d");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel_h < 1 || kernel_w < 1) throw ShapeError("softpool2d: empty pooling region");
  if (h % kernel_h != 0 || w % kernel_w != 0)
    throw ShapeError("softpool2d: spatial extent " + shape_str(x.shape()) +
                     " not divisible by region " + std::to_string(kernel_h) + "x" +
                     std::to_string(kernel_w));
  const int64_t ho = h / kernel_h, wo = w / kernel_w;
  Tensor out = detail::make_output({n, c, ho, wo}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto os = out.data<T>();
    for (int64_t plane = 0; plane < n * c; ++plane) {
      const T* src = xs.data() + plane * h * w;
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          T m = src[oh * kernel_h * w + ow * kernel_w];
          T lo = m;
          for (int64_t i = 0; i < kernel_h; ++i)
            for (int64_t j = 0; j < kernel_w; ++j) {
              const T a = src[(oh * kernel_h + i) * w + ow * kernel_w + j];
              m = std::max(m, a);
              lo = std::min(lo, a);
            }
          T num = 0, den = 0;
          for (int64_t i = 0; i < kernel_h; ++i)
            for (int64_t j = 0; j < kernel_w; ++j) {
              const T a = src[(oh * kernel_h + i) * w + ow * kernel_w + j];
              const T e = std::exp(a - m);
              num += e * a;
              den += e;
            }
          // Weighted mean; the clamp only absorbs rounding.
          os[(plane * ho + oh) * wo + ow] = std::clamp(num / den, lo, m);
        }
    }
  });
  detail::check_finite(out, "softpool2d");
  detail::record("softpool2d", {x}, out,
                 [xi = x.impl_ptr(), oi = out.impl_ptr(), n, c, h, w, kernel_h, kernel_w, ho, wo] {
                   dispatch(oi->data.dtype(), [&](auto tag) {
                     using T = decltype(tag);
                     auto xs = detail::values<T>(xi);
                     auto ys = detail::values<T>(oi);
                     auto g = detail::upstream<T>(oi);
                     auto gx = detail::accum<T>(xi);
                     for (int64_t plane = 0; plane < n * c; ++plane) {
                       const T* src = xs.data() + plane * h * w;
                       T* dst = gx.data() + plane * h * w;
                       for (int64_t oh = 0; oh < ho; ++oh)
                         for (int64_t ow = 0; ow < wo; ++ow) {
                           const int64_t o = (plane * ho + oh) * wo + ow;
                           const T y = ys[o];
                           T m = src[oh * kernel_h * w + ow * kernel_w];
                           for (int64_t i = 0; i < kernel_h; ++i)
                             for (int64_t j = 0; j < kernel_w; ++j)
                               m = std::max(m, src[(oh * kernel_h + i) * w + ow * kernel_w + j]);
                           T den = 0;
                           for (int64_t i = 0; i < kernel_h; ++i)
                             for (int64_t j = 0; j < kernel_w; ++j)
                               den += std::exp(src[(oh * kernel_h + i) * w + ow * kernel_w + j] - m);
                           for (int64_t i = 0; i < kernel_h; ++i)
                             for (int64_t j = 0; j < kernel_w; ++j) {
                               const int64_t k = (oh * kernel_h + i) * w + ow * kernel_w + j;
                               const T p = std::exp(src[k] - m) / den;
                               dst[k] += g[o] * p * (T(1) + src[k] - y);
                             }
                         }
                     }
                   });
                 });
  return out;
}

Tensor global_softpool(const Tensor& x) {
  require_rank(x, 4, "global_softpool");
  return softpool2d(x, x.dim(2), x.dim(3));
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = detail::make_output({n, c, 1, 1}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto os = out.data<T>();
    for (int64_t p = 0; p < n * c; ++p) {
      T s = 0;
      for (int64_t i = 0; i < hw; ++i) s += xs[p * hw + i];
      os[p] = s / T(hw);
    }
  });
  detail::check_finite(out, "global_avg_pool");
  detail::record("global_avg_pool", {x}, out, [xi = x.impl_ptr(), oi = out.impl_ptr(), n, c, hw] {
    dispatch(oi->data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = detail::upstream<T>(oi);
      auto gx = detail::accum<T>(xi);
      for (int64_t p = 0; p < n * c; ++p)
        for (int64_t i = 0; i < hw; ++i) gx[p * hw + i] += g[p] / T(hw);
    });
  });
  return out;
}

Tensor global_max_pool(const Tensor& x) {
  require_rank(x, 4, "global_max_pool");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = detail::make_output({n, c, 1, 1}, x.dtype());
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n * c));
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto os = out.data<T>();
    for (int64_t p = 0; p < n * c; ++p) {
      int64_t best = 0;
      for (int64_t i = 1; i < hw; ++i)
        if (xs[p * hw + i] > xs[p * hw + best]) best = i;
      (*argmax)[static_cast<size_t>(p)] = best;
      detail::trace_branch(static_cast<uint64_t>(best));
      os[p] = xs[p * hw + best];
    }
  });
  detail::check_finite(out, "global_max_pool");
  detail::record("global_max_pool", {x}, out, [xi = x.impl_ptr(), oi = out.impl_ptr(), argmax, hw] {
    dispatch(oi->data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = detail::upstream<T>(oi);
      auto gx = detail::accum<T>(xi);
      for (size_t p = 0; p < argmax->size(); ++p)
        gx[static_cast<int64_t>(p) * hw + (*argmax)[p]] += g[p];
    });
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  const int ax = detail::normalize_axis(axis, x.rank(), "softmax");
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= x.dim(d);
  for (int d = ax + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const int64_t len = x.dim(ax);
  Tensor out = detail::make_output(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * len * inner + i;
        T m = xs[base];
        for (int64_t k = 1; k < len; ++k) m = std::max(m, xs[base + k * inner]);
        T s = 0;
        for (int64_t k = 0; k < len; ++k) {
          const T e = std::exp(xs[base + k * inner] - m);
          ys[base + k * inner] = e;
          s += e;
        }
        for (int64_t k = 0; k < len; ++k) ys[base + k * inner] /= s;
      }
  });
  detail::check_finite(out, "softmax");
  detail::record("softmax", {x}, out, [xi = x.impl_ptr(), oi = out.impl_ptr(), outer, inner, len] {
    dispatch(oi->data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto ys = detail::values<T>(oi);
      auto g = detail::upstream<T>(oi);
      auto gx = detail::accum<T>(xi);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          const int64_t base = o * len * inner + i;
          T dot = 0;
          for (int64_t k = 0; k < len; ++k) dot += g[base + k * inner] * ys[base + k * inner];
          for (int64_t k = 0; k < len; ++k) {
            const int64_t j = base + k * inner;
            gx[j] += ys[j] * (g[j] - dot);
          }
        }
    });
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training, double momentum, double eps) {
  require_rank(x, 4, "batchnorm2d");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const int64_t count = n * hw;
  if (count == 0) throw ShapeError("batchnorm2d: empty batch");
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &state.running_mean, &state.running_var})
    if (t->rank() != 1 || t->dim(0) != c)
      throw ShapeError("batchnorm2d: parameter shape " + shape_str(t->shape()) +
                       " does not match " + std::to_string(c) + " channels");
  detail::check_same_dtype(x, gamma, "batchnorm2d");

  Tensor out = detail::make_output(x.shape(), x.dtype());
  Tensor xhat = detail::make_output(x.shape(), x.dtype());
  Tensor inv_std = detail::make_output({c}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    auto xh = xhat.data<T>();
    auto is = inv_std.data<T>();
    auto gm = gamma.data<T>();
    auto bt = beta.data<T>();
    auto rm = state.running_mean.data<T>();
    auto rv = state.running_var.data<T>();
    for (int64_t ch = 0; ch < c; ++ch) {
      double mu, var;
      if (training) {
        double s = 0;
        for (int64_t b = 0; b < n; ++b)
          for (int64_t i = 0; i < hw; ++i) s += xs[(b * c + ch) * hw + i];
        mu = s / double(count);
        double ss = 0;
        for (int64_t b = 0; b < n; ++b)
          for (int64_t i = 0; i < hw; ++i) {
            const double d = xs[(b * c + ch) * hw + i] - mu;
            ss += d * d;
          }
        var = ss / double(count);
        const double unbiased = count > 1 ? ss / double(count - 1) : var;
        rm[ch] = static_cast<T>((1.0 - momentum) * rm[ch] + momentum * mu);
        rv[ch] = static_cast<T>((1.0 - momentum) * rv[ch] + momentum * unbiased);
      } else {
        mu = rm[ch];
        var = rv[ch];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps));
      is[ch] = inv;
      const T m = static_cast<T>(mu);
      for (int64_t b = 0; b < n; ++b)
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t k = (b * c + ch) * hw + i;
          xh[k] = (xs[k] - m) * inv;
          ys[k] = gm[ch] * xh[k] + bt[ch];
        }
    }
  });
  detail::check_finite(out, "batchnorm2d");
  detail::record(
      "batchnorm2d", {x, gamma, beta}, out,
      [xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr(), oi = out.impl_ptr(),
       hi = xhat.impl_ptr(), ii = inv_std.impl_ptr(), n, c, hw, count, training] {
        dispatch(oi->data.dtype(), [&](auto tag) {
          using T = decltype(tag);
          auto g = detail::upstream<T>(oi);
          auto xh = detail::values<T>(hi);
          auto is = detail::values<T>(ii);
          auto gm = detail::values<T>(gi);
          for (int64_t ch = 0; ch < c; ++ch) {
            T sg = 0, sgx = 0;
            for (int64_t b = 0; b < n; ++b)
              for (int64_t i = 0; i < hw; ++i) {
                const int64_t k = (b * c + ch) * hw + i;
                sg += g[k];
                sgx += g[k] * xh[k];
              }
            if (detail::needs_grad(bi)) detail::accum<T>(bi)[ch] += sg;
            if (detail::needs_grad(gi)) detail::accum<T>(gi)[ch] += sgx;
            if (!detail::needs_grad(xi)) continue;
            auto gx = detail::accum<T>(xi);
            const T scale = gm[ch] * is[ch];
            for (int64_t b = 0; b < n; ++b)
              for (int64_t i = 0; i < hw; ++i) {
                const int64_t k = (b * c + ch) * hw + i;
                if (training)
                  gx[k] += scale * (g[k] - sg / T(count) - xh[k] * sgx / T(count));
                else
                  gx[k] += scale * g[k];
              }
          }
        });
      });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layernorm: rank-0 input");
  const int64_t d = x.dim(-1);
  const int64_t rows = x.numel() / d;
  for (const Tensor* t : {&gamma, &beta})
    if (t->rank() != 1 || t->dim(0) != d)
      throw ShapeError("layernorm: parameter shape " + shape_str(t->shape()) +
                       " does not match feature dim " + std::to_string(d));
  detail::check_same_dtype(x, gamma, "layernorm");
  Tensor out = detail::make_output(x.shape(), x.dtype());
  Tensor xhat = detail::make_output(x.shape(), x.dtype());
  Tensor inv_std = detail::make_output({rows}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    auto xh = xhat.data<T>();
    auto is = inv_std.data<T>();
    auto gm = gamma.data<T>();
    auto bt = beta.data<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* src = xs.data() + r * d;
      T s = 0;
      for (int64_t i = 0; i < d; ++i) s += src[i];
      const T mu = s / T(d);
      T ss = 0;
      for (int64_t i = 0; i < d; ++i) ss += (src[i] - mu) * (src[i] - mu);
      const T inv = T(1) / std::sqrt(ss / T(d) + T(eps));
      is[r] = inv;
      for (int64_t i = 0; i < d; ++i) {
        xh[r * d + i] = (src[i] - mu) * inv;
        ys[r * d + i] = gm[i] * xh[r * d + i] + bt[i];
      }
    }
  });
  detail::check_finite(out, "layernorm");
  detail::record("layernorm", {x, gamma, beta}, out,
                 [xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr(),
                  oi = out.impl_ptr(), hi = xhat.impl_ptr(), ii = inv_std.impl_ptr(), rows, d] {
                   dispatch(oi->data.dtype(), [&](auto tag) {
                     using T = decltype(tag);
                     auto g = detail::upstream<T>(oi);
                     auto xh = detail::values<T>(hi);
                     auto is = detail::values<T>(ii);
                     auto gm = detail::values<T>(gi);
                     if (detail::needs_grad(gi) || detail::needs_grad(bi)) {
                       std::vector<T> dg(static_cast<size_t>(d), T(0)), db(static_cast<size_t>(d), T(0));
                       for (int64_t r = 0; r < rows; ++r)
                         for (int64_t i = 0; i < d; ++i) {
                           dg[i] += g[r * d + i] * xh[r * d + i];
                           db[i] += g[r * d + i];
                         }
                       if (detail::needs_grad(gi)) {
                         auto a = detail::accum<T>(gi);
                         for (int64_t i = 0; i < d; ++i) a[i] += dg[i];
                       }
                       if (detail::needs_grad(bi)) {
                         auto a = detail::accum<T>(bi);
                         for (int64_t i = 0; i < d; ++i) a[i] += db[i];
                       }
                     }
                     if (!detail::needs_grad(xi)) return;
                     auto gx = detail::accum<T>(xi);
                     for (int64_t r = 0; r < rows; ++r) {
                       T s1 = 0, s2 = 0;
                       for (int64_t i = 0; i < d; ++i) {
                         const T gh = g[r * d + i] * gm[i];
                         s1 += gh;
                         s2 += gh * xh[r * d + i];
                       }
                       for (int64_t i = 0; i < d; ++i) {
                         const T gh = g[r * d + i] * gm[i];
                         gx[r * d + i] += is[r] * (gh - s1 / T(d) - xh[r * d + i] * s2 / T(d));
                       }
                     }
                   });
                 });
  return out;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  Tensor mask = Tensor::zeros(x.shape(), x.dtype());
  const double keep_scale = 1.0 / (1.0 - p);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T& m : mask.data<T>()) m = rng.uniform() >= p ? static_cast<T>(keep_scale) : T(0);
  });
  return mul(x, mask);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace {

struct Tap {
  int64_t i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(int64_t in, int64_t out) {
  std::vector<Tap> taps(static_cast<size_t>(out));
  const double scale = double(in) / double(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<size_t>(o)] = {i0, i1, src - double(i0)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
  require_rank(x, 4, "resize_bilinear");
  if (out_h < 1 || out_w < 1)
    throw ShapeError("resize_bilinear: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " is smaller than 1x1");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto th = std::make_shared<std::vector<Tap>>(bilinear_taps(h, out_h));
  auto tw = std::make_shared<std::vector<Tap>>(bilinear_taps(w, out_w));
  Tensor out = detail::make_output({n, c, out_h, out_w}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    for (int64_t p = 0; p < n * c; ++p) {
      const T* src = xs.data() + p * h * w;
      T* dst = ys.data() + p * out_h * out_w;
      for (int64_t oh = 0; oh < out_h; ++oh) {
        const Tap& a = (*th)[static_cast<size_t>(oh)];
        const T lh = static_cast<T>(a.frac);
        for (int64_t ow = 0; ow < out_w; ++ow) {
          const Tap& b = (*tw)[static_cast<size_t>(ow)];
          const T lw = static_cast<T>(b.frac);
          const T top = (T(1) - lw) * src[a.i0 * w + b.i0] + lw * src[a.i0 * w + b.i1];
          const T bot = (T(1) - lw) * src[a.i1 * w + b.i0] + lw * src[a.i1 * w + b.i1];
          dst[oh * out_w + ow] = (T(1) - lh) * top + lh * bot;
        }
      }
    }
  });
  detail::check_finite(out, "resize_bilinear");
  detail::record("resize_bilinear", {x}, out,
                 [xi = x.impl_ptr(), oi = out.impl_ptr(), th, tw, n, c, h, w, out_h, out_w] {
                   dispatch(oi->data.dtype(), [&](auto tag) {
                     using T = decltype(tag);
                     auto g = detail::upstream<T>(oi);
                     auto gx = detail::accum<T>(xi);
                     for (int64_t p = 0; p < n * c; ++p) {
                       const T* src = g.data() + p * out_h * out_w;
                       T* dst = gx.data() + p * h * w;
                       for (int64_t oh = 0; oh < out_h; ++oh) {
                         const Tap& a = (*th)[static_cast<size_t>(oh)];
                         const T lh = static_cast<T>(a.frac);
                         for (int64_t ow = 0; ow < out_w; ++ow) {
                           const Tap& b = (*tw)[static_cast<size_t>(ow)];
                           const T lw = static_cast<T>(b.frac);
                           const T v = src[oh * out_w + ow];
                           dst[a.i0 * w + b.i0] += (T(1) - lh) * (T(1) - lw) * v;
                           dst[a.i0 * w + b.i1] += (T(1) - lh) * lw * v;
                           dst[a.i1 * w + b.i0] += lh * (T(1) - lw) * v;
                           dst[a.i1 * w + b.i1] += lh * lw * v;
                         }
                       }
                     }
                   });
                 });
  return out;
}

Tensor upsample2x(const Tensor& x) {
  require_rank(x, 4, "upsample2x");
  return resize_bilinear(x, x.dim(2) * 2, x.dim(3) * 2);
}

}  // namespace hstmrf
