#include <memory>
#include <vector>

#include "detail/autograd.hpp"
#include "detail/gemm.hpp"
#include "hstmrf/ops.hpp"

namespace hstmrf {

namespace {

struct ConvGeometry {
  int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, dilation, padding;
  int64_t rows() const { return cin * kh * kw; }
  int64_t cols() const { return n * ho * wo; }
};

// cols[r][n*P + p] for r = (c, ki, kj), p = (oh, ow).
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const int64_t P = g.ho * g.wo;
  const int64_t NP = g.n * P;
#pragma omp parallel for schedule(static) if (g.rows() * NP > (1 << 18))
  for (int64_t r = 0; r < g.rows(); ++r) {
    const int64_t c = r / (g.kh * g.kw);
    const int64_t ki = (r / g.kw) % g.kh;
    const int64_t kj = r % g.kw;
    T* dst = cols + r * NP;
    for (int64_t b = 0; b < g.n; ++b) {
      const T* src = x + (b * g.cin + c) * g.h * g.w;
      for (int64_t oh = 0; oh < g.ho; ++oh) {
        const int64_t ih = oh * g.stride - g.padding + ki * g.dilation;
        T* drow = dst + b * P + oh * g.wo;
        if (ih < 0 || ih >= g.h) {
          for (int64_t ow = 0; ow < g.wo; ++ow) drow[ow] = T(0);
          continue;
        }
        const T* srow = src + ih * g.w;
        for (int64_t ow = 0; ow < g.wo; ++ow) {
          const int64_t iw = ow * g.stride - g.padding + kj * g.dilation;
          drow[ow] = (iw >= 0 && iw < g.w) ? srow[iw] : T(0);
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const int64_t P = g.ho * g.wo;
  const int64_t NP = g.n * P;
  // Rows sharing a channel write the same dx plane, so parallelize over
  // (batch, channel) planes and keep the tap order fixed within each.
#pragma omp parallel for schedule(static) if (g.rows() * NP > (1 << 18))
  for (int64_t plane = 0; plane < g.n * g.cin; ++plane) {
    const int64_t b = plane / g.cin;
    const int64_t c = plane % g.cin;
    T* dst = dx + plane * g.h * g.w;
    for (int64_t ki = 0; ki < g.kh; ++ki)
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        const int64_t r = (c * g.kh + ki) * g.kw + kj;
        const T* src = cols + r * NP + b * P;
        for (int64_t oh = 0; oh < g.ho; ++oh) {
          const int64_t ih = oh * g.stride - g.padding + ki * g.dilation;
          if (ih < 0 || ih >= g.h) continue;
          for (int64_t ow = 0; ow < g.wo; ++ow) {
            const int64_t iw = ow * g.stride - g.padding + kj * g.dilation;
            if (iw >= 0 && iw < g.w) dst[ih * g.w + iw] += src[oh * g.wo + ow];
          }
        }
      }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt) {
  detail::check_same_dtype(x, w, "conv2d");
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d: expected 4-D input and weight, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0)
    throw ShapeError("conv2d: stride and dilation must be >= 1 and padding >= 0");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.stride = opt.stride;
  g.dilation = opt.dilation;
  g.padding = opt.padding;
  if (w.dim(1) != g.cin)
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) + " channels but weight " +
                     shape_str(w.shape()) + " expects " + std::to_string(w.dim(1)));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout))
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(g.cout) + " output channels");
  const auto extent = [&](int64_t in, int64_t k) {
    return (in + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
  };
  const int64_t he = g.h + 2 * g.padding - g.dilation * (g.kh - 1) - 1;
  const int64_t we = g.w + 2 * g.padding - g.dilation * (g.kw - 1) - 1;
  if (he < 0 || we < 0)
    throw ShapeError("conv2d: non-positive output extent for input " + shape_str(x.shape()) +
                     " with kernel " + shape_str(w.shape()));
  g.ho = extent(g.h, g.kh);
  g.wo = extent(g.w, g.kw);

  const bool grad = detail::wants_grad({x, w, bias});
  Tensor out = detail::make_output({g.n, g.cout, g.ho, g.wo}, x.dtype());
  const int64_t P = g.ho * g.wo;
  const int64_t NP = g.cols();

  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto cols = std::make_shared<std::vector<T>>(static_cast<size_t>(g.rows() * NP));
    im2col<T>(g, x.data<T>().data(), cols->data());
    std::vector<T> tmp(static_cast<size_t>(g.cout * NP));
    detail::gemm<T>(false, false, g.cout, NP, g.rows(), w.data<T>().data(), cols->data(),
                    tmp.data(), false);
    auto o = out.data<T>();
    for (int64_t b = 0; b < g.n; ++b)
      for (int64_t co = 0; co < g.cout; ++co) {
        const T bv = bias.defined() ? bias.data<T>()[co] : T(0);
        const T* src = tmp.data() + co * NP + b * P;
        T* dst = o.data() + (b * g.cout + co) * P;
        for (int64_t p = 0; p < P; ++p) dst[p] = src[p] + bv;
      }
    detail::check_finite(out, "conv2d");
    if (!grad) return;
    detail::record(
        "conv2d", {x, w, bias}, out,
        [g, cols, xi = x.impl_ptr(), wi = w.impl_ptr(),
         bi = bias.defined() ? bias.impl_ptr() : detail::ImplPtr{}, oi = out.impl_ptr()] {
          const int64_t P = g.ho * g.wo;
          const int64_t NP = g.cols();
          auto up = detail::upstream<T>(oi);
          std::vector<T> gr(static_cast<size_t>(g.cout * NP));
          for (int64_t b = 0; b < g.n; ++b)
            for (int64_t co = 0; co < g.cout; ++co) {
              const T* src = up.data() + (b * g.cout + co) * P;
              T* dst = gr.data() + co * NP + b * P;
              for (int64_t p = 0; p < P; ++p) dst[p] = src[p];
            }
          if (detail::needs_grad(bi)) {
            auto gb = detail::accum<T>(bi);
            for (int64_t co = 0; co < g.cout; ++co) {
              T s = 0;
              const T* src = gr.data() + co * NP;
              for (int64_t j = 0; j < NP; ++j) s += src[j];
              gb[co] += s;
            }
          }
          if (detail::needs_grad(wi))
            detail::gemm<T>(false, true, g.cout, g.rows(), NP, gr.data(), cols->data(),
                            detail::accum<T>(wi).data(), true);
          if (detail::needs_grad(xi)) {
            std::vector<T> dcols(static_cast<size_t>(g.rows() * NP));
            detail::gemm<T>(true, false, g.rows(), NP, g.cout, detail::values<T>(wi).data(),
                            gr.data(), dcols.data(), false);
            col2im<T>(g, dcols.data(), detail::accum<T>(xi).data());
          }
        });
  });
  if (!grad) out.impl().op = "conv2d";
  return out;
}

}  // namespace hstmrf
