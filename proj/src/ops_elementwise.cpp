#include <cmath>
#include <numbers>

#include "detail/autograd.hpp"
#include "hstmrf/ops.hpp"

namespace hstmrf {

namespace {

std::string_view op_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
  }
  return "?";
}

// For every flat index of `a`, the flat index of the broadcast element of `b`.
// Empty when shapes are equal; a single 0 when b is a scalar.
std::vector<int64_t> broadcast_map(const Shape& a, const Shape& b, std::string_view op) {
  if (a == b) return {};
  if (numel(b) == 1) return {0};
  const auto fail = [&] {
    return ShapeError(std::string(op) + ": shape " + shape_str(b) + " cannot broadcast to " +
                      shape_str(a));
  };
  if (b.size() > a.size()) throw fail();
  const size_t offset = a.size() - b.size();
  std::vector<int64_t> bstride(a.size(), 0);
  int64_t s = 1;
  for (size_t i = b.size(); i-- > 0;) {
    const int64_t be = b[i], ae = a[i + offset];
    if (be != ae && be != 1) throw fail();
    bstride[i + offset] = be == 1 ? 0 : s;
    s *= be;
  }
  const int64_t n = numel(a);
  std::vector<int64_t> map(static_cast<size_t>(n));
  std::vector<int64_t> idx(a.size(), 0);
  int64_t boff = 0;
  for (int64_t i = 0; i < n; ++i) {
    map[static_cast<size_t>(i)] = boff;
    for (size_t d = a.size(); d-- > 0;) {
      ++idx[d];
      boff += bstride[d];
      if (idx[d] < a[d]) break;
      boff -= bstride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

inline int64_t bindex(const std::vector<int64_t>& map, int64_t i) {
  if (map.empty()) return i;
  if (map.size() == 1) return 0;
  return map[static_cast<size_t>(i)];
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, std::string_view name, Fwd fwd, Bwd bwd) {
  Tensor out = detail::make_output(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto os = out.data<T>();
    for (size_t i = 0; i < xs.size(); ++i) os[i] = fwd(xs[i]);
  });
  detail::check_finite(out, name);
  detail::record(name, {x}, out, [xi = x.impl_ptr(), oi = out.impl_ptr(), bwd] {
    dispatch(oi->data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto xs = detail::values<T>(xi);
      auto ys = detail::values<T>(oi);
      auto g = detail::upstream<T>(oi);
      auto gx = detail::accum<T>(xi);
      for (size_t i = 0; i < xs.size(); ++i) gx[i] += bwd(xs[i], ys[i], g[i]);
    });
  });
  return out;
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  const std::string_view name = op_name(op);
  detail::check_same_dtype(a, b, name);
  auto map = broadcast_map(a.shape(), b.shape(), name);
  Tensor out = detail::make_output(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto as = a.data<T>();
    auto bs = b.data<T>();
    auto os = out.data<T>();
    const int64_t n = a.numel();
    switch (op) {
      case BinaryOp::add:
        for (int64_t i = 0; i < n; ++i) os[i] = as[i] + bs[bindex(map, i)];
        break;
      case BinaryOp::sub:
        for (int64_t i = 0; i < n; ++i) os[i] = as[i] - bs[bindex(map, i)];
        break;
      case BinaryOp::mul:
        for (int64_t i = 0; i < n; ++i) os[i] = as[i] * bs[bindex(map, i)];
        break;
      case BinaryOp::div:
        for (int64_t i = 0; i < n; ++i) os[i] = as[i] / bs[bindex(map, i)];
        break;
    }
  });
  detail::check_finite(out, name);

  detail::record(name, {a, b}, out,
                 [op, map = std::move(map), ai = a.impl_ptr(), bi = b.impl_ptr(),
                  oi = out.impl_ptr()] {
                   dispatch(oi->data.dtype(), [&](auto tag) {
                     using T = decltype(tag);
                     auto g = detail::upstream<T>(oi);
                     auto as = detail::values<T>(ai);
                     auto bs = detail::values<T>(bi);
                     const int64_t n = static_cast<int64_t>(g.size());
                     if (detail::needs_grad(ai)) {
                       auto ga = detail::accum<T>(ai);
                       switch (op) {
                         case BinaryOp::add:
                           for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
                           break;
                         case BinaryOp::sub:
                           for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
                           break;
                         case BinaryOp::mul:
                           for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bs[bindex(map, i)];
                           break;
                         case BinaryOp::div:
                           for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / bs[bindex(map, i)];
                           break;
                       }
                     }
                     if (detail::needs_grad(bi)) {
                       auto gb = detail::accum<T>(bi);
                       for (int64_t i = 0; i < n; ++i) {
                         const int64_t j = bindex(map, i);
                         switch (op) {
                           case BinaryOp::add: gb[j] += g[i]; break;
                           case BinaryOp::sub: gb[j] -= g[i]; break;
                           case BinaryOp::mul: gb[j] += g[i] * as[i]; break;
                           case BinaryOp::div: gb[j] -= g[i] * as[i] / (bs[j] * bs[j]); break;
                         }
                       }
                     }
                   });
                 });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }

Tensor add(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](auto x) { return x + static_cast<decltype(x)>(s); },
      [](auto, auto, auto g) { return g; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](auto x) { return x * static_cast<decltype(x)>(s); },
      [s](auto, auto, auto g) { return g * static_cast<decltype(g)>(s); });
}

Tensor rsub(double s, const Tensor& a) {
  return unary(
      a, "rsub", [s](auto x) { return static_cast<decltype(x)>(s) - x; },
      [](auto, auto, auto g) { return -g; });
}

Tensor relu(const Tensor& x) {
  if (detail::active_branch_trace()) {
    dispatch(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto xs = x.data<T>();
      uint64_t word = 0;
      for (size_t i = 0; i < xs.size(); ++i) {
        word = (word << 1) | (xs[i] > T(0) ? 1u : 0u);
        if (i % 64 == 63 || i + 1 == xs.size()) {
          detail::trace_branch(word);
          word = 0;
        }
      }
    });
  }
  return unary(
      x, "relu", [](auto v) { return v > 0 ? v : decltype(v)(0); },
      [](auto v, auto, auto g) { return v > 0 ? g : decltype(g)(0); });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu",
      [](auto v) {
        using T = decltype(v);
        return T(0.5) * v * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
      },
      [](auto v, auto, auto g) {
        using T = decltype(v);
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
        const T pdf = std::exp(T(-0.5) * v * v) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
        return g * (cdf + v * pdf);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid", [](auto v) { return stable_sigmoid(v); },
      [](auto, auto y, auto g) { return g * y * (decltype(y)(1) - y); });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& target) {
  detail::check_same_dtype(logits, target, "bce_with_logits");
  if (logits.shape() != target.shape())
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs target " +
                     shape_str(target.shape()));
  Tensor out = detail::make_output(logits.shape(), logits.dtype());
  dispatch(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = logits.data<T>();
    auto t = target.data<T>();
    auto o = out.data<T>();
    for (size_t i = 0; i < x.size(); ++i)
      o[i] = std::max(x[i], T(0)) - x[i] * t[i] + std::log1p(std::exp(-std::abs(x[i])));
  });
  detail::check_finite(out, "bce_with_logits");
  detail::record("bce_with_logits", {logits}, out,
                 [xi = logits.impl_ptr(), ti = target.impl_ptr(), oi = out.impl_ptr()] {
                   dispatch(oi->data.dtype(), [&](auto tag) {
                     using T = decltype(tag);
                     auto x = detail::values<T>(xi);
                     auto t = detail::values<T>(ti);
                     auto g = detail::upstream<T>(oi);
                     auto gx = detail::accum<T>(xi);
                     for (size_t i = 0; i < x.size(); ++i)
                       gx[i] += g[i] * (stable_sigmoid(x[i]) - t[i]);
                   });
                 });
  return out;
}

}  // namespace hstmrf
