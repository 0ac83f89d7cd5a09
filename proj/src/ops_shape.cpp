#include <algorithm>
#include <cstring>
#include <memory>
#include <numeric>
#include <vector>

#include "detail/autograd.hpp"
#include "hstmrf/ops.hpp"

namespace hstmrf {

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out = detail::make_output(shape, x.dtype());
  out.impl().data = x.impl().data;
  detail::record("reshape", {x}, out, [xi = x.impl_ptr(), oi = out.impl_ptr()] {
    dispatch(oi->data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = detail::upstream<T>(oi);
      auto gx = detail::accum<T>(xi);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
  return out;
}

namespace {

// in-offset for every out flat index
std::vector<int64_t> permute_map(const Shape& in, const std::vector<int>& axes) {
  const size_t r = in.size();
  std::vector<int64_t> in_stride(r);
  int64_t s = 1;
  for (size_t d = r; d-- > 0;) {
    in_stride[d] = s;
    s *= in[d];
  }
  Shape out(r);
  std::vector<int64_t> step(r);
  for (size_t d = 0; d < r; ++d) {
    out[d] = in[static_cast<size_t>(axes[d])];
    step[d] = in_stride[static_cast<size_t>(axes[d])];
  }
  const int64_t n = numel(in);
  std::vector<int64_t> map(static_cast<size_t>(n));
  std::vector<int64_t> idx(r, 0);
  int64_t off = 0;
  for (int64_t i = 0; i < n; ++i) {
    map[static_cast<size_t>(i)] = off;
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      off += step[d];
      if (idx[d] < out[d]) break;
      off -= step[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r)
    throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for rank " +
                     std::to_string(r));
  std::vector<int> sorted(axes);
  std::sort(sorted.begin(), sorted.end());
  for (int d = 0; d < r; ++d)
    if (sorted[static_cast<size_t>(d)] != d) throw ShapeError("permute: axes are not a permutation");
  Shape out_shape(static_cast<size_t>(r));
  for (int d = 0; d < r; ++d) out_shape[static_cast<size_t>(d)] = x.dim(axes[static_cast<size_t>(d)]);
  auto map = std::make_shared<std::vector<int64_t>>(permute_map(x.shape(), axes));
  Tensor out = detail::make_output(out_shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto os = out.data<T>();
    for (size_t i = 0; i < map->size(); ++i) os[i] = xs[(*map)[i]];
  });
  detail::record("permute", {x}, out, [xi = x.impl_ptr(), oi = out.impl_ptr(), map] {
    dispatch(oi->data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = detail::upstream<T>(oi);
      auto gx = detail::accum<T>(xi);
      for (size_t i = 0; i < map->size(); ++i) gx[(*map)[i]] += g[i];
    });
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = xs.front();
  const int ax = detail::normalize_axis(axis, first.rank(), "concat");
  Shape out_shape = first.shape();
  out_shape[static_cast<size_t>(ax)] = 0;
  for (const Tensor& t : xs) {
    detail::check_same_dtype(first, t, "concat");
    if (t.rank() != first.rank())
      throw ShapeError("concat: rank mismatch " + shape_str(first.shape()) + " vs " +
                       shape_str(t.shape()));
    for (int d = 0; d < first.rank(); ++d)
      if (d != ax && t.dim(d) != first.dim(d))
        throw ShapeError("concat: shape " + shape_str(t.shape()) + " incompatible with " +
                         shape_str(first.shape()) + " along axis " + std::to_string(ax));
    out_shape[static_cast<size_t>(ax)] += t.dim(ax);
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= first.dim(d);
  for (int d = ax + 1; d < first.rank(); ++d) inner *= first.dim(d);
  const int64_t out_row = out_shape[static_cast<size_t>(ax)] * inner;

  Tensor out = detail::make_output(out_shape, first.dtype());
  std::vector<int64_t> chunk, offset;
  int64_t acc = 0;
  for (const Tensor& t : xs) {
    chunk.push_back(t.dim(ax) * inner);
    offset.push_back(acc);
    acc += chunk.back();
  }
  dispatch(first.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto os = out.data<T>();
    for (size_t k = 0; k < xs.size(); ++k) {
      auto src = xs[k].data<T>();
      for (int64_t o = 0; o < outer; ++o)
        std::copy_n(src.data() + o * chunk[k], chunk[k], os.data() + o * out_row + offset[k]);
    }
  });
  std::vector<detail::ImplPtr> impls;
  for (const Tensor& t : xs) impls.push_back(t.impl_ptr());
  detail::record("concat", xs, out,
                 [impls, oi = out.impl_ptr(), chunk, offset, outer, out_row] {
                   dispatch(oi->data.dtype(), [&](auto tag) {
                     using T = decltype(tag);
                     auto g = detail::upstream<T>(oi);
                     for (size_t k = 0; k < impls.size(); ++k) {
                       if (!detail::needs_grad(impls[k])) continue;
                       auto gx = detail::accum<T>(impls[k]);
                       for (int64_t o = 0; o < outer; ++o)
                         for (int64_t j = 0; j < chunk[k]; ++j)
                           gx[o * chunk[k] + j] += g[o * out_row + offset[k] + j];
                     }
                   });
                 });
  return out;
}

Tensor index_select(const Tensor& x, int axis, const std::vector<int64_t>& index) {
  const int ax = detail::normalize_axis(axis, x.rank(), "index_select");
  const int64_t len = x.dim(ax);
  if (index.empty()) throw ShapeError("index_select: empty index");
  for (int64_t i : index)
    if (i < 0 || i >= len)
      throw ShapeError("index_select: index " + std::to_string(i) + " out of range for axis of " +
                       std::to_string(len));
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= x.dim(d);
  for (int d = ax + 1; d < x.rank(); ++d) inner *= x.dim(d);
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(ax)] = static_cast<int64_t>(index.size());
  const int64_t m = static_cast<int64_t>(index.size());
  Tensor out = detail::make_output(out_shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto os = out.data<T>();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < m; ++i)
        std::copy_n(xs.data() + (o * len + index[static_cast<size_t>(i)]) * inner, inner,
                    os.data() + (o * m + i) * inner);
  });
  auto idx = std::make_shared<std::vector<int64_t>>(index);
  detail::record("index_select", {x}, out,
                 [xi = x.impl_ptr(), oi = out.impl_ptr(), idx, outer, inner, len, m] {
                   dispatch(oi->data.dtype(), [&](auto tag) {
                     using T = decltype(tag);
                     auto g = detail::upstream<T>(oi);
                     auto gx = detail::accum<T>(xi);
                     for (int64_t o = 0; o < outer; ++o)
                       for (int64_t i = 0; i < m; ++i) {
                         const T* src = g.data() + (o * m + i) * inner;
                         T* dst = gx.data() + (o * len + (*idx)[static_cast<size_t>(i)]) * inner;
                         for (int64_t j = 0; j < inner; ++j) dst[j] += src[j];
                       }
                   });
                 });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = detail::make_output({1}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T s = 0;
    for (T v : x.data<T>()) s += v;
    out.data<T>()[0] = s;
  });
  detail::check_finite(out, "sum");
  detail::record("sum", {x}, out, [xi = x.impl_ptr(), oi = out.impl_ptr()] {
    dispatch(oi->data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T g = detail::upstream<T>(oi)[0];
      for (T& v : detail::accum<T>(xi)) v += g;
    });
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  const int ax = detail::normalize_axis(axis, x.rank(), "sum_axis");
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= x.dim(d);
  for (int d = ax + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const int64_t len = x.dim(ax);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[static_cast<size_t>(ax)] = 1;
  else
    out_shape.erase(out_shape.begin() + ax);
  if (out_shape.empty()) out_shape = {1};
  Tensor out = detail::make_output(out_shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xs = x.data<T>();
    auto os = out.data<T>();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t k = 0; k < len; ++k)
        for (int64_t i = 0; i < inner; ++i) os[o * inner + i] += xs[(o * len + k) * inner + i];
  });
  detail::check_finite(out, "sum_axis");
  detail::record("sum_axis", {x}, out, [xi = x.impl_ptr(), oi = out.impl_ptr(), outer, inner, len] {
    dispatch(oi->data.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = detail::upstream<T>(oi);
      auto gx = detail::accum<T>(xi);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t k = 0; k < len; ++k)
          for (int64_t i = 0; i < inner; ++i) gx[(o * len + k) * inner + i] += g[o * inner + i];
    });
  });
  return out;
}

}  // namespace hstmrf
