#include <algorithm>
#include <cstring>
#include <vector>

#include "detail/autograd.hpp"
#include "detail/gemm.hpp"
#include "hstmrf/ops.hpp"

namespace hstmrf {

namespace detail {

namespace {

// Register tile: kMR rows by two vectors of columns. Vector extensions map to
// whatever SIMD width the target offers.
template <class T>
using Vec [[gnu::vector_size(64)]] = T;

constexpr int64_t kMR = 6;
constexpr int64_t kKC = 256;  // k-block kept hot in cache
constexpr int64_t kMC = 96;   // rows per parallel task

template <class T>
constexpr int64_t kVL = static_cast<int64_t>(64 / sizeof(T));
template <class T>
constexpr int64_t kNR = 2 * kVL<T>;

// c[kMR][kNR] += a_panel[kc][kMR] * b_panel[kc][kNR], ascending k.
template <class T>
inline void micro(int64_t kc, const T* a, const T* b, T* c) {
  using V = Vec<T>;
  constexpr int64_t vl = kVL<T>;
  V acc[kMR][2];
  for (int64_t r = 0; r < kMR; ++r)
    for (int64_t h = 0; h < 2; ++h) std::memcpy(&acc[r][h], c + r * kNR<T> + h * vl, sizeof(V));
  for (int64_t k = 0; k < kc; ++k) {
    V b0, b1;
    std::memcpy(&b0, b + k * kNR<T>, sizeof(V));
    std::memcpy(&b1, b + k * kNR<T> + vl, sizeof(V));
    const T* ak = a + k * kMR;
    for (int64_t r = 0; r < kMR; ++r) {
      acc[r][0] += ak[r] * b0;
      acc[r][1] += ak[r] * b1;
    }
  }
  for (int64_t r = 0; r < kMR; ++r)
    for (int64_t h = 0; h < 2; ++h) std::memcpy(c + r * kNR<T> + h * vl, &acc[r][h], sizeof(V));
}

}  // namespace

template <class T>
void transpose(int64_t rows, int64_t cols, const T* src, T* dst) {
  constexpr int64_t kB = 32;
  for (int64_t i0 = 0; i0 < rows; i0 += kB)
    for (int64_t j0 = 0; j0 < cols; j0 += kB) {
      const int64_t i1 = std::min(rows, i0 + kB), j1 = std::min(cols, j0 + kB);
      for (int64_t i = i0; i < i1; ++i)
        for (int64_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
}

template <class T>
void gemm(bool trans_a, bool trans_b, int64_t M, int64_t N, int64_t K, const T* A, const T* B,
          T* C, bool accumulate) {
  if (M == 0 || N == 0) return;
  if (K == 0) {
    if (!accumulate) std::fill(C, C + M * N, T(0));
    return;
  }
  constexpr int64_t nr = kNR<T>;
  const int64_t panels = (N + nr - 1) / nr;
  const int64_t row_blocks = (M + kMC - 1) / kMC;
  const int64_t tasks = panels * row_blocks;
  const bool parallel = M * N * K > (1 << 18) && tasks > 1;

  // Each task owns a kMC x nr block of C and walks k in ascending blocks, so
  // every element sees the same accumulation order for any thread count.
#pragma omp parallel if (parallel)
  {
    std::vector<T> bp(static_cast<size_t>(kKC * nr));
    std::vector<T> ap(static_cast<size_t>(kKC * kMR));
    std::vector<T> ct(static_cast<size_t>(kMR * nr));
#pragma omp for schedule(static)
    for (int64_t task = 0; task < tasks; ++task) {
      const int64_t j0 = (task / row_blocks) * nr;
      const int64_t jn = std::min(nr, N - j0);
      const int64_t rb0 = (task % row_blocks) * kMC;
      const int64_t rb1 = std::min(M, rb0 + kMC);
      for (int64_t k0 = 0; k0 < K; k0 += kKC) {
        const int64_t kc = std::min(kKC, K - k0);
        for (int64_t k = 0; k < kc; ++k) {
          T* dst = bp.data() + k * nr;
          for (int64_t j = 0; j < jn; ++j)
            dst[j] = trans_b ? B[(j0 + j) * K + k0 + k] : B[(k0 + k) * N + j0 + j];
          for (int64_t j = jn; j < nr; ++j) dst[j] = T(0);
        }
        for (int64_t i0 = rb0; i0 < rb1; i0 += kMR) {
          const int64_t in = std::min(kMR, rb1 - i0);
          for (int64_t k = 0; k < kc; ++k) {
            T* dst = ap.data() + k * kMR;
            for (int64_t r = 0; r < in; ++r)
              dst[r] = trans_a ? A[(k0 + k) * M + i0 + r] : A[(i0 + r) * K + k0 + k];
            for (int64_t r = in; r < kMR; ++r) dst[r] = T(0);
          }
          const bool load = accumulate || k0 > 0;
          for (int64_t r = 0; r < kMR; ++r)
            for (int64_t j = 0; j < nr; ++j)
              ct[static_cast<size_t>(r * nr + j)] = load && r < in && j < jn ? C[(i0 + r) * N + j0 + j] : T(0);
          micro<T>(kc, ap.data(), bp.data(), ct.data());
          for (int64_t r = 0; r < in; ++r)
            for (int64_t j = 0; j < jn; ++j) C[(i0 + r) * N + j0 + j] = ct[static_cast<size_t>(r * nr + j)];
        }
      }
    }
  }
}

template void gemm<float>(bool, bool, int64_t, int64_t, int64_t, const float*, const float*,
                          float*, bool);
template void gemm<double>(bool, bool, int64_t, int64_t, int64_t, const double*, const double*,
                           double*, bool);
template void transpose<float>(int64_t, int64_t, const float*, float*);
template void transpose<double>(int64_t, int64_t, const double*, double*);

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_same_dtype(a, b, "matmul");
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int64_t m = a.dim(-2), k = a.dim(-1);
  const int64_t kb = b.dim(-2), n = b.dim(-1);
  if (k != kb)
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const bool shared_b = b.rank() == 2;
  Shape batch_shape(a.shape().begin(), a.shape().end() - 2);
  if (!shared_b) {
    Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    if (b_batch != batch_shape)
      throw ShapeError("matmul: batch dimensions differ: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
  }
  const int64_t batch = numel(batch_shape);
  Shape out_shape = batch_shape;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = detail::make_output(out_shape, a.dtype());

  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.data<T>().data();
    const T* pb = b.data<T>().data();
    T* pc = out.data<T>().data();
    if (shared_b) {
      detail::gemm<T>(false, false, batch * m, n, k, pa, pb, pc, false);
    } else {
      for (int64_t i = 0; i < batch; ++i)
        detail::gemm<T>(false, false, m, n, k, pa + i * m * k, pb + i * k * n, pc + i * m * n,
                        false);
    }
  });
  detail::check_finite(out, "matmul");

  detail::record("matmul", {a, b}, out,
                 [ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr(), batch, m, n, k,
                  shared_b] {
                   dispatch(oi->data.dtype(), [&](auto tag) {
                     using T = decltype(tag);
                     const T* g = detail::upstream<T>(oi).data();
                     const T* pa = detail::values<T>(ai).data();
                     const T* pb = detail::values<T>(bi).data();
                     if (detail::needs_grad(ai)) {
                       T* ga = detail::accum<T>(ai).data();
                       if (shared_b)
                         detail::gemm<T>(false, true, batch * m, k, n, g, pb, ga, true);
                       else
                         for (int64_t i = 0; i < batch; ++i)
                           detail::gemm<T>(false, true, m, k, n, g + i * m * n, pb + i * k * n,
                                           ga + i * m * k, true);
                     }
                     if (detail::needs_grad(bi)) {
                       T* gb = detail::accum<T>(bi).data();
                       if (shared_b)
                         detail::gemm<T>(true, false, k, n, batch * m, pa, g, gb, true);
                       else
                         for (int64_t i = 0; i < batch; ++i)
                           detail::gemm<T>(true, false, k, n, m, pa + i * m * k, g + i * m * n,
                                           gb + i * k * n, true);
                     }
                   });
                 });
  return out;
}

}  // namespace hstmrf
