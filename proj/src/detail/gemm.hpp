#pragma once

#include <cstdint>

namespace hstmrf::detail {

/// Row-major C[M,N] (+)= op(A) * op(B), where op(A) is M x K and op(B) is K x N.
/// A is stored K x M when trans_a, B is stored N x K when trans_b.
///
/// Every output element accumulates over k in ascending order regardless of
/// tiling or thread count, so results are bit-reproducible.
template <class T>
void gemm(bool trans_a, bool trans_b, int64_t M, int64_t N, int64_t K, const T* A, const T* B,
          T* C, bool accumulate);

/// Row-major transpose of a rows x cols matrix into cols x rows.
template <class T>
void transpose(int64_t rows, int64_t cols, const T* src, T* dst);

}  // namespace hstmrf::detail
