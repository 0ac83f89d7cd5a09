#pragma once

#include <cstdint>
#include <vector>

#include "hstmrf/rng.hpp"
#include "hstmrf/tensor.hpp"

namespace hstmrf {

// ---------------------------------------------------------------------------
// Elementwise. `b` must have the same shape as `a` or broadcast to it
// (right-aligned, each extent equal or 1). Broadcasting is one-directional.
// ---------------------------------------------------------------------------

enum class BinaryOp { add, sub, mul, div };

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// a + s
Tensor add(const Tensor& a, double s);
/// a * s
Tensor scale(const Tensor& a, double s);
/// s - a
Tensor rsub(double s, const Tensor& a);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Numerically stable per-element binary cross-entropy on logits. The target
/// is treated as a constant.
Tensor bce_with_logits(const Tensor& logits, const Tensor& target);

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// [..., m, k] x [..., k, n]. Leading dims of `b` must equal those of `a`, or
/// `b` may be a plain 2-D matrix shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

/// Cross-correlation. x: N x Cin x H x W, w: Cout x Cin x k x k, bias: Cout or
/// undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt = {});

// ---------------------------------------------------------------------------
// Pooling and normalization
// ---------------------------------------------------------------------------

/// Exponentially weighted mean sum(e^a a)/sum(e^a) over non-overlapping
/// kernel_h x kernel_w regions of an N x C x H x W map.
Tensor softpool2d(const Tensor& x, int64_t kernel_h, int64_t kernel_w);
/// softpool2d over the full spatial extent: N x C x 1 x 1.
Tensor global_softpool(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);
Tensor global_max_pool(const Tensor& x);

Tensor softmax(const Tensor& x, int axis = -1);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

/// Batch norm over (N, H, W) per channel. In training mode the running
/// statistics are updated in place with `momentum`.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training, double momentum = 0.1,
                   double eps = 1e-5);

/// Normalizes over the last axis.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Bilinear, align_corners = false. x: N x C x H x W.
Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor upsample2x(const Tensor& x);

// ---------------------------------------------------------------------------
// Shape manipulation and reductions
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor concat(const std::vector<Tensor>& xs, int axis);
/// Selects entries `index` along `axis` (indices may repeat).
Tensor index_select(const Tensor& x, int axis, const std::vector<int64_t>& index);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);

}  // namespace hstmrf
