#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hstmrf/config.hpp"
#include "hstmrf/nn.hpp"

namespace hstmrf {

struct AttentionResult {
  Tensor z1;
  Tensor z2;       // undefined for single-branch attention
  Tensor weights;  // softmax weights [..., n, n], shared by both branches
};

/// Swaps the last two axes.
Tensor transpose_last(const Tensor& x);

/// Joint attention over two aligned token sets, q/k/v each [..., n, hd]:
/// A = softmax((q1 k1^T + q2 k2^T) * scale + bias), z_r = A v_r.
/// `bias` (optional) broadcasts against the [..., n, n] score tensor.
AttentionResult heterogeneous_attention_core(const Tensor& q1, const Tensor& k1, const Tensor& v1,
                                             const Tensor& q2, const Tensor& k2, const Tensor& v2,
                                             double scale, const Tensor& bias = {});

/// A = softmax(q k^T * scale + bias), z1 = A v.
AttentionResult standard_attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                                        double scale, const Tensor& bias = {});

/// Per-branch channel projections [Ch, d]: W for branch 1, U for branch 2.
struct HaProjections {
  Tensor wq, wk, wv;
  Tensor uq, uk, uv;
};

/// Single-head heterogeneous attention on token sequences P1, P2 of shape
/// [n, Ch], scale 1/sqrt(2d) with d the projection width.
AttentionResult heterogeneous_attention(const Tensor& p1, const Tensor& p2,
                                        const HaProjections& proj);

/// Window partition of a grid_h x grid_w token grid, with the optional cyclic
/// shift folded into the gather index.
struct WindowLayout {
  int64_t grid_h = 0, grid_w = 0;
  int64_t window = 0;
  int64_t shift = 0;
  int64_t num_windows = 0;
  int64_t tokens_per_window = 0;
  /// Window-ordered position -> row-major grid index.
  std::vector<int64_t> forward;
  /// Row-major grid index -> window-ordered position.
  std::vector<int64_t> inverse;
  /// Region label of each window-ordered position (all 0 when unshifted).
  std::vector<int> region;

  /// The shift is window/2 when `shifted`, or 0 when one window covers the
  /// grid.
  static WindowLayout make(int64_t grid_h, int64_t grid_w, int64_t window, bool shifted);

  /// Additive score mask [num_windows, 1, T, T] (0 or -1e9); undefined when
  /// no shift is applied.
  Tensor mask(DType dtype) const;
};

/// [B, L, C] -> [B * num_windows, T, C].
Tensor window_partition(const Tensor& tokens, const WindowLayout& layout);
/// Inverse of window_partition.
Tensor window_reverse(const Tensor& windows, const WindowLayout& layout);

/// Multi-head window attention. With two branches and `hetero`, the branches
/// share one softmax (scores summed, scale 1/sqrt(2 hd)); otherwise each
/// branch attends on its own with scale 1/sqrt(hd).
class WindowAttention {
 public:
  WindowAttention() = default;
  WindowAttention(ParamStore& ps, const std::string& name, int64_t channels, int64_t dim,
                  int64_t heads, int branches, bool hetero, int64_t window, bool rel_bias);

  /// tokens: one [B, L, Ch] per branch. `weights_out` receives the softmax
  /// weights [B, nW, heads, T, T] (one per branch unless hetero).
  std::vector<Tensor> operator()(const std::vector<Tensor>& tokens, const WindowLayout& layout,
                                 std::vector<Tensor>* weights_out = nullptr) const;

  std::vector<Linear> qkv, proj;
  Tensor rel_bias_table;  // [(2w-1)^2, heads]
  int64_t dim = 0, heads = 0, window = 0;
  bool hetero = false;

 private:
  Tensor relative_bias() const;
};

/// Pre-norm transformer block over one or two token grids. Attention is
/// joint (heterogeneous) or independent per branch.
class HstBlock {
 public:
  HstBlock() = default;
  HstBlock(ParamStore& ps, const std::string& name, int64_t channels, const ModelConfig& cfg,
           int branches, bool hetero, bool shifted);

  std::vector<Tensor> operator()(const std::vector<Tensor>& tokens, int64_t grid_h, int64_t grid_w,
                                 std::vector<Tensor>* weights_out = nullptr) const;

  std::vector<LayerNorm> norm1, norm2;
  std::vector<WindowAttention> attn;  // one joint module, or one per branch
  std::vector<Mlp> mlp;
  int64_t window = 0;
  bool shifted = false;
};

/// Concatenates each 2x2 neighborhood (order (0,0), (1,0), (0,1), (1,1) as
/// (row, col) offsets), layer-normalizes and projects 4Ch -> 2Ch.
class PatchMerging {
 public:
  PatchMerging() = default;
  PatchMerging(ParamStore& ps, const std::string& name, int64_t channels);
  /// [B, H*W, Ch] -> [B, H/2 * W/2, 2Ch].
  Tensor operator()(const Tensor& tokens, int64_t grid_h, int64_t grid_w) const;

  LayerNorm norm;
  Linear reduction;
};

/// The 2x2 neighborhood gather alone: [B, H*W, Ch] -> [B, H/2 * W/2, 4Ch].
Tensor merge_neighborhoods(const Tensor& tokens, int64_t grid_h, int64_t grid_w);

}  // namespace hstmrf
