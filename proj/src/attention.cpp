#include "hstmrf/attention.hpp"

#include <array>
#include <cmath>

namespace hstmrf {

namespace {

// Slice `i` of axis `axis`, with that axis removed.
Tensor take(const Tensor& x, int axis, int64_t i) {
  Shape s = x.shape();
  s.erase(s.begin() + axis);
  return reshape(index_select(x, axis, {i}), s);
}

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const char* op) {
  if (q.rank() < 2 || k.shape() != q.shape() || v.rank() != q.rank() ||
      v.dim(-2) != q.dim(-2))
    throw ShapeError(std::string(op) + ": incompatible q/k/v shapes " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
}

Tensor add_bias(const Tensor& scores, const Tensor& bias) {
  return bias.defined() ? add(scores, bias) : scores;
}

}  // namespace

Tensor transpose_last(const Tensor& x) {
  std::vector<int> axes(static_cast<size_t>(x.rank()));
  for (int i = 0; i < x.rank(); ++i) axes[static_cast<size_t>(i)] = i;
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

AttentionResult heterogeneous_attention_core(const Tensor& q1, const Tensor& k1, const Tensor& v1,
                                             const Tensor& q2, const Tensor& k2, const Tensor& v2,
                                             double s, const Tensor& bias) {
  check_qkv(q1, k1, v1, "heterogeneous_attention");
  check_qkv(q2, k2, v2, "heterogeneous_attention");
  if (q1.dim(-2) != q2.dim(-2))
    throw ShapeError("heterogeneous_attention: branch lengths differ (" +
                     std::to_string(q1.dim(-2)) + " vs " + std::to_string(q2.dim(-2)) + ")");
  const Tensor scores = add(matmul(q1, transpose_last(k1)), matmul(q2, transpose_last(k2)));
  AttentionResult r;
  r.weights = softmax(add_bias(scale(scores, s), bias), -1);
  r.z1 = matmul(r.weights, v1);
  r.z2 = matmul(r.weights, v2);
  return r;
}

AttentionResult standard_attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                                        double s, const Tensor& bias) {
  check_qkv(q, k, v, "attention");
  AttentionResult r;
  r.weights = softmax(add_bias(scale(matmul(q, transpose_last(k)), s), bias), -1);
  r.z1 = matmul(r.weights, v);
  return r;
}

AttentionResult heterogeneous_attention(const Tensor& p1, const Tensor& p2,
                                        const HaProjections& proj) {
  if (p1.rank() != 2 || p2.rank() != 2)
    throw ShapeError("heterogeneous_attention: expected [n, Ch] token sequences");
  if (p1.dim(0) != p2.dim(0))
    throw ShapeError("heterogeneous_attention: sequence lengths differ (" +
                     std::to_string(p1.dim(0)) + " vs " + std::to_string(p2.dim(0)) + ")");
  const double d = static_cast<double>(proj.wq.dim(1));
  return heterogeneous_attention_core(matmul(p1, proj.wq), matmul(p1, proj.wk), matmul(p1, proj.wv),
                                      matmul(p2, proj.uq), matmul(p2, proj.uk), matmul(p2, proj.uv),
                                      1.0 / std::sqrt(2.0 * d));
}

WindowLayout WindowLayout::make(int64_t grid_h, int64_t grid_w, int64_t window, bool shifted) {
  if (window < 1 || grid_h % window != 0 || grid_w % window != 0)
    throw ShapeError("window " + std::to_string(window) + " does not tile a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  WindowLayout l;
  l.grid_h = grid_h;
  l.grid_w = grid_w;
  l.window = window;
  l.shift = shifted && std::min(grid_h, grid_w) > window ? window / 2 : 0;
  const int64_t nh = grid_h / window, nw = grid_w / window;
  l.num_windows = nh * nw;
  l.tokens_per_window = window * window;
  const int64_t n = grid_h * grid_w;
  l.forward.resize(static_cast<size_t>(n));
  l.inverse.resize(static_cast<size_t>(n));
  l.region.resize(static_cast<size_t>(n));
  const auto label = [&](int64_t x, int64_t extent) -> int {
    if (l.shift == 0) return 0;
    if (x < extent - window) return 0;
    return x < extent - l.shift ? 1 : 2;
  };
  int64_t p = 0;
  for (int64_t wr = 0; wr < nh; ++wr)
    for (int64_t wc = 0; wc < nw; ++wc)
      for (int64_t a = 0; a < window; ++a)
        for (int64_t b = 0; b < window; ++b, ++p) {
          const int64_t r = wr * window + a, c = wc * window + b;
          const int64_t src = ((r + l.shift) % grid_h) * grid_w + (c + l.shift) % grid_w;
          l.forward[static_cast<size_t>(p)] = src;
          l.inverse[static_cast<size_t>(src)] = p;
          l.region[static_cast<size_t>(p)] = label(r, grid_h) * 3 + label(c, grid_w);
        }
  return l;
}

Tensor WindowLayout::mask(DType dtype) const {
  if (shift == 0) return {};
  const int64_t t = tokens_per_window;
  std::vector<double> m(static_cast<size_t>(num_windows * t * t), 0.0);
  for (int64_t w = 0; w < num_windows; ++w)
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = 0; j < t; ++j)
        if (region[static_cast<size_t>(w * t + i)] != region[static_cast<size_t>(w * t + j)])
          m[static_cast<size_t>((w * t + i) * t + j)] = -1e9;
  return Tensor::from_vector({num_windows, 1, t, t}, m, dtype);
}

Tensor window_partition(const Tensor& tokens, const WindowLayout& layout) {
  if (tokens.rank() != 3 || tokens.dim(1) != layout.grid_h * layout.grid_w)
    throw ShapeError("window_partition: tokens " + shape_str(tokens.shape()) + " do not match a " +
                     std::to_string(layout.grid_h) + "x" + std::to_string(layout.grid_w) + " grid");
  const Tensor ordered = index_select(tokens, 1, layout.forward);
  return reshape(ordered, {tokens.dim(0) * layout.num_windows, layout.tokens_per_window,
                           tokens.dim(2)});
}

Tensor window_reverse(const Tensor& windows, const WindowLayout& layout) {
  if (windows.rank() != 3 || windows.dim(0) % layout.num_windows != 0 ||
      windows.dim(1) != layout.tokens_per_window)
    throw ShapeError("window_reverse: " + shape_str(windows.shape()) +
                     " is not a stack of windows for this layout");
  const int64_t b = windows.dim(0) / layout.num_windows;
  const Tensor flat = reshape(windows, {b, layout.grid_h * layout.grid_w, windows.dim(2)});
  return index_select(flat, 1, layout.inverse);
}

WindowAttention::WindowAttention(ParamStore& ps, const std::string& name, int64_t channels,
                                 int64_t d, int64_t n_heads, int branches, bool is_hetero,
                                 int64_t win, bool rel_bias)
    : dim(d), heads(n_heads), window(win), hetero(is_hetero) {
  if (d % n_heads != 0)
    throw ShapeError(name + ": dim " + std::to_string(d) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  if (hetero && branches != 2) throw std::logic_error(name + ": joint attention needs two branches");
  for (int r = 1; r <= branches; ++r) {
    const std::string b = name + ".b" + std::to_string(r);
    qkv.emplace_back(ps, b + ".qkv", channels, 3 * d);
    proj.emplace_back(ps, b + ".proj", d, channels);
  }
  if (rel_bias) {
    const int64_t span = 2 * win - 1;
    std::vector<double> v(static_cast<size_t>(span * span * n_heads));
    Rng rng = ps.init_rng(name + ".rel_bias");
    for (double& x : v) x = rng.truncated_normal(0.02);
    rel_bias_table = ps.add_parameter(name + ".rel_bias", Tensor::from_vector({span * span, n_heads}, v));
  }
}

Tensor WindowAttention::relative_bias() const {
  const int64_t t = window * window, span = 2 * window - 1;
  std::vector<int64_t> idx(static_cast<size_t>(t * t));
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < t; ++j) {
      const int64_t dy = i / window - j / window + window - 1;
      const int64_t dx = i % window - j % window + window - 1;
      idx[static_cast<size_t>(i * t + j)] = dy * span + dx;
    }
  const Tensor gathered = index_select(rel_bias_table, 0, idx);  // [T*T, heads]
  return reshape(permute(gathered, {1, 0}), {heads, t, t});
}

std::vector<Tensor> WindowAttention::operator()(const std::vector<Tensor>& tokens,
                                                const WindowLayout& layout,
                                                std::vector<Tensor>* weights_out) const {
  if (tokens.size() != qkv.size())
    throw std::logic_error("window attention: expected " + std::to_string(qkv.size()) +
                           " branches, got " + std::to_string(tokens.size()));
  if (layout.window != window)
    throw ShapeError("window attention: layout window " + std::to_string(layout.window) +
                     " differs from configured " + std::to_string(window));
  const int64_t b = tokens[0].dim(0), l = tokens[0].dim(1);
  const int64_t nw = layout.num_windows, t = layout.tokens_per_window, hd = dim / heads;
  if (l != layout.grid_h * layout.grid_w)
    throw ShapeError("window attention: " + std::to_string(l) + " tokens for a " +
                     std::to_string(layout.grid_h) + "x" + std::to_string(layout.grid_w) + " grid");
  const DType dtype = tokens[0].dtype();

  Tensor bias = layout.mask(dtype);
  if (rel_bias_table.defined()) {
    const Tensor rb = relative_bias();
    bias = bias.defined() ? add(add(Tensor::zeros({nw, heads, t, t}, dtype), bias), rb) : rb;
  }

  // [B, L, Ch] -> q, k, v each [B, nW, heads, T, hd]
  std::vector<std::array<Tensor, 3>> qkvs;
  for (size_t r = 0; r < tokens.size(); ++r) {
    Tensor x = index_select(qkv[r](tokens[r]), 1, layout.forward);
    x = permute(reshape(x, {b, nw, t, 3, heads, hd}), {3, 0, 1, 4, 2, 5});
    qkvs.push_back({take(x, 0, 0), take(x, 0, 1), take(x, 0, 2)});
  }
  std::vector<Tensor> z;
  if (hetero) {
    const double s = 1.0 / std::sqrt(2.0 * static_cast<double>(hd));
    AttentionResult res = heterogeneous_attention_core(qkvs[0][0], qkvs[0][1], qkvs[0][2],
                                                       qkvs[1][0], qkvs[1][1], qkvs[1][2], s, bias);
    if (weights_out) weights_out->push_back(res.weights);
    z = {res.z1, res.z2};
  } else {
    const double s = 1.0 / std::sqrt(static_cast<double>(hd));
    for (const auto& [q, k, v] : qkvs) {
      AttentionResult res = standard_attention_core(q, k, v, s, bias);
      if (weights_out) weights_out->push_back(res.weights);
      z.push_back(res.z1);
    }
  }
  std::vector<Tensor> out;
  for (size_t r = 0; r < z.size(); ++r) {
    Tensor y = reshape(permute(z[r], {0, 1, 3, 2, 4}), {b, l, dim});
    out.push_back(proj[r](index_select(y, 1, layout.inverse)));
  }
  return out;
}

HstBlock::HstBlock(ParamStore& ps, const std::string& name, int64_t channels,
                   const ModelConfig& cfg, int branches, bool hetero, bool is_shifted)
    : window(cfg.window), shifted(is_shifted) {
  for (int r = 1; r <= branches; ++r) {
    const std::string b = name + ".b" + std::to_string(r);
    norm1.emplace_back(ps, b + ".norm1", channels);
    norm2.emplace_back(ps, b + ".norm2", channels);
    mlp.emplace_back(ps, b + ".mlp", channels, cfg.mlp_ratio * channels);
  }
  if (hetero) {
    attn.emplace_back(ps, name + ".hattn", channels, cfg.hidden_dim, cfg.heads, branches, true,
                      cfg.window, cfg.relative_position_bias);
  } else {
    for (int r = 1; r <= branches; ++r)
      attn.emplace_back(ps, name + ".b" + std::to_string(r) + ".attn", channels, cfg.hidden_dim,
                        cfg.heads, 1, false, cfg.window, cfg.relative_position_bias);
  }
}

std::vector<Tensor> HstBlock::operator()(const std::vector<Tensor>& tokens, int64_t grid_h,
                                         int64_t grid_w, std::vector<Tensor>* weights_out) const {
  const WindowLayout layout = WindowLayout::make(grid_h, grid_w, window, shifted);
  std::vector<Tensor> h;
  for (size_t r = 0; r < tokens.size(); ++r) h.push_back(norm1[r](tokens[r]));
  std::vector<Tensor> a;
  if (attn.size() == 1 && attn[0].hetero) {
    a = attn[0](h, layout, weights_out);
  } else {
    for (size_t r = 0; r < tokens.size(); ++r) a.push_back(attn[r]({h[r]}, layout, weights_out)[0]);
  }
  std::vector<Tensor> out;
  for (size_t r = 0; r < tokens.size(); ++r) {
    const Tensor x = add(tokens[r], a[r]);
    out.push_back(add(x, mlp[r](norm2[r](x))));
  }
  return out;
}

Tensor merge_neighborhoods(const Tensor& tokens, int64_t grid_h, int64_t grid_w) {
  if (tokens.rank() != 3 || tokens.dim(1) != grid_h * grid_w)
    throw ShapeError("patch merging: tokens " + shape_str(tokens.shape()) + " do not match a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  if (grid_h % 2 != 0 || grid_w % 2 != 0)
    throw ShapeError("patch merging: odd grid " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w));
  const int64_t b = tokens.dim(0), c = tokens.dim(2);
  const Tensor x = reshape(tokens, {b, grid_h / 2, 2, grid_w / 2, 2, c});
  return reshape(permute(x, {0, 1, 3, 4, 2, 5}), {b, grid_h / 2 * (grid_w / 2), 4 * c});
}

PatchMerging::PatchMerging(ParamStore& ps, const std::string& name, int64_t channels)
    : norm(ps, name + ".norm", 4 * channels),
      reduction(ps, name + ".reduction", 4 * channels, 2 * channels, false) {}

Tensor PatchMerging::operator()(const Tensor& tokens, int64_t grid_h, int64_t grid_w) const {
  return reduction(norm(merge_neighborhoods(tokens, grid_h, grid_w)));
}

}  // namespace hstmrf
