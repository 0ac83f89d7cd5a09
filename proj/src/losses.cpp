#include "hstmrf/losses.hpp"

#include <algorithm>
#include <vector>

#include "hstmrf/ops.hpp"

namespace hstmrf {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* op) {
  if (pred.shape() != gt.shape())
    throw ShapeError(std::string(op) + ": prediction " + shape_str(pred.shape()) +
                     " and target " + shape_str(gt.shape()) + " differ");
  if (pred.rank() < 2) throw ShapeError(std::string(op) + ": expected a leading batch axis");
}

// [N, ...] -> [N] sums.
Tensor per_image_sum(const Tensor& x) { return sum_axis(reshape(x, {x.dim(0), x.numel() / x.dim(0)}), 1); }

Tensor constant_like(const Tensor& ref, const std::vector<double>& v, const Shape& shape) {
  return Tensor::from_vector(shape, v, ref.dtype());
}

std::vector<double> per_image_sums(const std::vector<double>& v, int64_t n) {
  const size_t p = v.size() / static_cast<size_t>(n);
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (size_t i = 0; i < v.size(); ++i) out[i / p] += v[i];
  return out;
}

}  // namespace

Tensor boundary_weights(const Tensor& gt, const LossWeights& w) {
  if (gt.rank() < 2) throw ShapeError("boundary_weights: expected at least 2 axes");
  const int64_t h = gt.dim(-2), wd = gt.dim(-1);
  const int64_t planes = gt.numel() / (h * wd);
  const int64_t r = w.pool_k / 2;
  const std::vector<double> g = gt.to_vector();
  std::vector<double> out(g.size());
  std::vector<double> integral(static_cast<size_t>((h + 1) * (wd + 1)));
  const auto I = [&](int64_t y, int64_t x) -> double& { return integral[static_cast<size_t>(y * (wd + 1) + x)]; };
  for (int64_t p = 0; p < planes; ++p) {
    const double* gp = g.data() + p * h * wd;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < wd; ++x)
        I(y + 1, x + 1) = gp[y * wd + x] + I(y, x + 1) + I(y + 1, x) - I(y, x);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < wd; ++x) {
        const int64_t y0 = std::max<int64_t>(0, y - r), y1 = std::min(h, y + r + 1);
        const int64_t x0 = std::max<int64_t>(0, x - r), x1 = std::min(wd, x + r + 1);
        const double box = I(y1, x1) - I(y0, x1) - I(y1, x0) + I(y0, x0);
        const double avg = box / static_cast<double>((y1 - y0) * (x1 - x0));
        out[static_cast<size_t>(p * h * wd + y * wd + x)] =
            1.0 + w.boundary_gain * std::abs(avg - gp[y * wd + x]);
      }
  }
  return Tensor::from_vector(gt.shape(), out, gt.dtype());
}

Tensor tversky_loss_probs(const Tensor& probs, const Tensor& gt_in, double eta, double gamma) {
  check_pair(probs, gt_in, "tversky_loss");
  const Tensor gt = gt_in.to(probs.dtype());
  const int64_t n = probs.dim(0);
  const Tensor tp = per_image_sum(mul(probs, gt));
  const Tensor fp = per_image_sum(mul(probs, rsub(1.0, gt)));
  const Tensor g_sum = constant_like(probs, per_image_sums(gt.to_vector(), n), {n});
  const Tensor fn = sub(g_sum, tp);
  const Tensor den = add(add(add(tp, scale(fp, eta)), scale(fn, gamma)), kLossSmooth);
  const Tensor ratio = div(add(tp, kLossSmooth), den);
  return rsub(1.0, mean(ratio));
}

Tensor tversky_loss(const Tensor& logits, const Tensor& gt, const LossWeights& w) {
  return tversky_loss_probs(sigmoid(logits), gt, w.eta, w.gamma);
}

Tensor weighted_bce(const Tensor& logits, const Tensor& gt_in, const LossWeights& w) {
  check_pair(logits, gt_in, "weighted_bce");
  const Tensor gt = gt_in.to(logits.dtype());
  const int64_t n = logits.dim(0);
  const Tensor omega = boundary_weights(gt, w);
  const Tensor omega_sum = constant_like(logits, per_image_sums(omega.to_vector(), n), {n});
  const Tensor weighted = per_image_sum(mul(bce_with_logits(logits, gt), omega));
  return mean(div(weighted, omega_sum));
}

Tensor weighted_iou(const Tensor& logits, const Tensor& gt_in, const LossWeights& w) {
  check_pair(logits, gt_in, "weighted_iou");
  const Tensor gt = gt_in.to(logits.dtype());
  const int64_t n = logits.dim(0);
  const std::vector<double> om = boundary_weights(gt, w).to_vector();
  const std::vector<double> g = gt.to_vector();
  std::vector<double> wg(g.size()), wbg(g.size());
  for (size_t i = 0; i < g.size(); ++i) {
    wg[i] = om[i] * g[i];
    wbg[i] = om[i] * (1.0 - g[i]);
  }
  // union weight: w(g + s - g s) = w g + w (1 - g) s
  const Tensor s = sigmoid(logits);
  const Tensor inter = per_image_sum(mul(s, constant_like(logits, wg, gt.shape())));
  const Tensor wg_sum = constant_like(logits, per_image_sums(wg, n), {n});
  const Tensor uni = add(wg_sum, per_image_sum(mul(s, constant_like(logits, wbg, gt.shape()))));
  return rsub(1.0, mean(div(add(inter, kLossSmooth), add(uni, kLossSmooth))));
}

StageLoss stage_loss(const Tensor& logits, const Tensor& gt, const LossWeights& w) {
  StageLoss l;
  l.wiou = weighted_iou(logits, gt, w);
  l.wbce = weighted_bce(logits, gt, w);
  l.tversky = tversky_loss(logits, gt, w);
  l.total = add(add(l.wiou, l.wbce), l.tversky);
  return l;
}

Tensor combine_deep_supervision(const Tensor& final_loss, const Tensor& aux1_loss,
                                const Tensor& aux3_loss, const LossWeights& w) {
  return add(add(scale(final_loss, w.a), scale(aux1_loss, w.b)), scale(aux3_loss, w.c));
}

TotalLoss total_loss(const Tensor& logits, const Tensor& aux1, const Tensor& aux3, const Tensor& gt,
                     const LossWeights& w) {
  TotalLoss t;
  t.final_head = stage_loss(logits, gt, w);
  t.aux1 = stage_loss(aux1, gt, w);
  t.aux3 = stage_loss(aux3, gt, w);
  t.total = combine_deep_supervision(t.final_head.total, t.aux1.total, t.aux3.total, w);
  return t;
}

}  // namespace hstmrf
