#pragma once

#include "hstmrf/config.hpp"
#include "hstmrf/tensor.hpp"

namespace hstmrf {

inline constexpr double kLossSmooth = 1e-6;

// Every loss takes logits and a binary target of the same shape N x ...,
// reduces each image separately and averages over the batch.

/// Boundary-aware pixel weights 1 + gain * |avgpool_k(g) - g|, same padding,
/// averaging over in-bounds pixels only. Constant (no gradient).
Tensor boundary_weights(const Tensor& gt, const LossWeights& w);

/// Tversky loss on probabilities: 1 - (TP + s) / (TP + eta FP + gamma FN + s).
Tensor tversky_loss_probs(const Tensor& probs, const Tensor& gt, double eta, double gamma);
Tensor tversky_loss(const Tensor& logits, const Tensor& gt, const LossWeights& w);
Tensor weighted_bce(const Tensor& logits, const Tensor& gt, const LossWeights& w);
Tensor weighted_iou(const Tensor& logits, const Tensor& gt, const LossWeights& w);

struct StageLoss {
  Tensor wiou, wbce, tversky;
  Tensor total;  // unweighted sum of the three
};

StageLoss stage_loss(const Tensor& logits, const Tensor& gt, const LossWeights& w);

struct TotalLoss {
  StageLoss final_head, aux1, aux3;
  Tensor total;
};

/// a * L(final) + b * L(aux1) + c * L(aux3).
TotalLoss total_loss(const Tensor& logits, const Tensor& aux1, const Tensor& aux3, const Tensor& gt,
                     const LossWeights& w);
Tensor combine_deep_supervision(const Tensor& final_loss, const Tensor& aux1_loss,
                                const Tensor& aux3_loss, const LossWeights& w);

}  // namespace hstmrf
