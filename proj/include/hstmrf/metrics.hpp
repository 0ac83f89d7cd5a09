#pragma once

#include <cstdint>
#include <vector>

#include "hstmrf/tensor.hpp"

namespace hstmrf {

inline constexpr double kMetricEps = 1e-8;

struct Confusion {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Hard counts with sigmoid(logit) >= 0.5, i.e. logit >= 0, as positive.
Confusion confusion_counts(const Tensor& logits, const Tensor& gt);

double dice_score(const Confusion& c);
double iou_score(const Confusion& c);

struct EvalResult {
  double mdice = 0, miou = 0, recall = 0, precision = 0;
  std::vector<double> dice, iou;  // per image
};

/// Per-image Dice/IoU averaged over images; recall and precision pooled over
/// all pixels.
EvalResult evaluate(const std::vector<Confusion>& per_image);
/// One logits/mask pair per image.
EvalResult evaluate(const std::vector<Tensor>& logits, const std::vector<Tensor>& gts);

}  // namespace hstmrf
