#include "hstmrf/metrics.hpp"

#include <stdexcept>

namespace hstmrf {

Confusion confusion_counts(const Tensor& logits, const Tensor& gt) {
  if (logits.shape() != gt.shape())
    throw ShapeError("confusion_counts: prediction " + shape_str(logits.shape()) + " and target " +
                     shape_str(gt.shape()) + " differ");
  const std::vector<double> p = logits.to_vector();
  const std::vector<double> g = gt.to_vector();
  Confusion c;
  for (size_t i = 0; i < p.size(); ++i) {
    const bool pos = p[i] >= 0.0;
    const bool truth = g[i] > 0.5;
    if (pos && truth)
      ++c.tp;
    else if (pos)
      ++c.fp;
    else if (truth)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double dice_score(const Confusion& c) {
  if (c.tp + c.fp + c.fn == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / (2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fp + c.fn) + kMetricEps);
}

double iou_score(const Confusion& c) {
  if (c.tp + c.fp + c.fn == 0) return 1.0;
  return static_cast<double>(c.tp) / (static_cast<double>(c.tp + c.fp + c.fn) + kMetricEps);
}

EvalResult evaluate(const std::vector<Confusion>& per_image) {
  if (per_image.empty()) throw std::invalid_argument("evaluate: no images");
  EvalResult r;
  Confusion total;
  for (const Confusion& c : per_image) {
    r.dice.push_back(dice_score(c));
    r.iou.push_back(iou_score(c));
    r.mdice += r.dice.back();
    r.miou += r.iou.back();
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
    total.tn += c.tn;
  }
  const auto n = static_cast<double>(per_image.size());
  r.mdice /= n;
  r.miou /= n;
  const auto tp = static_cast<double>(total.tp);
  // Nothing to find (or nothing predicted) counts as perfect, as for Dice.
  r.recall = total.tp + total.fn == 0 ? 1.0 : tp / (tp + static_cast<double>(total.fn) + kMetricEps);
  r.precision = total.tp + total.fp == 0 ? 1.0 : tp / (tp + static_cast<double>(total.fp) + kMetricEps);
  return r;
}

EvalResult evaluate(const std::vector<Tensor>& logits, const std::vector<Tensor>& gts) {
  if (logits.size() != gts.size())
    throw std::invalid_argument("evaluate: " + std::to_string(logits.size()) + " predictions for " +
                                std::to_string(gts.size()) + " masks");
  std::vector<Confusion> counts;
  for (size_t i = 0; i < logits.size(); ++i) counts.push_back(confusion_counts(logits[i], gts[i]));
  return evaluate(counts);
}

}  // namespace hstmrf
