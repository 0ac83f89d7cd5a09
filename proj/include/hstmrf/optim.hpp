#pragma once

#include <cstdint>
#include <vector>

#include "hstmrf/config.hpp"
#include "hstmrf/nn.hpp"

namespace hstmrf {

/// Linear warmup from 0 to lr_max over warmup_steps, then cosine decay to
/// lr_min at total_steps. Valid for 0 <= step <= total_steps.
double lr_at(int64_t step, const Schedule& sched);

/// AdamW with decoupled weight decay:
/// p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p.
class AdamW {
 public:
  AdamW(const std::vector<Tensor>& params, const OptimConfig& cfg);

  /// Applies one update. Missing grads count as zero. Throws NumericError
  /// before touching any parameter if a gradient is non-finite.
  void step(double lr);

  /// Scales all grads so their global L2 norm is at most max_norm; returns
  /// the norm before clipping.
  double clip_grad_norm(double max_norm);

  int64_t steps() const { return t_; }
  void set_steps(int64_t t) { t_ = t; }

  std::vector<Tensor> params, m, v;
  OptimConfig cfg;

 private:
  int64_t t_ = 0;
};

}  // namespace hstmrf
