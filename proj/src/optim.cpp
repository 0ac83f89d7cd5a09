#include "hstmrf/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hstmrf {

double lr_at(int64_t step, const Schedule& s) {
  if (step < 0 || step > s.total_steps)
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(s.total_steps) + "]");
  if (step < s.warmup_steps)
    return s.lr_max * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const double t = static_cast<double>(step - s.warmup_steps);
  const double span = static_cast<double>(s.total_steps - s.warmup_steps);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * t / span));
}

AdamW::AdamW(const std::vector<Tensor>& ps, const OptimConfig& c) : params(ps), cfg(c) {
  for (const Tensor& p : params) {
    m.push_back(Tensor::zeros(p.shape(), p.dtype()));
    v.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
}

double AdamW::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params)
    if (p.has_grad())
      for (double g : p.grad_vector()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (const Tensor& p : params) {
      if (!p.has_grad()) continue;
      dispatch(p.dtype(), [&](auto tag) {
        using T = decltype(tag);
        for (T& g : p.impl().grad->template as<T>()) g = static_cast<T>(g * f);
      });
    }
  }
  return norm;
}

void AdamW::step(double lr) {
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad_vector())
      if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient for a parameter of shape " + shape_str(p.shape()));
  }
  ++t_;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    dispatch(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto ps = p.data<T>();
      auto ms = m[k].data<T>();
      auto vs = v[k].data<T>();
      const bool has = p.has_grad();
      std::span<const T> gs;
      if (has) {
        const Storage& gst = *p.impl().grad;
        gs = gst.as<T>();
      }
      for (size_t i = 0; i < ps.size(); ++i) {
        const double g = has ? static_cast<double>(gs[i]) : 0.0;
        const double mi = b1 * ms[i] + (1.0 - b1) * g;
        const double vi = b2 * vs[i] + (1.0 - b2) * g * g;
        ms[i] = static_cast<T>(mi);
        vs[i] = static_cast<T>(vi);
        const double mhat = mi / c1, vhat = vi / c2;
        const double pi = ps[i];
        ps[i] = static_cast<T>(pi - lr * mhat / (std::sqrt(vhat) + cfg.eps) - lr * cfg.weight_decay * pi);
      }
    });
  }
}

}  // namespace hstmrf
