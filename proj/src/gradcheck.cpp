#include "hstmrf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "detail/autograd.hpp"
#include "hstmrf/rng.hpp"

namespace hstmrf {

namespace {

struct TraceScope {
  detail::BranchTrace trace;
  detail::BranchTrace* previous;
  TraceScope() : previous(detail::active_branch_trace()) { detail::active_branch_trace() = &trace; }
  ~TraceScope() { detail::active_branch_trace() = previous; }
};

// Evaluates f and the hash of its branch choices.
double eval_scalar(const std::function<Tensor()>& f, uint64_t* branches) {
  TraceScope scope;
  const Tensor y = f();
  *branches = scope.trace.hash;
  if (y.numel() != 1) throw ShapeError("gradcheck: f must be scalar, got " + shape_str(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("gradcheck: f(x) is not finite");
  return v;
}

}  // namespace

GradcheckReport gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                          const GradcheckOptions& options) {
  for (const Tensor& t : wrt)
    if (t.dtype() != DType::f64)
      throw std::invalid_argument("gradcheck: inputs must be 64-bit, got " +
                                  std::string(dtype_name(t.dtype())));

  std::vector<bool> had_flag;
  for (Tensor t : wrt) {
    had_flag.push_back(t.requires_grad());
    t.clear_grad();
    t.set_requires_grad(true);
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(&tape);
    const Tensor y = f();
    if (y.numel() != 1) throw ShapeError("gradcheck: f must be scalar, got " + shape_str(y.shape()));
    if (!std::isfinite(y.item())) throw NumericError("gradcheck: f(x) is not finite");
    tape.backward(y);
  }
  for (const Tensor& t : wrt)
    analytic.push_back(t.has_grad() ? t.grad_vector() : std::vector<double>(t.numel(), 0.0));

  // (tensor, flat index) pairs to probe.
  std::vector<std::pair<size_t, int64_t>> coords;
  for (size_t k = 0; k < wrt.size(); ++k)
    for (int64_t i = 0; i < wrt[k].numel(); ++i) coords.emplace_back(k, i);
  if (options.max_coords > 0 && coords.size() > options.max_coords) {
    Rng rng(options.seed);
    for (size_t i = 0; i < options.max_coords; ++i) {
      const auto j = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i),
                                                         static_cast<int64_t>(coords.size()) - 1));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(options.max_coords);
  }

  GradcheckReport report;
  TapeScope no_tape(nullptr);
  uint64_t base_branches = 0;
  eval_scalar(f, &base_branches);
  for (const auto& [k, i] : coords) {
    Tensor t = wrt[k];
    auto d = t.data<double>();
    const double saved = d[static_cast<size_t>(i)];
    double numeric = 0.0;
    bool smooth = false;
    double h = options.step;
    for (int attempt = 0; attempt <= options.kink_retries && !smooth; ++attempt, h /= 10.0) {
      uint64_t bp = 0, bm = 0;
      d[static_cast<size_t>(i)] = saved + h;
      const double fp = eval_scalar(f, &bp);
      d[static_cast<size_t>(i)] = saved - h;
      const double fm = eval_scalar(f, &bm);
      d[static_cast<size_t>(i)] = saved;
      numeric = (fp - fm) / (2.0 * h);
      smooth = bp == base_branches && bm == base_branches;
    }
    if (!smooth) {
      ++report.kinks_skipped;
      continue;
    }
    const double a = analytic[k][static_cast<size_t>(i)];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
    ++report.coords_checked;
  }
  for (size_t k = 0; k < wrt.size(); ++k) {
    Tensor t = wrt[k];
    t.set_requires_grad(had_flag[k]);
  }
  const double probed = static_cast<double>(report.coords_checked + report.kinks_skipped);
  report.passed = report.max_rel_error <= options.tol &&
                  static_cast<double>(report.kinks_skipped) <= options.max_skipped_fraction * probed;
  return report;
}

}  // namespace hstmrf
