#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hstmrf/tensor.hpp"

namespace hstmrf {

struct GradcheckOptions {
  double step = 1e-4;
  double tol = 1e-4;
  /// Denominator floor for the relative error, so exact zeros compare as 0.
  double abs_floor = 1e-6;
  /// Check at most this many coordinates per run (0 = all), sampled by seed.
  size_t max_coords = 0;
  uint64_t seed = 0;
  /// A probe whose +-step evaluation flips a ReLU sign or a max index is
  /// retried with step/10, at most this many times, then skipped.
  int kink_retries = 2;
  /// Fail when more than this fraction of probed coordinates is skipped.
  double max_skipped_fraction = 0.05;
};

struct GradcheckReport {
  std::string target;
  double max_rel_error = 0.0;
  size_t coords_checked = 0;
  size_t kinks_skipped = 0;
  bool passed = false;
};

/// Central finite differences of scalar `f` with respect to every tensor in
/// `wrt` (perturbed in place), compared to reverse-mode gradients.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, abs_floor).
/// All tensors in `wrt` must be 64-bit.
GradcheckReport gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
                          const GradcheckOptions& options = {});

}  // namespace hstmrf
