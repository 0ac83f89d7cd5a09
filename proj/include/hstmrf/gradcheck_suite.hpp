#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hstmrf/gradcheck.hpp"

namespace hstmrf {

enum class GradcheckScope { op, block, model };

GradcheckScope parse_gradcheck_scope(const std::string& name);

/// Tolerance applied at each scope: 1e-4 for primitives and losses, 1e-3 for
/// composite blocks and the full model.
double scope_tolerance(GradcheckScope scope);

/// Runs every target of `scope` in 64-bit mode. The op scope repeats each
/// target for `seeds` consecutive seeds starting at `seed`.
std::vector<GradcheckReport> run_gradcheck_suite(GradcheckScope scope, uint64_t seed, int seeds = 5);

}  // namespace hstmrf
