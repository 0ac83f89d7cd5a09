#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "hstmrf/tensor.hpp"

namespace hstmrf::detail {

using ImplPtr = std::shared_ptr<TensorImpl>;

template <class T>
std::span<const T> values(const ImplPtr& p) {
  const TensorImpl& impl = *p;
  return impl.data.as<T>();
}

/// Upstream gradient of a recorded output.
template <class T>
std::span<const T> upstream(const ImplPtr& p) {
  const Storage& g = *p->grad;
  return g.as<T>();
}

/// Gradient accumulator of an input; allocated zeroed on first use.
template <class T>
std::span<T> accum(const ImplPtr& p) {
  return p->ensure_grad().as<T>();
}

/// Branch choices made by non-smooth ops (ReLU signs, max indices), folded
/// into a hash while a trace is installed. Gradient checks use it to notice
/// when a finite-difference step crossed a kink.
struct BranchTrace {
  uint64_t hash = 0;
};
BranchTrace*& active_branch_trace();

inline void trace_branch(uint64_t v) {
  if (BranchTrace* t = active_branch_trace()) {
    uint64_t z = t->hash ^ (v + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    t->hash = z ^ (z >> 31);
  }
}

inline bool needs_grad(const ImplPtr& p) { return p && p->requires_grad; }

inline int normalize_axis(int axis, int rank, std::string_view op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " +
                     std::to_string(rank));
  return a;
}

}  // namespace hstmrf::detail
