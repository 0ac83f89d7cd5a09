#include <cmath>

#include "detail/autograd.hpp"
#include "hstmrf/tensor.hpp"

namespace hstmrf {

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local detail::BranchTrace* g_branch_trace = nullptr;
}  // namespace

detail::BranchTrace*& detail::active_branch_trace() { return g_branch_trace; }

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape* tape) : previous_(g_active_tape) { g_active_tape = tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::record(std::string op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  std::shared_ptr<TensorImpl> output, BackwardFn backward) {
  records_.push_back({std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

size_t Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad() || loss.impl().producer != this)
    throw std::logic_error("backward: loss is detached from this tape (op '" + loss.impl().op +
                           "')");

  // Intermediate grads are rebuilt on every pass; leaf grads accumulate.
  for (auto& r : records_) r.output->grad.reset();
  loss.impl().ensure_grad().fill(1.0);

  size_t visited = 0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    ++visited;
    if (!it->output->grad) continue;
    it->backward();
  }
  return visited;
}

size_t backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw std::logic_error("backward: no active tape");
  return tape->backward(loss);
}

namespace detail {

bool wants_grad(const std::vector<Tensor>& inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor& t : inputs)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

Tensor make_output(const Shape& shape, DType dtype) { return Tensor::zeros(shape, dtype); }

void check_finite(const Tensor& t, std::string_view op) {
  const bool ok = dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T v : t.data<T>())
      if (!std::isfinite(v)) return false;
    return true;
  });
  if (!ok)
    throw NumericError("non-finite value produced by op '" + std::string(op) + "' (output shape " +
                       shape_str(t.shape()) + ")");
}

void record(std::string_view op, const std::vector<Tensor>& inputs, Tensor& out,
            Tape::BackwardFn backward) {
  out.impl().op = std::string(op);
  if (!wants_grad(inputs)) return;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  impls.reserve(inputs.size());
  for (const Tensor& t : inputs)
    if (t.defined()) impls.push_back(t.impl_ptr());
  out.impl().requires_grad = true;
  out.impl().producer = g_active_tape;
  g_active_tape->record(std::string(op), std::move(impls), out.impl_ptr(), std::move(backward));
}

void check_same_dtype(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(op) + ": dtype mismatch " + std::string(dtype_name(a.dtype())) +
                     " vs " + std::string(dtype_name(b.dtype())));
}

}  // namespace detail

}  // namespace hstmrf
