#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace hstmrf {

enum class DType { f32, f64 };

std::string_view dtype_name(DType dtype);

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown for any shape or argument contract violation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an op produces NaN/Inf. The message names the op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Contiguous buffer of either float or double.
class Storage {
 public:
  Storage() = default;
  Storage(DType dtype, size_t n);

  DType dtype() const { return buf_.index() == 0 ? DType::f32 : DType::f64; }
  size_t size() const;

  template <class T>
  std::span<T> as() {
    return std::get<std::vector<T>>(buf_);
  }
  template <class T>
  std::span<const T> as() const {
    return std::get<std::vector<T>>(buf_);
  }

  void convert(DType dtype);
  void fill(double value);

 private:
  std::variant<std::vector<float>, std::vector<double>> buf_;
};

class Tape;

struct TensorImpl {
  Shape shape;
  Storage data;
  std::optional<Storage> grad;
  bool requires_grad = false;
  // Tape that recorded the op producing this tensor; null for leaves.
  const Tape* producer = nullptr;
  std::string op;

  Storage& ensure_grad();
};

/// Calls f(T{}) with T = float or double according to dtype.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f32) return f(float{});
  return f(double{});
}

/// Dense row-major N-d array with an optional gradient. Copies share storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, DType dtype = DType::f32);
  static Tensor ones(const Shape& shape, DType dtype = DType::f32);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::f32);
  static Tensor from_vector(const Shape& shape, const std::vector<double>& values,
                            DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl().shape; }
  int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(impl().shape.size()); }
  int64_t numel() const { return hstmrf::numel(impl().shape); }
  DType dtype() const { return impl().data.dtype(); }

  template <class T>
  std::span<T> data() {
    return impl().data.as<T>();
  }
  template <class T>
  std::span<const T> data() const {
    const TensorImpl& i = impl();
    return i.data.as<T>();
  }

  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<int64_t> index) const;
  void set(std::initializer_list<int64_t> index, double value);

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return impl().producer == nullptr; }
  bool has_grad() const { return impl().grad.has_value(); }
  /// Detached copy of the gradient; throws if absent.
  Tensor grad() const;
  std::vector<double> grad_vector() const;
  void zero_grad();
  void clear_grad();

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;
  /// Converts storage (and grad) in place; all handles observe the change.
  void convert_(DType dtype);
  /// Overwrites values from another tensor of the same shape.
  void copy_from(const Tensor& other);

  TensorImpl& impl() const;
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of executed differentiable ops. Confined to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string op, std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::shared_ptr<TensorImpl> output, BackwardFn backward);

  /// Seeds d(loss)/d(loss)=1 and replays records in reverse. Returns the
  /// number of records visited.
  size_t backward(const Tensor& loss);

  size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

/// Activates a tape for ops executed on this thread. Nullptr disables recording.
class TapeScope {
 public:
  explicit TapeScope(Tape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Backward through the currently active tape.
size_t backward(const Tensor& loss);

namespace detail {

/// Allocates an output tensor and, when any input requires grad under an
/// active tape, marks it differentiable. Returns whether recording applies.
bool wants_grad(const std::vector<Tensor>& inputs);
Tensor make_output(const Shape& shape, DType dtype);
void check_finite(const Tensor& t, std::string_view op);
/// Registers a backward closure for `out` if recording applies.
void record(std::string_view op, const std::vector<Tensor>& inputs, Tensor& out,
            Tape::BackwardFn backward);
void check_same_dtype(const Tensor& a, const Tensor& b, std::string_view op);

}  // namespace detail

}  // namespace hstmrf
