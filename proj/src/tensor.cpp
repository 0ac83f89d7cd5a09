#include "hstmrf/tensor.hpp"

#include <cmath>
#include <sstream>

namespace hstmrf {

std::string_view dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Storage::Storage(DType dtype, size_t n) {
  if (dtype == DType::f32)
    buf_ = std::vector<float>(n, 0.0f);
  else
    buf_ = std::vector<double>(n, 0.0);
}

size_t Storage::size() const {
  return std::visit([](const auto& v) { return v.size(); }, buf_);
}

void Storage::convert(DType dtype) {
  if (dtype == this->dtype()) return;
  if (dtype == DType::f64) {
    const auto& src = std::get<std::vector<float>>(buf_);
    buf_ = std::vector<double>(src.begin(), src.end());
  } else {
    const auto& src = std::get<std::vector<double>>(buf_);
    std::vector<float> dst(src.size());
    for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]);
    buf_ = std::move(dst);
  }
}

void Storage::fill(double value) {
  std::visit(
      [value](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::fill(v.begin(), v.end(), static_cast<T>(value));
      },
      buf_);
}

Storage& TensorImpl::ensure_grad() {
  if (!grad) grad.emplace(data.dtype(), data.size());
  return *grad;
}

namespace {

void validate_shape(const Shape& shape) {
  for (int64_t e : shape)
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

int64_t flat_index(const Shape& shape, std::initializer_list<int64_t> index) {
  if (index.size() != shape.size())
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match shape " +
                     shape_str(shape));
  int64_t flat = 0;
  size_t d = 0;
  for (int64_t i : index) {
    if (i < 0 || i >= shape[d]) throw ShapeError("index out of range for shape " + shape_str(shape));
    flat = flat * shape[d] + i;
    ++d;
  }
  return flat;
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, DType dtype) { return full(shape, 0.0, dtype); }

Tensor Tensor::ones(const Shape& shape, DType dtype) { return full(shape, 1.0, dtype); }

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  validate_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = Storage(dtype, static_cast<size_t>(hstmrf::numel(shape)));
  if (value != 0.0) impl->data.fill(value);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(const Shape& shape, const std::vector<double>& values, DType dtype) {
  if (hstmrf::numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("from_vector: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  Tensor t = zeros(shape, dtype);
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return *impl_;
}

int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[static_cast<size_t>(axis)];
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return to_vector()[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  const int64_t i = flat_index(shape(), index);
  return dispatch(dtype(), [&](auto tag) -> double {
    using T = decltype(tag);
    return data<T>()[static_cast<size_t>(i)];
  });
}

void Tensor::set(std::initializer_list<int64_t> index, double value) {
  const int64_t i = flat_index(shape(), index);
  dispatch(dtype(), [&](auto tag) {
    using T = decltype(tag);
    data<T>()[static_cast<size_t>(i)] = static_cast<T>(value);
  });
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->data = *impl_->grad;
  return Tensor(std::move(impl));
}

std::vector<double> Tensor::grad_vector() const { return grad().to_vector(); }

void Tensor::zero_grad() {
  if (impl().grad) impl().grad->fill(0.0);
}

void Tensor::clear_grad() { impl().grad.reset(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::to(DType dtype) const {
  Tensor t = detach();
  t.impl().data.convert(dtype);
  return t;
}

void Tensor::convert_(DType dtype) {
  impl().data.convert(dtype);
  if (impl().grad) impl().grad->convert(dtype);
}

void Tensor::copy_from(const Tensor& other) {
  if (other.shape() != shape())
    throw ShapeError("copy_from: shape " + shape_str(other.shape()) + " into " +
                     shape_str(shape()));
  const DType keep = dtype();
  impl().data = other.impl().data;
  impl().data.convert(keep);
}

}  // namespace hstmrf
