#include "hstmrf/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace hstmrf {

void ParamStore::insert(const std::string& name, Tensor t, bool trainable) {
  if (find(name) != nullptr) throw std::logic_error("duplicate parameter name '" + name + "'");
  entries_.push_back({name, std::move(t), trainable});
}

Tensor ParamStore::add_parameter(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  insert(name, t, true);
  return t;
}

Tensor ParamStore::add_buffer(const std::string& name, Tensor t) {
  insert(name, t, false);
  return t;
}

std::vector<Tensor> ParamStore::parameters() const {
  std::vector<Tensor> out;
  for (const Entry& e : entries_)
    if (e.trainable) out.push_back(e.tensor);
  return out;
}

std::vector<std::string> ParamStore::names(bool trainable_only) const {
  std::vector<std::string> out;
  for (const Entry& e : entries_)
    if (e.trainable || !trainable_only) out.push_back(e.name);
  return out;
}

const ParamStore::Entry* ParamStore::find(std::string_view name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

int64_t ParamStore::count() const {
  int64_t n = 0;
  for (const Entry& e : entries_)
    if (e.trainable) n += e.tensor.numel();
  return n;
}

void ParamStore::to(DType dtype) {
  for (Entry& e : entries_) e.tensor.convert_(dtype);
}

DType ParamStore::dtype() const { return entries_.empty() ? DType::f32 : entries_[0].tensor.dtype(); }

void ParamStore::zero_grad() {
  for (Entry& e : entries_) e.tensor.clear_grad();
}

namespace {

Tensor truncated_normal_tensor(const ParamStore& ps, const std::string& name, const Shape& shape,
                               double std) {
  Rng rng = ps.init_rng(name);
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.truncated_normal(std);
  return Tensor::from_vector(shape, v);
}

Tensor uniform_tensor(const ParamStore& ps, const std::string& name, const Shape& shape,
                      double bound) {
  Rng rng = ps.init_rng(name);
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_vector(shape, v);
}

}  // namespace

Linear::Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, bool with_bias) {
  weight = ps.add_parameter(name + ".weight",
                            truncated_normal_tensor(ps, name + ".weight", {in, out}, 0.02));
  if (with_bias) bias = ps.add_parameter(name + ".bias", Tensor::zeros({out}));
}

Tensor Linear::operator()(const Tensor& x) const {
  const Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout, int64_t kernel,
               Conv2dOptions o, bool with_bias)
    : opt(o) {
  const double bound = std::sqrt(6.0 / static_cast<double>(cin * kernel * kernel));
  weight = ps.add_parameter(name + ".weight",
                            uniform_tensor(ps, name + ".weight", {cout, cin, kernel, kernel}, bound));
  if (with_bias) bias = ps.add_parameter(name + ".bias", Tensor::zeros({cout}));
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, opt); }

BatchNorm2d::BatchNorm2d(ParamStore& ps, const std::string& name, int64_t channels) {
  gamma = ps.add_parameter(name + ".gamma", Tensor::ones({channels}));
  beta = ps.add_parameter(name + ".beta", Tensor::zeros({channels}));
  state.running_mean = ps.add_buffer(name + ".running_mean", Tensor::zeros({channels}));
  state.running_var = ps.add_buffer(name + ".running_var", Tensor::ones({channels}));
}

Tensor BatchNorm2d::operator()(const Tensor& x, const ForwardContext& ctx) {
  return batchnorm2d(x, gamma, beta, state, ctx.training);
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int64_t dim) {
  gamma = ps.add_parameter(name + ".gamma", Tensor::ones({dim}));
  beta = ps.add_parameter(name + ".beta", Tensor::zeros({dim}));
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layernorm(x, gamma, beta); }

ConvBnRelu::ConvBnRelu(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout,
                       int64_t kernel, Conv2dOptions opt)
    : conv(ps, name + ".conv", cin, cout, kernel, opt), bn(ps, name + ".bn", cout) {}

Tensor ConvBnRelu::operator()(const Tensor& x, const ForwardContext& ctx) {
  return relu(bn(conv(x), ctx));
}

Mlp::Mlp(ParamStore& ps, const std::string& name, int64_t dim, int64_t hidden)
    : fc1(ps, name + ".fc1", dim, hidden), fc2(ps, name + ".fc2", hidden, dim) {}

Tensor Mlp::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

Tensor map_to_tokens(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("map_to_tokens: expected N x C x H x W, got " + shape_str(x.shape()));
  const Tensor t = reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)});
  return permute(t, {0, 2, 1});
}

Tensor tokens_to_map(const Tensor& t, int64_t h, int64_t w) {
  if (t.rank() != 3 || t.dim(1) != h * w)
    throw ShapeError("tokens_to_map: " + shape_str(t.shape()) + " is not a " + std::to_string(h) +
                     "x" + std::to_string(w) + " token grid");
  return reshape(permute(t, {0, 2, 1}), {t.dim(0), t.dim(2), h, w});
}

}  // namespace hstmrf
