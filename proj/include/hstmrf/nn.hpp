#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hstmrf/ops.hpp"
#include "hstmrf/rng.hpp"
#include "hstmrf/tensor.hpp"

namespace hstmrf {

/// Per-forward switches. Dropout masks are drawn from a stream keyed by
/// (seed, step, layer name), so a resumed run replays identical masks.
struct ForwardContext {
  bool training = false;
  uint64_t seed = 0;
  int64_t step = 0;

  Rng rng_for(std::string_view name) const {
    return Rng(seed).split(static_cast<uint64_t>(step)).split(name);
  }
};

/// Ordered table of named parameters (trainable) and buffers (running stats).
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
  };

  explicit ParamStore(uint64_t init_seed = 0) : init_seed_(init_seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Tensor add_parameter(const std::string& name, Tensor t);
  Tensor add_buffer(const std::string& name, Tensor t);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> parameters() const;
  std::vector<std::string> names(bool trainable_only = false) const;
  const Entry* find(std::string_view name) const;
  /// Number of trainable scalars.
  int64_t count() const;

  /// Converts every entry in place; modules holding handles see the change.
  void to(DType dtype);
  DType dtype() const;
  void zero_grad();

  /// Initialization stream for one parameter, independent of creation order.
  Rng init_rng(std::string_view name) const { return Rng(init_seed_).split(name); }

 private:
  void insert(const std::string& name, Tensor t, bool trainable);

  uint64_t init_seed_;
  std::vector<Entry> entries_;
};

/// y = x W + b with W stored as [in, out]; x may have any leading dims.
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out, bool bias = true);
  Tensor operator()(const Tensor& x) const;

  Tensor weight, bias;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout, int64_t kernel,
         Conv2dOptions opt = {}, bool bias = true);
  Tensor operator()(const Tensor& x) const;

  Tensor weight, bias;
  Conv2dOptions opt;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& ps, const std::string& name, int64_t channels);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx);

  Tensor gamma, beta;
  BatchNormState state;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int64_t dim);
  Tensor operator()(const Tensor& x) const;

  Tensor gamma, beta;
};

/// Conv -> BN -> ReLU.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout, int64_t kernel,
             Conv2dOptions opt);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx);

  Conv2d conv;
  BatchNorm2d bn;
};

/// Linear -> GELU -> Linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& name, int64_t dim, int64_t hidden);
  Tensor operator()(const Tensor& x) const;

  Linear fc1, fc2;
};

/// N x C x H x W  ->  N x (H*W) x C, row-major over the grid.
Tensor map_to_tokens(const Tensor& x);
/// N x (H*W) x C  ->  N x C x H x W.
Tensor tokens_to_map(const Tensor& t, int64_t h, int64_t w);

}  // namespace hstmrf
