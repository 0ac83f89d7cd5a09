#pragma once

#include <array>
#include <string>
#include <vector>

#include "hstmrf/config.hpp"
#include "hstmrf/encoder.hpp"
#include "hstmrf/nn.hpp"

namespace hstmrf {

/// (Conv3x3 -> BN -> ReLU) x 2.
class Convs {
 public:
  Convs() = default;
  Convs(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx);

  ConvBnRelu c1, c2;
};

/// Channel gate: Y = D + beta * D with beta = sigmoid(MLP(descriptor(D))).
/// The descriptor is a global SoftPool, or max + average pooled vectors
/// through a shared MLP when `maxavg`.
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(ParamStore& ps, const std::string& name, int64_t channels, double dropout,
                   bool maxavg);
  /// Returns Y; `beta_out` receives beta as N x Ch x 1 x 1.
  Tensor operator()(const Tensor& d, const ForwardContext& ctx, Tensor* beta_out = nullptr) const;

  Linear fc1, fc2;
  double dropout = 0.0;
  bool maxavg = false;
  std::string name;

 private:
  Tensor mlp(const Tensor& v, const ForwardContext& ctx, const std::string& key) const;
};

struct DecoderOutput {
  std::array<Tensor, 5> d;     // post-fusion, t = 1..5
  std::array<Tensor, 5> y;     // post-attention
  std::array<Tensor, 5> beta;  // undefined under no_sca
  Tensor logits;               // N x 1 x H x W
  Tensor aux1, aux3;           // deep-supervision logits at full resolution
};

class Decoder {
 public:
  Decoder(ParamStore& ps, const ModelConfig& cfg);

  DecoderOutput operator()(const EncoderOutput& enc, const ForwardContext& ctx);

  /// Fusion input of stage t (before Convs).
  Tensor fusion_input(const EncoderOutput& enc, int t, const Tensor& prev) const;

  ModelConfig cfg;
  std::array<Convs, 5> convs;
  std::vector<ChannelAttention> attention;  // empty under no_sca
  Conv2d head, aux1_head, aux3_head;
};

}  // namespace hstmrf
