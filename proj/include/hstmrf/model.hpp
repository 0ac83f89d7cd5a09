#pragma once

#include <memory>

#include "hstmrf/config.hpp"
#include "hstmrf/decoder.hpp"
#include "hstmrf/encoder.hpp"
#include "hstmrf/nn.hpp"

namespace hstmrf {

struct ModelOutput {
  EncoderOutput enc;
  DecoderOutput dec;
};

/// Encoder + decoder with all parameters in one named table.
class HstMrf {
 public:
  HstMrf(const ModelConfig& cfg, uint64_t init_seed);

  ModelOutput forward(const Tensor& image, const ForwardContext& ctx);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return *params_; }
  const ParamStore& params() const { return *params_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ParamStore> params_;
  Encoder encoder_;
  Decoder decoder_;
};

}  // namespace hstmrf
