#pragma once

#include <array>
#include <vector>

#include "hstmrf/attention.hpp"
#include "hstmrf/config.hpp"
#include "hstmrf/nn.hpp"

namespace hstmrf {

/// Stage maps X^r_m as N x Ch x H x W, indexed [m-1][r-1]. Under one_rf only
/// branch 1 is present.
struct EncoderOutput {
  std::array<std::vector<Tensor>, 5> x;

  const Tensor& at(int stage, int branch) const {
    return x.at(static_cast<size_t>(stage - 1)).at(static_cast<size_t>(branch - 1));
  }
  int branches() const { return static_cast<int>(x[0].size()); }
};

/// Channel count of encoder stage m (1-based): C * 2^(m-1).
inline int64_t stage_channels(const ModelConfig& cfg, int stage) {
  return cfg.channels << (stage - 1);
}

class Encoder {
 public:
  Encoder(ParamStore& ps, const ModelConfig& cfg);

  EncoderOutput operator()(const Tensor& image, const ForwardContext& ctx);

  /// Patch embedding of stage-2 maps: [N, 2C, h, w] -> tokens [N, h/2 * w/2, 4C].
  Tensor embed(const Tensor& x2, int branch) const;

  ModelConfig cfg;
  int branches = 2;
  std::vector<ConvBnRelu> stem, down;
  std::vector<Linear> embed_fc;
  std::array<std::vector<HstBlock>, 3> blocks;          // stages 3..5
  std::array<std::vector<PatchMerging>, 2> merge;       // stages 4..5, per branch
};

}  // namespace hstmrf
