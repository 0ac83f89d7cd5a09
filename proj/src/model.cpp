#include "hstmrf/model.hpp"

namespace hstmrf {

HstMrf::HstMrf(const ModelConfig& cfg, uint64_t init_seed)
    : cfg_(cfg),
      params_(std::make_unique<ParamStore>(init_seed)),
      encoder_(*params_, cfg),
      decoder_(*params_, cfg) {}

ModelOutput HstMrf::forward(const Tensor& image, const ForwardContext& ctx) {
  if (image.dtype() != params_->dtype())
    throw ShapeError("model: input dtype " + std::string(dtype_name(image.dtype())) +
                     " differs from parameter dtype " + std::string(dtype_name(params_->dtype())));
  ModelOutput out;
  out.enc = encoder_(image, ctx);
  out.dec = decoder_(out.enc, ctx);
  return out;
}

}  // namespace hstmrf
