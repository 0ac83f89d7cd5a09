#include "hstmrf/encoder.hpp"

namespace hstmrf {

namespace {

std::string branch_name(const std::string& prefix, int r) { return prefix + ".b" + std::to_string(r); }

}  // namespace

Encoder::Encoder(ParamStore& ps, const ModelConfig& c) : cfg(c) {
  cfg.validate();
  const AblationFlags& f = cfg.ablation;
  branches = f.one_rf ? 1 : 2;
  const int64_t ch = cfg.channels;
  for (int r = 1; r <= branches; ++r) {
    const int dil = r;  // dilation 1 and 2
    stem.emplace_back(ps, branch_name("enc.s1", r), 3, ch, 3,
                      Conv2dOptions{.stride = 1, .dilation = dil, .padding = dil});
    down.emplace_back(ps, branch_name("enc.s2", r), ch, 2 * ch, 2,
                      Conv2dOptions{.stride = 2, .dilation = 1, .padding = 0});
    if (f.no_ape)
      embed_fc.emplace_back(ps, branch_name("enc.s3.flat", r) + ".fc", 8 * ch, 4 * ch);
    else
      embed_fc.emplace_back(ps, branch_name("enc.s3.ape", r) + ".fc", 2 * ch, 4 * ch);
  }
  const bool hetero = branches == 2 && !f.no_hst;
  for (int m = 3; m <= 5; ++m) {
    const std::string s = "enc.s" + std::to_string(m);
    if (m >= 4)
      for (int r = 1; r <= branches; ++r)
        merge[static_cast<size_t>(m - 4)].emplace_back(ps, branch_name(s, r) + ".merge",
                                                       stage_channels(cfg, m - 1));
    for (int64_t i = 0; i < cfg.blocks_per_stage; ++i)
      blocks[static_cast<size_t>(m - 3)].emplace_back(ps, s + ".blk" + std::to_string(i),
                                                      stage_channels(cfg, m), cfg, branches, hetero,
                                                      i % 2 == 1);
  }
}

Tensor Encoder::embed(const Tensor& x2, int branch) const {
  const Linear& fc = embed_fc.at(static_cast<size_t>(branch - 1));
  if (x2.dim(2) % 2 != 0 || x2.dim(3) % 2 != 0)
    throw ShapeError("patch embedding: " + shape_str(x2.shape()) + " is not divisible into 2x2 patches");
  if (!cfg.ablation.no_ape) return fc(map_to_tokens(softpool2d(x2, 2, 2)));
  const int64_t n = x2.dim(0), c = x2.dim(1), h = x2.dim(2) / 2, w = x2.dim(3) / 2;
  const Tensor patches = permute(reshape(x2, {n, c, h, 2, w, 2}), {0, 2, 4, 1, 3, 5});
  return fc(reshape(patches, {n, h * w, c * 4}));
}

EncoderOutput Encoder::operator()(const Tensor& image, const ForwardContext& ctx) {
  if (image.rank() != 4 || image.dim(1) != 3)
    throw ShapeError("encoder: expected N x 3 x H x W input, got " + shape_str(image.shape()));
  const int64_t height = image.dim(2), width = image.dim(3);
  try {
    cfg.validate_input(height, width);
  } catch (const ConfigError& e) {
    throw ShapeError(std::string("encoder: ") + e.what());
  }
  EncoderOutput out;
  int stage = 1;
  try {
    for (int r = 0; r < branches; ++r) out.x[0].push_back(stem[static_cast<size_t>(r)](image, ctx));
    stage = 2;
    for (int r = 0; r < branches; ++r)
      out.x[1].push_back(down[static_cast<size_t>(r)](out.x[0][static_cast<size_t>(r)], ctx));

    std::vector<Tensor> tokens;
    int64_t gh = height / 4, gw = width / 4;
    for (stage = 3; stage <= 5; ++stage) {
      if (stage == 3) {
        for (int r = 0; r < branches; ++r) tokens.push_back(embed(out.x[1][static_cast<size_t>(r)], r + 1));
      } else {
        for (int r = 0; r < branches; ++r)
          tokens[static_cast<size_t>(r)] =
              merge[static_cast<size_t>(stage - 4)][static_cast<size_t>(r)](tokens[static_cast<size_t>(r)], gh, gw);
        gh /= 2;
        gw /= 2;
      }
      for (const HstBlock& blk : blocks[static_cast<size_t>(stage - 3)]) tokens = blk(tokens, gh, gw);
      for (const Tensor& t : tokens) out.x[static_cast<size_t>(stage - 1)].push_back(tokens_to_map(t, gh, gw));
    }
  } catch (const ShapeError& e) {
    throw ShapeError("encoder stage " + std::to_string(stage) + ": " + e.what());
  }
  return out;
}

}  // namespace hstmrf
