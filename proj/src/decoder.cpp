#include "hstmrf/decoder.hpp"

namespace hstmrf {

Convs::Convs(ParamStore& ps, const std::string& name, int64_t cin, int64_t cout)
    : c1(ps, name + ".conv1", cin, cout, 3, Conv2dOptions{.stride = 1, .dilation = 1, .padding = 1}),
      c2(ps, name + ".conv2", cout, cout, 3, Conv2dOptions{.stride = 1, .dilation = 1, .padding = 1}) {}

Tensor Convs::operator()(const Tensor& x, const ForwardContext& ctx) { return c2(c1(x, ctx), ctx); }

ChannelAttention::ChannelAttention(ParamStore& ps, const std::string& n, int64_t channels, double p,
                                   bool use_maxavg)
    : dropout(p), maxavg(use_maxavg), name(n) {
  if (channels < 2)
    throw ShapeError(n + ": channel attention needs at least 2 channels, got " + std::to_string(channels));
  fc1 = Linear(ps, n + ".fc1", channels, channels / 2);
  fc2 = Linear(ps, n + ".fc2", channels / 2, channels);
}

Tensor ChannelAttention::mlp(const Tensor& v, const ForwardContext& ctx, const std::string& key) const {
  Rng rng = ctx.rng_for(name + key);
  return fc2(hstmrf::dropout(gelu(fc1(v)), dropout, ctx.training, rng));
}

Tensor ChannelAttention::operator()(const Tensor& d, const ForwardContext& ctx, Tensor* beta_out) const {
  const int64_t n = d.dim(0), c = d.dim(1);
  Tensor logits;
  if (maxavg) {
    logits = add(mlp(reshape(global_max_pool(d), {n, c}), ctx, ".drop_max"),
                 mlp(reshape(global_avg_pool(d), {n, c}), ctx, ".drop_avg"));
  } else {
    logits = mlp(reshape(global_softpool(d), {n, c}), ctx, ".drop");
  }
  const Tensor beta = reshape(sigmoid(logits), {n, c, 1, 1});
  if (beta_out) *beta_out = beta;
  return add(d, mul(d, beta));
}

Decoder::Decoder(ParamStore& ps, const ModelConfig& c) : cfg(c) {
  const AblationFlags& f = cfg.ablation;
  for (int t = 1; t <= 5; ++t) {
    const int m = 6 - t;
    const int64_t ch = stage_channels(cfg, m);
    const std::string s = "dec.t" + std::to_string(t);
    int64_t cin = 0;
    if (f.one_rf)
      cin = t == 1 ? ch : 3 * ch;  // [X1; Up(Y)]
    else if (f.no_mbp)
      cin = t == 1 ? 2 * ch : 4 * ch;  // [X1; X2; Up(Y)]
    else
      cin = t == 1 ? ch : 3 * ch;  // [X1*X2; Up(Y)]
    convs[static_cast<size_t>(t - 1)] = Convs(ps, s + (f.no_mbp ? ".skip" : ".mbp"), cin, ch);
    if (!f.no_sca)
      attention.emplace_back(ps, s + (f.maxavg_ca ? ".ca" : ".sca"), ch, cfg.dropout, f.maxavg_ca);
  }
  head = Conv2d(ps, "head.final", cfg.channels, 1, 3, Conv2dOptions{.stride = 1, .dilation = 1, .padding = 1});
  aux1_head = Conv2d(ps, "head.aux1", stage_channels(cfg, 5), 1, 1);
  aux3_head = Conv2d(ps, "head.aux3", stage_channels(cfg, 3), 1, 1);
}

Tensor Decoder::fusion_input(const EncoderOutput& enc, int t, const Tensor& prev) const {
  const int m = 6 - t;
  const AblationFlags& f = cfg.ablation;
  std::vector<Tensor> parts;
  if (f.one_rf) {
    parts.push_back(enc.at(m, 1));
  } else if (f.no_mbp) {
    parts.push_back(enc.at(m, 1));
    parts.push_back(enc.at(m, 2));
  } else {
    const Tensor& a = enc.at(m, 1);
    const Tensor& b = enc.at(m, 2);
    if (a.shape() != b.shape())
      throw ShapeError("mbp: branch shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    parts.push_back(mul(a, b));
  }
  if (t > 1) {
    const Tensor up = upsample2x(prev);
    if (up.dim(2) != parts[0].dim(2) || up.dim(3) != parts[0].dim(3))
      throw ShapeError("mbp: upsampled decoder map " + shape_str(up.shape()) +
                       " does not match encoder map " + shape_str(parts[0].shape()));
    parts.push_back(up);
  }
  return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

DecoderOutput Decoder::operator()(const EncoderOutput& enc, const ForwardContext& ctx) {
  DecoderOutput out;
  const int64_t height = enc.at(1, 1).dim(2), width = enc.at(1, 1).dim(3);
  Tensor prev;
  int t = 1;
  try {
    for (t = 1; t <= 5; ++t) {
      const auto i = static_cast<size_t>(t - 1);
      out.d[i] = convs[i](fusion_input(enc, t, prev), ctx);
      out.y[i] = attention.empty() ? out.d[i] : attention[i](out.d[i], ctx, &out.beta[i]);
      prev = out.y[i];
    }
  } catch (const ShapeError& e) {
    throw ShapeError("decoder stage " + std::to_string(t) + ": " + e.what());
  }
  out.logits = head(out.y[4]);
  out.aux1 = resize_bilinear(aux1_head(out.y[0]), height, width);
  out.aux3 = resize_bilinear(aux3_head(out.y[2]), height, width);
  return out;
}

}  // namespace hstmrf
