#include "hstmrf/gradcheck_suite.hpp"

#include <functional>
#include <stdexcept>

#include "hstmrf/attention.hpp"
#include "hstmrf/decoder.hpp"
#include "hstmrf/losses.hpp"
#include "hstmrf/model.hpp"
#include "hstmrf/ops.hpp"

namespace hstmrf {

GradcheckScope parse_gradcheck_scope(const std::string& name) {
  if (name == "op") return GradcheckScope::op;
  if (name == "block") return GradcheckScope::block;
  if (name == "model") return GradcheckScope::model;
  throw std::invalid_argument("unknown gradcheck scope '" + name + "' (expected op, block or model)");
}

double scope_tolerance(GradcheckScope scope) { return scope == GradcheckScope::op ? 1e-4 : 1e-3; }

namespace {

constexpr DType F64 = DType::f64;

Tensor uniform(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_vector(shape, v, F64);
}

// Uniform magnitude in [0.1, 1] with random sign, clear of the ReLU kink.
Tensor off_zero(Rng& rng, const Shape& shape) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.uniform(0.1, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  return Tensor::from_vector(shape, v, F64);
}

Tensor binary(Rng& rng, const Shape& shape) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (double& x : v) x = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return Tensor::from_vector(shape, v, F64);
}

class Suite {
 public:
  Suite(double tol, double step, size_t max_coords, uint64_t seed)
      : tol_(tol), step_(step), max_coords_(max_coords), seed_(seed) {}

  // Reduces a tensor-valued f to a scalar with fixed random weights.
  void probe(const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& wrt,
             Rng& rng) {
    Shape out_shape;
    {
      TapeScope no_tape(nullptr);
      out_shape = f().shape();
    }
    const Tensor r = uniform(rng, out_shape);
    scalar(name, [f, r] { return sum(mul(f(), r)); }, wrt);
  }

  void scalar(const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& wrt) {
    GradcheckOptions o;
    o.step = step_;
    o.tol = tol_;
    o.max_coords = max_coords_;
    o.seed = seed_;
    GradcheckReport r = gradcheck(f, wrt, o);
    r.target = name;
    reports.push_back(r);
  }

  std::vector<GradcheckReport> reports;

 private:
  double tol_, step_;
  size_t max_coords_;
  uint64_t seed_;
};

void op_targets(Suite& s, uint64_t seed) {
  Rng rng(seed);
  const std::string tag = " [seed " + std::to_string(seed) + "]";
  const auto name = [&](const char* n) { return std::string(n) + tag; };

  {
    Tensor a = uniform(rng, {2, 3, 4}), b = uniform(rng, {2, 3, 4});
    s.probe(name("add"), [=] { return add(a, b); }, {a, b}, rng);
    s.probe(name("sub"), [=] { return sub(a, b); }, {a, b}, rng);
    s.probe(name("mul"), [=] { return mul(a, b); }, {a, b}, rng);
    Tensor d = uniform(rng, {2, 3, 4}, 0.5, 1.5);
    s.probe(name("div"), [=] { return div(a, d); }, {a, d}, rng);
    s.probe(name("scale/add-scalar/rsub"), [=] { return rsub(2.0, add(scale(a, 1.7), 0.3)); }, {a}, rng);
  }
  {
    Tensor x = uniform(rng, {2, 3, 4, 4}), c = uniform(rng, {3, 1, 1}, 0.5, 1.5);
    s.probe(name("mul broadcast per-channel"), [=] { return mul(x, c); }, {x, c}, rng);
    s.probe(name("div broadcast per-channel"), [=] { return div(x, c); }, {x, c}, rng);
  }
  {
    Tensor x = off_zero(rng, {3, 5});
    s.probe(name("relu"), [=] { return relu(x); }, {x}, rng);
    Tensor y = uniform(rng, {3, 5}, -3, 3);
    s.probe(name("gelu"), [=] { return gelu(y); }, {y}, rng);
    s.probe(name("sigmoid"), [=] { return sigmoid(y); }, {y}, rng);
    Tensor t = binary(rng, {3, 5});
    s.probe(name("bce_with_logits"), [=] { return bce_with_logits(y, t); }, {y}, rng);
  }
  {
    Tensor a = uniform(rng, {2, 3, 4}), b = uniform(rng, {2, 4, 5}), w = uniform(rng, {4, 5});
    s.probe(name("matmul batched"), [=] { return matmul(a, b); }, {a, b}, rng);
    s.probe(name("matmul shared rhs"), [=] { return matmul(a, w); }, {a, w}, rng);
  }
  {
    Tensor x = uniform(rng, {2, 3, 6, 6}), w = uniform(rng, {4, 3, 3, 3}), b = uniform(rng, {4});
    s.probe(name("conv2d 3x3 dilation 1"), [=] { return conv2d(x, w, b, {.stride = 1, .dilation = 1, .padding = 1}); },
            {x, w, b}, rng);
    s.probe(name("conv2d 3x3 dilation 2"), [=] { return conv2d(x, w, b, {.stride = 1, .dilation = 2, .padding = 2}); },
            {x, w, b}, rng);
    Tensor w2 = uniform(rng, {4, 3, 2, 2});
    s.probe(name("conv2d 2x2 stride 2"), [=] { return conv2d(x, w2, b, {.stride = 2, .dilation = 1, .padding = 0}); },
            {x, w2, b}, rng);
  }
  {
    Tensor x = uniform(rng, {2, 3, 4, 4}, -2, 2);
    s.probe(name("softpool2d 2x2"), [=] { return softpool2d(x, 2, 2); }, {x}, rng);
    s.probe(name("global_softpool"), [=] { return global_softpool(x); }, {x}, rng);
    s.probe(name("global_avg_pool"), [=] { return global_avg_pool(x); }, {x}, rng);
    s.probe(name("global_max_pool"), [=] { return global_max_pool(x); }, {x}, rng);
    s.probe(name("softmax last axis"), [=] { return softmax(x, -1); }, {x}, rng);
    s.probe(name("softmax axis 1"), [=] { return softmax(x, 1); }, {x}, rng);
  }
  {
    Tensor x = uniform(rng, {3, 2, 3, 3}, -2, 2), g = uniform(rng, {2}, 0.5, 1.5), b = uniform(rng, {2});
    BatchNormState st{Tensor::zeros({2}, F64), Tensor::ones({2}, F64)};
    s.probe(name("batchnorm2d train"), [=]() mutable { return batchnorm2d(x, g, b, st, true); }, {x, g, b}, rng);
    BatchNormState ev{uniform(rng, {2}), uniform(rng, {2}, 0.5, 2.0)};
    s.probe(name("batchnorm2d eval"), [=]() mutable { return batchnorm2d(x, g, b, ev, false); }, {x, g, b}, rng);
    Tensor y = uniform(rng, {2, 5, 6}, -2, 2), lg = uniform(rng, {6}, 0.5, 1.5), lb = uniform(rng, {6});
    s.probe(name("layernorm"), [=] { return layernorm(y, lg, lb); }, {y, lg, lb}, rng);
    const uint64_t dseed = rng.next_u64();
    s.probe(name("dropout"), [=] {
              Rng r(dseed);
              return dropout(y, 0.3, true, r);
            },
            {y}, rng);
  }
  {
    Tensor x = uniform(rng, {1, 2, 3, 3});
    s.probe(name("resize_bilinear 3x3->5x7"), [=] { return resize_bilinear(x, 5, 7); }, {x}, rng);
    s.probe(name("upsample2x"), [=] { return upsample2x(x); }, {x}, rng);
    Tensor y = uniform(rng, {2, 3, 4});
    s.probe(name("reshape/permute/concat/index_select/sum_axis"), [=] {
              const Tensor p = permute(reshape(y, {2, 12, 1}), {2, 0, 1});
              const Tensor c = concat({p, scale(p, 2.0)}, 0);
              return sum_axis(index_select(c, 2, {0, 5, 5, 11}), 1, true);
            },
            {y}, rng);
  }
  {
    LossWeights w;
    w.pool_k = 3;
    Tensor probs = uniform(rng, {1, 1, 4, 4}, 0.05, 0.95);
    Tensor gt4 = binary(rng, {1, 1, 4, 4});
    s.scalar(name("tversky (4x4 soft masks)"), [=] { return tversky_loss_probs(probs, gt4, w.eta, w.gamma); }, {probs});
    Tensor logits = uniform(rng, {2, 1, 8, 8}, -3, 3);
    Tensor gt = binary(rng, {2, 1, 8, 8});
    s.scalar(name("tversky on logits"), [=] { return tversky_loss(logits, gt, w); }, {logits});
    s.scalar(name("weighted_bce"), [=] { return weighted_bce(logits, gt, w); }, {logits});
    s.scalar(name("weighted_iou"), [=] { return weighted_iou(logits, gt, w); }, {logits});
    s.scalar(name("stage_loss"), [=] { return stage_loss(logits, gt, w).total; }, {logits});
    Tensor a1 = uniform(rng, {2, 1, 8, 8}, -3, 3), a3 = uniform(rng, {2, 1, 8, 8}, -3, 3);
    s.scalar(name("total_loss"), [=] { return total_loss(logits, a1, a3, gt, w).total; }, {logits, a1, a3});
  }
}

std::vector<Tensor> with(std::vector<Tensor> params, const std::vector<Tensor>& extra) {
  params.insert(params.end(), extra.begin(), extra.end());
  return params;
}

void block_targets(Suite& s, uint64_t seed) {
  Rng rng(seed);
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.hidden_dim = 8;
  cfg.heads = 2;
  cfg.window = 4;
  {
    ParamStore ps(seed);
    HstBlock w(ps, "w", 8, cfg, 2, true, false), sw(ps, "sw", 8, cfg, 2, true, true);
    ps.to(F64);
    Tensor t1 = uniform(rng, {1, 64, 8}), t2 = uniform(rng, {1, 64, 8});
    s.probe("HST block pair (W-HMSA, SW-HMSA), 1x8x8x8",
            [=] {
              const auto o = sw(w({t1, t2}, 8, 8), 8, 8);
              return concat(o, 2);
            },
            with(ps.parameters(), {t1, t2}), rng);
  }
  {
    ParamStore ps(seed + 1);
    HstBlock w(ps, "w", 8, cfg, 2, false, false), sw(ps, "sw", 8, cfg, 2, false, true);
    ps.to(F64);
    Tensor t1 = uniform(rng, {1, 64, 8}), t2 = uniform(rng, {1, 64, 8});
    s.probe("independent Swin block pair, 1x8x8x8",
            [=] { return concat(sw(w({t1, t2}, 8, 8), 8, 8), 2); }, with(ps.parameters(), {t1, t2}), rng);
  }
  {
    ParamStore ps(seed + 2);
    PatchMerging pm(ps, "pm", 4);
    ps.to(F64);
    Tensor t = uniform(rng, {2, 16, 4});
    s.probe("patch merging", [=] { return pm(t, 4, 4); }, with(ps.parameters(), {t}), rng);
  }
  {
    ParamStore ps(seed + 3);
    Linear fc(ps, "fc", 4, 8);
    ps.to(F64);
    Tensor x = uniform(rng, {2, 4, 4, 4}, -2, 2);
    s.probe("adaptive patch embedding", [=] { return fc(map_to_tokens(softpool2d(x, 2, 2))); },
            with(ps.parameters(), {x}), rng);
  }
  {
    ParamStore ps(seed + 4);
    ChannelAttention sca(ps, "sca", 8, 0.5, false), ca(ps, "ca", 8, 0.5, true);
    ps.to(F64);
    Tensor d = uniform(rng, {2, 8, 4, 4}, -2, 2);
    const ForwardContext ctx{.training = true, .seed = seed, .step = 1};
    s.probe("soft channel attention", [=] { return sca(d, ctx); },
            {sca.fc1.weight, sca.fc1.bias, sca.fc2.weight, sca.fc2.bias, d}, rng);
    s.probe("max+avg channel attention", [=] { return ca(d, ctx); },
            {ca.fc1.weight, ca.fc1.bias, ca.fc2.weight, ca.fc2.bias, d}, rng);
  }
  {
    ParamStore ps(seed + 5);
    Convs convs(ps, "mbp", 12, 4);
    ps.to(F64);
    Tensor x1 = uniform(rng, {2, 4, 4, 4}), x2 = uniform(rng, {2, 4, 4, 4}), y = uniform(rng, {2, 8, 2, 2});
    const ForwardContext ctx{.training = true};
    s.probe("MBP fusion stage (Hadamard, upsample, Convs)",
            [=]() mutable { return convs(concat({mul(x1, x2), upsample2x(y)}, 1), ctx); },
            with(ps.parameters(), {x1, x2, y}), rng);
  }
  {
    ParamStore ps(seed + 6);
    Conv2d head(ps, "head", 4, 1, 3, {.stride = 1, .dilation = 1, .padding = 1});
    Conv2d deep(ps, "deep", 8, 1, 1);
    ps.to(F64);
    Tensor y = uniform(rng, {1, 4, 8, 8}), y1 = uniform(rng, {1, 8, 2, 2});
    s.probe("prediction head", [=] { return head(y); }, with({head.weight, head.bias}, {y}), rng);
    s.probe("deep-supervision head", [=] { return resize_bilinear(deep(y1), 8, 8); },
            with({deep.weight, deep.bias}, {y1}), rng);
  }
}

void model_targets(Suite& s, uint64_t seed) {
  Rng rng(seed);
  ModelConfig cfg;
  cfg.channels = 4;
  cfg.hidden_dim = 8;
  cfg.heads = 2;
  cfg.window = 2;
  cfg.dropout = 0.0;
  auto model = std::make_shared<HstMrf>(cfg, seed);
  model->params().to(F64);
  Tensor image = uniform(rng, {2, 3, 32, 32}, 0.0, 1.0);
  Tensor gt = binary(rng, {2, 1, 32, 32});
  LossWeights w;
  w.pool_k = 5;
  s.scalar("full model end-to-end (C=4, 32x32, window 2)", [=] {
             const ModelOutput o = model->forward(image, {.training = true, .seed = seed, .step = 1});
             return total_loss(o.dec.logits, o.dec.aux1, o.dec.aux3, gt, w).total;
           },
           with(model->params().parameters(), {image}));
}

}  // namespace

std::vector<GradcheckReport> run_gradcheck_suite(GradcheckScope scope, uint64_t seed, int seeds) {
  switch (scope) {
    case GradcheckScope::op: {
      Suite s(scope_tolerance(scope), 1e-4, 0, seed);
      for (int k = 0; k < seeds; ++k) op_targets(s, seed + static_cast<uint64_t>(k));
      return s.reports;
    }
    case GradcheckScope::block: {
      Suite s(scope_tolerance(scope), 1e-4, 400, seed);
      block_targets(s, seed);
      return s.reports;
    }
    case GradcheckScope::model: {
      Suite s(scope_tolerance(scope), 1e-5, 400, seed);
      model_targets(s, seed);
      return s.reports;
    }
  }
  return {};
}

}  // namespace hstmrf
