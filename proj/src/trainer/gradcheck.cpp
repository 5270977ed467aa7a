#include <algorithm>

#include "layeragg/finite_diff.hpp"
#include "layeragg/trainer.hpp"

namespace layeragg {

namespace {

constexpr Index kClasses = 3;

InterfaceSpec gradcheck_spec(InterfaceKind kind, Index layers, Index dim) {
  switch (kind) {
    case InterfaceKind::GroupedWS: return GroupedWsSpec{std::min<Index>(2, layers)};
    case InterfaceKind::ClsPool: {
      ClsPoolSpec s;
      s.heads = dim % 4 == 0 ? 4 : 1;
      return s;
    }
    default: return default_spec(kind);
  }
}

}  // namespace

GradcheckCase gradcheck_case(const InterfaceSpec& spec, HeadKind head, std::uint64_t seed,
                             const GradcheckOptions& opt) {
  const Index layers = opt.layers, frames = opt.frames, dim = opt.dim;
  Prng rng(seed);
  LayerStack stack(rng.normal_tensor({layers, frames, dim}));

  Model model{init_params(spec, layers, dim, rng), {}};
  // move off the symmetric initial point (zero logits, unit gains, zero biases)
  for (auto& t : model.interface.trainable) {
    for (Index i = 0; i < t.value.size(); ++i) t.value[i] += 0.1 * rng.normal();
  }
  if (model.interface.kind() == InterfaceKind::PcaConcat) {
    std::vector<LayerStack> fit;
    for (int i = 0; i < 4; ++i) fit.emplace_back(rng.normal_tensor({layers, frames, dim}));
    set_pca_buffers(model.interface, fit_pca(fit, std::get<PcaConcatSpec>(spec), layers, dim));
  }
  model.head = init_head({head, model.interface.output_dim(), kClasses, 0}, rng);
  for (auto& t : model.head.trainable) {
    for (Index i = 0; i < t.value.size(); ++i) t.value[i] += 0.1 * rng.normal();
  }
  std::vector<int> labels(head == HeadKind::Frame ? static_cast<std::size_t>(frames) : 1);
  for (auto& y : labels) y = static_cast<int>(rng.below(kClasses));

  auto objective = [&]() {
    const TimeFeatures z = forward(model.interface, stack);
    return ce_loss_grad(head_forward(model.head, z), labels).loss;
  };

  ForwardCache fc;
  HeadCache hc;
  const TimeFeatures z = forward(model.interface, stack, &fc);
  const LossGrad lg = ce_loss_grad(head_forward(model.head, z, &hc), labels);
  const HeadGrads hg = head_backward(model.head, hc, lg.grad);
  const InterfaceGrads ig = opt.backward_override
                                ? opt.backward_override(model.interface, fc, hg.input)
                                : backward(model.interface, fc, hg.input);

  GradcheckCase result{kind_of(spec), head, seed};
  auto check = [&](Tensord& x, const Tensord& analytic) {
    if (analytic.shape() != x.shape()) {
      result.max_param_error = std::max(result.max_param_error, 1.0);
      return 1.0;
    }
    const Tensord numeric = finite_diff_grad([&](const Tensord&) { return objective(); }, x, opt.step);
    result.coordinates += x.size();
    return max_relative_error(analytic, numeric);
  };

  if (ig.params.size() != model.interface.trainable.size()) {
    result.max_param_error = 1.0;
  } else {
    for (std::size_t i = 0; i < ig.params.size(); ++i) {
      result.max_param_error =
          std::max(result.max_param_error, check(model.interface.trainable[i].value, ig.params[i]));
    }
  }
  for (std::size_t i = 0; i < hg.params.size(); ++i) {
    result.max_param_error =
        std::max(result.max_param_error, check(model.head.trainable[i].value, hg.params[i]));
  }
  result.max_input_error = check(stack.values(), ig.input);
  result.passed = result.max_param_error <= opt.tolerance && result.max_input_error <= opt.tolerance;
  return result;
}

std::vector<GradcheckCase> gradcheck_suite(const std::vector<InterfaceKind>& kinds,
                                           const std::vector<HeadKind>& heads,
                                           const std::vector<std::uint64_t>& seeds,
                                           const GradcheckOptions& options) {
  std::vector<GradcheckCase> out;
  for (InterfaceKind kind : kinds) {
    if (kind == InterfaceKind::HierConv && options.layers < 3) {
      throw ConfigError("gradcheck: hier-conv needs L >= 3");
    }
    const InterfaceSpec spec = gradcheck_spec(kind, options.layers, options.dim);
    for (HeadKind head : heads) {
      for (std::uint64_t seed : seeds) out.push_back(gradcheck_case(spec, head, seed, options));
    }
  }
  return out;
}

}  // namespace layeragg
