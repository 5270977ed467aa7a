#include "kinds.hpp"

namespace layeragg::kinds {

// Stack of `depth` kernel-5 / stride-3 / padding-1 convolutions over the layer
// axis (channels D -> D), gelu between consecutive layers, mean over whatever
// layer positions remain at the end.
//
// Cache layout: saved[2i] is the input of conv i, saved[2i+1] its
// pre-activation output.

TimeFeatures hier_conv_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c) {
  const Index depth = hierconv_plan(p.layers).depth;
  Tensord act = h.values();
  for (Index i = 0; i < depth; ++i) {
    const std::string prefix = "conv" + std::to_string(i);
    Tensord pre = conv1d_layer_axis(act, p.param(prefix + ".kernel"), p.param(prefix + ".bias"),
                                    HierConvSpec::stride, HierConvSpec::padding);
    c.saved.push_back(std::move(act));
    act = (i + 1 < depth) ? gelu(pre) : pre;
    c.saved.push_back(std::move(pre));
  }
  const Index remaining = act.dim(0);
  TimeFeatures z{Tensord({h.frames(), p.dim})};
  auto out = z.values.matrix();
  for (Index q = 0; q < remaining; ++q) out += act.slab(q);
  out /= static_cast<double>(remaining);
  return z;
}

InterfaceGrads hier_conv_backward(const InterfaceParams& p, const ForwardCache& c,
                                  const Tensord& grad_out) {
  const Index depth = hierconv_plan(p.layers).depth;
  InterfaceGrads out{zero_param_grads(p), Tensord()};

  const Tensord& last = c.saved[static_cast<std::size_t>(2 * depth - 1)];
  const Index remaining = last.dim(0);
  Tensord grad(last.shape());
  for (Index q = 0; q < remaining; ++q) {
    grad.slab(q) = grad_out.matrix() / static_cast<double>(remaining);
  }

  for (Index i = depth - 1; i >= 0; --i) {
    const Tensord& input = c.saved[static_cast<std::size_t>(2 * i)];
    const Tensord& pre = c.saved[static_cast<std::size_t>(2 * i + 1)];
    if (i + 1 < depth) grad = gelu_backward(pre, grad);
    const std::string prefix = "conv" + std::to_string(i);
    auto g = conv1d_layer_axis_backward(input, p.param(prefix + ".kernel"), grad,
                                        HierConvSpec::stride, HierConvSpec::padding);
    out.params[static_cast<std::size_t>(2 * i)] = std::move(g.kernels);
    out.params[static_cast<std::size_t>(2 * i + 1)] = std::move(g.bias);
    grad = std::move(g.input);
  }
  out.input = std::move(grad);
  return out;
}

}  // namespace layeragg::kinds
