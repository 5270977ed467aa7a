#include "kinds.hpp"

namespace layeragg::kinds {

namespace {

// (L, T, D) -> (T, L*D) with layer-major feature order.
RowMatrix<double> concat_layers(const LayerStack& h) {
  const Index d = h.dim();
  RowMatrix<double> x(h.frames(), h.layers() * d);
  for (Index l = 0; l < h.layers(); ++l) x.middleCols(l * d, d) = h.layer(l);
  return x;
}

}  // namespace

TimeFeatures concat_proj_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c) {
  const RowMatrix<double> x = concat_layers(h);
  TimeFeatures z{Tensord({h.frames(), p.dim})};
  z.values.matrix().noalias() = x * p.param("projection").matrix();
  z.values.matrix().rowwise() += p.param("bias").values().transpose();
  c.saved = {Tensord::from_matrix(x)};
  return z;
}

InterfaceGrads concat_proj_backward(const InterfaceParams& p, const ForwardCache& c,
                                    const Tensord& grad_out) {
  const auto x = c.saved[0].matrix();
  const auto g = grad_out.matrix();
  const Index d = p.dim;

  InterfaceGrads out{zero_param_grads(p), Tensord({p.layers, c.frames, d})};
  out.params[0].matrix().noalias() = x.transpose() * g;
  out.params[1].values() = g.colwise().sum().transpose();
  const RowMatrix<double> grad_x = g * p.param("projection").matrix().transpose();
  for (Index l = 0; l < p.layers; ++l) out.input.slab(l) = grad_x.middleCols(l * d, d);
  return out;
}

}  // namespace layeragg::kinds
