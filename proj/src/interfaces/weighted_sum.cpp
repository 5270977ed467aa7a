#include "kinds.hpp"

namespace layeragg::kinds {

namespace {

// Layer weights after normalization. Softmax runs over each range
// independently; raw mode returns the weights unchanged.
Vector<double> normalized_weights(const Tensord& w, const std::vector<LayerRange>& ranges,
                                  bool softmax) {
  Vector<double> alpha = w.values();
  if (!softmax) return alpha;
  for (const auto& r : ranges) {
    alpha.segment(r.begin, r.size) =
        softmax_rows(w.values().segment(r.begin, r.size).transpose()).transpose();
  }
  return alpha;
}

Vector<double> normalized_weights_backward(const Vector<double>& alpha,
                                           const Vector<double>& grad_alpha,
                                           const std::vector<LayerRange>& ranges, bool softmax) {
  if (!softmax) return grad_alpha;
  Vector<double> g(alpha.size());
  for (const auto& r : ranges) {
    g.segment(r.begin, r.size) =
        softmax_rows_backward(alpha.segment(r.begin, r.size).transpose(),
                              grad_alpha.segment(r.begin, r.size).transpose())
            .transpose();
  }
  return g;
}

Tensord alpha_tensor(const Vector<double>& alpha) {
  return Tensord({alpha.size()}, alpha);
}

}  // namespace

TimeFeatures weighted_sum_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c) {
  const bool softmax = std::get<WeightedSumSpec>(p.spec).normalize == Normalize::Softmax;
  const Vector<double> alpha =
      normalized_weights(p.param("layer_weights"), {{0, p.layers}}, softmax);
  TimeFeatures z{Tensord({h.frames(), p.dim})};
  auto out = z.values.matrix();
  for (Index l = 0; l < p.layers; ++l) out += alpha[l] * h.layer(l);
  c.saved = {h.values(), alpha_tensor(alpha)};
  return z;
}

InterfaceGrads weighted_sum_backward(const InterfaceParams& p, const ForwardCache& c,
                                     const Tensord& grad_out) {
  const bool softmax = std::get<WeightedSumSpec>(p.spec).normalize == Normalize::Softmax;
  const Tensord& input = c.saved[0];
  const Vector<double>& alpha = c.saved[1].values();
  const auto g = grad_out.matrix();

  InterfaceGrads out{zero_param_grads(p), Tensord(input.shape())};
  Vector<double> grad_alpha(p.layers);
  for (Index l = 0; l < p.layers; ++l) {
    grad_alpha[l] = (g.array() * input.slab(l).array()).sum();
    out.input.slab(l) = alpha[l] * g;
  }
  out.params[0].values() =
      normalized_weights_backward(alpha, grad_alpha, {{0, p.layers}}, softmax);
  return out;
}

// ---------------------------------------------------------------------------
// Grouped weighted sums: per-group softmax-weighted sum, groups concatenated
// along features, then an affine projection (G*D -> D).

TimeFeatures grouped_ws_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c) {
  const Index groups = std::get<GroupedWsSpec>(p.spec).num_groups;
  const auto ranges = layer_groups(p.layers, groups);
  const Vector<double> alpha = normalized_weights(p.param("layer_weights"), ranges, true);
  const Index t = h.frames(), d = p.dim;

  Tensord joined({t, groups * d});
  auto y = joined.matrix();
  for (Index g = 0; g < groups; ++g) {
    const auto& r = ranges[static_cast<std::size_t>(g)];
    auto block = y.middleCols(g * d, d);
    for (Index l = r.begin; l < r.begin + r.size; ++l) block += alpha[l] * h.layer(l);
  }
  TimeFeatures z{Tensord({t, d})};
  z.values.matrix().noalias() = y * p.param("projection").matrix();
  z.values.matrix().rowwise() += p.param("bias").values().transpose();
  c.saved = {h.values(), alpha_tensor(alpha), std::move(joined)};
  return z;
}

InterfaceGrads grouped_ws_backward(const InterfaceParams& p, const ForwardCache& c,
                                   const Tensord& grad_out) {
  const Index groups = std::get<GroupedWsSpec>(p.spec).num_groups;
  const auto ranges = layer_groups(p.layers, groups);
  const Tensord& input = c.saved[0];
  const Vector<double>& alpha = c.saved[1].values();
  const auto y = c.saved[2].matrix();
  const auto g = grad_out.matrix();
  const Index d = p.dim;

  InterfaceGrads out{zero_param_grads(p), Tensord(input.shape())};
  out.params[1].matrix().noalias() = y.transpose() * g;
  out.params[2].values() = g.colwise().sum().transpose();
  const RowMatrix<double> grad_y = g * p.param("projection").matrix().transpose();

  Vector<double> grad_alpha(p.layers);
  for (Index gi = 0; gi < groups; ++gi) {
    const auto& r = ranges[static_cast<std::size_t>(gi)];
    const auto gblock = grad_y.middleCols(gi * d, d);
    for (Index l = r.begin; l < r.begin + r.size; ++l) {
      grad_alpha[l] = (gblock.array() * input.slab(l).array()).sum();
      out.input.slab(l) = alpha[l] * gblock;
    }
  }
  out.params[0].values() = normalized_weights_backward(alpha, grad_alpha, ranges, true);
  return out;
}

}  // namespace layeragg::kinds
