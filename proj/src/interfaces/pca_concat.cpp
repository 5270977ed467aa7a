#include <string>

#include "kinds.hpp"
#include "layeragg/sym_eig.hpp"

namespace layeragg {

namespace kinds {

TimeFeatures pca_concat_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache&) {
  if (!p.fitted) throw StateError("pca-concat: forward before fit_pca");
  const Tensord& mean = p.buffer("pca.mean");
  const Tensord& basis = p.buffer("pca.basis");
  const Index k = basis.dim(2);
  TimeFeatures z{Tensord({h.frames(), p.layers * k})};
  auto out = z.values.matrix();
  for (Index l = 0; l < p.layers; ++l) {
    const RowVector<double> mu = mean.matrix().row(l);
    out.middleCols(l * k, k).noalias() = (h.layer(l).rowwise() - mu) * basis.slab(l);
  }
  return z;
}

InterfaceGrads pca_concat_backward(const InterfaceParams& p, const ForwardCache& c,
                                   const Tensord& grad_out) {
  const Tensord& basis = p.buffer("pca.basis");
  const Index k = basis.dim(2);
  InterfaceGrads out{{}, Tensord({p.layers, c.frames, p.dim})};
  const auto g = grad_out.matrix();
  for (Index l = 0; l < p.layers; ++l) {
    out.input.slab(l).noalias() = g.middleCols(l * k, k) * basis.slab(l).transpose();
  }
  return out;
}

}  // namespace kinds

// ---------------------------------------------------------------------------

PcaAccumulator::PcaAccumulator(Index layers, Index dim) : layers_(layers), dim_(dim) {
  if (layers < 1 || dim < 1) throw ConfigError("pca: L and D must be >= 1");
  means_.assign(static_cast<std::size_t>(layers), Vector<double>::Zero(dim));
  scatter_.assign(static_cast<std::size_t>(layers), Matrix<double>::Zero(dim, dim));
}

// Pairwise merge of (count, mean, centered scatter) per stack; the result is
// deterministic for a fixed stack order.
void PcaAccumulator::add(const LayerStack& stack) {
  if (stack.layers() != layers_ || stack.dim() != dim_) {
    throw DimensionError("pca: stack " + shape_string(stack.values().shape()) +
                         " does not match L=" + std::to_string(layers_) +
                         " D=" + std::to_string(dim_));
  }
  const Index n_b = stack.frames();
  const double n_a = static_cast<double>(count_);
  const double n_ab = n_a + static_cast<double>(n_b);
  for (Index l = 0; l < layers_; ++l) {
    const auto x = stack.layer(l);
    const Vector<double> mean_b = x.colwise().mean().transpose();
    const RowMatrix<double> centered = x.rowwise() - mean_b.transpose();
    auto& mean = means_[static_cast<std::size_t>(l)];
    auto& scatter = scatter_[static_cast<std::size_t>(l)];
    const Vector<double> delta = mean_b - mean;
    scatter.noalias() += centered.transpose() * centered;
    scatter.noalias() += (n_a * static_cast<double>(n_b) / n_ab) * (delta * delta.transpose());
    mean += (static_cast<double>(n_b) / n_ab) * delta;
  }
  count_ += n_b;
}

Matrix<double> PcaAccumulator::covariance(Index layer) const {
  if (count_ == 0) throw DataError("pca: no frames accumulated");
  return scatter_[static_cast<std::size_t>(layer)] / static_cast<double>(count_);
}

PcaBuffers fit_pca(const PcaAccumulator& stats, Index components) {
  const Index layers = stats.layers(), dim = stats.dim();
  if (components < 1 || components > dim) {
    throw ConfigError("pca: components must be in [1, D], got " + std::to_string(components));
  }
  if (stats.count() < components + 1) {
    throw DataError("pca: need at least k+1 = " + std::to_string(components + 1) +
                    " frames, got " + std::to_string(stats.count()));
  }
  PcaBuffers out{Tensord({layers, dim}), Tensord({layers, dim, components}),
                 Tensord({layers, components})};
  for (Index l = 0; l < layers; ++l) {
    const auto eig = sym_eig(stats.covariance(l));
    out.mean.matrix().row(l) = stats.mean(l).transpose();
    out.basis.slab(l) = eig.vectors.leftCols(components);
    out.eigenvalues.matrix().row(l) = eig.values.head(components).transpose();
  }
  return out;
}

PcaBuffers fit_pca(std::span<const LayerStack> stacks, const PcaConcatSpec& spec, Index layers,
                   Index dim) {
  validate(spec, layers, dim);
  PcaAccumulator stats(layers, dim);
  for (const auto& s : stacks) stats.add(s);
  return fit_pca(stats, resolved_components(spec, layers, dim));
}

void set_pca_buffers(InterfaceParams& params, const PcaBuffers& buffers) {
  if (params.kind() != InterfaceKind::PcaConcat) {
    throw StateError("set_pca_buffers: interface is not pca-concat");
  }
  const Index k = resolved_components(std::get<PcaConcatSpec>(params.spec), params.layers,
                                      params.dim);
  require_shape(buffers.mean, {params.layers, params.dim}, "pca mean");
  require_shape(buffers.basis, {params.layers, params.dim, k}, "pca basis");
  params.buffers = {{"pca.mean", buffers.mean}, {"pca.basis", buffers.basis}};
  params.fitted = true;
  params.touch();
}

}  // namespace layeragg
