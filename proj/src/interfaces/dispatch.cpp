#include <string>

#include "kinds.hpp"

namespace layeragg {

TimeFeatures forward(const InterfaceParams& params, const LayerStack& stack, ForwardCache* cache) {
  if (stack.layers() != params.layers || stack.dim() != params.dim) {
    throw DimensionError("interface bound to L=" + std::to_string(params.layers) +
                         " D=" + std::to_string(params.dim) + " got stack " +
                         shape_string(stack.values().shape()));
  }
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c = ForwardCache{};
  c.kind = params.kind();
  c.owner = &params;
  c.revision = params.revision();
  c.frames = stack.frames();
  switch (c.kind) {
    case InterfaceKind::WeightedSum: return kinds::weighted_sum_forward(params, stack, c);
    case InterfaceKind::GroupedWS: return kinds::grouped_ws_forward(params, stack, c);
    case InterfaceKind::ConcatProj: return kinds::concat_proj_forward(params, stack, c);
    case InterfaceKind::HierConv: return kinds::hier_conv_forward(params, stack, c);
    case InterfaceKind::ClsPool: return kinds::cls_pool_forward(params, stack, c);
    case InterfaceKind::PcaConcat: return kinds::pca_concat_forward(params, stack, c);
  }
  throw StateError("unknown interface kind");
}

InterfaceGrads backward(const InterfaceParams& params, const ForwardCache& cache,
                        const Tensord& grad_out) {
  if (cache.owner != &params || cache.kind != params.kind()) {
    throw StateError("backward: cache was produced by different interface params");
  }
  if (cache.revision != params.revision()) {
    throw StateError("backward: cache is stale (parameters changed after forward)");
  }
  require_shape(grad_out, {cache.frames, params.output_dim()}, "interface backward grad_out");
  switch (cache.kind) {
    case InterfaceKind::WeightedSum: return kinds::weighted_sum_backward(params, cache, grad_out);
    case InterfaceKind::GroupedWS: return kinds::grouped_ws_backward(params, cache, grad_out);
    case InterfaceKind::ConcatProj: return kinds::concat_proj_backward(params, cache, grad_out);
    case InterfaceKind::HierConv: return kinds::hier_conv_backward(params, cache, grad_out);
    case InterfaceKind::ClsPool: return kinds::cls_pool_backward(params, cache, grad_out);
    case InterfaceKind::PcaConcat: return kinds::pca_concat_backward(params, cache, grad_out);
  }
  throw StateError("unknown interface kind");
}

}  // namespace layeragg
