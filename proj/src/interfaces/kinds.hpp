#pragma once

// Per-kind forward/backward, dispatched from dispatch.cpp.

#include "layeragg/interfaces.hpp"

namespace layeragg::kinds {

TimeFeatures weighted_sum_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c);
InterfaceGrads weighted_sum_backward(const InterfaceParams& p, const ForwardCache& c,
                                     const Tensord& grad_out);

TimeFeatures grouped_ws_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c);
InterfaceGrads grouped_ws_backward(const InterfaceParams& p, const ForwardCache& c,
                                   const Tensord& grad_out);

TimeFeatures concat_proj_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c);
InterfaceGrads concat_proj_backward(const InterfaceParams& p, const ForwardCache& c,
                                    const Tensord& grad_out);

TimeFeatures hier_conv_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c);
InterfaceGrads hier_conv_backward(const InterfaceParams& p, const ForwardCache& c,
                                  const Tensord& grad_out);

TimeFeatures cls_pool_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c);
InterfaceGrads cls_pool_backward(const InterfaceParams& p, const ForwardCache& c,
                                 const Tensord& grad_out);

TimeFeatures pca_concat_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c);
InterfaceGrads pca_concat_backward(const InterfaceParams& p, const ForwardCache& c,
                                   const Tensord& grad_out);

/// Zero gradients shaped like the trainable tensors.
inline std::vector<Tensord> zero_param_grads(const InterfaceParams& p) {
  std::vector<Tensord> g;
  g.reserve(p.trainable.size());
  for (const auto& t : p.trainable) g.emplace_back(t.value.shape());
  return g;
}

}  // namespace layeragg::kinds
