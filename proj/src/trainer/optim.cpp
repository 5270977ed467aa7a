#include <cmath>
#include <string>

#include "layeragg/trainer.hpp"

namespace layeragg {

void adam_step(std::vector<NamedTensor>& params, const std::vector<Tensord>& grads,
               AdamState& state, double lr, Index t) {
  if (grads.size() != params.size()) throw DimensionError("adam: gradient count mismatch");
  if (t < 1) throw ConfigError("adam: step count must be >= 1");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(grads[i], params[i].value.shape(), "adam gradient");
    auto g = grads[i].values().array();
    auto m = state.m[i].values().array();
    auto v = state.v[i].values().array();
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.square();
    params[i].value.values().array() -= lr * (m / c1) / ((v / c2).sqrt() + state.eps);
  }
}

void sgd_step(std::vector<NamedTensor>& params, const std::vector<Tensord>& grads, double lr) {
  if (grads.size() != params.size()) throw DimensionError("sgd: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(grads[i], params[i].value.shape(), "sgd gradient");
    params[i].value.values() -= lr * grads[i].values();
  }
}

}  // namespace layeragg
