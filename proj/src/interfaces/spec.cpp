#include <algorithm>
#include <cmath>
#include <string>

#include "layeragg/interfaces.hpp"

namespace layeragg {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_positive(Index layers, Index dim) {
  if (layers < 1 || dim < 1) {
    throw ConfigError("interface needs L >= 1 and D >= 1, got L=" + std::to_string(layers) +
                      " D=" + std::to_string(dim));
  }
}

}  // namespace

std::string_view kind_name(InterfaceKind kind) {
  switch (kind) {
    case InterfaceKind::WeightedSum: return "weighted-sum";
    case InterfaceKind::GroupedWS: return "group-ws";
    case InterfaceKind::ConcatProj: return "concat-proj";
    case InterfaceKind::HierConv: return "hier-conv";
    case InterfaceKind::ClsPool: return "cls-pool";
    case InterfaceKind::PcaConcat: return "pca-concat";
  }
  return "unknown";
}

InterfaceKind parse_kind(std::string_view name) {
  for (InterfaceKind k : kAllInterfaceKinds) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown interface '" + std::string(name) + "'");
}

InterfaceKind kind_of(const InterfaceSpec& spec) {
  return std::visit(overloaded{
                        [](const WeightedSumSpec&) { return InterfaceKind::WeightedSum; },
                        [](const GroupedWsSpec&) { return InterfaceKind::GroupedWS; },
                        [](const ConcatProjSpec&) { return InterfaceKind::ConcatProj; },
                        [](const HierConvSpec&) { return InterfaceKind::HierConv; },
                        [](const ClsPoolSpec&) { return InterfaceKind::ClsPool; },
                        [](const PcaConcatSpec&) { return InterfaceKind::PcaConcat; },
                    },
                    spec);
}

InterfaceSpec default_spec(InterfaceKind kind) {
  switch (kind) {
    case InterfaceKind::WeightedSum: return WeightedSumSpec{};
    case InterfaceKind::GroupedWS: return GroupedWsSpec{};
    case InterfaceKind::ConcatProj: return ConcatProjSpec{};
    case InterfaceKind::HierConv: return HierConvSpec{};
    case InterfaceKind::ClsPool: return ClsPoolSpec{};
    case InterfaceKind::PcaConcat: return PcaConcatSpec{};
  }
  throw ConfigError("unknown interface kind");
}

Index resolved_ffn_dim(const ClsPoolSpec& spec, Index dim) {
  if (spec.ffn_dim) return *spec.ffn_dim;
  return static_cast<Index>(std::llround(8.0 * static_cast<double>(dim) / 3.0));
}

Index resolved_components(const PcaConcatSpec& spec, Index layers, Index dim) {
  if (spec.components) return *spec.components;
  return (dim + layers - 1) / layers;
}

HierConvPlan hierconv_plan(Index layers) {
  if (layers < 1) throw ConfigError("hier-conv needs L >= 1");
  Index depth = 0;
  for (Index n = layers; n >= 3; n /= 3) ++depth;
  depth = std::max<Index>(1, depth);
  HierConvPlan plan{depth, {layers}};
  for (Index i = 0; i < depth; ++i) {
    const Index next = conv_output_length(plan.extents.back(), HierConvSpec::kernel,
                                          HierConvSpec::stride, HierConvSpec::padding);
    if (next < 1) {
      throw DimensionError("hier-conv: layer extent collapses to " + std::to_string(next) +
                           " for L=" + std::to_string(layers));
    }
    plan.extents.push_back(next);
  }
  return plan;
}

std::vector<LayerRange> layer_groups(Index layers, Index groups) {
  if (groups < 1 || groups > layers) {
    throw ConfigError("group-ws needs 1 <= G <= L, got G=" + std::to_string(groups) +
                      " L=" + std::to_string(layers));
  }
  std::vector<LayerRange> out;
  const Index base = layers / groups, extra = layers % groups;
  Index begin = 0;
  for (Index g = 0; g < groups; ++g) {
    const Index size = base + (g < extra ? 1 : 0);
    out.push_back({begin, size});
    begin += size;
  }
  return out;
}

void validate(const InterfaceSpec& spec, Index layers, Index dim) {
  require_positive(layers, dim);
  std::visit(overloaded{
                 [](const WeightedSumSpec&) {},
                 [&](const GroupedWsSpec& s) { layer_groups(layers, s.num_groups); },
                 [](const ConcatProjSpec&) {},
                 [&](const HierConvSpec&) {
                   if (layers < 3) {
                     throw ConfigError("hier-conv needs L >= 3, got L=" + std::to_string(layers));
                   }
                 },
                 [&](const ClsPoolSpec& s) {
                   if (s.heads < 1 || dim % s.heads != 0) {
                     throw ConfigError("cls-pool: heads (" + std::to_string(s.heads) +
                                       ") must divide D (" + std::to_string(dim) + ")");
                   }
                   if (resolved_ffn_dim(s, dim) < 1) throw ConfigError("cls-pool: ffn dim must be >= 1");
                   if (!(s.ln_eps > 0)) throw ConfigError("cls-pool: layer-norm eps must be > 0");
                 },
                 [&](const PcaConcatSpec& s) {
                   const Index k = resolved_components(s, layers, dim);
                   if (k < 1 || k > dim) {
                     throw ConfigError("pca-concat: components per layer must be in [1, D], got " +
                                       std::to_string(k));
                   }
                 },
             },
             spec);
}

Index output_dim(const InterfaceSpec& spec, Index layers, Index dim) {
  validate(spec, layers, dim);
  if (const auto* pca = std::get_if<PcaConcatSpec>(&spec)) {
    return layers * resolved_components(*pca, layers, dim);
  }
  return dim;
}

Index param_count(const InterfaceSpec& spec, Index layers, Index dim) {
  validate(spec, layers, dim);
  const Index d2 = dim * dim;
  return std::visit(
      overloaded{
          [&](const WeightedSumSpec&) { return layers; },
          [&](const GroupedWsSpec& s) { return layers + s.num_groups * d2 + dim; },
          [&](const ConcatProjSpec&) { return layers * d2 + dim; },
          [&](const HierConvSpec&) {
            return hierconv_plan(layers).depth * (HierConvSpec::kernel * d2 + dim);
          },
          [&](const ClsPoolSpec& s) {
            const Index f = resolved_ffn_dim(s, dim);
            return dim + (4 * d2 + 4 * dim) + (2 * dim * f + f + dim) + 4 * dim;
          },
          [](const PcaConcatSpec&) { return Index{0}; },
      },
      spec);
}

// ---------------------------------------------------------------------------

LayerStack::LayerStack(Tensord values) : values_(std::move(values)) {
  if (values_.rank() != 3) {
    throw DimensionError("layer stack must be rank 3 (L, T, D), got " +
                         shape_string(values_.shape()));
  }
  if (!values_.all_finite()) throw DataError("layer stack contains non-finite values");
}

LayerStack::LayerStack(Index layers, Index frames, Index dim)
    : values_(Shape{layers, frames, dim}) {}

Index InterfaceParams::trainable_count() const {
  Index n = 0;
  for (const auto& t : trainable) n += t.value.size();
  return n;
}

const Tensord& InterfaceParams::param(std::string_view name) const {
  for (const auto& t : trainable) {
    if (t.name == name) return t.value;
  }
  throw StateError("no trainable tensor named '" + std::string(name) + "'");
}

Tensord& InterfaceParams::param(std::string_view name) {
  return const_cast<Tensord&>(std::as_const(*this).param(name));
}

const Tensord& InterfaceParams::buffer(std::string_view name) const {
  for (const auto& t : buffers) {
    if (t.name == name) return t.value;
  }
  throw StateError("no buffer named '" + std::string(name) + "'");
}

InterfaceParams init_params(const InterfaceSpec& spec, Index layers, Index dim, Prng& rng) {
  validate(spec, layers, dim);
  InterfaceParams p;
  p.spec = spec;
  p.layers = layers;
  p.dim = dim;

  auto add = [&](std::string name, Shape shape) -> Tensord& {
    p.trainable.push_back({std::move(name), Tensord(std::move(shape))});
    return p.trainable.back().value;
  };
  // normal(0, 1/fan_in): variance 1/fan_in
  auto add_weight = [&](std::string name, Shape shape, Index fan_in) {
    Tensord& t = add(std::move(name), std::move(shape));
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index i = 0; i < t.size(); ++i) t[i] = sd * rng.normal();
  };

  std::visit(overloaded{
                 [&](const WeightedSumSpec&) { add("layer_weights", {layers}); },
                 [&](const GroupedWsSpec& s) {
                   add("layer_weights", {layers});
                   add_weight("projection", {s.num_groups * dim, dim}, s.num_groups * dim);
                   add("bias", {dim});
                 },
                 [&](const ConcatProjSpec&) {
                   add_weight("projection", {layers * dim, dim}, layers * dim);
                   add("bias", {dim});
                 },
                 [&](const HierConvSpec&) {
                   const Index depth = hierconv_plan(layers).depth;
                   for (Index i = 0; i < depth; ++i) {
                     const std::string prefix = "conv" + std::to_string(i);
                     add_weight(prefix + ".kernel", {HierConvSpec::kernel, dim, dim},
                                HierConvSpec::kernel * dim);
                     add(prefix + ".bias", {dim});
                   }
                 },
                 [&](const ClsPoolSpec& s) {
                   const Index f = resolved_ffn_dim(s, dim);
                   Tensord& cls = add("cls", {dim});
                   for (Index i = 0; i < dim; ++i) cls[i] = 0.02 * rng.normal();
                   for (const char* w : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
                     add_weight(std::string(w) + ".weight", {dim, dim}, dim);
                     add(std::string(w) + ".bias", {dim});
                   }
                   add("ln1.gamma", {dim}).values().setOnes();
                   add("ln1.beta", {dim});
                   add_weight("ffn.w1", {dim, f}, dim);
                   add("ffn.b1", {f});
                   add_weight("ffn.w2", {f, dim}, f);
                   add("ffn.b2", {dim});
                   add("ln2.gamma", {dim}).values().setOnes();
                   add("ln2.beta", {dim});
                 },
                 [&](const PcaConcatSpec& s) {
                   const Index k = resolved_components(s, layers, dim);
                   p.buffers.push_back({"pca.mean", Tensord({layers, dim})});
                   p.buffers.push_back({"pca.basis", Tensord({layers, dim, k})});
                 },
             },
             spec);
  return p;
}

}  // namespace layeragg
