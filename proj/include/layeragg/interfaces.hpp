#pragma once

// Layer-aggregation interfaces: maps from an upstream layer stack (L, T, D)
// to per-frame features (T, D_out). Every kind acts on each frame
// independently and exposes forward, backward and exact parameter counts.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "layeragg/kernels.hpp"
#include "layeragg/prng.hpp"
#include "layeragg/tensor.hpp"

namespace layeragg {

/// Upstream hidden states of one utterance, shape (L, T, D).
class LayerStack {
 public:
  LayerStack() = default;
  explicit LayerStack(Tensord values);
  LayerStack(Index layers, Index frames, Index dim);

  Index layers() const { return values_.dim(0); }
  Index frames() const { return values_.dim(1); }
  Index dim() const { return values_.dim(2); }

  const Tensord& values() const { return values_; }
  Tensord& values() { return values_; }

  /// Frames of layer l as a (T, D) matrix.
  ConstMatrixMap<double> layer(Index l) const { return values_.slab(l); }
  MatrixMap<double> layer(Index l) { return values_.slab(l); }

 private:
  Tensord values_;
};

/// Interface output, shape (T, D_out).
struct TimeFeatures {
  Tensord values;
  Index frames() const { return values.dim(0); }
  Index dim() const { return values.dim(1); }
};

enum class InterfaceKind { WeightedSum, GroupedWS, ConcatProj, HierConv, ClsPool, PcaConcat };

inline constexpr InterfaceKind kAllInterfaceKinds[] = {
    InterfaceKind::WeightedSum, InterfaceKind::GroupedWS, InterfaceKind::ConcatProj,
    InterfaceKind::HierConv,    InterfaceKind::ClsPool,   InterfaceKind::PcaConcat};

/// CLI name: weighted-sum, group-ws, concat-proj, hier-conv, cls-pool, pca-concat.
std::string_view kind_name(InterfaceKind kind);
InterfaceKind parse_kind(std::string_view name);

enum class Normalize { Softmax, Raw };

struct WeightedSumSpec {
  Normalize normalize = Normalize::Softmax;
};
struct GroupedWsSpec {
  Index num_groups = 2;
};
struct ConcatProjSpec {};
struct HierConvSpec {
  static constexpr Index kernel = 5;
  static constexpr Index stride = 3;
  static constexpr Index padding = 1;
};
struct ClsPoolSpec {
  Index heads = 4;
  std::optional<Index> ffn_dim;  // default round(8D/3), 2048 at D=768
  double ln_eps = 1e-5;
};
struct PcaConcatSpec {
  std::optional<Index> components;  // per layer; default ceil(D/L)
};

using InterfaceSpec =
    std::variant<WeightedSumSpec, GroupedWsSpec, ConcatProjSpec, HierConvSpec, ClsPoolSpec, PcaConcatSpec>;

InterfaceKind kind_of(const InterfaceSpec& spec);

/// Builds a spec with default settings for the kind.
InterfaceSpec default_spec(InterfaceKind kind);

/// Throws ConfigError if the spec cannot be bound to (L, D).
void validate(const InterfaceSpec& spec, Index layers, Index dim);

Index output_dim(const InterfaceSpec& spec, Index layers, Index dim);
Index param_count(const InterfaceSpec& spec, Index layers, Index dim);

Index resolved_ffn_dim(const ClsPoolSpec& spec, Index dim);
Index resolved_components(const PcaConcatSpec& spec, Index layers, Index dim);

/// Contiguous layer groups; earlier groups take the remainder.
struct LayerRange {
  Index begin, size;
};
std::vector<LayerRange> layer_groups(Index layers, Index groups);

struct HierConvPlan {
  Index depth;
  std::vector<Index> extents;  // starts at L, one entry per conv layer after it
};
/// depth = max(1, floor(log3 L)); extents under kernel 5, stride 3, padding 1.
/// Throws DimensionError for L < 3, where the first window is empty.
HierConvPlan hierconv_plan(Index layers);

struct NamedTensor {
  std::string name;
  Tensord value;
};

class InterfaceParams {
 public:
  InterfaceSpec spec;
  Index layers = 0;
  Index dim = 0;
  std::vector<NamedTensor> trainable;  // declaration order
  std::vector<NamedTensor> buffers;    // fitted state (PCA mean and basis)
  bool fitted = false;                 // meaningful for PcaConcat only

  InterfaceKind kind() const { return kind_of(spec); }
  Index output_dim() const { return layeragg::output_dim(spec, layers, dim); }
  Index trainable_count() const;

  const Tensord& param(std::string_view name) const;
  Tensord& param(std::string_view name);
  const Tensord& buffer(std::string_view name) const;

  /// Bumped by every parameter update; forward caches record it.
  std::uint64_t revision() const { return revision_; }
  void touch() { ++revision_; }

 private:
  std::uint64_t revision_ = 0;
};

InterfaceParams init_params(const InterfaceSpec& spec, Index layers, Index dim, Prng& rng);

/// Everything backward needs, stamped with the params it came from.
struct ForwardCache {
  InterfaceKind kind{};
  const InterfaceParams* owner = nullptr;
  std::uint64_t revision = 0;
  Index frames = 0;
  std::vector<Tensord> saved;
  std::vector<LayerNormCache<double>> norms;
};

struct InterfaceGrads {
  std::vector<Tensord> params;  // parallel to InterfaceParams::trainable
  Tensord input;                // (L, T, D)
};

TimeFeatures forward(const InterfaceParams& params, const LayerStack& stack,
                     ForwardCache* cache = nullptr);

/// Exact vector-Jacobian products. Throws StateError when the cache was
/// produced by other params or before the latest parameter update.
InterfaceGrads backward(const InterfaceParams& params, const ForwardCache& cache,
                        const Tensord& grad_out);

/// Streaming PCA statistics for PcaConcat: per-layer mean and population
/// covariance merged batch by batch in call order.
class PcaAccumulator {
 public:
  PcaAccumulator(Index layers, Index dim);
  void add(const LayerStack& stack);
  Index count() const { return count_; }
  Index layers() const { return layers_; }
  Index dim() const { return dim_; }

  /// Per-layer population covariance (denominator N).
  Matrix<double> covariance(Index layer) const;
  const Vector<double>& mean(Index layer) const { return means_[static_cast<std::size_t>(layer)]; }

 private:
  Index layers_, dim_;
  Index count_ = 0;
  std::vector<Vector<double>> means_;
  std::vector<Matrix<double>> scatter_;
};

struct PcaBuffers {
  Tensord mean;    // (L, D)
  Tensord basis;   // (L, D, k), orthonormal columns per layer
  Tensord eigenvalues;  // (L, k), descending
};

PcaBuffers fit_pca(const PcaAccumulator& stats, Index components);
PcaBuffers fit_pca(std::span<const LayerStack> stacks, const PcaConcatSpec& spec, Index layers,
                   Index dim);

/// Installs fitted buffers into PcaConcat params.
void set_pca_buffers(InterfaceParams& params, const PcaBuffers& buffers);

}  // namespace layeragg
