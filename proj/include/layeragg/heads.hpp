#pragma once

// Downstream prediction heads and the cross-entropy objective used on top of
// an interface. Heads are deliberately small: linear by default, with an
// optional single hidden layer for parameter-matched comparisons.

#include <span>
#include <string_view>
#include <vector>

#include "layeragg/interfaces.hpp"

namespace layeragg {

enum class HeadKind { Frame, Utterance };

std::string_view head_kind_name(HeadKind kind);
HeadKind parse_head_kind(std::string_view name);

struct HeadSpec {
  HeadKind kind = HeadKind::Utterance;
  Index input_dim = 0;
  Index num_classes = 2;
  Index hidden = 0;  // 0: linear head; otherwise D_in -> hidden -> gelu -> C
};

void validate(const HeadSpec& spec);
Index param_count(const HeadSpec& spec);

struct HeadParams {
  HeadSpec spec;
  std::vector<NamedTensor> trainable;  // weight, bias  |  w1, b1, w2, b2

  Index trainable_count() const;
};

HeadParams init_head(const HeadSpec& spec, Prng& rng);

struct HeadCache {
  Tensord input;   // (T, D_in)
  Tensord pooled;  // (rows, D_in): the input for frame heads, its mean over T otherwise
  Tensord hidden_pre;
  Tensord hidden_act;
};

/// Frame heads emit (T, C) logits; utterance heads mean-pool over T first and
/// emit (1, C).
Tensord head_forward(const HeadParams& params, const TimeFeatures& z, HeadCache* cache = nullptr);

struct HeadGrads {
  std::vector<Tensord> params;
  Tensord input;  // (T, D_in)
};

HeadGrads head_backward(const HeadParams& params, const HeadCache& cache,
                        const Tensord& grad_logits);

struct LossGrad {
  double loss = 0;
  Tensord grad;  // d loss / d logits
};

/// Mean softmax cross-entropy over the rows of logits (N, C). Throws
/// DataError on a label outside [0, C).
LossGrad ce_loss_grad(const Tensord& logits, std::span<const int> labels);

/// Fraction of rows whose argmax equals the label; ties go to the lowest class.
double accuracy(const Tensord& logits, std::span<const int> labels);

/// Index of the row maximum, first occurrence on ties.
Index argmax_row(const Tensord& logits, Index row);

}  // namespace layeragg
