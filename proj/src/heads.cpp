#include "layeragg/heads.hpp"

#include <cmath>
#include <string>

namespace layeragg {

std::string_view head_kind_name(HeadKind kind) {
  return kind == HeadKind::Frame ? "frame" : "utterance";
}

HeadKind parse_head_kind(std::string_view name) {
  if (name == "frame") return HeadKind::Frame;
  if (name == "utterance") return HeadKind::Utterance;
  throw ConfigError("unknown head kind '" + std::string(name) + "'");
}

void validate(const HeadSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("head needs at least 2 classes");
  if (spec.input_dim < 1) throw ConfigError("head input dim must be >= 1");
  if (spec.hidden < 0) throw ConfigError("head hidden width must be >= 0");
}

Index param_count(const HeadSpec& spec) {
  validate(spec);
  const Index d = spec.input_dim, c = spec.num_classes, h = spec.hidden;
  if (h == 0) return d * c + c;
  return d * h + h + h * c + c;
}

Index HeadParams::trainable_count() const {
  Index n = 0;
  for (const auto& t : trainable) n += t.value.size();
  return n;
}

HeadParams init_head(const HeadSpec& spec, Prng& rng) {
  validate(spec);
  HeadParams p{spec, {}};
  auto weight = [&](std::string name, Index rows, Index cols) {
    Tensord w = rng.normal_tensor({rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)));
    p.trainable.push_back({std::move(name), std::move(w)});
  };
  auto bias = [&](std::string name, Index n) {
    p.trainable.push_back({std::move(name), Tensord({n})});
  };
  if (spec.hidden == 0) {
    weight("weight", spec.input_dim, spec.num_classes);
    bias("bias", spec.num_classes);
  } else {
    weight("w1", spec.input_dim, spec.hidden);
    bias("b1", spec.hidden);
    weight("w2", spec.hidden, spec.num_classes);
    bias("b2", spec.num_classes);
  }
  return p;
}

namespace {

RowMatrix<double> affine(const RowMatrix<double>& x, const Tensord& w, const Tensord& b) {
  RowMatrix<double> y = x * w.matrix();
  y.rowwise() += b.values().transpose();
  return y;
}

}  // namespace

Tensord head_forward(const HeadParams& params, const TimeFeatures& z, HeadCache* cache) {
  const auto& spec = params.spec;
  if (z.values.rank() != 2 || z.dim() != spec.input_dim) {
    throw DimensionError("head expects (T, " + std::to_string(spec.input_dim) + ") features, got " +
                         shape_string(z.values.shape()));
  }
  RowMatrix<double> x = z.values.matrix();
  if (spec.kind == HeadKind::Utterance) x = x.colwise().mean().eval();

  RowMatrix<double> logits;
  RowMatrix<double> pre, act;
  if (spec.hidden == 0) {
    logits = affine(x, params.trainable[0].value, params.trainable[1].value);
  } else {
    pre = affine(x, params.trainable[0].value, params.trainable[1].value);
    act = gelu(pre);
    logits = affine(act, params.trainable[2].value, params.trainable[3].value);
  }
  if (cache) {
    cache->input = z.values;
    cache->pooled = Tensord::from_matrix(x);
    if (spec.hidden > 0) {
      cache->hidden_pre = Tensord::from_matrix(pre);
      cache->hidden_act = Tensord::from_matrix(act);
    }
  }
  return Tensord::from_matrix(logits);
}

HeadGrads head_backward(const HeadParams& params, const HeadCache& cache,
                        const Tensord& grad_logits) {
  const auto& spec = params.spec;
  const auto x = cache.pooled.matrix();
  require_shape(grad_logits, {x.rows(), spec.num_classes}, "head backward grad_logits");
  const auto g = grad_logits.matrix();

  HeadGrads out;
  RowMatrix<double> grad_x;
  if (spec.hidden == 0) {
    const Tensord& w = params.trainable[0].value;
    out.params.push_back(Tensord::from_matrix(x.transpose() * g));
    out.params.push_back(Tensord::from_matrix(g.colwise().sum().transpose()).reshaped({spec.num_classes}));
    grad_x = g * w.matrix().transpose();
  } else {
    const Tensord& w1 = params.trainable[0].value;
    const Tensord& w2 = params.trainable[2].value;
    const auto act = cache.hidden_act.matrix();
    const RowMatrix<double> g_act = g * w2.matrix().transpose();
    const RowMatrix<double> g_pre = gelu_backward(cache.hidden_pre.matrix(), g_act);
    out.params.push_back(Tensord::from_matrix(x.transpose() * g_pre));
    out.params.push_back(Tensord::from_matrix(g_pre.colwise().sum().transpose()).reshaped({spec.hidden}));
    out.params.push_back(Tensord::from_matrix(act.transpose() * g));
    out.params.push_back(Tensord::from_matrix(g.colwise().sum().transpose()).reshaped({spec.num_classes}));
    grad_x = g_pre * w1.matrix().transpose();
  }

  const Index frames = cache.input.dim(0);
  out.input = Tensord(cache.input.shape());
  if (spec.kind == HeadKind::Utterance) {
    out.input.matrix().rowwise() = grad_x.row(0) / static_cast<double>(frames);
  } else {
    out.input.matrix() = grad_x;
  }
  return out;
}

LossGrad ce_loss_grad(const Tensord& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("ce_loss_grad expects (N, C) logits");
  const Index n = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw DimensionError("ce_loss_grad: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  LossGrad out{0.0, Tensord(logits.shape())};
  const RowMatrix<double> probs = softmax_rows(logits.matrix());
  auto grad = out.grad.matrix();
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    const auto row = logits.matrix().row(i);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    out.loss += lse - row[y];
    grad.row(i) = probs.row(i);
    grad(i, y) -= 1.0;
  }
  out.loss /= static_cast<double>(n);
  grad /= static_cast<double>(n);
  return out;
}

Index argmax_row(const Tensord& logits, Index row) {
  const auto r = logits.matrix().row(row);
  Index best = 0;
  for (Index j = 1; j < r.size(); ++j) {
    if (r[j] > r[best]) best = j;
  }
  return best;
}

double accuracy(const Tensord& logits, std::span<const int> labels) {
  const Index n = logits.dim(0);
  if (static_cast<Index>(labels.size()) != n) {
    throw DimensionError("accuracy: label count does not match logits");
  }
  Index hits = 0;
  for (Index i = 0; i < n; ++i) {
    if (argmax_row(logits, i) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace layeragg
