#include <cmath>

#include "kinds.hpp"

namespace layeragg::kinds {

// One post-norm transformer encoder layer over the token sequence
// [cls; h_1,t; ...; h_L,t] of every frame, returning the cls position.
//
// Only the cls output is kept, and the feed-forward block and both layer
// norms act per token, so the cls row depends on the other tokens only
// through their keys and values. The query is therefore computed for the cls
// token alone; the result is identical to running the full layer and
// selecting token 0. There are no position embeddings.

namespace {

enum Slot : std::size_t {
  kInput,   // (L, T, D)
  kQuery,   // (1, D)  cls query, same for every frame
  kClsKey,  // (1, D)
  kClsVal,  // (1, D)
  kKeys,    // (L*T, D) layer-token keys, row l*T + t
  kVals,    // (L*T, D)
  kProbs,   // (T, H, L+1) attention weights, index 0 is the cls token
  kAttn,    // (T, D) concatenated head outputs
  kNorm1,   // (T, D) output of the first layer norm
  kPreFfn,  // (T, F)
  kActFfn,  // (T, F)
  kSlots
};

struct Weights {
  RowVector<double> cls;
  ConstMatrixMap<double> wq, wk, wv, wo, w1, w2;
  RowVector<double> bq, bv, bo, b1, b2;
  Vector<double> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  explicit Weights(const InterfaceParams& p)
      : cls(p.param("cls").values().transpose()),
        wq(p.param("attn.q.weight").matrix()),
        wk(p.param("attn.k.weight").matrix()),
        wv(p.param("attn.v.weight").matrix()),
        wo(p.param("attn.o.weight").matrix()),
        w1(p.param("ffn.w1").matrix()),
        w2(p.param("ffn.w2").matrix()),
        bq(p.param("attn.q.bias").values().transpose()),
        bv(p.param("attn.v.bias").values().transpose()),
        bo(p.param("attn.o.bias").values().transpose()),
        b1(p.param("ffn.b1").values().transpose()),
        b2(p.param("ffn.b2").values().transpose()),
        ln1_gamma(p.param("ln1.gamma").values()),
        ln1_beta(p.param("ln1.beta").values()),
        ln2_gamma(p.param("ln2.gamma").values()),
        ln2_beta(p.param("ln2.beta").values()) {}
};

}  // namespace

TimeFeatures cls_pool_forward(const InterfaceParams& p, const LayerStack& h, ForwardCache& c) {
  const auto& spec = std::get<ClsPoolSpec>(p.spec);
  const Index layers = p.layers, frames = h.frames(), d = p.dim;
  const Index heads = spec.heads, dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Weights w(p);

  const auto tokens = h.values().matrix();  // (L*T, D)
  const RowVector<double> q = w.cls * w.wq + w.bq;
  // attn.k.bias shifts every score of a head equally and cancels in the
  // softmax, so it is left out of the keys; its gradient is identically zero.
  const RowVector<double> kc = w.cls * w.wk;
  const RowVector<double> vc = w.cls * w.wv + w.bv;
  const RowMatrix<double> keys = tokens * w.wk;
  RowMatrix<double> vals = tokens * w.wv;
  vals.rowwise() += w.bv;

  Tensord probs({frames, heads, layers + 1});
  RowMatrix<double> attn(frames, d);
  Vector<double> scores(layers + 1);
  for (Index t = 0; t < frames; ++t) {
    for (Index hd = 0; hd < heads; ++hd) {
      const auto qh = q.segment(hd * dh, dh);
      scores[0] = scale * qh.dot(kc.segment(hd * dh, dh));
      for (Index l = 0; l < layers; ++l) {
        scores[l + 1] = scale * qh.dot(keys.row(l * frames + t).segment(hd * dh, dh));
      }
      const double m = scores.maxCoeff();
      Eigen::Map<Vector<double>> a(&probs(t, hd, 0), layers + 1);
      a = (scores.array() - m).exp().matrix();
      a /= a.sum();
      RowVector<double> o = a[0] * vc.segment(hd * dh, dh);
      for (Index l = 0; l < layers; ++l) {
        o += a[l + 1] * vals.row(l * frames + t).segment(hd * dh, dh);
      }
      attn.row(t).segment(hd * dh, dh) = o;
    }
  }

  RowMatrix<double> resid1 = attn * w.wo;
  resid1.rowwise() += w.bo + w.cls;
  c.norms.resize(2);
  RowMatrix<double> x1 =
      layer_norm_rows(resid1, w.ln1_gamma, w.ln1_beta, spec.ln_eps, &c.norms[0]);
  RowMatrix<double> pre = x1 * w.w1;
  pre.rowwise() += w.b1;
  RowMatrix<double> act = gelu(pre);
  RowMatrix<double> resid2 = x1 + act * w.w2;
  resid2.rowwise() += w.b2;

  TimeFeatures z{Tensord({frames, d})};
  z.values.matrix() = layer_norm_rows(resid2, w.ln2_gamma, w.ln2_beta, spec.ln_eps, &c.norms[1]);

  c.saved.resize(kSlots);
  c.saved[kInput] = h.values();
  c.saved[kQuery] = Tensord::from_matrix(q);
  c.saved[kClsKey] = Tensord::from_matrix(kc);
  c.saved[kClsVal] = Tensord::from_matrix(vc);
  c.saved[kKeys] = Tensord::from_matrix(keys);
  c.saved[kVals] = Tensord::from_matrix(vals);
  c.saved[kProbs] = std::move(probs);
  c.saved[kAttn] = Tensord::from_matrix(attn);
  c.saved[kNorm1] = Tensord::from_matrix(x1);
  c.saved[kPreFfn] = Tensord::from_matrix(pre);
  c.saved[kActFfn] = Tensord::from_matrix(act);
  return z;
}

InterfaceGrads cls_pool_backward(const InterfaceParams& p, const ForwardCache& c,
                                 const Tensord& grad_out) {
  const auto& spec = std::get<ClsPoolSpec>(p.spec);
  const Index layers = p.layers, frames = c.frames, d = p.dim;
  const Index heads = spec.heads, dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Weights w(p);

  const auto tokens = c.saved[kInput].matrix();
  const auto q = c.saved[kQuery].matrix();
  const auto kc = c.saved[kClsKey].matrix();
  const auto vc = c.saved[kClsVal].matrix();
  const auto keys = c.saved[kKeys].matrix();
  const auto vals = c.saved[kVals].matrix();
  const Tensord& probs = c.saved[kProbs];
  const auto attn = c.saved[kAttn].matrix();
  const auto x1 = c.saved[kNorm1].matrix();
  const auto pre = c.saved[kPreFfn].matrix();
  const auto act = c.saved[kActFfn].matrix();

  InterfaceGrads out{zero_param_grads(p), Tensord({layers, frames, d})};
  auto grad = [&](std::string_view name) -> Tensord& {
    for (std::size_t i = 0; i < p.trainable.size(); ++i) {
      if (p.trainable[i].name == name) return out.params[i];
    }
    throw StateError("cls-pool: missing parameter " + std::string(name));
  };

  // second layer norm and feed-forward
  auto ln2 = layer_norm_rows_backward(c.norms[1], w.ln2_gamma, grad_out.matrix());
  grad("ln2.gamma").values() = ln2.gamma;
  grad("ln2.beta").values() = ln2.beta;
  const RowMatrix<double>& g_resid2 = ln2.input;
  grad("ffn.w2").matrix().noalias() = act.transpose() * g_resid2;
  grad("ffn.b2").values() = g_resid2.colwise().sum().transpose();
  const RowMatrix<double> g_pre = gelu_backward(pre, g_resid2 * w.w2.transpose());
  grad("ffn.w1").matrix().noalias() = x1.transpose() * g_pre;
  grad("ffn.b1").values() = g_pre.colwise().sum().transpose();
  const RowMatrix<double> g_x1 = g_resid2 + g_pre * w.w1.transpose();

  // first layer norm, output projection, residual into cls
  auto ln1 = layer_norm_rows_backward(c.norms[0], w.ln1_gamma, g_x1);
  grad("ln1.gamma").values() = ln1.gamma;
  grad("ln1.beta").values() = ln1.beta;
  const RowMatrix<double>& g_resid1 = ln1.input;
  RowVector<double> g_cls = g_resid1.colwise().sum();
  grad("attn.o.weight").matrix().noalias() = attn.transpose() * g_resid1;
  grad("attn.o.bias").values() = g_resid1.colwise().sum().transpose();
  const RowMatrix<double> g_attn = g_resid1 * w.wo.transpose();

  // attention
  RowVector<double> g_q = RowVector<double>::Zero(d);
  RowVector<double> g_kc = RowVector<double>::Zero(d);
  RowVector<double> g_vc = RowVector<double>::Zero(d);
  RowMatrix<double> g_keys = RowMatrix<double>::Zero(layers * frames, d);
  RowMatrix<double> g_vals = RowMatrix<double>::Zero(layers * frames, d);
  Vector<double> g_a(layers + 1);
  for (Index t = 0; t < frames; ++t) {
    for (Index hd = 0; hd < heads; ++hd) {
      const Index off = hd * dh;
      const auto go = g_attn.row(t).segment(off, dh);
      Eigen::Map<const Vector<double>> a(&probs(t, hd, 0), layers + 1);
      g_a[0] = go.dot(vc.row(0).segment(off, dh));
      g_vc.segment(off, dh) += a[0] * go;
      for (Index l = 0; l < layers; ++l) {
        const Index row = l * frames + t;
        g_a[l + 1] = go.dot(vals.row(row).segment(off, dh));
        g_vals.row(row).segment(off, dh) += a[l + 1] * go;
      }
      const double dot = a.dot(g_a);
      const auto qh = q.row(0).segment(off, dh);
      for (Index j = 0; j <= layers; ++j) {
        const double gs = scale * a[j] * (g_a[j] - dot);
        if (j == 0) {
          g_q.segment(off, dh) += gs * kc.row(0).segment(off, dh);
          g_kc.segment(off, dh) += gs * qh;
        } else {
          const Index row = (j - 1) * frames + t;
          g_q.segment(off, dh) += gs * keys.row(row).segment(off, dh);
          g_keys.row(row).segment(off, dh) += gs * qh;
        }
      }
    }
  }

  grad("attn.q.weight").matrix().noalias() = w.cls.transpose() * g_q;
  grad("attn.q.bias").values() = g_q.transpose();
  grad("attn.k.weight").matrix().noalias() = tokens.transpose() * g_keys + w.cls.transpose() * g_kc;
  grad("attn.k.bias").set_zero();
  grad("attn.v.weight").matrix().noalias() = tokens.transpose() * g_vals + w.cls.transpose() * g_vc;
  grad("attn.v.bias").values() = (g_vals.colwise().sum() + g_vc).transpose();

  g_cls += g_q * w.wq.transpose() + g_kc * w.wk.transpose() + g_vc * w.wv.transpose();
  grad("cls").values() = g_cls.transpose();

  out.input.matrix().noalias() = g_keys * w.wk.transpose() + g_vals * w.wv.transpose();
  return out;
}

}  // namespace layeragg::kinds
