// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "layeragg/cli.hpp"
#include "layeragg/trainer.hpp"
#include "support.hpp"

using namespace layeragg;
using nlohmann::json;

namespace {

struct Outcome {
  bool ok = true;
  std::ostringstream detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " [failed: " << what << "]";
    }
  }
};

LayerStack random_stack(Index l, Index t, Index d, std::uint64_t seed) {
  Prng rng(seed);
  return LayerStack(rng.normal_tensor({l, t, d}));
}

InterfaceParams ready(const InterfaceSpec& spec, Index layers, Index dim, std::uint64_t seed) {
  Prng rng(seed);
  InterfaceParams p = init_params(spec, layers, dim, rng);
  if (p.kind() == InterfaceKind::PcaConcat) {
    std::vector<LayerStack> fit;
    for (int i = 0; i < 3; ++i) fit.emplace_back(rng.normal_tensor({layers, 30, dim}));
    set_pca_buffers(p, fit_pca(fit, std::get<PcaConcatSpec>(spec), layers, dim));
  }
  return p;
}

TrainConfig paper_config(InterfaceKind kind, const SynthDataset& ds) {
  TrainConfig c;
  c.interface = default_spec(kind);
  c.epochs = 30;
  c.learning_rate = 1e-3;
  c.batch_size = 32;
  c.seed = 0;
  c.train_manifest = ds.train_manifest;
  c.test_manifest = ds.test_manifest;
  return c;
}

// Shared between criteria 4 and 5.
struct CollisionData {
  testing::TempDir dir{"accept_collision"};
  SynthDataset ds = generate(SynthSpec::collision_defaults(), dir.path());
  Dataset train = load_dataset(ds.train_manifest, HeadKind::Utterance);
  Dataset test = load_dataset(ds.test_manifest, HeadKind::Utterance);
  std::optional<TrainReport> hier;
};

CollisionData& collision() {
  static CollisionData data;
  return data;
}

const TrainReport& hier_report() {
  CollisionData& c = collision();
  if (!c.hier) c.hier = train(paper_config(InterfaceKind::HierConv, c.ds), c.train, c.test).report;
  return *c.hier;
}

// ---------------------------------------------------------------------------

void param_counts(Outcome& o) {
  const Index L = 13, D = 768;
  struct Row {
    InterfaceSpec spec;
    Index want;
  };
  ClsPoolSpec cls;
  cls.ffn_dim = 2048;
  const Row rows[] = {
      {WeightedSumSpec{}, 13},          {GroupedWsSpec{2}, 1180429}, {GroupedWsSpec{3}, 1770253},
      {GroupedWsSpec{4}, 2360077},      {ConcatProjSpec{}, 7668480}, {PcaConcatSpec{60}, 0},
      {cls, 5514752},
  };
  for (const Row& r : rows) {
    const Index got = param_count(r.spec, L, D);
    o.expect(got == r.want, std::string(kind_name(kind_of(r.spec))) + " = " + std::to_string(got));
  }
  const Index hier = param_count(HierConvSpec{}, L, D);
  o.detail << " hier-conv=" << hier << " (differs from the 4.4M figure)";
  o.expect(hier == 5899776, "hier-conv closed form");
}

void gradients(Outcome& o) {
  const std::vector<InterfaceKind> kinds(std::begin(kAllInterfaceKinds), std::end(kAllInterfaceKinds));
  GradcheckOptions opt;
  opt.layers = 5;
  opt.frames = 7;
  opt.dim = 8;
  opt.tolerance = 1e-4;
  const auto cases = gradcheck_suite(kinds, {HeadKind::Frame, HeadKind::Utterance}, {0, 1, 2, 3, 4}, opt);
  double worst = 0;
  for (const auto& c : cases) {
    worst = std::max({worst, c.max_param_error, c.max_input_error});
    o.expect(c.passed, std::string(kind_name(c.kind)) + "/" + std::string(head_kind_name(c.head)) +
                           " seed " + std::to_string(c.seed));
  }
  o.detail << " cases=" << cases.size() << " worst_rel_err=" << std::scientific << std::setprecision(2)
           << worst << std::defaultfloat;
}

void shapes(Outcome& o) {
  Index checked = 0;
  for (Index layers : {3, 5, 13, 25}) {
    for (Index frames : {1, 4, 20}) {
      for (Index dim : {4, 8, 16}) {
        for (InterfaceKind kind : kAllInterfaceKinds) {
          const InterfaceSpec spec = default_spec(kind);
          const InterfaceParams p = ready(spec, layers, dim, 1);
          const TimeFeatures z = forward(p, random_stack(layers, frames, dim, 2));
          o.expect(z.values.shape() == Shape{frames, output_dim(spec, layers, dim)},
                   std::string(kind_name(kind)) + " shape");
          ++checked;
        }
      }
    }
  }
  const Index layers = 5, frames = 6, dim = 8;
  for (InterfaceKind kind : kAllInterfaceKinds) {
    const InterfaceParams p = ready(default_spec(kind), layers, dim, 3);
    const LayerStack h = random_stack(layers, frames, dim, 4);
    const Tensord base = forward(p, h).values;
    for (Index t = 0; t < frames; ++t) {
      LayerStack g = h;
      for (Index l = 0; l < layers; ++l) {
        for (Index d = 0; d < dim; ++d) g.values()(l, t, d) += 0.5;
      }
      const Tensord out = forward(p, g).values;
      for (Index s = 0; s < frames; ++s) {
        const bool same = out.matrix().row(s) == base.matrix().row(s);
        o.expect(same == (s != t), std::string(kind_name(kind)) + " locality");
      }
    }
  }
  o.detail << " shapes=" << checked;
}

void collision_experiment(Outcome& o) {
  CollisionData& c = collision();
  const double hier = hier_report().test_accuracy;
  const double concat =
      train(paper_config(InterfaceKind::ConcatProj, c.ds), c.train, c.test).report.test_accuracy;
  const double ws =
      train(paper_config(InterfaceKind::WeightedSum, c.ds), c.train, c.test).report.test_accuracy;

  testing::TempDir dir("accept_select");
  const SynthDataset sel = generate(SynthSpec::layer_select_defaults(), dir.path());
  const double ws_sel = train(paper_config(InterfaceKind::WeightedSum, sel)).report.test_accuracy;

  o.detail << std::fixed << std::setprecision(4) << " hier-conv=" << hier << " concat-proj=" << concat
           << " weighted-sum=" << ws << " weighted-sum(layer-select)=" << ws_sel << std::defaultfloat;
  o.expect(hier >= 0.95, "hier-conv >= 0.95");
  o.expect(concat >= 0.95, "concat-proj >= 0.95");
  o.expect(ws <= 0.65, "weighted-sum <= 0.65");
  o.expect(ws_sel >= 0.95, "weighted-sum on layer-select >= 0.95");
}

void matched_ablation(Outcome& o) {
  CollisionData& c = collision();
  const TrainReport& hier = hier_report();
  const Index target = hier.interface_params + hier.head_params;
  const Index layers = c.train.layers, dim = c.train.dim;

  // widest hidden layer whose total lands closest to the target
  Index best_hidden = 1, best_total = 0;
  for (Index h = 1; h <= 4 * target; ++h) {
    const Index total = param_count(WeightedSumSpec{}, layers, dim) +
                        param_count(HeadSpec{HeadKind::Utterance, dim, 2, h});
    if (best_total == 0 || std::abs(total - target) < std::abs(best_total - target)) {
      best_hidden = h;
      best_total = total;
    }
  }
  TrainConfig cfg = paper_config(InterfaceKind::WeightedSum, c.ds);
  cfg.head_hidden = best_hidden;
  const TrainReport ws = train(cfg, c.train, c.test).report;
  const Index ws_total = ws.interface_params + ws.head_params;
  const double gap = hier.test_accuracy - ws.test_accuracy;

  o.detail << " hier-conv total=" << target << " weighted-sum total=" << ws_total
           << " (hidden " << best_hidden << ")" << std::fixed << std::setprecision(4)
           << " gap=" << gap << std::defaultfloat;
  o.expect(std::abs(static_cast<double>(ws_total - target)) <= 0.05 * static_cast<double>(target),
           "within 5% of hier-conv");
  o.expect(gap >= 0.20, "gap >= 20 points");
}

void collapse_schedule(Outcome& o) {
  for (Index layers = 3; layers <= 49; ++layers) {
    const HierConvPlan plan = hierconv_plan(layers);
    o.expect(!plan.extents.empty() && plan.extents.front() == layers && plan.extents.back() >= 1,
             "L=" + std::to_string(layers));
    o.expect(static_cast<Index>(plan.extents.size()) == plan.depth + 1, "depth L=" + std::to_string(layers));
  }
  const HierConvPlan p13 = hierconv_plan(13);
  o.expect(p13.extents == std::vector<Index>{13, 4, 1}, "13 -> 4 -> 1");
  o.detail << " L=13:";
  for (Index e : p13.extents) o.detail << ' ' << e;
}

void permutation_invariance(Outcome& o) {
  const Index layers = 13, frames = 4, dim = 16;
  const InterfaceParams p = ready(ClsPoolSpec{}, layers, dim, 6);
  const LayerStack h = random_stack(layers, frames, dim, 7);
  const Tensord base = forward(p, h).values;
  Prng rng(8);
  std::vector<Index> perm(layers);
  std::iota(perm.begin(), perm.end(), Index{0});
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(perm);
    LayerStack g(layers, frames, dim);
    for (Index l = 0; l < layers; ++l) g.layer(l) = h.layer(perm[static_cast<std::size_t>(l)]);
    worst = std::max(worst, testing::max_abs_diff(forward(p, g).values, base));
  }
  o.detail << " max_abs_diff=" << std::scientific << std::setprecision(2) << worst << std::defaultfloat;
  o.expect(worst <= 1e-12, "<= 1e-12");
}

void pca_properties(Outcome& o) {
  const Index layers = 13, dim = 768, k = 60;
  Prng rng(21);
  std::vector<LayerStack> stacks;
  for (int i = 0; i < 10; ++i) {
    Tensord v = rng.normal_tensor({layers, 100, dim});
    for (Index j = 0; j < v.size(); ++j) v[j] *= 1.0 + 0.01 * static_cast<double>(j % dim);
    stacks.emplace_back(v);
  }
  const PcaBuffers b = fit_pca(stacks, PcaConcatSpec{k}, layers, dim);
  Prng init(0);
  InterfaceParams p = init_params(PcaConcatSpec{k}, layers, dim, init);
  set_pca_buffers(p, b);
  o.expect(p.output_dim() == 780, "output dim 780");

  RowMatrix<double> all(0, layers * k);
  for (const auto& s : stacks) {
    const RowMatrix<double> z = forward(p, s).values.matrix();
    RowMatrix<double> grown(all.rows() + z.rows(), all.cols());
    grown << all, z;
    all = grown;
  }
  const double n = static_cast<double>(all.rows());
  double ortho = 0, diag = 0, mean = 0;
  for (Index l = 0; l < layers; ++l) {
    Matrix<double> u(dim, k);
    for (Index d = 0; d < dim; ++d) {
      for (Index j = 0; j < k; ++j) u(d, j) = b.basis(l, d, j);
    }
    ortho = std::max(ortho, (u.transpose() * u - Matrix<double>::Identity(k, k)).cwiseAbs().maxCoeff());
    const auto block = all.middleCols(l * k, k);
    mean = std::max(mean, block.colwise().mean().cwiseAbs().maxCoeff());
    Matrix<double> cov = block.transpose() * block / n;
    for (Index j = 0; j < k; ++j) cov(j, j) -= b.eigenvalues(l, j);
    diag = std::max(diag, cov.cwiseAbs().maxCoeff());
  }
  o.detail << std::scientific << std::setprecision(2) << " orthonormality=" << ortho
           << " covariance=" << diag << " mean=" << mean << std::defaultfloat
           << " output_dim=" << p.output_dim();
  o.expect(ortho <= 1e-8, "orthonormal");
  o.expect(diag <= 1e-6, "diagonal covariance");
  o.expect(mean <= 1e-8, "zero mean");
}

void determinism(Outcome& o) {
  testing::TempDir dir("accept_determinism");
  const std::string data = (dir / "data").string();
  std::ostringstream sink;
  o.expect(run_cli({"synth", "--task", "collision", "--out", data, "--n", "200"}, sink, sink) == 0, "synth");

  json reports[2];
  for (int i = 0; i < 2; ++i) {
    const std::string report = (dir / ("r" + std::to_string(i) + ".json")).string();
    const std::string model = (dir / ("m" + std::to_string(i) + ".lim")).string();
    const int code = run_cli({"train", "--train-manifest", data + "/train.jsonl", "--test-manifest",
                              data + "/test.jsonl", "--interface", "hier-conv", "--epochs", "5",
                              "--model", model, "--report", report},
                             sink, sink);
    o.expect(code == 0, "train run " + std::to_string(i));
    reports[i] = json::parse(testing::read_bytes(report));
    reports[i].erase("timing");
    reports[i].erase("model");
  }
  o.expect(reports[0].dump() == reports[1].dump(), "reports identical apart from timing");
  o.expect(testing::read_bytes(dir / "m0.lim") == testing::read_bytes(dir / "m1.lim"), "bundles identical");

  // LIM: load and save again
  save_model(load_model(dir / "m0.lim"), dir / "again.lim");
  o.expect(testing::read_bytes(dir / "m0.lim") == testing::read_bytes(dir / "again.lim"), "LIM round trip");

  // LIF: read and write again
  const std::filesystem::path lif = std::filesystem::path(data) / "feats/utt_00000.lif";
  write_lif(read_lif(lif), dir / "again.lif");
  o.expect(testing::read_bytes(lif) == testing::read_bytes(dir / "again.lif"), "LIF round trip");
  o.detail << " test_accuracy=" << reports[0]["test_accuracy"];
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {1, "parameter counts at L=13, D=768", 1, param_counts},
      {2, "gradient correctness", 30, gradients},
      {3, "shape and locality contract", 10, shapes},
      {4, "collision experiment", 300, collision_experiment},
      {5, "parameter-matched ablation", 300, matched_ablation},
      {6, "hier-conv collapse schedule", 1, collapse_schedule},
      {7, "cls-pool permutation invariance", 5, permutation_invariance},
      {8, "pca properties", 30, pca_properties},
      {9, "determinism and persistence", 120, determinism},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.expect(secs < c.limit_seconds, "runtime limit " + std::to_string(c.limit_seconds) + " s");
    std::cout << "criterion " << c.id << ": " << (o.ok ? "PASS" : "FAIL") << "  " << c.name << "  ("
              << std::fixed << std::setprecision(2) << secs << " s)" << std::defaultfloat << o.detail.str()
              << std::endl;
    if (!o.ok) ++failures;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
