#include <doctest.h>

#include <cmath>
#include <fstream>

#include "layeragg/trainer.hpp"
#include "support.hpp"

using namespace layeragg;

namespace {

Dataset make_dataset(SynthTask task, Index n, Index layers, Index frames, Index dim, std::uint64_t seed) {
  SynthSpec s = task == SynthTask::Collision ? SynthSpec::collision_defaults()
                                              : SynthSpec::layer_select_defaults();
  s.n = n;
  s.layers = layers;
  s.frames = frames;
  s.dim = dim;
  s.signal_layers = task == SynthTask::Collision ? std::vector<Index>{1, 3} : std::vector<Index>{2};
  s.seed = seed;
  validate(s);
  Prng rng(seed);
  Dataset ds;
  ds.layers = layers;
  ds.dim = dim;
  for (Index i = 0; i < n; ++i) {
    int y = 0;
    LayerStack h = synth_utterance(s, rng, y);
    ds.examples.push_back({std::move(h), {y}});
  }
  return ds;
}

TrainConfig small_config(InterfaceKind kind) {
  TrainConfig c;
  c.interface = default_spec(kind);
  if (kind == InterfaceKind::ClsPool) c.interface = ClsPoolSpec{2, 8, 1e-5};
  c.epochs = 8;
  c.batch_size = 8;
  c.learning_rate = 1e-2;
  return c;
}

double checksum(const Dataset& d) {
  double s = 0;
  for (const auto& ex : d.examples) s += ex.stack.values().values().sum() + ex.stack.values().values().squaredNorm();
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Optimizers

TEST_CASE("adam leaves parameters alone under a zero gradient") {
  std::vector<NamedTensor> p{{"w", Tensord({3}, {1, -2, 3})}};
  const Tensord before = p[0].value;
  AdamState st;
  for (Index t = 1; t <= 5; ++t) adam_step(p, {Tensord({3})}, st, 0.1, t);
  CHECK(p[0].value == before);
}

TEST_CASE("adam's first step moves each coordinate by about lr against its gradient") {
  std::vector<NamedTensor> p{{"w", Tensord({3}, {0, 0, 0})}};
  AdamState st;
  adam_step(p, {Tensord({3}, {2.0, -0.5, 1e-3})}, st, 0.01, 1);
  CHECK(p[0].value[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p[0].value[1] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(p[0].value[2] == doctest::Approx(-0.01).epsilon(1e-4));
}

TEST_CASE("adam matches a long-double reference trace") {
  const double lr = 0.05;
  std::vector<NamedTensor> p{{"w", Tensord({2}, {0.3, -0.7})}};
  AdamState st;
  long double w[2] = {0.3L, -0.7L}, m[2] = {0, 0}, v[2] = {0, 0};
  const long double b1 = 0.9L, b2 = 0.999L, eps = 1e-8L;
  for (Index t = 1; t <= 20; ++t) {
    // gradient of 0.5 w0^2 + sin(w1)
    const Tensord g({2}, {p[0].value[0], std::cos(p[0].value[1])});
    adam_step(p, {g}, st, lr, t);
    const long double gr[2] = {w[0], std::cos(w[1])};
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * gr[i];
      v[i] = b2 * v[i] + (1 - b2) * gr[i] * gr[i];
      const long double mh = m[i] / (1 - std::pow(b1, static_cast<long double>(t)));
      const long double vh = v[i] / (1 - std::pow(b2, static_cast<long double>(t)));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  CHECK(std::abs(p[0].value[0] - static_cast<double>(w[0])) <= 1e-12);
  CHECK(std::abs(p[0].value[1] - static_cast<double>(w[1])) <= 1e-12);
}

TEST_CASE("optimizer argument errors") {
  std::vector<NamedTensor> p{{"w", Tensord({2})}};
  AdamState st;
  CHECK_THROWS_AS(adam_step(p, {}, st, 0.1, 1), DimensionError);
  CHECK_THROWS_AS(adam_step(p, {Tensord({2})}, st, 0.1, 0), ConfigError);
  CHECK_THROWS_AS(adam_step(p, {Tensord({3})}, st, 0.1, 1), DimensionError);
  CHECK_THROWS_AS(sgd_step(p, {Tensord({3})}, 0.1), DimensionError);
}

TEST_CASE("sgd subtracts lr times the gradient") {
  std::vector<NamedTensor> p{{"w", Tensord({2}, {1, 2})}};
  sgd_step(p, {Tensord({2}, {10, -4})}, 0.5);
  CHECK(p[0].value == Tensord({2}, {-4, 4}));
}

// ---------------------------------------------------------------------------
// Gradient checking

TEST_CASE("every interface passes the gradient check with both heads") {
  const std::vector<InterfaceKind> kinds(std::begin(kAllInterfaceKinds), std::end(kAllInterfaceKinds));
  const auto cases = gradcheck_suite(kinds, {HeadKind::Frame, HeadKind::Utterance}, {0, 1, 2});
  CHECK(cases.size() == kinds.size() * 2 * 3);
  for (const auto& c : cases) {
    INFO(kind_name(c.kind), " ", head_kind_name(c.head), " seed ", c.seed);
    CHECK(c.passed);
    CHECK(c.max_param_error <= 1e-4);
    CHECK(c.max_input_error <= 1e-4);
    CHECK(c.coordinates > 0);
  }
}

TEST_CASE("the gradient check catches a broken backward") {
  GradcheckOptions opt;
  SUBCASE("scaled input gradient") {
    opt.backward_override = [](const InterfaceParams& p, const ForwardCache& c, const Tensord& g) {
      InterfaceGrads out = backward(p, c, g);
      out.input.values() *= 1.01;
      return out;
    };
  }
  SUBCASE("dropped parameter gradient") {
    opt.backward_override = [](const InterfaceParams& p, const ForwardCache& c, const Tensord& g) {
      InterfaceGrads out = backward(p, c, g);
      out.params.back().set_zero();
      return out;
    };
  }
  for (InterfaceKind kind : {InterfaceKind::WeightedSum, InterfaceKind::HierConv, InterfaceKind::ClsPool}) {
    const auto cases = gradcheck_suite({kind}, {HeadKind::Utterance}, {0}, opt);
    REQUIRE(cases.size() == 1);
    CHECK_FALSE(cases[0].passed);
  }
}

TEST_CASE("gradcheck rejects hier-conv on fewer than three layers") {
  GradcheckOptions opt;
  opt.layers = 2;
  CHECK_THROWS_AS(gradcheck_suite({InterfaceKind::HierConv}, {HeadKind::Frame}, {0}, opt), ConfigError);
  CHECK_NOTHROW(gradcheck_suite({InterfaceKind::WeightedSum}, {HeadKind::Frame}, {0}, opt));
}

// ---------------------------------------------------------------------------
// Training

TEST_CASE("training is deterministic for a fixed seed") {
  const Dataset tr = make_dataset(SynthTask::LayerSelect, 48, 5, 6, 4, 1);
  const Dataset te = make_dataset(SynthTask::LayerSelect, 16, 5, 6, 4, 2);
  TrainConfig c = small_config(InterfaceKind::HierConv);
  const TrainResult a = train(c, tr, te), b = train(c, tr, te);
  CHECK(to_json(a.report) == to_json(b.report));
  for (std::size_t i = 0; i < a.model.interface.trainable.size(); ++i) {
    CHECK(a.model.interface.trainable[i].value == b.model.interface.trainable[i].value);
  }
  CHECK(!to_json(a.report).contains("wall_clock_seconds"));
  c.seed = 1;
  CHECK(to_json(train(c, tr, te).report)["epochs"] != to_json(a.report)["epochs"]);
}

TEST_CASE("evaluate reproduces the reported test metrics") {
  const Dataset tr = make_dataset(SynthTask::LayerSelect, 48, 5, 6, 4, 3);
  const Dataset te = make_dataset(SynthTask::LayerSelect, 16, 5, 6, 4, 4);
  const TrainResult r = train(small_config(InterfaceKind::WeightedSum), tr, te);
  const EvalResult e = evaluate(r.model, te);
  CHECK(e.accuracy == r.report.test_accuracy);
  CHECK(e.loss == r.report.test_loss);
  CHECK(r.report.interface_params == 5);
  CHECK(r.report.head_params == 4 * 2 + 2);
  CHECK(r.report.epochs.size() == 8);
}

TEST_CASE("training never modifies the frozen features") {
  const Dataset tr = make_dataset(SynthTask::Collision, 32, 5, 6, 4, 5);
  const Dataset te = make_dataset(SynthTask::Collision, 8, 5, 6, 4, 6);
  const double before = checksum(tr) + checksum(te);
  for (InterfaceKind kind : kAllInterfaceKinds) {
    TrainConfig c = small_config(kind);
    c.epochs = 2;
    train(c, tr, te);
  }
  CHECK(checksum(tr) + checksum(te) == before);
}

TEST_CASE("training loss falls for every interface") {
  const Dataset tr = make_dataset(SynthTask::LayerSelect, 64, 5, 6, 4, 7);
  const Dataset te = make_dataset(SynthTask::LayerSelect, 16, 5, 6, 4, 8);
  for (InterfaceKind kind : kAllInterfaceKinds) {
    INFO(kind_name(kind));
    const TrainResult r = train(small_config(kind), tr, te);
    CHECK(r.report.epochs.back().loss < r.report.epochs.front().loss);
    CHECK(r.report.interface_params == param_count(r.model.interface.spec, 5, 4));
  }
}

TEST_CASE("training input errors") {
  const Dataset tr = make_dataset(SynthTask::LayerSelect, 8, 5, 6, 4, 9);
  const Dataset other = make_dataset(SynthTask::LayerSelect, 8, 5, 6, 3, 9);
  TrainConfig c = small_config(InterfaceKind::WeightedSum);
  CHECK_THROWS_AS(train(c, Dataset{}, tr), DataError);
  CHECK_THROWS_AS(train(c, tr, other), DimensionError);
  c.epochs = 0;
  CHECK_THROWS_AS(train(c, tr, tr), ConfigError);
  c = small_config(InterfaceKind::WeightedSum);
  c.learning_rate = -1;
  CHECK_THROWS_AS(train(c, tr, tr), ConfigError);

  const TrainResult r = train(small_config(InterfaceKind::WeightedSum), tr, tr);
  CHECK_THROWS_AS(evaluate(r.model, other), DimensionError);
  CHECK_THROWS_AS(evaluate(r.model, Dataset{}), DataError);

  testing::TempDir dir("train_empty");
  { std::ofstream(dir / "empty.jsonl"); }
  CHECK_THROWS_AS(load_dataset(dir / "empty.jsonl", HeadKind::Utterance), DataError);
}

TEST_CASE("a diverging run names the epoch") {
  const Dataset tr = make_dataset(SynthTask::LayerSelect, 16, 5, 6, 4, 10);
  TrainConfig c = small_config(InterfaceKind::ConcatProj);
  c.optimizer = Optimizer::GradientDescent;
  c.learning_rate = 1e300;
  c.batch_size = 16;
  try {
    train(c, tr, tr);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() >= 2);
    CHECK(std::string(e.what()).find("epoch " + std::to_string(e.epoch())) != std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Model bundles

TEST_CASE("model bundles round trip bit for bit") {
  const Dataset tr = make_dataset(SynthTask::LayerSelect, 24, 5, 6, 4, 11);
  testing::TempDir dir("lim");
  for (InterfaceKind kind : kAllInterfaceKinds) {
    INFO(kind_name(kind));
    TrainConfig c = small_config(kind);
    c.epochs = 1;
    c.head = HeadKind::Utterance;
    c.head_hidden = kind == InterfaceKind::WeightedSum ? 3 : 0;
    const TrainResult r = train(c, tr, tr);
    save_model(r.model, dir / "m.lim");
    const Model back = load_model(dir / "m.lim");
    CHECK(back.interface.fitted == r.model.interface.fitted);
    CHECK(back.head.spec.hidden == c.head_hidden);
    REQUIRE(back.interface.trainable.size() == r.model.interface.trainable.size());
    for (std::size_t i = 0; i < back.interface.trainable.size(); ++i) {
      CHECK(back.interface.trainable[i].value == r.model.interface.trainable[i].value);
    }
    for (std::size_t i = 0; i < back.interface.buffers.size(); ++i) {
      CHECK(back.interface.buffers[i].value == r.model.interface.buffers[i].value);
    }
    const EvalResult a = evaluate(r.model, tr), b = evaluate(back, tr);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.loss == b.loss);
    save_model(back, dir / "again.lim");
    CHECK(testing::read_bytes(dir / "m.lim") == testing::read_bytes(dir / "again.lim"));
  }
}

TEST_CASE("corrupted bundles are format errors") {
  const Dataset tr = make_dataset(SynthTask::LayerSelect, 8, 5, 6, 4, 12);
  TrainConfig c = small_config(InterfaceKind::GroupedWS);
  c.epochs = 1;
  testing::TempDir dir("lim_bad");
  save_model(train(c, tr, tr).model, dir / "m.lim");
  const std::string good = testing::read_bytes(dir / "m.lim");

  auto load_bytes = [&](const std::string& bytes) {
    testing::write_bytes(dir / "bad.lim", bytes);
    return load_model(dir / "bad.lim");
  };
  CHECK_THROWS_AS(load_bytes("LIM"), FormatError);
  CHECK_THROWS_AS(load_bytes("XIM1" + good.substr(4)), FormatError);
  CHECK_THROWS_AS(load_bytes(good.substr(0, 4) + std::string("\x02\0\0\0", 4) + good.substr(8)), FormatError);
  CHECK_THROWS_AS(load_bytes(good.substr(0, good.size() - 1)), FormatError);
  CHECK_THROWS_AS(load_bytes(good + "x"), FormatError);
  CHECK_THROWS_AS(load_bytes(good.substr(0, 14)), FormatError);

  std::string renamed = good;
  const auto at = renamed.rfind("\"bias\"");
  REQUIRE(at != std::string::npos);
  renamed[at + 1] = 'q';
  CHECK_THROWS_AS(load_bytes(renamed), FormatError);
  std::string garbled = good;
  garbled[12] = '!';
  CHECK_THROWS_AS(load_bytes(garbled), FormatError);
  CHECK_THROWS_AS(load_model(dir / "absent.lim"), DataError);
}

TEST_CASE("interface specs survive json") {
  for (InterfaceKind kind : kAllInterfaceKinds) {
    const InterfaceSpec s = default_spec(kind);
    CHECK(spec_to_json(spec_from_json(spec_to_json(s))) == spec_to_json(s));
  }
  const InterfaceSpec pca = PcaConcatSpec{7};
  CHECK(std::get<PcaConcatSpec>(spec_from_json(spec_to_json(pca))).components == 7);
  CHECK_THROWS_AS(spec_from_json(nlohmann::json{{"kind", "group-ws"}}), ConfigError);
  CHECK_THROWS_AS(spec_from_json(nlohmann::json::array()), ConfigError);
}
