#include "layeragg/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "layeragg/trainer.hpp"

namespace layeragg {

namespace {

using nlohmann::json;

const std::vector<std::string> kInterfaceNames = {"weighted-sum", "group-ws", "concat-proj",
                                                  "hier-conv",    "cls-pool", "pca-concat"};

struct InterfaceFlags {
  std::string kind;
  std::optional<Index> groups, heads, ffn, pca_k;

  void attach(CLI::App& app, bool required) {
    auto* opt = app.add_option("--interface", kind, "Interface kind")
                    ->check(CLI::IsMember(kInterfaceNames));
    if (required) opt->required();
    app.add_option("--groups", groups, "group-ws: number of layer groups");
    app.add_option("--heads", heads, "cls-pool: attention heads");
    app.add_option("--ffn", ffn, "cls-pool: feed-forward width");
    app.add_option("--pca-k", pca_k, "pca-concat: components per layer");
  }

  InterfaceSpec build() const {
    const InterfaceKind k = parse_kind(kind);
    InterfaceSpec spec = default_spec(k);
    auto reject = [&](const std::optional<Index>& v, const char* flag, InterfaceKind owner) {
      if (v && k != owner) {
        throw ConfigError(std::string(flag) + " does not apply to " + kind);
      }
    };
    reject(groups, "--groups", InterfaceKind::GroupedWS);
    reject(heads, "--heads", InterfaceKind::ClsPool);
    reject(ffn, "--ffn", InterfaceKind::ClsPool);
    reject(pca_k, "--pca-k", InterfaceKind::PcaConcat);
    if (auto* s = std::get_if<GroupedWsSpec>(&spec); s && groups) s->num_groups = *groups;
    if (auto* s = std::get_if<ClsPoolSpec>(&spec)) {
      if (heads) s->heads = *heads;
      if (ffn) s->ffn_dim = *ffn;
    }
    if (auto* s = std::get_if<PcaConcatSpec>(&spec); s && pca_k) s->components = *pca_k;
    return spec;
  }
};

void emit(const json& report, const std::string& report_path, std::ostream& out) {
  if (report_path.empty()) {
    out << report.dump(2) << '\n';
    return;
  }
  std::ofstream f(report_path, std::ios::trunc);
  if (!f) throw DataError("cannot open report " + report_path + " for writing");
  f << report.dump(2) << '\n';
  if (!f) throw DataError("write failed for report " + report_path);
}

// ---------------------------------------------------------------------------

struct SynthFlags {
  std::string task;
  std::string out_dir;
  std::optional<Index> n, layers, dim, frames;
  std::optional<double> margin, nuisance, noise;
  std::optional<std::uint64_t> seed;
  std::vector<Index> signal;
};

int run_synth(const SynthFlags& f, std::ostream& out) {
  SynthSpec spec = f.task == "collision" ? SynthSpec::collision_defaults()
                                         : SynthSpec::layer_select_defaults();
  if (f.n) spec.n = *f.n;
  if (f.layers) spec.layers = *f.layers;
  if (f.dim) spec.dim = *f.dim;
  if (f.frames) spec.frames = *f.frames;
  if (f.margin) spec.margin = *f.margin;
  if (f.nuisance) spec.nuisance_sigma = *f.nuisance;
  if (f.noise) spec.noise_sigma = *f.noise;
  if (f.seed) spec.seed = *f.seed;
  if (!f.signal.empty()) spec.signal_layers = f.signal;
  validate(spec);

  const SynthDataset ds = generate(spec, f.out_dir);
  emit({{"task", f.task},
        {"out", f.out_dir},
        {"n", spec.n},
        {"layers", spec.layers},
        {"frames", spec.frames},
        {"dim", spec.dim},
        {"signal_layers", spec.signal_layers},
        {"margin", spec.margin},
        {"nuisance", spec.nuisance_sigma},
        {"noise", spec.noise_sigma},
        {"seed", spec.seed},
        {"train_manifest", ds.train_manifest.string()},
        {"test_manifest", ds.test_manifest.string()},
        {"train_size", ds.train.records.size()},
        {"test_size", ds.test.records.size()}},
       "", out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  std::string train_manifest, test_manifest, head = "utterance", optimizer = "adam";
  std::string model_out, report;
  InterfaceFlags iface;
  TrainConfig defaults;
};

int run_train(TrainFlags& f, std::ostream& out) {
  TrainConfig c = f.defaults;
  c.interface = f.iface.build();
  c.head = parse_head_kind(f.head);
  c.optimizer = f.optimizer == "adam" ? Optimizer::Adam : Optimizer::GradientDescent;
  c.train_manifest = f.train_manifest;
  c.test_manifest = f.test_manifest;
  validate(c);

  const TrainResult result = train(c);
  if (!f.model_out.empty()) save_model(result.model, f.model_out);
  json report = to_json(result.report);
  report["timing"] = {{"wall_clock_seconds", result.report.wall_clock_seconds}};
  if (!f.model_out.empty()) report["model"] = f.model_out;
  emit(report, f.report, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run_eval(const std::string& manifest, const std::string& model_path, const std::string& report,
             std::ostream& out) {
  const Model model = load_model(model_path);
  const Dataset data = load_dataset(manifest, model.head.spec.kind);
  const EvalResult r = evaluate(model, data);
  emit({{"accuracy", r.accuracy},
        {"loss", r.loss},
        {"examples", data.examples.size()},
        {"manifest", manifest},
        {"model", model_path}},
       report, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run_params(const InterfaceFlags& f, Index layers, Index dim, std::ostream& out) {
  const InterfaceSpec spec = f.build();
  validate(spec, layers, dim);
  json report{{"interface", spec_to_json(spec)},
              {"layers", layers},
              {"dim", dim},
              {"param_count", param_count(spec, layers, dim)},
              {"output_dim", output_dim(spec, layers, dim)}};
  if (kind_of(spec) == InterfaceKind::HierConv) report["schedule"] = hierconv_plan(layers).extents;
  emit(report, "", out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run_gradcheck(const std::string& kind, const GradcheckOptions& opt, std::uint64_t seed,
                  std::ostream& out) {
  if (opt.layers < 1 || opt.frames < 1 || opt.dim < 1) {
    throw ConfigError("gradcheck: layers, frames and dim must be >= 1");
  }
  if (!(opt.tolerance > 0)) throw ConfigError("gradcheck: tolerance must be > 0");
  const auto cases =
      gradcheck_suite({parse_kind(kind)}, {HeadKind::Frame, HeadKind::Utterance}, {seed}, opt);
  json rows = json::array();
  bool passed = true;
  for (const auto& c : cases) {
    rows.push_back({{"interface", std::string(kind_name(c.kind))},
                    {"head", std::string(head_kind_name(c.head))},
                    {"seed", c.seed},
                    {"max_param_error", c.max_param_error},
                    {"max_input_error", c.max_input_error},
                    {"coordinates", c.coordinates},
                    {"passed", c.passed}});
    passed = passed && c.passed;
  }
  emit({{"tolerance", opt.tolerance}, {"passed", passed}, {"cases", rows}}, "", out);
  return passed ? kExitOk : kExitRuntime;
}

// ---------------------------------------------------------------------------

struct BenchFlags {
  InterfaceFlags iface;
  Index layers = 13, dim = 768, frames = 100, iters = 10;
  std::uint64_t seed = 0;
};

int run_bench(const BenchFlags& f, std::ostream& out) {
  if (f.iters < 1 || f.frames < 1) throw ConfigError("bench: iters and frames must be >= 1");
  const InterfaceSpec spec = f.iface.build();
  validate(spec, f.layers, f.dim);
  Prng rng(f.seed);
  InterfaceParams params = init_params(spec, f.layers, f.dim, rng);
  const LayerStack stack(rng.normal_tensor({f.layers, f.frames, f.dim}));
  if (params.kind() == InterfaceKind::PcaConcat) {
    const Index k = resolved_components(std::get<PcaConcatSpec>(spec), f.layers, f.dim);
    std::vector<LayerStack> fit;
    fit.emplace_back(rng.normal_tensor({f.layers, std::max(f.frames, k + 2), f.dim}));
    set_pca_buffers(params, fit_pca(fit, std::get<PcaConcatSpec>(spec), f.layers, f.dim));
  }
  const Tensord grad_out = Tensord::constant({f.frames, params.output_dim()}, 1.0);

  double forward_s = 0, backward_s = 0;
  for (Index i = 0; i < f.iters; ++i) {
    ForwardCache cache;
    const auto t0 = std::chrono::steady_clock::now();
    const TimeFeatures z = forward(params, stack, &cache);
    const auto t1 = std::chrono::steady_clock::now();
    const InterfaceGrads g = backward(params, cache, grad_out);
    const auto t2 = std::chrono::steady_clock::now();
    forward_s += std::chrono::duration<double>(t1 - t0).count();
    backward_s += std::chrono::duration<double>(t2 - t1).count();
  }
  const double total = forward_s + backward_s;
  const double frames = static_cast<double>(f.iters * f.frames);
  emit({{"interface", spec_to_json(spec)},
        {"layers", f.layers},
        {"dim", f.dim},
        {"frames", f.frames},
        {"iterations", f.iters},
        {"forward_seconds", forward_s},
        {"backward_seconds", backward_s},
        {"total_seconds", total},
        {"frames_per_second", total > 0 ? frames / total : 0.0}},
       "", out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-aggregation interfaces over frozen layer stacks", "layeragg"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--task", synth.task, "collision or layer-select")
      ->required()
      ->check(CLI::IsMember({"collision", "layer-select"}));
  synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
  synth_cmd->add_option("--n", synth.n, "Number of utterances");
  synth_cmd->add_option("--layers", synth.layers, "Layers L");
  synth_cmd->add_option("--dim", synth.dim, "Feature dim D");
  synth_cmd->add_option("--frames", synth.frames, "Frames T");
  synth_cmd->add_option("--margin", synth.margin, "Class margin m");
  synth_cmd->add_option("--nuisance", synth.nuisance, "Nuisance std");
  synth_cmd->add_option("--noise", synth.noise, "Signal noise std");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--signal", synth.signal, "Signal layer indices (0-based)");

  TrainFlags tr;
  auto* train_cmd = app.add_subcommand("train", "Train an interface and head");
  train_cmd->add_option("--train-manifest", tr.train_manifest, "Training manifest")->required();
  train_cmd->add_option("--test-manifest", tr.test_manifest, "Test manifest")->required();
  tr.iface.attach(*train_cmd, true);
  train_cmd->add_option("--head", tr.head, "frame or utterance")
      ->check(CLI::IsMember({"frame", "utterance"}));
  train_cmd->add_option("--head-hidden", tr.defaults.head_hidden, "Hidden width of the head (0: linear)");
  train_cmd->add_option("--classes", tr.defaults.num_classes, "Number of classes");
  train_cmd->add_option("--epochs", tr.defaults.epochs, "Epochs");
  train_cmd->add_option("--lr", tr.defaults.learning_rate, "Learning rate");
  train_cmd->add_option("--batch", tr.defaults.batch_size, "Batch size");
  train_cmd->add_option("--seed", tr.defaults.seed, "Seed");
  train_cmd->add_option("--optimizer", tr.optimizer, "adam or gd")
      ->check(CLI::IsMember({"adam", "gd"}));
  train_cmd->add_option("--model", tr.model_out, "Write the trained model bundle here");
  train_cmd->add_option("--report", tr.report, "Write the report here instead of stdout");

  std::string eval_manifest, eval_model, eval_report;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model bundle");
  eval_cmd->add_option("--manifest", eval_manifest, "Manifest")->required();
  eval_cmd->add_option("--model", eval_model, "Model bundle")->required();
  eval_cmd->add_option("--report", eval_report, "Write the report here instead of stdout");

  InterfaceFlags params_iface;
  Index params_layers = 0, params_dim = 0;
  auto* params_cmd = app.add_subcommand("params", "Count trainable interface parameters");
  params_iface.attach(*params_cmd, true);
  params_cmd->add_option("--layers", params_layers, "Layers L")->required();
  params_cmd->add_option("--dim", params_dim, "Feature dim D")->required();

  std::string gc_kind;
  GradcheckOptions gc;
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gc_cmd->add_option("--interface", gc_kind, "Interface kind")
      ->required()
      ->check(CLI::IsMember(kInterfaceNames));
  gc_cmd->add_option("--layers", gc.layers, "Layers L");
  gc_cmd->add_option("--dim", gc.dim, "Feature dim D");
  gc_cmd->add_option("--frames", gc.frames, "Frames T");
  gc_cmd->add_option("--seed", gc_seed, "Seed");
  gc_cmd->add_option("--tol", gc.tolerance, "Relative tolerance");

  BenchFlags bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time forward and backward passes");
  bench.iface.attach(*bench_cmd, true);
  bench_cmd->add_option("--layers", bench.layers, "Layers L");
  bench_cmd->add_option("--dim", bench.dim, "Feature dim D");
  bench_cmd->add_option("--frames", bench.frames, "Frames T");
  bench_cmd->add_option("--iters", bench.iters, "Iterations");
  bench_cmd->add_option("--seed", bench.seed, "Seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n"
        << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth, out);
    if (*train_cmd) return run_train(tr, out);
    if (*eval_cmd) return run_eval(eval_manifest, eval_model, eval_report, out);
    if (*params_cmd) return run_params(params_iface, params_layers, params_dim, out);
    if (*gc_cmd) return run_gradcheck(gc_kind, gc, gc_seed, out);
    if (*bench_cmd) return run_bench(bench, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const layeragg::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace layeragg
