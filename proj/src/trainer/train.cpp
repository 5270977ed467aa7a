#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "layeragg/trainer.hpp"

namespace layeragg {

using nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleStream = 0x9E3779B97F4A7C15ull;

json config_echo(const TrainConfig& c) {
  return {
      {"interface", spec_to_json(c.interface)},
      {"head", std::string(head_kind_name(c.head))},
      {"head_hidden", c.head_hidden},
      {"classes", c.num_classes},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"optimizer", c.optimizer == Optimizer::Adam ? "adam" : "gd"},
      {"seed", c.seed},
      {"train_manifest", c.train_manifest.string()},
      {"test_manifest", c.test_manifest.string()},
  };
}

struct StepResult {
  double loss;
  Index hits;
  Index positions;
};

// Forward + backward for one utterance, adding gradients into the
// accumulators.
StepResult accumulate(const Model& model, const Example& ex, std::vector<Tensord>& iface_grads,
                      std::vector<Tensord>& head_grads) {
  ForwardCache fc;
  const TimeFeatures z = forward(model.interface, ex.stack, &fc);
  HeadCache hc;
  const Tensord logits = head_forward(model.head, z, &hc);
  const LossGrad lg = ce_loss_grad(logits, ex.labels);
  HeadGrads hg = head_backward(model.head, hc, lg.grad);
  InterfaceGrads ig = backward(model.interface, fc, hg.input);
  for (std::size_t i = 0; i < iface_grads.size(); ++i) iface_grads[i].values() += ig.params[i].values();
  for (std::size_t i = 0; i < head_grads.size(); ++i) head_grads[i].values() += hg.params[i].values();
  Index hits = 0;
  for (Index r = 0; r < logits.dim(0); ++r) {
    if (argmax_row(logits, r) == ex.labels[static_cast<std::size_t>(r)]) ++hits;
  }
  return {lg.loss, hits, logits.dim(0)};
}

std::vector<Tensord> zeros_like(const std::vector<NamedTensor>& ts) {
  std::vector<Tensord> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.emplace_back(t.value.shape());
  return out;
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(c.learning_rate > 0)) throw ConfigError("learning rate must be > 0");
  if (c.num_classes < 2) throw ConfigError("classes must be >= 2");
  if (c.head_hidden < 0) throw ConfigError("head hidden width must be >= 0");
}

json to_json(const TrainReport& r) {
  json epochs = json::array();
  for (std::size_t i = 0; i < r.epochs.size(); ++i) {
    epochs.push_back({{"epoch", i + 1}, {"loss", r.epochs[i].loss}, {"accuracy", r.epochs[i].accuracy}});
  }
  return {
      {"epochs", epochs},
      {"test_accuracy", r.test_accuracy},
      {"test_loss", r.test_loss},
      {"interface_params", r.interface_params},
      {"head_params", r.head_params},
      {"total_params", r.interface_params + r.head_params},
      {"seed", r.seed},
      {"config", r.config},
  };
}

Dataset load_dataset(const DatasetManifest& manifest, HeadKind head) {
  if (manifest.records.empty()) throw DataError("dataset manifest is empty");
  Dataset ds;
  for (const auto& r : manifest.records) {
    Example ex{read_lif(manifest.resolve(r)), {}};
    if (head == HeadKind::Utterance) {
      if (!r.utt_label) throw DataError(r.feature_path + ": utterance head needs utt_label");
      ex.labels = {*r.utt_label};
    } else {
      if (!r.frame_labels) throw DataError(r.feature_path + ": frame head needs frame_labels");
      ex.labels = *r.frame_labels;
    }
    if (ds.examples.empty()) {
      ds.layers = ex.stack.layers();
      ds.dim = ex.stack.dim();
    } else if (ex.stack.layers() != ds.layers || ex.stack.dim() != ds.dim) {
      throw DataError(r.feature_path + ": feature dims differ from the rest of the dataset");
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, HeadKind head) {
  return load_dataset(load_manifest(manifest_path), head);
}

EvalResult evaluate(const Model& model, const Dataset& data) {
  if (data.examples.empty()) throw DataError("cannot evaluate on an empty dataset");
  if (data.layers != model.interface.layers || data.dim != model.interface.dim) {
    throw DimensionError("dataset (L=" + std::to_string(data.layers) + ", D=" +
                         std::to_string(data.dim) + ") does not match the model");
  }
  double loss = 0;
  Index hits = 0, positions = 0;
  for (const auto& ex : data.examples) {
    const Tensord logits = head_forward(model.head, forward(model.interface, ex.stack));
    loss += ce_loss_grad(logits, ex.labels).loss;
    for (Index r = 0; r < logits.dim(0); ++r) {
      if (argmax_row(logits, r) == ex.labels[static_cast<std::size_t>(r)]) ++hits;
    }
    positions += logits.dim(0);
  }
  return {static_cast<double>(hits) / static_cast<double>(positions),
          loss / static_cast<double>(data.examples.size())};
}

EvalResult evaluate(const Model& model, const DatasetManifest& manifest) {
  return evaluate(model, load_dataset(manifest, model.head.spec.kind));
}

TrainResult train(const TrainConfig& config) {
  validate(config);
  const Dataset train_set = load_dataset(config.train_manifest, config.head);
  const Dataset test_set = load_dataset(config.test_manifest, config.head);
  return train(config, train_set, test_set);
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& test_set) {
  validate(config);
  const auto started = std::chrono::steady_clock::now();
  if (train_set.examples.empty() || test_set.examples.empty()) {
    throw DataError("train and test sets must be non-empty");
  }
  if (test_set.layers != train_set.layers || test_set.dim != train_set.dim) {
    throw DimensionError("train and test features differ in (L, D)");
  }
  const Index layers = train_set.layers, dim = train_set.dim;

  Prng init_rng(config.seed);
  Prng shuffle_rng(config.seed ^ kShuffleStream);
  TrainResult result{{init_params(config.interface, layers, dim, init_rng), {}}, {}};
  Model& model = result.model;
  const HeadSpec head_spec{config.head, model.interface.output_dim(), config.num_classes,
                           config.head_hidden};
  model.head = init_head(head_spec, init_rng);

  if (model.interface.kind() == InterfaceKind::PcaConcat) {
    PcaAccumulator stats(layers, dim);
    for (const auto& ex : train_set.examples) stats.add(ex.stack);
    const auto& spec = std::get<PcaConcatSpec>(model.interface.spec);
    set_pca_buffers(model.interface, fit_pca(stats, resolved_components(spec, layers, dim)));
  }

  AdamState iface_adam, head_adam;
  std::vector<std::size_t> order(train_set.examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Index step = 0;

  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0;
    Index hits = 0, positions = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      auto iface_grads = zeros_like(model.interface.trainable);
      auto head_grads = zeros_like(model.head.trainable);
      for (std::size_t i = begin; i < end; ++i) {
        const StepResult s = accumulate(model, train_set.examples[order[i]], iface_grads, head_grads);
        if (!std::isfinite(s.loss)) {
          throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch), epoch);
        }
        epoch_loss += s.loss;
        hits += s.hits;
        positions += s.positions;
      }
      const double scale = 1.0 / static_cast<double>(end - begin);
      for (auto& g : iface_grads) g.values() *= scale;
      for (auto& g : head_grads) g.values() *= scale;

      ++step;
      if (config.optimizer == Optimizer::Adam) {
        adam_step(model.interface.trainable, iface_grads, iface_adam, config.learning_rate, step);
        adam_step(model.head.trainable, head_grads, head_adam, config.learning_rate, step);
      } else {
        sgd_step(model.interface.trainable, iface_grads, config.learning_rate);
        sgd_step(model.head.trainable, head_grads, config.learning_rate);
      }
      model.interface.touch();
    }
    const double mean_loss = epoch_loss / static_cast<double>(train_set.examples.size());
    if (!std::isfinite(mean_loss)) {
      throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch), epoch);
    }
    result.report.epochs.push_back(
        {mean_loss, static_cast<double>(hits) / static_cast<double>(positions)});
  }

  const EvalResult test = evaluate(model, test_set);
  TrainReport& r = result.report;
  r.test_accuracy = test.accuracy;
  r.test_loss = test.loss;
  r.interface_params = model.interface.trainable_count();
  r.head_params = model.head.trainable_count();
  r.seed = config.seed;
  r.config = config_echo(config);
  r.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace layeragg
