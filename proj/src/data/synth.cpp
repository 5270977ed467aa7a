#include <cmath>
#include <cstdio>
#include <string>

#include "layeragg/data.hpp"

namespace layeragg {

SynthSpec SynthSpec::collision_defaults() { return SynthSpec{}; }

SynthSpec SynthSpec::layer_select_defaults() {
  SynthSpec s;
  s.task = SynthTask::LayerSelect;
  s.signal_layers = {3};
  s.noise_sigma = 0.5;
  return s;
}

void validate(const SynthSpec& spec) {
  if (spec.n < 1 || spec.layers < 1 || spec.frames < 1 || spec.dim < 1) {
    throw ConfigError("synth: n, L, T and D must all be >= 1");
  }
  const std::size_t want = spec.task == SynthTask::Collision ? 2 : 1;
  if (spec.signal_layers.size() != want) {
    throw ConfigError(spec.task == SynthTask::Collision
                          ? "synth: collision needs two signal layers (a, b)"
                          : "synth: layer-select needs one signal layer");
  }
  for (Index l : spec.signal_layers) {
    if (l < 0 || l >= spec.layers) {
      throw ConfigError("synth: signal layer " + std::to_string(l) + " outside [0, L=" +
                        std::to_string(spec.layers) + ")");
    }
  }
  if (want == 2 && spec.signal_layers[0] == spec.signal_layers[1]) {
    throw ConfigError("synth: collision signal layers must differ");
  }
  if (!(spec.margin > 0)) throw ConfigError("synth: margin must be > 0");
  if (!(spec.nuisance_sigma >= 0) || !(spec.noise_sigma >= 0)) {
    throw ConfigError("synth: sigmas must be >= 0");
  }
  if (!(spec.train_fraction > 0 && spec.train_fraction <= 1)) {
    throw ConfigError("synth: train fraction must be in (0, 1]");
  }
}

// Draw order per utterance: label, nuisance, then every entry of the stack
// layer-major, then the signal noise for each frame.
LayerStack synth_utterance(const SynthSpec& spec, Prng& rng, int& label) {
  label = rng.uniform() < 0.5 ? 0 : 1;
  const double sign = 2.0 * label - 1.0;
  const double nuisance = spec.nuisance_sigma * rng.normal();
  LayerStack h(spec.layers, spec.frames, spec.dim);
  Tensord& v = h.values();
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  for (Index t = 0; t < spec.frames; ++t) {
    if (spec.task == SynthTask::Collision) {
      const Index a = spec.signal_layers[0], b = spec.signal_layers[1];
      v(a, t, 0) = nuisance + spec.margin * sign + spec.noise_sigma * rng.normal();
      v(b, t, 0) = nuisance - spec.margin * sign + spec.noise_sigma * rng.normal();
    } else {
      const Index j = spec.signal_layers[0];
      v(j, t, 0) = spec.margin * sign + spec.noise_sigma * rng.normal();
    }
  }
  return h;
}

SynthDataset generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  validate(spec);
  std::filesystem::create_directories(out_dir / "feats");
  Prng rng(spec.seed);
  SynthDataset ds;
  ds.train.base_dir = out_dir;
  ds.test.base_dir = out_dir;
  const auto n_train = static_cast<Index>(std::floor(spec.train_fraction * static_cast<double>(spec.n)));
  for (Index i = 0; i < spec.n; ++i) {
    int label = 0;
    const LayerStack h = synth_utterance(spec, rng, label);
    char name[48];
    std::snprintf(name, sizeof name, "feats/utt_%05lld.lif", static_cast<long long>(i));
    write_lif(h, out_dir / name);
    ManifestRecord r{name, label, std::nullopt};
    (i < n_train ? ds.train : ds.test).records.push_back(std::move(r));
  }
  ds.train_manifest = out_dir / "train.jsonl";
  ds.test_manifest = out_dir / "test.jsonl";
  write_manifest(ds.train, ds.train_manifest);
  write_manifest(ds.test, ds.test_manifest);
  return ds;
}

SynthDataset gen_collision(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.task != SynthTask::Collision) throw ConfigError("gen_collision: task must be collision");
  return generate(spec, out_dir);
}

SynthDataset gen_layer_select(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.task != SynthTask::LayerSelect) {
    throw ConfigError("gen_layer_select: task must be layer_select");
  }
  return generate(spec, out_dir);
}

}  // namespace layeragg
