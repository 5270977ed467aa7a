#pragma once

// Feature files, dataset manifests and synthetic layer-stack generators.
//
// LIF layout (little-endian):
//   bytes  0-3   magic "LIF1"
//   bytes  4-7   u32 version = 1
//   bytes  8-11  u32 L
//   bytes 12-15  u32 T
//   bytes 16-19  u32 D
//   bytes 20-23  u32 dtype = 1 (float32)
//   then L*T*D float32 values, layer-major (l outer, t, d inner)

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "layeragg/interfaces.hpp"

namespace layeragg {

struct LifHeader {
  std::uint32_t layers = 0;
  std::uint32_t frames = 0;
  std::uint32_t dim = 0;
};

/// Values are narrowed to float32 on write.
void write_lif(const LayerStack& stack, const std::filesystem::path& path);
/// Values are widened to float64 on read.
LayerStack read_lif(const std::filesystem::path& path);
LifHeader read_lif_header(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct ManifestRecord {
  std::string feature_path;  // as written; relative paths resolve against the manifest dir
  std::optional<int> utt_label;
  std::optional<std::vector<int>> frame_labels;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestRecord& r) const;
};

/// JSON Lines, one object per record with keys feature_path and exactly one
/// of utt_label / frame_labels. Blank lines are skipped. Checks that every
/// referenced file shares (L, D) and that frame label counts match T.
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// ---------------------------------------------------------------------------

enum class SynthTask { Collision, LayerSelect };

struct SynthSpec {
  SynthTask task = SynthTask::Collision;
  Index n = 2000;
  Index layers = 13;
  Index frames = 20;
  Index dim = 8;
  std::vector<Index> signal_layers = {3, 5};  // (a, b) for collision, {j} for layer select
  double margin = 1.0;
  double nuisance_sigma = 5.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 42;
  double train_fraction = 0.8;

  static SynthSpec collision_defaults();
  static SynthSpec layer_select_defaults();
};

void validate(const SynthSpec& spec);

struct SynthDataset {
  DatasetManifest train;
  DatasetManifest test;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

/// Draws utterance i's stack and label; the draw order is part of the
/// dataset definition. Pure function of (spec, generator state).
LayerStack synth_utterance(const SynthSpec& spec, Prng& rng, int& label);

/// Collision task: per utterance y ~ Bernoulli(1/2) and a nuisance
/// u ~ N(0, sigma_u^2) shared by every frame of the utterance, then
///   h[a,t,0] = u + m(2y-1) + e,   h[b,t,0] = u - m(2y-1) + e'
/// with e, e' ~ N(0, sigma_e^2) and every other entry N(0, 1).
/// Writes feats/utt_NNNNN.lif plus train.jsonl / test.jsonl under out_dir.
SynthDataset gen_collision(const SynthSpec& spec, const std::filesystem::path& out_dir);

/// Layer-select task: h[j,t,0] = m(2y-1) + e, everything else N(0, 1).
SynthDataset gen_layer_select(const SynthSpec& spec, const std::filesystem::path& out_dir);

SynthDataset generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace layeragg
