#pragma once

// Training, evaluation, optimizer, gradient checking and model bundles for an
// interface + head pair on top of frozen upstream features.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "layeragg/data.hpp"
#include "layeragg/heads.hpp"
#include "layeragg/interfaces.hpp"

namespace layeragg {

enum class Optimizer { Adam, GradientDescent };

struct TrainConfig {
  InterfaceSpec interface = WeightedSumSpec{};
  HeadKind head = HeadKind::Utterance;
  Index head_hidden = 0;
  Index num_classes = 2;
  Index epochs = 30;
  Index batch_size = 32;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::Adam;
  std::uint64_t seed = 0;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

void validate(const TrainConfig& config);

struct EpochStats {
  double loss = 0;
  double accuracy = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double test_accuracy = 0;
  double test_loss = 0;
  Index interface_params = 0;
  Index head_params = 0;
  double wall_clock_seconds = 0;
  std::uint64_t seed = 0;
  nlohmann::json config;
};

/// Everything except wall_clock_seconds, which lives under "timing".
nlohmann::json to_json(const TrainReport& report);

struct Model {
  InterfaceParams interface;
  HeadParams head;
};

/// One utterance with its labels: one label for utterance heads, T for frame
/// heads.
struct Example {
  LayerStack stack;
  std::vector<int> labels;
};

struct Dataset {
  std::vector<Example> examples;
  Index layers = 0;
  Index dim = 0;
};

Dataset load_dataset(const DatasetManifest& manifest, HeadKind head);
Dataset load_dataset(const std::filesystem::path& manifest_path, HeadKind head);

struct EvalResult {
  double accuracy = 0;
  double loss = 0;
};

/// Accuracy over all label positions and the mean per-utterance loss.
EvalResult evaluate(const Model& model, const Dataset& data);
EvalResult evaluate(const Model& model, const DatasetManifest& manifest);

struct TrainResult {
  Model model;
  TrainReport report;
};

/// Reads both manifests, then trains. Throws DivergenceError naming the epoch
/// if the loss becomes non-finite.
TrainResult train(const TrainConfig& config);
TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& test_set);

// ---------------------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensord> m;
  std::vector<Tensord> v;
};

/// One Adam update with bias correction; t is the 1-based step count.
void adam_step(std::vector<NamedTensor>& params, const std::vector<Tensord>& grads,
               AdamState& state, double lr, Index t);

void sgd_step(std::vector<NamedTensor>& params, const std::vector<Tensord>& grads, double lr);

// ---------------------------------------------------------------------------

struct GradcheckCase {
  InterfaceKind kind;
  HeadKind head;
  std::uint64_t seed;
  double max_param_error = 0;
  double max_input_error = 0;
  Index coordinates = 0;
  bool passed = false;
};

/// Hook to substitute the interface backward (used to verify the checker
/// catches broken formulas).
using BackwardFn =
    std::function<InterfaceGrads(const InterfaceParams&, const ForwardCache&, const Tensord&)>;

struct GradcheckOptions {
  Index layers = 5;
  Index frames = 7;
  Index dim = 8;
  double tolerance = 1e-4;
  double step = 1e-5;
  BackwardFn backward_override;
};

/// Builds interface -> head -> cross-entropy for each (kind, head, seed) and
/// compares the hand-written gradient of every trainable coordinate and every
/// input coordinate against central differences.
std::vector<GradcheckCase> gradcheck_suite(const std::vector<InterfaceKind>& kinds,
                                           const std::vector<HeadKind>& heads,
                                           const std::vector<std::uint64_t>& seeds,
                                           const GradcheckOptions& options = {});

GradcheckCase gradcheck_case(const InterfaceSpec& spec, HeadKind head, std::uint64_t seed,
                             const GradcheckOptions& options = {});

// ---------------------------------------------------------------------------

/// LIM bundle: magic "LIM1", u32 version, u32 length + JSON config blob, then
/// every tensor as float64 little-endian in declaration order (interface
/// trainables, interface buffers, head trainables).
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

nlohmann::json spec_to_json(const InterfaceSpec& spec);
InterfaceSpec spec_from_json(const nlohmann::json& j);

}  // namespace layeragg
