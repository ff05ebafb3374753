#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lvcov/fisher.hpp"
#include "lvcov/kernels.hpp"
#include "lvcov/tensor.hpp"

namespace lvcov {

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

struct ConvSpec {
  std::size_t kd, kh, kw;  // kernel depth, height, width
  std::size_t channels;
  Extent3 stride{1, 1, 1};
};

struct PoolSpec {
  Extent3 window;
  Extent3 stride;
};

enum class Activation { relu, identity, sigmoid };

struct DenseSpec {
  std::size_t units;
  Activation activation;
  bool fisher = false;   // features of this layer enter the scatter penalty
  bool dropout = false;  // inverted dropout on this layer's output while training
};

using LayerSpec = std::variant<ConvSpec, PoolSpec, DenseSpec>;

struct NetworkArch {
  std::string name;
  Shape input;  // [D, H, W, C]
  std::vector<LayerSpec> layers;
  std::vector<std::string> layer_names;

  /// Output shape of every layer; validates the whole chain.
  std::vector<Shape> output_shapes() const;
  /// Index of the Fisher layer, if any.
  std::optional<std::size_t> fisher_layer() const;
  /// One-line canonical description, stored in model files.
  std::string describe() const;
  void validate() const;
};

/// Input 120x120x3, C1-M1-C2-M2-C3-M3-F1-F2 plus a Dense(1, sigmoid) head.
NetworkArch table1_arch();
/// Input 8x8x3, one 3x3x2 conv with 2 channels, one pool, F1=8, F2=4, head.
NetworkArch tiny_arch();
/// table1 with F2 replaced by a 256-unit ReLU layer and no Fisher layer.
NetworkArch traditional_arch();
/// table1 | tiny | traditional
NetworkArch arch_by_name(const std::string& name);

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct LayerParams {
  BasicTensor<T> weights;  // empty for pooling layers
  BasicTensor<T> bias;
  BasicTensor<T> weights_velocity;
  BasicTensor<T> bias_velocity;

  bool trainable() const { return !weights.empty(); }
};

template <typename T>
struct BasicModel {
  NetworkArch arch;
  std::vector<LayerParams<T>> layers;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::vector<double> objective_trace;

  /// Pointers to every weight tensor (biases excluded), in layer order.
  std::vector<const BasicTensor<T>*> weight_tensors() const;
  bool operator==(const BasicModel&) const;
};

using Model = BasicModel<Real>;

enum class InitScheme {
  fixed,   // N(0, 0.01) for every weight
  hybrid,  // N(0, 0.01) for conv kernels, N(0, 2/fan_in) for dense layers
  he,      // N(0, 2/fan_in) for every weight
};

InitScheme init_scheme_from_name(const std::string& name);
std::string init_scheme_name(InitScheme scheme);

template <typename T>
BasicModel<T> init_params(const NetworkArch& arch, std::uint64_t seed, InitScheme scheme = InitScheme::fixed,
                          double sigma = 0.01);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

enum class Mode { train, infer };

template <typename T>
struct ForwardTrace {
  std::vector<BasicTensor<T>> activations;  // [0] = input, [i+1] = output of layer i
  std::vector<std::vector<std::size_t>> argmax;  // per layer, filled for pooling layers
  std::vector<BasicTensor<T>> dropout_masks;     // per layer, filled where dropout ran
  double logit = 0.0;
  double probability = 0.5;

  /// Output of the Fisher layer.
  const BasicTensor<T>& features(const NetworkArch& arch) const;
};

/// Accepts a block shaped [D, H, W] or [D, H, W, 1]. In train mode dropout
/// masks are drawn from rng at `dropout_rate` unless `masks` supplies them
/// (one per layer, empty tensors where the layer has no dropout).
template <typename T>
ForwardTrace<T> forward(const BasicModel<T>& model, const BasicTensor<T>& block, Mode mode, Rng* rng = nullptr,
                        double dropout_rate = 0.1, const std::vector<BasicTensor<T>>* masks = nullptr);

template <typename T>
struct Gradients {
  std::vector<BasicTensor<T>> weights;  // per layer, empty for pooling
  std::vector<BasicTensor<T>> bias;
};

template <typename T>
struct BatchResult {
  Gradients<T> grads;
  ObjectiveTerms terms;
  std::optional<ScatterReport> report;
};

struct LossWeights {
  double lambda = 1e-4;
  double eta = 0.1;
  bool data = true;  // include the cross-entropy term; false isolates the regularizers
};

/// Objective and parameter gradients for a batch of train-mode traces.
template <typename T>
BatchResult<T> backward(const BasicModel<T>& model, std::span<const ForwardTrace<T>> traces, std::span<const int> labels,
                        const LossWeights& weights);

/// Objective of a batch of traces, with optionally frozen class means
/// (the between-class term then uses the frozen means as well).
template <typename T>
ObjectiveTerms batch_objective(const BasicModel<T>& model, std::span<const ForwardTrace<T>> traces,
                               std::span<const int> labels, const LossWeights& weights,
                               const TensorD* frozen_class_means = nullptr);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double dropout_rate = 0.1;
  double lambda = 1e-4;
  double eta = 0.1;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 40;  // total epochs including any already in the model
  std::size_t stop_window = 5;
  double stop_sigma = 0.01;
  std::uint64_t seed = 1;
  InitScheme init = InitScheme::hybrid;

  void validate() const;
};

/// Classical momentum: v <- momentum*v - lr*g; p <- p + v.
template <typename T>
void sgd_momentum_step(BasicModel<T>& model, const Gradients<T>& grads, const TrainConfig& config);

/// True once the trace holds a full window whose sample standard deviation
/// is below sigma.
bool should_stop(std::span<const double> trace, std::size_t window, double sigma);

enum class StopReason { converged, max_epochs, diverged };
std::string stop_reason_name(StopReason reason);

struct EpochReport {
  std::size_t epoch;  // 1-based
  double objective;
  double seconds;
};

template <typename T>
struct TrainResult {
  BasicModel<T> model;
  StopReason reason = StopReason::max_epochs;
  std::string diagnostic;
};

/// Algorithm-1 loop over stratified mini-batches. Continues from
/// `start.epochs`; per-epoch randomness is derived from (config.seed, epoch)
/// so resuming from a saved model reproduces an uninterrupted run.
template <typename T>
TrainResult<T> train(BasicModel<T> start, const std::vector<BasicTensor<T>>& blocks, const std::vector<int>& labels,
                     const TrainConfig& config, const std::function<void(const EpochReport&)>& observer = {});

template <typename T>
TrainResult<T> train(const NetworkArch& arch, const std::vector<BasicTensor<T>>& blocks,
                     const std::vector<int>& labels, const TrainConfig& config,
                     const std::function<void(const EpochReport&)>& observer = {}) {
  return train(init_params<T>(arch, config.seed, config.init), blocks, labels, config, observer);
}

/// Stratified batch composition of one epoch: both polarities in every batch.
std::vector<std::vector<std::size_t>> stratified_batches(const std::vector<int>& labels, std::size_t batch_size,
                                                         Rng& rng);

template <typename T>
double predict(const BasicModel<T>& model, const BasicTensor<T>& block);

/// F2 scatter ratio tr_sw / tr_sb over a labelled set in infer mode.
template <typename T>
ScatterReport feature_scatter(const BasicModel<T>& model, const std::vector<BasicTensor<T>>& blocks,
                              const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Model container
// ---------------------------------------------------------------------------

template <typename T>
void save_model(const BasicModel<T>& model, const std::filesystem::path& path);

template <typename T>
BasicModel<T> load_model(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace lvcov
