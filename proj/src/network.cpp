#include "lvcov/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "lvcov/random.hpp"

namespace lvcov {
namespace {

template <class... F>
struct Overloaded : F... {
  using F::operator()...;
};
template <class... F>
Overloaded(F...) -> Overloaded<F...>;

std::string extent_string(Extent3 e) {
  return std::to_string(e.d) + "x" + std::to_string(e.h) + "x" + std::to_string(e.w);
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

NetworkArch with_table1_front(std::string name) {
  NetworkArch arch;
  arch.name = std::move(name);
  arch.input = {3, 120, 120, 1};
  arch.layers = {
      ConvSpec{2, 7, 7, 16},
      PoolSpec{{1, 2, 2}, {1, 2, 2}},
      ConvSpec{2, 13, 13, 16},
      PoolSpec{{1, 3, 3}, {1, 3, 3}},
      ConvSpec{1, 10, 10, 64},
      PoolSpec{{1, 2, 2}, {1, 2, 2}},
      DenseSpec{256, Activation::relu, false, true},
  };
  arch.layer_names = {"C1", "M1", "C2", "M2", "C3", "M3", "F1"};
  return arch;
}

template <typename T>
void check_finite(const BasicTensor<T>& t, const std::string& what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(static_cast<double>(t[i]))) {
      throw NumericError("non-finite value in " + what + " at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
void add_into(BasicTensor<T>& acc, const BasicTensor<T>& x) {
  T* a = acc.data();
  const T* b = x.data();
  for (std::size_t i = 0; i < acc.size(); ++i) a[i] += b[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

std::vector<Shape> NetworkArch::output_shapes() const {
  if (input.size() != 4) throw DimensionError("network input must be [D,H,W,C], got " + shape_string(input));
  if (layer_names.size() != layers.size()) throw ParameterError("every layer needs a name");
  std::vector<Shape> shapes;
  Shape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string& nm = layer_names[i];
    std::visit(Overloaded{
                   [&](const ConvSpec& c) {
                     if (cur.size() != 4) throw DimensionError(nm + ": convolution after a dense layer");
                     try {
                       cur = {window_output(cur[0], c.kd, c.stride.d), window_output(cur[1], c.kh, c.stride.h),
                              window_output(cur[2], c.kw, c.stride.w), c.channels};
                     } catch (const DimensionError& e) {
                       throw DimensionError(nm + ": " + e.what());
                     }
                   },
                   [&](const PoolSpec& p) {
                     if (cur.size() != 4) throw DimensionError(nm + ": pooling after a dense layer");
                     try {
                       cur = {window_output(cur[0], p.window.d, p.stride.d),
                              window_output(cur[1], p.window.h, p.stride.h),
                              window_output(cur[2], p.window.w, p.stride.w), cur[3]};
                     } catch (const DimensionError& e) {
                       throw DimensionError(nm + ": " + e.what());
                     }
                   },
                   [&](const DenseSpec& d) {
                     if (d.units == 0) throw DimensionError(nm + ": dense layer needs at least one unit");
                     cur = {d.units};
                   },
               },
               layers[i]);
    shapes.push_back(cur);
  }
  return shapes;
}

std::optional<std::size_t> NetworkArch::fisher_layer() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (const auto* d = std::get_if<DenseSpec>(&layers[i]); d && d->fisher) return i;
  }
  return std::nullopt;
}

void NetworkArch::validate() const {
  if (layers.empty()) throw ParameterError("architecture has no layers");
  output_shapes();
  std::size_t fisher_count = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (const auto* d = std::get_if<DenseSpec>(&layers[i])) {
      if (d->fisher) {
        ++fisher_count;
        if (d->activation != Activation::identity) throw ParameterError(layer_names[i] + ": Fisher layer must be linear");
      }
      if (d->activation == Activation::sigmoid && i + 1 != layers.size()) {
        throw ParameterError(layer_names[i] + ": sigmoid is only allowed on the output head");
      }
    }
  }
  if (fisher_count > 1) throw ParameterError("at most one Fisher layer is allowed");
  const auto* head = std::get_if<DenseSpec>(&layers.back());
  if (!head || head->units != 1 || head->activation != Activation::sigmoid || head->dropout) {
    throw ParameterError("the last layer must be Dense(1, sigmoid)");
  }
}

std::string NetworkArch::describe() const {
  std::ostringstream out;
  out << name << " in=" << shape_string(input);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out << ' ' << layer_names[i] << ':';
    std::visit(Overloaded{
                   [&](const ConvSpec& c) {
                     out << "conv" << extent_string({c.kd, c.kh, c.kw}) << '/' << c.channels << "@"
                         << extent_string(c.stride);
                   },
                   [&](const PoolSpec& p) { out << "pool" << extent_string(p.window) << '@' << extent_string(p.stride); },
                   [&](const DenseSpec& d) {
                     out << "dense" << d.units << ',' << activation_name(d.activation);
                     if (d.fisher) out << ",fisher";
                     if (d.dropout) out << ",dropout";
                   },
               },
               layers[i]);
  }
  return out.str();
}

NetworkArch table1_arch() {
  NetworkArch arch = with_table1_front("table1");
  arch.layers.push_back(DenseSpec{4, Activation::identity, true, false});
  arch.layers.push_back(DenseSpec{1, Activation::sigmoid});
  arch.layer_names.push_back("F2");
  arch.layer_names.push_back("head");
  return arch;
}

NetworkArch traditional_arch() {
  NetworkArch arch = with_table1_front("traditional");
  arch.layers.push_back(DenseSpec{256, Activation::relu});
  arch.layers.push_back(DenseSpec{1, Activation::sigmoid});
  arch.layer_names.push_back("F2");
  arch.layer_names.push_back("head");
  return arch;
}

NetworkArch tiny_arch() {
  NetworkArch arch;
  arch.name = "tiny";
  arch.input = {3, 8, 8, 1};
  arch.layers = {
      ConvSpec{2, 3, 3, 2},
      PoolSpec{{1, 2, 2}, {1, 2, 2}},
      DenseSpec{8, Activation::relu, false, true},
      DenseSpec{4, Activation::identity, true, false},
      DenseSpec{1, Activation::sigmoid},
  };
  arch.layer_names = {"C1", "M1", "F1", "F2", "head"};
  return arch;
}

NetworkArch arch_by_name(const std::string& name) {
  if (name == "table1") return table1_arch();
  if (name == "tiny") return tiny_arch();
  if (name == "traditional") return traditional_arch();
  throw ParameterError("unknown architecture '" + name + "' (expected table1, tiny or traditional)");
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
std::vector<const BasicTensor<T>*> BasicModel<T>::weight_tensors() const {
  std::vector<const BasicTensor<T>*> out;
  for (const auto& l : layers) {
    if (l.trainable()) out.push_back(&l.weights);
  }
  return out;
}

template <typename T>
bool BasicModel<T>::operator==(const BasicModel& o) const {
  if (arch.describe() != o.arch.describe() || seed != o.seed || epochs != o.epochs ||
      objective_trace != o.objective_trace || layers.size() != o.layers.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = o.layers[i];
    if (!(a.weights == b.weights && a.bias == b.bias && a.weights_velocity == b.weights_velocity &&
          a.bias_velocity == b.bias_velocity)) {
      return false;
    }
  }
  return true;
}

InitScheme init_scheme_from_name(const std::string& name) {
  if (name == "fixed") return InitScheme::fixed;
  if (name == "hybrid") return InitScheme::hybrid;
  if (name == "he") return InitScheme::he;
  throw ParameterError("unknown init scheme '" + name + "' (expected fixed, hybrid or he)");
}

std::string init_scheme_name(InitScheme scheme) {
  switch (scheme) {
    case InitScheme::fixed: return "fixed";
    case InitScheme::hybrid: return "hybrid";
    case InitScheme::he: return "he";
  }
  return "?";
}

template <typename T>
BasicModel<T> init_params(const NetworkArch& arch, std::uint64_t seed, InitScheme scheme, double sigma) {
  arch.validate();
  if (!(sigma > 0.0)) throw ParameterError("init sigma must be positive");
  BasicModel<T> model;
  model.arch = arch;
  model.seed = seed;
  Rng rng(derive_seed(seed, 0x696e6974));
  Shape cur = arch.input;
  const std::vector<Shape> shapes = arch.output_shapes();
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    LayerParams<T> p;
    Shape wshape;
    bool is_conv = false;
    if (const auto* c = std::get_if<ConvSpec>(&arch.layers[i])) {
      wshape = {c->channels, cur[3], c->kd, c->kh, c->kw};
      is_conv = true;
    } else if (const auto* d = std::get_if<DenseSpec>(&arch.layers[i])) {
      wshape = {d->units, shape_volume(cur)};
    }
    if (!wshape.empty()) {
      const double fan_in = static_cast<double>(shape_volume(wshape) / wshape[0]);
      double sd = sigma;
      if (scheme == InitScheme::he || (scheme == InitScheme::hybrid && !is_conv)) sd = std::sqrt(2.0 / fan_in);
      std::normal_distribution<double> normal(0.0, sd);
      p.weights = BasicTensor<T>(wshape);
      for (T& w : p.weights.values()) w = static_cast<T>(normal(rng));
      p.bias = BasicTensor<T>({wshape[0]});
      p.weights_velocity = BasicTensor<T>(wshape);
      p.bias_velocity = BasicTensor<T>({wshape[0]});
    }
    model.layers.push_back(std::move(p));
    cur = shapes[i];
  }
  return model;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
const BasicTensor<T>& ForwardTrace<T>::features(const NetworkArch& arch) const {
  const auto f = arch.fisher_layer();
  if (!f) throw ParameterError("architecture '" + arch.name + "' has no Fisher layer");
  return activations.at(*f + 1);
}

template <typename T>
ForwardTrace<T> forward(const BasicModel<T>& model, const BasicTensor<T>& block, Mode mode, Rng* rng,
                        double dropout_rate, const std::vector<BasicTensor<T>>* masks) {
  const NetworkArch& arch = model.arch;
  BasicTensor<T> x = block.rank() == 3 ? block.reshaped({block.extent(0), block.extent(1), block.extent(2), 1}) : block;
  if (x.shape() != arch.input) {
    throw DimensionError("network input must be " + shape_string(arch.input) + ", got " + shape_string(block.shape()));
  }
  const std::size_t n_layers = arch.layers.size();
  if (masks && masks->size() != n_layers) throw DimensionError("one dropout mask slot per layer is required");

  ForwardTrace<T> trace;
  trace.activations.reserve(n_layers + 1);
  trace.argmax.resize(n_layers);
  trace.dropout_masks.resize(n_layers);
  trace.activations.push_back(std::move(x));

  for (std::size_t i = 0; i < n_layers; ++i) {
    const BasicTensor<T>& cur = trace.activations.back();
    const LayerParams<T>& p = model.layers[i];
    BasicTensor<T> y;
    if (const auto* c = std::get_if<ConvSpec>(&arch.layers[i])) {
      y = conv3d_forward(cur, p.weights, p.bias, c->stride);
      relu_inplace(y);
    } else if (const auto* pl = std::get_if<PoolSpec>(&arch.layers[i])) {
      PoolResult<T> r = maxpool3d_forward(cur, pl->window, pl->stride);
      y = std::move(r.output);
      trace.argmax[i] = std::move(r.argmax);
    } else {
      const auto& d = std::get<DenseSpec>(arch.layers[i]);
      y = dense_forward(cur, p.weights, p.bias);
      if (d.activation == Activation::relu) relu_inplace(y);
      if (d.activation == Activation::sigmoid) {
        trace.logit = static_cast<double>(y[0]);
        trace.probability = static_cast<double>(sigmoid(y[0]));
      }
      if (d.dropout && mode == Mode::train) {
        BasicTensor<T> mask;
        if (masks) {
          mask = (*masks)[i];
          if (mask.shape() != y.shape()) throw DimensionError(arch.layer_names[i] + ": dropout mask shape mismatch");
        } else {
          if (!rng) throw ParameterError("train-mode forward needs an rng or explicit dropout masks");
          mask = dropout_mask<T>(y.shape(), dropout_rate, *rng);
        }
        for (std::size_t k = 0; k < y.size(); ++k) y[k] *= mask[k];
        trace.dropout_masks[i] = std::move(mask);
      }
    }
    trace.activations.push_back(std::move(y));
  }
  return trace;
}

namespace {

template <typename T>
BatchFeatures collect_features(const NetworkArch& arch, std::span<const ForwardTrace<T>> traces,
                               std::span<const int> labels) {
  const std::size_t fi = *arch.fisher_layer();
  const std::size_t d = std::get<DenseSpec>(arch.layers[fi]).units;
  BatchFeatures batch{TensorD({traces.size(), d}), std::vector<int>(labels.begin(), labels.end())};
  for (std::size_t j = 0; j < traces.size(); ++j) {
    const BasicTensor<T>& f = traces[j].activations[fi + 1];
    for (std::size_t k = 0; k < d; ++k) batch.features[j * d + k] = static_cast<double>(f[k]);
  }
  return batch;
}

bool both_groups(std::span<const int> labels) {
  bool seen[2] = {false, false};
  for (int y : labels) {
    if (y == 0 || y == 1) seen[y] = true;
  }
  return seen[0] && seen[1];
}

template <typename T>
std::optional<ScatterReport> batch_report(const NetworkArch& arch, std::span<const ForwardTrace<T>> traces,
                                          std::span<const int> labels, double eta) {
  if (!arch.fisher_layer()) return std::nullopt;
  if (eta == 0.0 && !both_groups(labels)) return std::nullopt;
  return scatter_traces(collect_features(arch, traces, labels));
}

template <typename T>
std::vector<double> sample_losses(std::span<const ForwardTrace<T>> traces, std::span<const int> labels) {
  std::vector<double> losses;
  losses.reserve(traces.size());
  for (std::size_t j = 0; j < traces.size(); ++j) losses.push_back(bce_loss(traces[j].probability, labels[j]));
  return losses;
}

template <typename T>
ObjectiveTerms assemble_terms(const BasicModel<T>& model, std::span<const ForwardTrace<T>> traces,
                              std::span<const int> labels, const LossWeights& w,
                              const std::optional<ScatterReport>& report) {
  const auto weights = model.weight_tensors();
  const double wsq = sum_of_squares<T>(std::span<const BasicTensor<T>* const>(weights.data(), weights.size()));
  ObjectiveTerms terms = objective_terms(sample_losses(traces, labels), wsq, w.lambda, w.eta, report);
  if (!w.data) {
    terms.data = 0.0;
    terms.total = terms.data + terms.weight + terms.fisher;
  }
  return terms;
}

void check_batch_args(std::size_t traces, std::size_t labels) {
  if (traces == 0) throw DimensionError("empty batch");
  if (traces != labels) {
    throw DimensionError("batch has " + std::to_string(traces) + " traces but " + std::to_string(labels) + " labels");
  }
}

}  // namespace

template <typename T>
ObjectiveTerms batch_objective(const BasicModel<T>& model, std::span<const ForwardTrace<T>> traces,
                               std::span<const int> labels, const LossWeights& weights,
                               const TensorD* frozen_class_means) {
  check_batch_args(traces.size(), labels.size());
  std::optional<ScatterReport> report;
  if (frozen_class_means && model.arch.fisher_layer()) {
    const BatchFeatures batch = collect_features(model.arch, traces, labels);
    const std::size_t d = batch.dims();
    if (frozen_class_means->shape() != Shape{2, d}) throw DimensionError("frozen means must be [2, d]");
    ScatterReport r;
    r.class_means = *frozen_class_means;
    r.global_mean.assign(d, 0.0);
    for (int y : batch.labels) ++r.group_sizes[y];
    const double n = static_cast<double>(batch.samples());
    for (int t = 0; t < 2; ++t) {
      for (std::size_t k = 0; k < d; ++k) r.global_mean[k] += r.group_sizes[t] * r.class_means[t * d + k] / n;
    }
    for (std::size_t j = 0; j < batch.samples(); ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = batch.features[j * d + k] - r.class_means[batch.labels[j] * d + k];
        r.tr_sw += diff * diff;
      }
    }
    for (int t = 0; t < 2; ++t) {
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = r.class_means[t * d + k] - r.global_mean[k];
        sq += diff * diff;
      }
      r.tr_sb += r.group_sizes[t] * sq;
    }
    r.phi = r.tr_sw - r.tr_sb;
    report = r;
  } else {
    report = batch_report(model.arch, traces, labels, weights.eta);
  }
  return assemble_terms(model, traces, labels, weights, report);
}

template <typename T>
BatchResult<T> backward(const BasicModel<T>& model, std::span<const ForwardTrace<T>> traces, std::span<const int> labels,
                        const LossWeights& w) {
  check_batch_args(traces.size(), labels.size());
  const NetworkArch& arch = model.arch;
  const std::size_t n_layers = arch.layers.size();
  const std::size_t n = traces.size();

  BatchResult<T> result;
  result.report = batch_report(arch, traces, labels, w.eta);
  result.terms = assemble_terms(model, traces, labels, w, result.report);

  const std::optional<std::size_t> fisher = arch.fisher_layer();
  TensorD fgrad;
  if (result.report && w.eta != 0.0) fgrad = fisher_grad(collect_features(arch, traces, labels), *result.report);

  Gradients<T>& g = result.grads;
  g.weights.resize(n_layers);
  g.bias.resize(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) {
    if (model.layers[i].trainable()) {
      g.weights[i] = BasicTensor<T>(model.layers[i].weights.shape());
      g.bias[i] = BasicTensor<T>(model.layers[i].bias.shape());
    }
  }

  for (std::size_t j = 0; j < n; ++j) {
    const ForwardTrace<T>& tr = traces[j];
    const double dlogit = w.data ? bce_grad(tr.probability, labels[j]) / static_cast<double>(n) : 0.0;
    BasicTensor<T> grad({1}, static_cast<T>(dlogit));
    for (std::size_t ii = n_layers; ii-- > 0;) {
      const LayerParams<T>& p = model.layers[ii];
      const BasicTensor<T>& in = tr.activations[ii];
      const BasicTensor<T>& out = tr.activations[ii + 1];
      if (const auto* c = std::get_if<ConvSpec>(&arch.layers[ii])) {
        const BasicTensor<T> pre = relu_backward(grad, out);
        ConvGradients<T> cg = conv3d_backward(pre, in, p.weights, c->stride, ii > 0);
        add_into(g.weights[ii], cg.kernels);
        add_into(g.bias[ii], cg.bias);
        grad = std::move(cg.input);
      } else if (std::holds_alternative<PoolSpec>(arch.layers[ii])) {
        grad = maxpool3d_backward(grad, tr.argmax[ii], in.shape());
      } else {
        const auto& d = std::get<DenseSpec>(arch.layers[ii]);
        if (fisher && *fisher == ii && !fgrad.empty()) {
          for (std::size_t k = 0; k < grad.size(); ++k) {
            grad[k] += static_cast<T>(w.eta * fgrad[j * d.units + k]);
          }
        }
        if (!tr.dropout_masks[ii].empty()) {
          for (std::size_t k = 0; k < grad.size(); ++k) grad[k] *= tr.dropout_masks[ii][k];
        }
        if (d.activation == Activation::relu) grad = relu_backward(grad, out);
        DenseGradients<T> dg = dense_backward(grad, in, p.weights);
        add_into(g.weights[ii], dg.weights);
        add_into(g.bias[ii], dg.bias);
        if (ii > 0) grad = std::move(dg.input).reshaped(in.shape());
      }
    }
  }

  if (w.lambda != 0.0) {
    for (std::size_t i = 0; i < n_layers; ++i) {
      if (!model.layers[i].trainable()) continue;
      const T lam = static_cast<T>(w.lambda);
      const BasicTensor<T>& W = model.layers[i].weights;
      for (std::size_t k = 0; k < W.size(); ++k) g.weights[i][k] += lam * W[k];
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ParameterError("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("dropout_rate must lie in [0, 1)");
  check_tradeoff(lambda, eta);
  if (batch_size < 2) throw ParameterError("batch_size must be >= 2 so both polarities fit");
  if (stop_window < 2) throw ParameterError("stop_window must be >= 2");
  if (!(stop_sigma >= 0.0)) throw ParameterError("stop_sigma must be >= 0");
}

template <typename T>
void sgd_momentum_step(BasicModel<T>& model, const Gradients<T>& grads, const TrainConfig& config) {
  const std::size_t n_layers = model.layers.size();
  if (grads.weights.size() != n_layers || grads.bias.size() != n_layers) {
    throw DimensionError("gradient set does not match the model's layers");
  }
  for (std::size_t i = 0; i < n_layers; ++i) {
    if (!model.layers[i].trainable()) continue;
    if (grads.weights[i].shape() != model.layers[i].weights.shape() ||
        grads.bias[i].shape() != model.layers[i].bias.shape()) {
      throw DimensionError(model.arch.layer_names[i] + ": gradient shape mismatch");
    }
    check_finite(grads.weights[i], model.arch.layer_names[i] + " weight gradient");
    check_finite(grads.bias[i], model.arch.layer_names[i] + " bias gradient");
  }
  const T mu = static_cast<T>(config.momentum);
  const T lr = static_cast<T>(config.learning_rate);
  auto update = [&](BasicTensor<T>& param, BasicTensor<T>& vel, const BasicTensor<T>& grad) {
    if (vel.shape() != param.shape()) vel = BasicTensor<T>(param.shape());
    for (std::size_t k = 0; k < param.size(); ++k) {
      vel[k] = mu * vel[k] - lr * grad[k];
      param[k] += vel[k];
    }
  };
  for (std::size_t i = 0; i < n_layers; ++i) {
    LayerParams<T>& p = model.layers[i];
    if (!p.trainable()) continue;
    update(p.weights, p.weights_velocity, grads.weights[i]);
    update(p.bias, p.bias_velocity, grads.bias[i]);
  }
}

bool should_stop(std::span<const double> trace, std::size_t window, double sigma) {
  if (window < 2 || trace.size() < window) return false;
  const auto tail = trace.last(window);
  double mean = 0.0;
  for (double v : tail) mean += v;
  mean /= static_cast<double>(window);
  double ss = 0.0;
  for (double v : tail) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(window - 1)) < sigma;
}

std::string stop_reason_name(StopReason reason) {
  switch (reason) {
    case StopReason::converged: return "converged";
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::diverged: return "diverged";
  }
  return "?";
}

std::vector<std::vector<std::size_t>> stratified_batches(const std::vector<int>& labels, std::size_t batch_size,
                                                         Rng& rng) {
  if (batch_size == 0) throw ParameterError("batch_size must be positive");
  std::vector<std::size_t> groups[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("labels must be 0 or 1");
    groups[labels[i]].push_back(i);
  }
  if (groups[0].empty() || groups[1].empty()) {
    throw StatisticsError("training data needs both polarities (have " + std::to_string(groups[0].size()) +
                          " negatives, " + std::to_string(groups[1].size()) + " positives)");
  }
  std::shuffle(groups[0].begin(), groups[0].end(), rng);
  std::shuffle(groups[1].begin(), groups[1].end(), rng);
  std::size_t n_batches = (labels.size() + batch_size - 1) / batch_size;
  n_batches = std::min({n_batches, groups[0].size(), groups[1].size()});
  std::vector<std::vector<std::size_t>> batches(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    for (const auto& grp : groups) {
      const std::size_t lo = b * grp.size() / n_batches;
      const std::size_t hi = (b + 1) * grp.size() / n_batches;
      batches[b].insert(batches[b].end(), grp.begin() + lo, grp.begin() + hi);
    }
    std::shuffle(batches[b].begin(), batches[b].end(), rng);
  }
  return batches;
}

template <typename T>
TrainResult<T> train(BasicModel<T> start, const std::vector<BasicTensor<T>>& blocks, const std::vector<int>& labels,
                     const TrainConfig& config, const std::function<void(const EpochReport&)>& observer) {
  config.validate();
  start.arch.validate();
  if (blocks.size() != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(blocks.size()) + " blocks but " +
                         std::to_string(labels.size()) + " labels");
  }
  if (start.arch.fisher_layer() == std::nullopt && config.eta != 0.0) {
    throw ParameterError("architecture '" + start.arch.name + "' has no Fisher layer; set eta=0");
  }
  TrainResult<T> result{std::move(start), StopReason::max_epochs, {}};
  BasicModel<T>& model = result.model;
  const LossWeights weights{config.lambda, config.eta, true};

  if (should_stop(model.objective_trace, config.stop_window, config.stop_sigma)) {
    result.reason = StopReason::converged;
    return result;
  }
  for (std::size_t epoch = model.epochs + 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(config.seed, epoch));
    const auto batches = stratified_batches(labels, config.batch_size, rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<ForwardTrace<T>> traces;
      std::vector<int> batch_labels;
      traces.reserve(batches[b].size());
      for (std::size_t idx : batches[b]) {
        traces.push_back(forward(model, blocks[idx], Mode::train, &rng, config.dropout_rate));
        batch_labels.push_back(labels[idx]);
      }
      BatchResult<T> br = backward<T>(model, traces, batch_labels, weights);
      if (!std::isfinite(br.terms.total)) {
        result.reason = StopReason::diverged;
        result.diagnostic = "non-finite objective at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b + 1) + "; parameters are the last finite state";
        return result;
      }
      try {
        sgd_momentum_step(model, br.grads, config);
      } catch (const NumericError& e) {
        result.reason = StopReason::diverged;
        result.diagnostic = std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b + 1) + "; parameters are the last finite state";
        return result;
      }
      sum += br.terms.total;
    }
    const double mean = sum / static_cast<double>(batches.size());
    model.objective_trace.push_back(mean);
    model.epochs = epoch;
    if (observer) {
      observer({epoch, mean, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    }
    if (should_stop(model.objective_trace, config.stop_window, config.stop_sigma)) {
      result.reason = StopReason::converged;
      return result;
    }
  }
  return result;
}

template <typename T>
double predict(const BasicModel<T>& model, const BasicTensor<T>& block) {
  return forward(model, block, Mode::infer).probability;
}

template <typename T>
ScatterReport feature_scatter(const BasicModel<T>& model, const std::vector<BasicTensor<T>>& blocks,
                              const std::vector<int>& labels) {
  check_batch_args(blocks.size(), labels.size());
  std::vector<ForwardTrace<T>> traces;
  traces.reserve(blocks.size());
  for (const auto& b : blocks) {
    ForwardTrace<T> t = forward(model, b, Mode::infer);
    // Only the Fisher features are needed; drop the large maps.
    const std::size_t fi = *model.arch.fisher_layer();
    for (std::size_t k = 0; k < t.activations.size(); ++k) {
      if (k != fi + 1) t.activations[k] = BasicTensor<T>();
    }
    traces.push_back(std::move(t));
  }
  return scatter_traces(collect_features<T>(model.arch, traces, labels));
}

#define LVCOV_INSTANTIATE(T)                                                                                          \
  template struct BasicModel<T>;                                                                                      \
  template struct ForwardTrace<T>;                                                                                    \
  template BasicModel<T> init_params<T>(const NetworkArch&, std::uint64_t, InitScheme, double);                       \
  template ForwardTrace<T> forward<T>(const BasicModel<T>&, const BasicTensor<T>&, Mode, Rng*, double,                \
                                      const std::vector<BasicTensor<T>>*);                                            \
  template BatchResult<T> backward<T>(const BasicModel<T>&, std::span<const ForwardTrace<T>>, std::span<const int>,   \
                                      const LossWeights&);                                                            \
  template ObjectiveTerms batch_objective<T>(const BasicModel<T>&, std::span<const ForwardTrace<T>>,                  \
                                             std::span<const int>, const LossWeights&, const TensorD*);               \
  template void sgd_momentum_step<T>(BasicModel<T>&, const Gradients<T>&, const TrainConfig&);                        \
  template TrainResult<T> train<T>(BasicModel<T>, const std::vector<BasicTensor<T>>&, const std::vector<int>&,        \
                                   const TrainConfig&, const std::function<void(const EpochReport&)>&);               \
  template double predict<T>(const BasicModel<T>&, const BasicTensor<T>&);                                            \
  template ScatterReport feature_scatter<T>(const BasicModel<T>&, const std::vector<BasicTensor<T>>&,                 \
                                            const std::vector<int>&);
LVCOV_INSTANTIATE(float)
LVCOV_INSTANTIATE(double)
#undef LVCOV_INSTANTIATE

}  // namespace lvcov
