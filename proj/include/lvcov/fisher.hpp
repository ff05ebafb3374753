#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "lvcov/tensor.hpp"

namespace lvcov {

/// Fisher-layer activations of one mini-batch with their polarity labels
/// (1 = target structure absent, 0 = present).
struct BatchFeatures {
  TensorD features;  // [n, d]
  std::vector<int> labels;

  std::size_t samples() const { return features.extent(0); }
  std::size_t dims() const { return features.extent(1); }
};

struct ScatterReport {
  TensorD class_means;  // [2, d], row t = mean of polarity t
  std::vector<double> global_mean;
  std::array<std::size_t, 2> group_sizes{};
  double tr_sw = 0.0;
  double tr_sb = 0.0;
  double phi = 0.0;  // tr_sw - tr_sb
};

/// Traces of the within- and between-class scatter matrices, computed as sums
/// of squared norms.
ScatterReport scatter_traces(const BatchFeatures& batch);

/// Gradient of (tr_sw - tr_sb)/2 with respect to each feature row, with the
/// class and global means held fixed: row j is F_j - m_{t_j}.
TensorD fisher_grad(const BatchFeatures& batch, const ScatterReport& report);

/// Negative log-likelihood of a Bernoulli output a for label y.
double bce_loss(double a, int y);

/// Derivative of bce_loss with respect to the pre-sigmoid logit.
double bce_grad(double a, int y);

struct ObjectiveTerms {
  double data = 0.0;    // mean cross-entropy
  double weight = 0.0;  // lambda/2 * sum of squared weights
  double fisher = 0.0;  // eta/2 * (tr_sw - tr_sb)
  double total = 0.0;
};

/// J* split into its three terms; total = data + weight + fisher in that order.
/// A missing report contributes a zero Fisher term (networks without a Fisher layer).
ObjectiveTerms objective_terms(std::span<const double> batch_losses, double weight_sq_sum, double lambda, double eta,
                               const std::optional<ScatterReport>& report);

double total_objective(std::span<const double> batch_losses, double weight_sq_sum, double lambda, double eta,
                       const std::optional<ScatterReport>& report);

/// Sum of squares over a set of weight tensors, accumulated in double.
template <typename T>
double sum_of_squares(std::span<const BasicTensor<T>* const> tensors) {
  double s = 0.0;
  for (const BasicTensor<T>* t : tensors) {
    for (T v : t->values()) s += static_cast<double>(v) * static_cast<double>(v);
  }
  return s;
}

void check_tradeoff(double lambda, double eta);

}  // namespace lvcov
