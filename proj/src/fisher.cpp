#include "lvcov/fisher.hpp"

#include <cmath>
#include <string>

namespace lvcov {
namespace {

void check_batch(const BatchFeatures& batch) {
  if (batch.features.rank() != 2) {
    throw DimensionError("batch features must be [n, d], got " + shape_string(batch.features.shape()));
  }
  if (batch.labels.size() != batch.samples()) {
    throw DimensionError("batch has " + std::to_string(batch.samples()) + " feature rows but " +
                         std::to_string(batch.labels.size()) + " labels");
  }
  for (int t : batch.labels) {
    if (t != 0 && t != 1) throw DomainError("polarity labels must be 0 or 1, got " + std::to_string(t));
  }
}

}  // namespace

void check_tradeoff(double lambda, double eta) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("eta must lie in [0, 1], got " + std::to_string(eta));
}

ScatterReport scatter_traces(const BatchFeatures& batch) {
  check_batch(batch);
  const std::size_t n = batch.samples();
  const std::size_t d = batch.dims();
  ScatterReport r;
  r.class_means = TensorD({2, d});
  r.global_mean.assign(d, 0.0);
  for (std::size_t j = 0; j < n; ++j) ++r.group_sizes[batch.labels[j]];
  for (int t = 0; t < 2; ++t) {
    if (r.group_sizes[t] == 0) {
      throw StatisticsError("polarity group " + std::to_string(t) + " is empty in a batch of " + std::to_string(n));
    }
  }

  for (std::size_t j = 0; j < n; ++j) {
    const double* f = batch.features.data() + j * d;
    double* m = r.class_means.data() + batch.labels[j] * d;
    for (std::size_t k = 0; k < d; ++k) {
      m[k] += f[k];
      r.global_mean[k] += f[k];
    }
  }
  for (int t = 0; t < 2; ++t) {
    for (std::size_t k = 0; k < d; ++k) r.class_means[t * d + k] /= static_cast<double>(r.group_sizes[t]);
  }
  for (std::size_t k = 0; k < d; ++k) r.global_mean[k] /= static_cast<double>(n);

  for (std::size_t j = 0; j < n; ++j) {
    const double* f = batch.features.data() + j * d;
    const double* m = r.class_means.data() + batch.labels[j] * d;
    for (std::size_t k = 0; k < d; ++k) r.tr_sw += (f[k] - m[k]) * (f[k] - m[k]);
  }
  for (int t = 0; t < 2; ++t) {
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = r.class_means[t * d + k] - r.global_mean[k];
      sq += diff * diff;
    }
    r.tr_sb += static_cast<double>(r.group_sizes[t]) * sq;
  }
  r.phi = r.tr_sw - r.tr_sb;
  return r;
}

TensorD fisher_grad(const BatchFeatures& batch, const ScatterReport& report) {
  check_batch(batch);
  const std::size_t n = batch.samples();
  const std::size_t d = batch.dims();
  if (report.class_means.shape() != Shape{2, d}) {
    throw DimensionError("scatter report means " + shape_string(report.class_means.shape()) +
                         " do not match feature width " + std::to_string(d));
  }
  TensorD grad({n, d});
  for (std::size_t j = 0; j < n; ++j) {
    const double* m = report.class_means.data() + batch.labels[j] * d;
    for (std::size_t k = 0; k < d; ++k) grad[j * d + k] = batch.features[j * d + k] - m[k];
  }
  return grad;
}

double bce_loss(double a, int y) {
  if (!(a > 0.0 && a < 1.0)) throw DomainError("probability must lie in (0, 1), got " + std::to_string(a));
  if (y != 0 && y != 1) throw DomainError("label must be 0 or 1, got " + std::to_string(y));
  return y == 1 ? -std::log(a) : -std::log1p(-a);
}

double bce_grad(double a, int y) {
  if (!(a > 0.0 && a < 1.0)) throw DomainError("probability must lie in (0, 1), got " + std::to_string(a));
  if (y != 0 && y != 1) throw DomainError("label must be 0 or 1, got " + std::to_string(y));
  return a - static_cast<double>(y);
}

ObjectiveTerms objective_terms(std::span<const double> batch_losses, double weight_sq_sum, double lambda, double eta,
                               const std::optional<ScatterReport>& report) {
  check_tradeoff(lambda, eta);
  if (batch_losses.empty()) throw DimensionError("objective needs at least one sample loss");
  ObjectiveTerms terms;
  double sum = 0.0;
  for (double l : batch_losses) sum += l;
  terms.data = sum / static_cast<double>(batch_losses.size());
  terms.weight = 0.5 * lambda * weight_sq_sum;
  terms.fisher = report ? 0.5 * eta * (report->tr_sw - report->tr_sb) : 0.0;
  terms.total = terms.data + terms.weight + terms.fisher;
  return terms;
}

double total_objective(std::span<const double> batch_losses, double weight_sq_sum, double lambda, double eta,
                       const std::optional<ScatterReport>& report) {
  return objective_terms(batch_losses, weight_sq_sum, lambda, eta, report).total;
}

}  // namespace lvcov
