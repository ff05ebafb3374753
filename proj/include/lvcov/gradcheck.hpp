#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lvcov/network.hpp"

namespace lvcov {

struct GradcheckOptions {
  NetworkArch arch = tiny_arch();
  std::uint64_t seed = 1;
  std::size_t batch = 6;
  std::size_t samples_per_tensor = 0;  // 0 checks every parameter
  double step = 1e-5;
  double tolerance = 1e-4;
  double lambda = 1e-2;
  double eta = 0.1;
  double dropout_rate = 0.1;
};

/// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

struct GradcheckRow {
  std::string term;   // total, data, weight, fisher
  std::string layer;  // layer name
  std::string param;  // W or b
  std::size_t checked = 0;
  std::size_t skipped = 0;  // the difference straddled a ReLU or pooling kink
  double max_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double worst = 0.0;
  // Gradients at eta and 0 may differ only at the Fisher layer and upstream.
  double head_eta_difference = 0.0;
  bool upstream_changed = false;
  // g(2 eta) - g(0) against 2 (g(eta) - g(0)).
  double eta_linearity_error = 0.0;
  double tolerance = 1e-4;

  bool passed() const;
  std::string to_tsv() const;
};

/// Central differences of the objective with frozen class means, dropout
/// masks and batch, at 64-bit with He-initialised weights.
GradcheckReport gradcheck(const GradcheckOptions& options);

}  // namespace lvcov
