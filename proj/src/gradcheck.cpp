#include "lvcov/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "lvcov/random.hpp"

namespace lvcov {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

bool GradcheckReport::passed() const {
  return worst <= tolerance && head_eta_difference == 0.0 && upstream_changed && eta_linearity_error <= tolerance;
}

std::string GradcheckReport::to_tsv() const {
  std::ostringstream out;
  char buf[64];
  out << "term\tlayer\tparam\tchecked\tskipped\tmax_rel_error\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.3e", r.max_error);
    out << r.term << '\t' << r.layer << '\t' << r.param << '\t' << r.checked << '\t' << r.skipped << '\t' << buf << '\n';
  }
  std::snprintf(buf, sizeof buf, "%.3e", worst);
  out << "# worst\t" << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.3e", head_eta_difference);
  out << "# head gradient change eta vs 0\t" << buf << '\n';
  out << "# upstream gradient changed\t" << (upstream_changed ? "yes" : "no") << '\n';
  std::snprintf(buf, sizeof buf, "%.3e", eta_linearity_error);
  out << "# eta linearity error\t" << buf << '\n';
  out << "# result\t" << (passed() ? "PASS" : "FAIL") << '\n';
  return out.str();
}

namespace {

using ModelD = BasicModel<double>;

struct Fixture {
  ModelD model;
  std::vector<TensorD> blocks;
  std::vector<int> labels;
  std::vector<std::vector<TensorD>> masks;
  double dropout_rate;
};

std::vector<ForwardTrace<double>> run(const Fixture& f) {
  std::vector<ForwardTrace<double>> traces;
  traces.reserve(f.blocks.size());
  for (std::size_t j = 0; j < f.blocks.size(); ++j) {
    traces.push_back(forward(f.model, f.blocks[j], Mode::train, nullptr, f.dropout_rate, &f.masks[j]));
  }
  return traces;
}

// Hash of every ReLU on/off state and pooling choice in the batch. A change
// between the two sides of a central difference means the step crossed a
// kink, where the difference quotient says nothing about the derivative.
std::uint64_t kink_signature(const NetworkArch& arch, const std::vector<ForwardTrace<double>>& traces) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](std::uint64_t v) { h = (h ^ v) * 0x100000001b3ULL; };
  for (const auto& tr : traces) {
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
      const auto* d = std::get_if<DenseSpec>(&arch.layers[i]);
      if (std::holds_alternative<ConvSpec>(arch.layers[i]) || (d && d->activation == Activation::relu)) {
        for (double v : tr.activations[i + 1].values()) mix(v > 0.0);
      }
      for (std::size_t a : tr.argmax[i]) mix(a);
    }
  }
  return h;
}

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation objective(const Fixture& f, const LossWeights& w, const TensorD* frozen) {
  const auto traces = run(f);
  return {batch_objective<double>(f.model, traces, f.labels, w, frozen).total, kink_signature(f.model.arch, traces)};
}

Gradients<double> analytic(const Fixture& f, const LossWeights& w) {
  const auto traces = run(f);
  return backward<double>(f.model, traces, f.labels, w).grads;
}

std::vector<std::size_t> pick(std::size_t size, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  if (count == 0 || count >= size) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace

GradcheckReport gradcheck(const GradcheckOptions& o) {
  o.arch.validate();
  if (o.batch < 2) throw ParameterError("gradcheck batch must hold both polarities");
  if (!(o.step > 0.0)) throw ParameterError("finite-difference step must be positive");

  Fixture f{init_params<double>(o.arch, o.seed, InitScheme::he), {}, {}, {}, o.dropout_rate};
  Rng rng(derive_seed(o.seed, 0x67726164));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t j = 0; j < o.batch; ++j) {
    TensorD b(o.arch.input);
    for (auto& v : b.values()) v = u(rng);
    f.blocks.push_back(std::move(b));
    f.labels.push_back(static_cast<int>(j % 2));
  }
  for (const auto& b : f.blocks) {
    f.masks.push_back(forward(f.model, b, Mode::train, &rng, o.dropout_rate).dropout_masks);
  }

  const bool has_fisher = o.arch.fisher_layer().has_value();
  std::optional<TensorD> frozen;
  {
    const auto traces = run(f);
    const auto res = backward<double>(f.model, traces, f.labels, {0.0, has_fisher ? 1.0 : 0.0, false});
    if (res.report) frozen = res.report->class_means;
  }
  const TensorD* frozen_ptr = frozen ? &*frozen : nullptr;

  struct Term {
    const char* name;
    LossWeights w;
  };
  std::vector<Term> terms{{"total", {o.lambda, has_fisher ? o.eta : 0.0, true}},
                          {"data", {0.0, 0.0, true}},
                          {"weight", {o.lambda, 0.0, false}}};
  if (has_fisher) terms.push_back({"fisher", {0.0, o.eta, false}});

  GradcheckReport report;
  report.tolerance = o.tolerance;
  for (const Term& term : terms) {
    const Gradients<double> g = analytic(f, term.w);
    Rng pick_rng(derive_seed(o.seed, 0x7069636b));
    for (std::size_t i = 0; i < f.model.layers.size(); ++i) {
      if (!f.model.layers[i].trainable()) continue;
      for (int part = 0; part < 2; ++part) {
        TensorD& param = part == 0 ? f.model.layers[i].weights : f.model.layers[i].bias;
        const TensorD& grad = part == 0 ? g.weights[i] : g.bias[i];
        GradcheckRow row{term.name, o.arch.layer_names[i], part == 0 ? "W" : "b", 0, 0, 0.0};
        for (std::size_t k : pick(param.size(), o.samples_per_tensor, pick_rng)) {
          const double saved = param[k];
          param[k] = saved + o.step;
          const Evaluation plus = objective(f, term.w, frozen_ptr);
          param[k] = saved - o.step;
          const Evaluation minus = objective(f, term.w, frozen_ptr);
          param[k] = saved;
          if (plus.signature != minus.signature) {
            ++row.skipped;
            continue;
          }
          const double numeric = (plus.value - minus.value) / (2.0 * o.step);
          row.max_error = std::max(row.max_error, relative_error(grad[k], numeric));
          ++row.checked;
        }
        report.worst = std::max(report.worst, row.max_error);
        report.rows.push_back(std::move(row));
      }
    }
  }

  if (has_fisher) {
    const std::size_t fl = *o.arch.fisher_layer();
    const Gradients<double> g0 = analytic(f, {o.lambda, 0.0, true});
    const Gradients<double> g1 = analytic(f, {o.lambda, o.eta, true});
    const Gradients<double> g2 = analytic(f, {o.lambda, std::min(1.0, 2.0 * o.eta), true});
    const double scale = std::min(1.0, 2.0 * o.eta) / o.eta;
    for (std::size_t i = 0; i < f.model.layers.size(); ++i) {
      if (!f.model.layers[i].trainable()) continue;
      const double dw = max_abs_diff(g0.weights[i], g1.weights[i]);
      const double db = max_abs_diff(g0.bias[i], g1.bias[i]);
      if (i > fl) report.head_eta_difference = std::max({report.head_eta_difference, dw, db});
      else if (dw > 0.0) report.upstream_changed = true;
      for (int part = 0; part < 2; ++part) {
        const TensorD& a0 = part == 0 ? g0.weights[i] : g0.bias[i];
        const TensorD& a1 = part == 0 ? g1.weights[i] : g1.bias[i];
        const TensorD& a2 = part == 0 ? g2.weights[i] : g2.bias[i];
        for (std::size_t k = 0; k < a0.size(); ++k) {
          report.eta_linearity_error =
              std::max(report.eta_linearity_error, relative_error(a2[k] - a0[k], scale * (a1[k] - a0[k])));
        }
      }
    }
  } else {
    report.upstream_changed = true;
  }
  return report;
}

}  // namespace lvcov
