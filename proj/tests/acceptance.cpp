#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lvcov/assess.hpp"
#include "lvcov/baseline.hpp"
#include "lvcov/error.hpp"
#include "lvcov/fisher.hpp"
#include "lvcov/gradcheck.hpp"
#include "lvcov/metrics.hpp"
#include "lvcov/network.hpp"
#include "lvcov/phantom.hpp"
#include "lvcov/random.hpp"

using namespace lvcov;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "lvcov_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(LVCOV_BINARY) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Samples {
  std::vector<Tensor> blocks;
  std::vector<int> labels;
};

void add_samples(Samples& s, const VolumeStack& v, Task task) {
  for (auto& t : training_samples_for(v, task)) {
    s.blocks.push_back(std::move(t.block));
    s.labels.push_back(t.polarity);
  }
}

double heldout_error(const Model& m, const Samples& s) {
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < s.blocks.size(); ++i) wrong += (predict(m, s.blocks[i]) > 0.5) != (s.labels[i] == 1);
  return static_cast<double>(wrong) / static_cast<double>(s.blocks.size());
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

// Classifiers trained in criterion 5, reused by 6 and 10.
std::optional<Model> g_mbs, g_mas;

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const GradcheckReport r = gradcheck(GradcheckOptions{});
  const double secs = seconds_since(t0);
  std::size_t checked = 0;
  for (const auto& row : r.rows) checked += row.checked;
  const bool ok = r.worst <= 1e-4 && r.passed() && secs < 60.0 && checked > 0;
  return {ok, "worst rel err " + fmt("%.3g", r.worst) + ", " + std::to_string(checked) + " params, " +
                  fmt("%.2f", secs) + " s"};
}

Outcome architecture_conformance() {
  const std::vector<Shape> expected = {{2, 114, 114, 16}, {2, 57, 57, 16}, {1, 45, 45, 16}, {1, 15, 15, 16},
                                       {1, 6, 6, 64},     {1, 3, 3, 64},   {256},           {4},
                                       {1}};
  const NetworkArch arch = table1_arch();
  const Model m = init_params<Real>(arch, 11);
  const auto trace = forward(m, Tensor({3, 120, 120, 1}, 0.25f), Mode::infer);
  bool ok = arch.output_shapes() == expected && trace.activations.size() == expected.size() + 1 &&
            trace.activations[0].shape() == Shape{3, 120, 120, 1};
  for (std::size_t i = 0; ok && i < expected.size(); ++i) ok = trace.activations[i + 1].shape() == expected[i];
  return {ok, std::to_string(expected.size()) + " layer outputs compared"};
}

Outcome scatter_oracle() {
  std::mt19937_64 rng(20240);
  std::uniform_int_distribution<std::size_t> n_dist(2, 64), d_dist(1, 8);
  std::normal_distribution<double> g(0.0, 3.0);
  double worst = 0;
  for (int b = 0; b < 100; ++b) {
    const std::size_t n = n_dist(rng), d = d_dist(rng);
    BatchFeatures batch{TensorD({n, d}), std::vector<int>(n)};
    for (std::size_t j = 0; j < n; ++j) batch.labels[j] = j < 1 ? 0 : j < 2 ? 1 : static_cast<int>(rng() % 2);
    std::shuffle(batch.labels.begin(), batch.labels.end(), rng);
    const double offset = g(rng) * 10;
    for (auto& v : batch.features.values()) v = offset + g(rng);

    // Full d x d matrices, traces taken at the end.
    std::vector<std::vector<double>> mean_t(2, std::vector<double>(d, 0.0));
    std::vector<double> mean_all(d, 0.0);
    std::size_t count[2] = {0, 0};
    for (std::size_t j = 0; j < n; ++j) {
      ++count[batch.labels[j]];
      for (std::size_t k = 0; k < d; ++k) {
        mean_t[batch.labels[j]][k] += batch.features[j * d + k];
        mean_all[k] += batch.features[j * d + k];
      }
    }
    for (int t = 0; t < 2; ++t)
      for (auto& v : mean_t[t]) v /= static_cast<double>(count[t]);
    for (auto& v : mean_all) v /= static_cast<double>(n);
    std::vector<std::vector<double>> sw(d, std::vector<double>(d, 0.0)), sb = sw;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q < d; ++q)
          sw[p][q] += (batch.features[j * d + p] - mean_t[batch.labels[j]][p]) *
                      (batch.features[j * d + q] - mean_t[batch.labels[j]][q]);
    for (int t = 0; t < 2; ++t)
      for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = 0; q < d; ++q)
          sb[p][q] += static_cast<double>(count[t]) * (mean_t[t][p] - mean_all[p]) * (mean_t[t][q] - mean_all[q]);
    double tr_sw = 0, tr_sb = 0;
    for (std::size_t p = 0; p < d; ++p) {
      tr_sw += sw[p][p];
      tr_sb += sb[p][p];
    }
    const ScatterReport r = scatter_traces(batch);
    worst = std::max(worst, std::abs(r.tr_sw - tr_sw) / std::max(std::abs(tr_sw), 1e-300));
    worst = std::max(worst, std::abs(r.tr_sb - tr_sb) / std::max(std::abs(tr_sb), 1e-300));
  }
  return {worst <= 1e-10, "100 batches, worst rel err " + fmt("%.3g", worst)};
}

Outcome discriminative_effect() {
  const auto t0 = Clock::now();
  Samples train_set, test_set;
  std::size_t index = 0;
  for_each_cohort_subject(500, PhantomSpec{}, 4004, Ablation::none, false, [&](CohortSubject&& s) {
    add_samples(index++ < 400 ? train_set : test_set, s.ed, Task::mbs);
  });
  std::vector<double> ratio[2], error[2];
  std::size_t smaller = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (int arm = 0; arm < 2; ++arm) {
      TrainConfig c;
      c.seed = seed;
      c.eta = arm == 0 ? 0.1 : 0.0;
      c.max_epochs = 15;
      const auto result = train(table1_arch(), train_set.blocks, train_set.labels, c);
      const ScatterReport s = feature_scatter(result.model, train_set.blocks, train_set.labels);
      ratio[arm].push_back(s.tr_sw / s.tr_sb);
      error[arm].push_back(heldout_error(result.model, test_set));
    }
    smaller += ratio[0].back() < ratio[1].back();
    std::cout << "    seed " << seed << ": ratio eta=0.1 " << fmt("%.4g", ratio[0].back()) << " eta=0 "
              << fmt("%.4g", ratio[1].back()) << ", error " << fmt("%.3f", error[0].back()) << " / "
              << fmt("%.3f", error[1].back()) << std::endl;
  }
  const double bound = mean(error[1]) + sample_sd(error[1]);
  const bool ok = smaller >= 4 && mean(error[0]) <= bound;
  return {ok, "ratio smaller in " + std::to_string(smaller) + "/5 seeds, error " + fmt("%.4f", mean(error[0])) +
                  " vs bound " + fmt("%.4f", bound) + ", " + fmt("%.0f", seconds_since(t0)) + " s"};
}

Outcome phantom_task_performance() {
  const auto t0 = Clock::now();
  Samples train_set[2], test_set[2];
  for_each_cohort_subject(500, PhantomSpec{}, 5005, Ablation::none, false, [&](CohortSubject&& s) {
    for (Task t : {Task::mbs, Task::mas}) add_samples(train_set[static_cast<int>(t)], s.ed, t);
  });
  for_each_cohort_subject(200, PhantomSpec{}, 5006, Ablation::none, false, [&](CohortSubject&& s) {
    for (Task t : {Task::mbs, Task::mas}) add_samples(test_set[static_cast<int>(t)], s.ed, t);
  });
  double err[2];
  std::size_t epochs[2];
  for (Task t : {Task::mbs, Task::mas}) {
    const int i = static_cast<int>(t);
    auto result = train(table1_arch(), train_set[i].blocks, train_set[i].labels, TrainConfig{});
    err[i] = heldout_error(result.model, test_set[i]);
    epochs[i] = result.model.epochs;
    std::cout << "    " << task_name(t) << ": " << stop_reason_name(result.reason) << " after " << epochs[i]
              << " epochs, held-out error " << fmt("%.4f", err[i]) << std::endl;
    (t == Task::mbs ? g_mbs : g_mas) = std::move(result.model);
  }
  const double secs = seconds_since(t0);
  const bool ok = err[0] <= 0.10 && err[1] <= 0.10 && epochs[0] <= 40 && epochs[1] <= 40 && secs < 7200;
  return {ok, "MBS " + fmt("%.2f", 100 * err[0]) + "%, MAS " + fmt("%.2f", 100 * err[1]) + "%, " +
                  fmt("%.0f", secs) + " s"};
}

template <typename Fn>
void for_each_mixed_volume(const PhantomSpec& spec, std::uint64_t seed, std::size_t per_arm, Fn&& fn) {
  for (Ablation a : {Ablation::none, Ablation::drop_base, Ablation::drop_apex, Ablation::drop_both}) {
    for_each_cohort_subject(per_arm, spec, derive_seed(seed, static_cast<std::uint64_t>(a)), a, false,
                            [&](CohortSubject&& s) { fn(s.ed); });
  }
}

Outcome baseline_behavior() {
  std::size_t decisions = 0, correct = 0;
  for_each_mixed_volume(PhantomSpec::noiseless(), 6006, 50, [&](const VolumeStack& v) {
    decisions += 2;
    try {
      correct += detect_basal(v).found() == v.has_base;
    } catch (const MeasurementError&) {
    }
    try {
      correct += detect_apical(v).found() == v.has_apex;
    } catch (const MeasurementError&) {
    }
  });
  const double noiseless = static_cast<double>(correct) / static_cast<double>(decisions);

  if (!g_mbs || !g_mas) return {false, "criterion 5 classifiers unavailable"};
  EvalReport net, base;
  std::size_t failures = 0;
  for_each_mixed_volume(PhantomSpec{}, 6007, 50, [&](const VolumeStack& v) {
    const Verdict ref = reference_verdict(v);
    net.add(ref, classify_coverage(v, *g_mbs, *g_mas).verdict);
    try {
      base.add(ref, baseline_verdict(v));
    } catch (const MeasurementError&) {
      // A failed measurement answers neither question correctly.
      ++failures;
      base.combined.fn += 1;
      base.combined.fp += 1;
    }
  });
  const double net_err = *net.combined.error_rate(), base_err = *base.combined.error_rate();
  const bool ok = noiseless >= 0.90 && net_err < base_err;
  return {ok, "noiseless baseline " + fmt("%.2f", 100 * noiseless) + "% correct; noisy error network " +
                  fmt("%.2f", 100 * net_err) + "% vs baseline " + fmt("%.2f", 100 * base_err) + "% (" +
                  std::to_string(failures) + " baseline failures)"};
}

Outcome clinical_sign_pattern() {
  std::vector<SubjectVolumes> arms[3];
  const Ablation which[3] = {Ablation::none, Ablation::drop_base, Ablation::drop_apex};
  for (int i = 0; i < 3; ++i)
    for_each_cohort_subject(200, PhantomSpec{}, 7007, which[i], true,
                            [&](CohortSubject&& s) { arms[i].push_back(subject_volumes(s)); });
  const ClinicalReport r = clinical_impact(arms[0], {{"drop_base", arms[1]}, {"drop_apex", arms[2]}});
  const ClinicalArm& b = r.arms[1];
  const ClinicalArm& a = r.arms[2];
  const bool signs = *b.edv_effect < 0 && *b.esv_effect < 0 && *b.esv_effect < *b.edv_effect && *b.ef_effect > 0;
  const bool order = std::abs(*b.edv_effect) > std::abs(*a.edv_effect) &&
                     std::abs(*b.esv_effect) > std::abs(*a.esv_effect) &&
                     std::abs(*b.sv_effect) > std::abs(*a.sv_effect) && std::abs(*b.ef_effect) > std::abs(*a.ef_effect);
  std::ostringstream d;
  d << "MBS EDV " << fmt("%+.2f", *b.edv_effect) << "% ESV " << fmt("%+.2f", *b.esv_effect) << "% SV "
    << fmt("%+.2f", *b.sv_effect) << "% EF " << fmt("%+.2f", *b.ef_effect) << "%; MAS EDV "
    << fmt("%+.2f", *a.edv_effect) << "% ESV " << fmt("%+.2f", *a.esv_effect) << "% SV "
    << fmt("%+.2f", *a.sv_effect) << "% EF " << fmt("%+.2f", *a.ef_effect) << "%";
  return {signs && order, d.str()};
}

Outcome metric_exactness() {
  double worst = 0;
  const auto check = [&](std::optional<double> got, double want) {
    worst = std::max(worst, got ? std::abs(*got - want) : 1.0);
  };
  BinaryCounts c;
  c.tp = 45;
  c.fp = 5;
  c.fn = 3;
  c.tn = 47;
  check(c.precision(), 0.9);
  check(c.sensitivity(), 45.0 / 48.0);
  check(c.error_rate(), 0.08);
  check(precision(81, 19), 0.81);
  check(sensitivity(7, 1), 0.875);
  check(error_rate(3, 4, 40), 0.175);
  ConfusionMatrix m({"MBS", "MAS", "Full"}, {{67, 1, 2}, {2, 45, 3}, {0, 4, 76}});
  check(m.row_ratio(0), 67.0 / 70.0);
  check(m.row_ratio(1), 0.9);
  check(m.row_ratio(2), 0.95);
  check(m.column_precision(1), 0.9);
  const bool rounded = format_percent(m.row_ratio(0)) == "95.71" && std::round(*m.row_ratio(0) * 100) / 100 == 0.96;
  check(cohens_kappa(ConfusionMatrix({"a", "b"}, {{40, 10}, {10, 40}})), 0.6);
  // p_o = 188/200, p_e = (70*69 + 50*50 + 80*81)/200^2
  const double po = 188.0 / 200.0, pe = (70.0 * 69 + 50.0 * 50 + 80.0 * 81) / 40000.0;
  check(cohens_kappa(m), (po - pe) / (1 - pe));
  const bool undefined = !cohens_kappa(ConfusionMatrix({"a", "b"}, {{5, 0}, {0, 0}})) && !precision(0, 0);
  return {worst <= 1e-12 && rounded && undefined, "worst abs err " + fmt("%.3g", worst)};
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(a)) names.insert(fs::relative(e.path(), a).string());
  for (const auto& e : fs::recursive_directory_iterator(b)) names.insert(fs::relative(e.path(), b).string());
  for (const auto& n : names) {
    if (!fs::exists(a / n) || !fs::exists(b / n)) {
      why = n + " missing";
      return false;
    }
    if (fs::is_regular_file(a / n) && slurp(a / n) != slurp(b / n)) {
      why = n + " differs";
      return false;
    }
  }
  return true;
}

Outcome determinism() {
  const fs::path root = work_dir() / "determinism";
  std::string why;
  for (const char* run_name : {"r1", "r2"}) {
    const fs::path d = root / run_name;
    fs::create_directories(d);
    const std::string dir = d.string();
    const bool ok = run("phantom-gen --n 6 --seed 99 --out " + dir + "/full") == 0 &&
                    run("phantom-gen --n 6 --seed 98 --ablation drop_base --out " + dir + "/test") == 0 &&
                    run("train --task mbs --cohort " + dir + "/full --config epochs=2 --config seed=3 --out-model " +
                        dir + "/models/mbs.lvcm --quiet") == 0 &&
                    run("train --task mas --cohort " + dir + "/full --config epochs=2 --config seed=4 --out-model " +
                        dir + "/models/mas.lvcm --quiet") == 0 &&
                    run("eval --cohort " + dir + "/test --mbs-model " + dir + "/models/mbs.lvcm --mas-model " + dir +
                        "/models/mas.lvcm --baseline --out " + dir + "/eval.tsv") == 0;
    if (!ok) return {false, "a CLI step failed in " + dir};
  }
  // Paths differ between the two runs only inside run.meta records.
  for (const char* f : {"models/mbs.lvcm.run.meta", "models/mas.lvcm.run.meta", "eval.tsv.run.meta"}) {
    for (const char* run_name : {"r1", "r2"}) {
      const fs::path p = root / run_name / f;
      std::string text = slurp(p);
      for (std::size_t at; (at = text.find((root / run_name).string())) != std::string::npos;)
        text.replace(at, (root / run_name).string().size(), "RUN");
      std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
    }
  }
  const bool ok = same_tree(root / "r1", root / "r2", why);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "r1")) files += e.is_regular_file();
  return {ok, ok ? std::to_string(files) + " artifacts bitwise identical" : why};
}

Outcome inference_throughput() {
  const fs::path d = work_dir() / "throughput";
  fs::create_directories(d);
  Model mbs = g_mbs ? *g_mbs : init_params<Real>(table1_arch(), 1, InitScheme::hybrid);
  Model mas = g_mas ? *g_mas : init_params<Real>(table1_arch(), 2, InitScheme::hybrid);
  save_model(mbs, d / "mbs.lvcm");
  save_model(mas, d / "mas.lvcm");
  if (run("phantom-gen --n 1 --seed 123 --no-es --out " + (d / "one").string()) != 0) return {false, "phantom-gen failed"};
  const auto t0 = Clock::now();
  const int code = run("assess --cohort " + (d / "one").string() + " --mbs-model " + (d / "mbs.lvcm").string() +
                       " --mas-model " + (d / "mas.lvcm").string() + " --out " + (d / "verdict.tsv").string());
  const double secs = seconds_since(t0);
  const std::string out = slurp(d / "verdict.tsv");
  const bool ok = code == 0 && secs < 5.0 && std::count(out.begin(), out.end(), '\n') == 2;
  return {ok, "one 10-slice volume in " + fmt("%.2f", secs) + " s" + (g_mbs ? "" : " (untrained models)")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"architecture conformance", architecture_conformance},
      {"scatter oracle equivalence", scatter_oracle},
      {"discriminative effect", discriminative_effect},
      {"phantom task performance", phantom_task_performance},
      {"baseline behavior", baseline_behavior},
      {"clinical-impact sign pattern", clinical_sign_pattern},
      {"metric exactness", metric_exactness},
      {"determinism", determinism},
      {"inference throughput", inference_throughput},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << i + 1 << ". " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  fs::remove_all(work_dir());
  return failed == 0 ? 0 : 1;
}
