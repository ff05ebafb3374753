#include "lvcov/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lvcov/assess.hpp"
#include "lvcov/baseline.hpp"
#include "lvcov/gradcheck.hpp"
#include "lvcov/metrics.hpp"
#include "lvcov/tensor_io.hpp"

namespace lvcov {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void put_entry(ConfigMap& map, const std::string& entry, const std::string& where) {
  const auto eq = entry.find('=');
  const std::string key = trim(entry.substr(0, eq));
  if (eq == std::string::npos || key.empty()) {
    throw ParameterError("config entry '" + entry + "'" + where + " is not key=value");
  }
  map[key] = trim(entry.substr(eq + 1));
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ParameterError("config '" + key + "': '" + v + "' is not a number");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long d = std::stoull(v, &used);
      if (used == v.size()) return d;
    }
  } catch (const std::exception&) {
  }
  throw ParameterError("config '" + key + "': '" + v + "' is not a non-negative integer");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ParameterError("config '" + key + "': '" + v + "' is not a boolean");
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

ConfigMap train_config_map(const TrainConfig& c) {
  return {{"lr", format_double(c.learning_rate)},
          {"momentum", format_double(c.momentum)},
          {"dropout", format_double(c.dropout_rate)},
          {"lambda", format_double(c.lambda)},
          {"eta", format_double(c.eta)},
          {"batch", std::to_string(c.batch_size)},
          {"max_epochs", std::to_string(c.max_epochs)},
          {"stop_window", std::to_string(c.stop_window)},
          {"stop_sigma", format_double(c.stop_sigma)},
          {"seed", std::to_string(c.seed)},
          {"init", init_scheme_name(c.init)}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

// Reproducibility record: toolkit version, subcommand and every resolved
// setting, sorted by key. Deliberately free of timestamps and host names.
void write_run_meta(const fs::path& path, const std::string& command, const ConfigMap& settings) {
  std::ostringstream s;
  s << "toolkit\tlvcov " << kToolkitVersion << '\n';
  s << "command\t" << command << '\n';
  s << "real\t" << dtype_name<Real>() << '\n';
  for (const auto& [k, v] : settings) s << k << '\t' << v << '\n';
  write_text(path, s.str());
}

fs::path meta_path_for_file(const fs::path& output) { return fs::path(output.string() + ".run.meta"); }

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) out << text;
  else write_text(out_path, text);
}

VolumeStack load_volume_file(const std::string& path) {
  VolumeStack v;
  v.slices = load_tensor<Real>(path, true);
  if (v.slices.rank() != 3) throw InputError(path + ": volume must be [n, H, W], got " + shape_string(v.slices.shape()));
  return v;
}

struct Models {
  Model mbs, mas;
};

Models load_models(const std::string& mbs, const std::string& mas) {
  if (mbs.empty() || mas.empty()) throw InputError("both --mbs-model and --mas-model are required");
  return {load_model<Real>(mbs), load_model<Real>(mas)};
}

// ---------------------------------------------------------------------------

struct PhantomGenArgs {
  std::size_t n = 100;
  std::uint64_t seed = 1;
  std::string ablation = "none";
  std::string out;
  std::size_t slices = 10;
  double noise = 0.03;
  double texture = 0.1;
  bool no_es = false;
};

int cmd_phantom_gen(const PhantomGenArgs& a, std::ostream& out) {
  PhantomSpec spec;
  spec.n_slices = a.slices;
  spec.noise_sd = a.noise;
  spec.texture_amplitude = a.texture;
  const Ablation ablation = ablation_from_name(a.ablation);
  CohortWriter writer(a.out);
  for_each_cohort_subject(a.n, spec, a.seed, ablation, !a.no_es, [&](CohortSubject&& s) { writer.add(s); });
  writer.finish();
  write_run_meta(fs::path(a.out) / "run.meta", "phantom-gen",
                 {{"n", std::to_string(a.n)},
                  {"seed", std::to_string(a.seed)},
                  {"ablation", a.ablation},
                  {"slices", std::to_string(a.slices)},
                  {"noise_sd", format_double(a.noise)},
                  {"texture_amplitude", format_double(a.texture)},
                  {"es", a.no_es ? "false" : "true"}});
  out << "wrote " << a.n << " volumes to " << a.out << '\n';
  return exit_ok;
}

struct TrainArgs {
  std::string task;
  std::string cohort;
  std::vector<std::string> config;
  std::string out_model;
  std::string arch = "table1";
  std::string resume;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const Task task = task_from_name(a.task);
  ConfigMap cfg = parse_config_entries(a.config);
  bool augmented = true;
  if (const auto it = cfg.find("augment"); it != cfg.end()) {
    augmented = to_bool("augment", it->second);
    cfg.erase(it);
  }
  const TrainConfig config = apply_train_config(TrainConfig{}, cfg);
  config.validate();
  const NetworkArch arch = arch_by_name(a.arch);
  if (arch.input != Shape{3, kCropSize, kCropSize, 1}) {
    throw ParameterError("architecture '" + a.arch + "' does not take 3x120x120 triplets");
  }

  const TrainingSet set = build_training_set(a.cohort, task, augmented);
  Model start = a.resume.empty() ? init_params<Real>(arch, config.seed, config.init) : load_model<Real>(a.resume);
  if (start.arch.describe() != arch.describe()) throw InputError("resumed model has a different architecture");

  const auto observer = [&](const EpochReport& r) {
    if (!a.quiet) err << "epoch " << r.epoch << "\tobjective " << format_double(r.objective) << "\t" << r.seconds << " s\n";
  };
  const TrainResult<Real> result = train(std::move(start), set.blocks, set.labels, config, observer);

  save_model(result.model, a.out_model);
  std::ostringstream trace;
  trace << "epoch\tobjective\n";
  for (std::size_t e = 0; e < result.model.objective_trace.size(); ++e) {
    trace << e + 1 << '\t' << format_double(result.model.objective_trace[e]) << '\n';
  }
  write_text(a.out_model + ".trace.tsv", trace.str());

  ConfigMap meta = train_config_map(config);
  meta["task"] = task_name(task);
  meta["cohort"] = a.cohort;
  meta["arch"] = arch.name;
  meta["augment"] = augmented ? "true" : "false";
  meta["resume"] = a.resume.empty() ? "-" : a.resume;
  meta["samples"] = std::to_string(set.blocks.size());
  meta["stop_reason"] = stop_reason_name(result.reason);
  meta["epochs"] = std::to_string(result.model.epochs);
  write_run_meta(meta_path_for_file(a.out_model), "train", meta);

  out << "stop\t" << stop_reason_name(result.reason) << "\tepochs\t" << result.model.epochs << '\n';
  if (result.reason == StopReason::diverged) {
    err << "training diverged: " << result.diagnostic << '\n';
    return exit_check;
  }
  return exit_ok;
}

struct AssessArgs {
  std::string volume;
  std::string cohort;
  std::string mbs_model, mas_model;
  double threshold = 0.5;
  std::string strategy = "extreme";
  bool baseline = false;
  std::string format = "tsv";
  std::string out;
};

int cmd_assess(const AssessArgs& a, std::ostream& out) {
  if (a.volume.empty() == a.cohort.empty()) throw ParameterError("give exactly one of --volume and --cohort");
  const Models models = load_models(a.mbs_model, a.mas_model);
  const TripletStrategy strategy = strategy_from_name(a.strategy);
  const bool json = a.format == "json";

  std::ostringstream text;
  ConfusionMatrix agreement(verdict_names());
  if (!json) text << verdict_tsv_header() << (a.baseline ? "\tbaseline" : "") << '\n';
  const auto one = [&](const VolumeStack& v) {
    const CoverageVerdict cv = classify_coverage(v, models.mbs, models.mas, a.threshold, strategy);
    std::optional<Verdict> bv;
    if (a.baseline) {
      try {
        bv = baseline_verdict(v);
      } catch (const MeasurementError&) {
        bv.reset();
      }
    }
    if (json) {
      std::string line = verdict_json(cv);
      if (a.baseline) {
        line.pop_back();
        line += ",\"baseline\":\"" + (bv ? verdict_name(*bv) : std::string("undefined")) + "\"}";
      }
      text << line << '\n';
    } else {
      text << verdict_tsv_row(cv);
      if (a.baseline) text << '\t' << (bv ? verdict_name(*bv) : "undefined");
      text << '\n';
    }
    if (bv) agreement.add(static_cast<std::size_t>(cv.verdict), static_cast<std::size_t>(*bv));
  };
  if (!a.volume.empty()) {
    one(load_volume_file(a.volume));
  } else {
    for (const auto& row : read_manifest(a.cohort)) one(load_subject(a.cohort, row, false).ed);
  }
  if (a.baseline && !json) {
    text << "\n# network (rows) vs baseline (columns)\n" << agreement.to_tsv();
    text << "# kappa\t" << [&] {
      const auto k = cohens_kappa(agreement);
      return k ? format_double(*k) : std::string("undefined");
    }() << '\n';
  }
  emit(text.str(), a.out, out);
  if (!a.out.empty()) {
    write_run_meta(meta_path_for_file(a.out), "assess",
                   {{"volume", a.volume.empty() ? "-" : a.volume},
                    {"cohort", a.cohort.empty() ? "-" : a.cohort},
                    {"mbs_model", a.mbs_model},
                    {"mas_model", a.mas_model},
                    {"threshold", format_double(a.threshold)},
                    {"strategy", a.strategy},
                    {"baseline", a.baseline ? "true" : "false"},
                    {"format", a.format}});
  }
  return exit_ok;
}

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::string sizes = "tiny";
  std::size_t samples = 6;
  std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradcheckOptions o;
  o.seed = a.seed;
  if (a.sizes == "table1") {
    o.arch = table1_arch();
    o.batch = 4;
    o.samples_per_tensor = a.samples;
  }
  const GradcheckReport r = gradcheck(o);
  emit(r.to_tsv(), a.out, out);
  if (!a.out.empty()) {
    write_run_meta(meta_path_for_file(a.out), "gradcheck",
                   {{"seed", std::to_string(a.seed)}, {"sizes", a.sizes}, {"samples", std::to_string(a.samples)}});
  }
  return r.passed() ? exit_ok : exit_check;
}

struct EvalArgs {
  std::string cohort;
  std::string mbs_model, mas_model;
  double threshold = 0.5;
  std::string strategy = "extreme";
  bool oracle = false;
  bool baseline = false;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::optional<Models> models;
  if (!a.oracle) models = load_models(a.mbs_model, a.mas_model);
  const TripletStrategy strategy = strategy_from_name(a.strategy);
  EvalReport net, base;
  std::size_t base_failures = 0;
  for (const auto& row : read_manifest(a.cohort)) {
    const VolumeStack v = load_subject(a.cohort, row, false).ed;
    const Verdict ref = reference_verdict(v);
    net.add(ref, a.oracle ? ref : classify_coverage(v, models->mbs, models->mas, a.threshold, strategy).verdict);
    if (a.baseline) {
      try {
        base.add(ref, baseline_verdict(v));
      } catch (const MeasurementError&) {
        ++base_failures;
      }
    }
  }
  std::ostringstream text;
  text << "# method\t" << (a.oracle ? "oracle" : "network") << '\n' << net.to_tsv();
  text << "\n# confusion (rows reference, columns prediction)\n" << net.confusion.to_tsv();
  if (a.baseline) {
    text << "\n# method\tbaseline\n" << base.to_tsv();
    text << "\n# confusion (rows reference, columns prediction)\n" << base.confusion.to_tsv();
    text << "# baseline measurement failures\t" << base_failures << '\n';
  }
  emit(text.str(), a.out, out);
  if (!a.out.empty()) {
    write_run_meta(meta_path_for_file(a.out), "eval",
                   {{"cohort", a.cohort},
                    {"mbs_model", a.oracle ? "-" : a.mbs_model},
                    {"mas_model", a.oracle ? "-" : a.mas_model},
                    {"threshold", format_double(a.threshold)},
                    {"strategy", a.strategy},
                    {"oracle", a.oracle ? "true" : "false"},
                    {"baseline", a.baseline ? "true" : "false"}});
  }
  return exit_ok;
}

struct ImpactArgs {
  std::vector<std::string> cohorts;
  std::string format = "tsv";
  std::string out;
};

std::vector<SubjectVolumes> cohort_volumes(const std::string& dir) {
  std::vector<SubjectVolumes> v;
  for (const auto& row : read_manifest(dir)) v.push_back(subject_volumes(load_subject(dir, row, true)));
  return v;
}

int cmd_impact(const ImpactArgs& a, std::ostream& out) {
  if (a.cohorts.size() < 2) throw ParameterError("--cohort-pair needs the full cohort and at least one ablated cohort");
  const std::vector<SubjectVolumes> full = cohort_volumes(a.cohorts[0]);
  std::vector<std::pair<std::string, std::vector<SubjectVolumes>>> arms;
  for (std::size_t i = 1; i < a.cohorts.size(); ++i) {
    arms.emplace_back(ablation_name(manifest_ablation(read_manifest(a.cohorts[i]))), cohort_volumes(a.cohorts[i]));
  }
  const ClinicalReport report = clinical_impact(full, arms);
  emit(a.format == "json" ? report.to_json() : report.to_tsv(), a.out, out);
  if (!a.out.empty()) {
    std::string list;
    for (const auto& c : a.cohorts) list += (list.empty() ? "" : ",") + c;
    write_run_meta(meta_path_for_file(a.out), "impact", {{"cohorts", list}, {"format", a.format}});
  }
  return exit_ok;
}

}  // namespace

ConfigMap parse_config_entries(const std::vector<std::string>& entries) {
  ConfigMap map;
  for (const auto& entry : entries) {
    if (entry.find('=') != std::string::npos) {
      put_entry(map, entry, "");
      continue;
    }
    std::ifstream in(entry);
    if (!in) throw ParameterError("config '" + entry + "' is neither key=value nor a readable file");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string body = trim(line.substr(0, line.find('#')));
      if (!body.empty()) put_entry(map, body, " at " + entry + ":" + std::to_string(lineno));
    }
  }
  return map;
}

TrainConfig apply_train_config(TrainConfig c, const ConfigMap& config) {
  for (const auto& [key, v] : config) {
    if (key == "lr" || key == "learning_rate") c.learning_rate = to_double(key, v);
    else if (key == "momentum") c.momentum = to_double(key, v);
    else if (key == "dropout" || key == "dropout_rate") c.dropout_rate = to_double(key, v);
    else if (key == "lambda") c.lambda = to_double(key, v);
    else if (key == "eta") c.eta = to_double(key, v);
    else if (key == "batch" || key == "batch_size") c.batch_size = to_u64(key, v);
    else if (key == "max_epochs" || key == "epochs") c.max_epochs = to_u64(key, v);
    else if (key == "stop_window") c.stop_window = to_u64(key, v);
    else if (key == "stop_sigma") c.stop_sigma = to_double(key, v);
    else if (key == "seed") c.seed = to_u64(key, v);
    else if (key == "init") c.init = init_scheme_from_name(v);
    else throw ParameterError("unknown config key '" + key + "'");
  }
  return c;
}

void append_training_samples(TrainingSet& set, const VolumeStack& volume, Task task, bool augmented) {
  if (!volume.has_base || !volume.has_apex) {
    throw InputError("volume " + std::to_string(volume.id) + " lacks full coverage; training needs full-coverage volumes");
  }
  for (Triplet& t : training_samples_for(volume, task)) {
    if (augmented) {
      for (Triplet& v : augment(t)) {
        set.blocks.push_back(std::move(v.block));
        set.labels.push_back(v.polarity);
      }
    }
    set.blocks.push_back(std::move(t.block));
    set.labels.push_back(t.polarity);
  }
}

TrainingSet build_training_set(const std::string& cohort_dir, Task task, bool augmented) {
  TrainingSet set;
  for (const auto& row : read_manifest(cohort_dir)) {
    append_training_samples(set, load_subject(cohort_dir, row, false).ed, task, augmented);
  }
  return set;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coverage assessment of short-axis cardiac MR stacks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("lvcov ") + kToolkitVersion);

  PhantomGenArgs pg;
  auto* s_pg = app.add_subcommand("phantom-gen", "Generate a synthetic cohort");
  s_pg->add_option("--n", pg.n, "Number of volumes")->check(CLI::PositiveNumber);
  s_pg->add_option("--seed", pg.seed, "Cohort seed");
  s_pg->add_option("--ablation", pg.ablation, "none | drop_base | drop_apex | drop_both")
      ->check(CLI::IsMember({"none", "drop_base", "drop_apex", "drop_both"}));
  s_pg->add_option("--out", pg.out, "Output directory")->required();
  s_pg->add_option("--slices", pg.slices, "Slices per volume");
  s_pg->add_option("--noise", pg.noise, "Gaussian noise sd");
  s_pg->add_option("--texture", pg.texture, "Background texture amplitude");
  s_pg->add_flag("--no-es", pg.no_es, "Skip the end-systolic rendering");

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train", "Train an MBS or MAS classifier");
  s_tr->add_option("--task", tr.task, "mbs | mas")->required()->check(CLI::IsMember({"mbs", "mas"}));
  s_tr->add_option("--cohort", tr.cohort, "Full-coverage cohort directory")->required();
  s_tr->add_option("--config", tr.config, "key=value or config file; repeatable, later wins");
  s_tr->add_option("--out-model", tr.out_model, "Model file to write")->required();
  s_tr->add_option("--arch", tr.arch, "table1 | traditional")->check(CLI::IsMember({"table1", "tiny", "traditional"}));
  s_tr->add_option("--resume", tr.resume, "Continue from a saved model");
  s_tr->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  AssessArgs as;
  auto* s_as = app.add_subcommand("assess", "Coverage verdicts for a volume or cohort");
  s_as->add_option("--volume", as.volume, "TNSR volume [n,H,W]");
  s_as->add_option("--cohort", as.cohort, "Cohort directory");
  s_as->add_option("--mbs-model", as.mbs_model)->required();
  s_as->add_option("--mas-model", as.mas_model)->required();
  s_as->add_option("--threshold", as.threshold, "Decision threshold");
  s_as->add_option("--strategy", as.strategy, "extreme | max")->check(CLI::IsMember({"extreme", "max"}));
  s_as->add_flag("--baseline", as.baseline, "Also run the hand-crafted detectors");
  s_as->add_option("--format", as.format, "tsv | json")->check(CLI::IsMember({"tsv", "json"}));
  s_as->add_option("--out", as.out, "Output file (default stdout)");

  GradcheckArgs gc;
  auto* s_gc = app.add_subcommand("gradcheck", "Finite-difference gradient check at 64-bit");
  s_gc->add_option("--seed", gc.seed);
  s_gc->add_option("--sizes", gc.sizes, "tiny | table1")->check(CLI::IsMember({"tiny", "table1"}));
  s_gc->add_option("--samples", gc.samples, "Parameters sampled per tensor for table1");
  s_gc->add_option("--out", gc.out, "Output file (default stdout)");

  EvalArgs ev;
  auto* s_ev = app.add_subcommand("eval", "Error, precision and sensitivity on a labelled cohort");
  s_ev->add_option("--cohort", ev.cohort)->required();
  s_ev->add_option("--mbs-model", ev.mbs_model);
  s_ev->add_option("--mas-model", ev.mas_model);
  s_ev->add_option("--threshold", ev.threshold);
  s_ev->add_option("--strategy", ev.strategy)->check(CLI::IsMember({"extreme", "max"}));
  s_ev->add_flag("--oracle", ev.oracle, "Predict the reference labels (pipeline check)");
  s_ev->add_flag("--baseline", ev.baseline, "Also score the hand-crafted detectors");
  s_ev->add_option("--out", ev.out, "Output file (default stdout)");

  ImpactArgs im;
  auto* s_im = app.add_subcommand("impact", "Volumes, SV and EF under incomplete coverage");
  s_im->add_option("--cohort-pair", im.cohorts, "Full cohort then ablated cohorts of the same subjects")
      ->required()
      ->expected(2, -1);
  s_im->add_option("--format", im.format, "tsv | json")->check(CLI::IsMember({"tsv", "json"}));
  s_im->add_option("--out", im.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (*s_pg) return cmd_phantom_gen(pg, out);
    if (*s_tr) return cmd_train(tr, out, err);
    if (*s_as) return cmd_assess(as, out);
    if (*s_gc) return cmd_gradcheck(gc, out);
    if (*s_ev) return cmd_eval(ev, out);
    if (*s_im) return cmd_impact(im, out);
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_data;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_data;
  }
  return exit_usage;
}

}  // namespace lvcov
