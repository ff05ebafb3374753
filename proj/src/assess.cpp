#include "lvcov/assess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <sstream>

#include "lvcov/baseline.hpp"

namespace lvcov {

const std::vector<std::string>& verdict_names() {
  static const std::vector<std::string> names{"Full", "MBS", "MAS", "MBS+MAS"};
  return names;
}

std::string verdict_name(Verdict v) { return verdict_names()[static_cast<std::size_t>(v)]; }

Verdict verdict_from_name(const std::string& name) {
  const auto& names = verdict_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ParameterError("unknown verdict '" + name + "'");
  return static_cast<Verdict>(it - names.begin());
}

Verdict combine_verdict(double mbs_probability, double mas_probability, double threshold) {
  const bool mbs = mbs_probability > threshold;
  const bool mas = mas_probability > threshold;
  if (mbs && mas) return Verdict::both;
  if (mbs) return Verdict::mbs;
  if (mas) return Verdict::mas;
  return Verdict::full;
}

Verdict reference_verdict(const VolumeStack& volume) {
  if (!volume.has_base && !volume.has_apex) return Verdict::both;
  if (!volume.has_base) return Verdict::mbs;
  if (!volume.has_apex) return Verdict::mas;
  return Verdict::full;
}

std::string strategy_name(TripletStrategy s) { return s == TripletStrategy::extreme ? "extreme" : "max"; }

TripletStrategy strategy_from_name(const std::string& name) {
  if (name == "extreme") return TripletStrategy::extreme;
  if (name == "max") return TripletStrategy::max;
  throw ParameterError("unknown triplet strategy '" + name + "' (expected extreme or max)");
}

CoverageVerdict classify_coverage(const VolumeStack& volume, const Model& mbs_model, const Model& mas_model,
                                  double threshold, TripletStrategy strategy) {
  if (volume.n_slices() < 3) {
    throw InputError("volume " + std::to_string(volume.id) + " has " + std::to_string(volume.n_slices()) +
                     " slices; coverage assessment needs at least 3");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ParameterError("threshold must lie in (0, 1)");
  const Shape expected{3, kCropSize, kCropSize, 1};
  if (mbs_model.arch.input != expected || mas_model.arch.input != expected) {
    throw InputError("models must take 3x120x120 triplets");
  }
  CoverageVerdict out;
  out.volume_id = volume.id;
  for (const Triplet& t : extract_test_triplets(volume)) {
    out.mbs_scores.push_back(predict(mbs_model, t.block));
    out.mas_scores.push_back(predict(mas_model, t.block));
  }
  if (strategy == TripletStrategy::extreme) {
    out.mbs_probability = out.mbs_scores.front();
    out.mas_probability = out.mas_scores.back();
  } else {
    out.mbs_probability = *std::max_element(out.mbs_scores.begin(), out.mbs_scores.end());
    out.mas_probability = *std::max_element(out.mas_scores.begin(), out.mas_scores.end());
  }
  out.verdict = combine_verdict(out.mbs_probability, out.mas_probability, threshold);
  return out;
}

Verdict baseline_verdict(const VolumeStack& volume) {
  const bool base_missing = !detect_basal(volume).found();
  const bool apex_missing = !detect_apical(volume).found();
  return combine_verdict(base_missing ? 1.0 : 0.0, apex_missing ? 1.0 : 0.0, 0.5);
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string join_scores(const std::vector<double>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + fixed(s[i]);
  return out;
}

}  // namespace

std::string verdict_tsv_header() { return "id\tmbs_probability\tmas_probability\tverdict\tmbs_scores\tmas_scores"; }

std::string verdict_tsv_row(const CoverageVerdict& v) {
  return std::to_string(v.volume_id) + '\t' + fixed(v.mbs_probability) + '\t' + fixed(v.mas_probability) + '\t' +
         verdict_name(v.verdict) + '\t' + join_scores(v.mbs_scores) + '\t' + join_scores(v.mas_scores);
}

std::string verdict_json(const CoverageVerdict& v) {
  nlohmann::ordered_json j;
  j["id"] = v.volume_id;
  j["mbs_probability"] = v.mbs_probability;
  j["mas_probability"] = v.mas_probability;
  j["verdict"] = verdict_name(v.verdict);
  j["mbs_scores"] = v.mbs_scores;
  j["mas_scores"] = v.mas_scores;
  return j.dump();
}

void EvalReport::add(Verdict reference, Verdict predicted) {
  const auto has_mbs = [](Verdict v) { return v == Verdict::mbs || v == Verdict::both; };
  const auto has_mas = [](Verdict v) { return v == Verdict::mas || v == Verdict::both; };
  mbs.add(has_mbs(reference), has_mbs(predicted));
  mas.add(has_mas(reference), has_mas(predicted));
  combined.add(has_mbs(reference), has_mbs(predicted));
  combined.add(has_mas(reference), has_mas(predicted));
  confusion.add(static_cast<std::size_t>(reference), static_cast<std::size_t>(predicted));
}

std::string EvalReport::to_tsv() const {
  std::ostringstream out;
  out << "task\terror_pct\tprecision_pct\tsensitivity_pct\tn\n";
  const auto row = [&](const char* name, const BinaryCounts& c) {
    out << name << '\t' << format_percent(c.error_rate()) << '\t' << format_percent(c.precision()) << '\t'
        << format_percent(c.sensitivity()) << '\t' << c.total() << '\n';
  };
  row("MBS", mbs);
  row("MAS", mas);
  row("combined", combined);
  return out.str();
}

double blood_volume(const VolumeStack& volume) {
  if (!volume.has_masks()) throw InputError("volume " + std::to_string(volume.id) + " has no blood-pool masks");
  std::size_t count = 0;
  for (Real label : volume.masks.values()) count += label == Real{1} ? 1 : 0;
  const Spacing& s = volume.spacing;
  return static_cast<double>(count) * s.dx * s.dy * s.dz / 1000.0;
}

SubjectVolumes subject_volumes(const CohortSubject& subject) {
  if (!subject.es) throw InputError("subject " + std::to_string(subject.ed.id) + " has no ES volume");
  SubjectVolumes v;
  v.id = subject.ed.id;
  v.seed = subject.ed.seed;
  v.edv = blood_volume(subject.ed);
  v.esv = blood_volume(*subject.es);
  return v;
}

namespace {

template <typename F>
MeanSd mean_sd(const std::vector<SubjectVolumes>& subjects, F value) {
  MeanSd out;
  const double n = static_cast<double>(subjects.size());
  for (const auto& s : subjects) out.mean += value(s);
  out.mean /= n;
  if (subjects.size() > 1) {
    double ss = 0.0;
    for (const auto& s : subjects) ss += (value(s) - out.mean) * (value(s) - out.mean);
    out.sd = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

std::optional<double> effect(const MeanSd& arm, const MeanSd& full) {
  if (full.mean == 0.0) return std::nullopt;
  return 100.0 * (arm.mean - full.mean) / full.mean;
}

ClinicalArm summarize(const std::string& name, const std::vector<SubjectVolumes>& subjects) {
  ClinicalArm a;
  a.name = name;
  a.n = subjects.size();
  a.edv = mean_sd(subjects, [](const SubjectVolumes& s) { return s.edv; });
  a.esv = mean_sd(subjects, [](const SubjectVolumes& s) { return s.esv; });
  a.sv = mean_sd(subjects, [](const SubjectVolumes& s) { return s.sv(); });
  a.ef = mean_sd(subjects, [](const SubjectVolumes& s) { return s.ef(); });
  return a;
}

}  // namespace

ClinicalReport clinical_impact(const std::vector<SubjectVolumes>& full,
                               const std::vector<std::pair<std::string, std::vector<SubjectVolumes>>>& arms) {
  if (full.empty()) throw InputError("clinical impact needs at least one subject");
  for (const auto& s : full) {
    if (!(s.edv > 0.0)) throw InputError("subject " + std::to_string(s.id) + " has an empty ED blood pool");
  }
  ClinicalReport report;
  report.arms.push_back(summarize("full", full));
  for (const auto& [name, subjects] : arms) {
    if (subjects.size() != full.size()) {
      throw InputError("arm '" + name + "' has " + std::to_string(subjects.size()) + " subjects, full coverage has " +
                       std::to_string(full.size()));
    }
    for (std::size_t i = 0; i < full.size(); ++i) {
      if (subjects[i].id != full[i].id || subjects[i].seed != full[i].seed) {
        throw InputError("arm '" + name + "' is not paired with full coverage at subject " +
                         std::to_string(full[i].id));
      }
      if (!(subjects[i].edv > 0.0)) throw InputError("arm '" + name + "' has an empty ED blood pool");
    }
    ClinicalArm a = summarize(name, subjects);
    const ClinicalArm& f = report.arms.front();
    a.edv_effect = effect(a.edv, f.edv);
    a.esv_effect = effect(a.esv, f.esv);
    a.sv_effect = effect(a.sv, f.sv);
    a.ef_effect = effect(a.ef, f.ef);
    report.arms.push_back(std::move(a));
  }
  return report;
}

std::string ClinicalReport::to_tsv() const {
  std::ostringstream out;
  out << "arm\tn\tLVEDV_ml\tLVESV_ml\tLVSV_ml\tLVEF_pct\tLVEDV_effect_pct\tLVESV_effect_pct\tLVSV_effect_pct\t"
         "LVEF_effect_pct\n";
  const auto ms = [](const MeanSd& m) { return fixed(m.mean, 2) + " ± " + fixed(m.sd, 2); };
  const auto eff = [](const std::optional<double>& e) { return e ? fixed(*e, 2) : std::string("-"); };
  for (const auto& a : arms) {
    out << a.name << '\t' << a.n << '\t' << ms(a.edv) << '\t' << ms(a.esv) << '\t' << ms(a.sv) << '\t' << ms(a.ef)
        << '\t' << eff(a.edv_effect) << '\t' << eff(a.esv_effect) << '\t' << eff(a.sv_effect) << '\t'
        << eff(a.ef_effect) << '\n';
  }
  return out.str();
}

std::string ClinicalReport::to_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& a : arms) {
    nlohmann::ordered_json j;
    j["arm"] = a.name;
    j["n"] = a.n;
    for (const auto& [key, m] : {std::pair<const char*, const MeanSd*>{"lvedv_ml", &a.edv},
                                 {"lvesv_ml", &a.esv}, {"lvsv_ml", &a.sv}, {"lvef_pct", &a.ef}}) {
      j[key] = {{"mean", m->mean}, {"sd", m->sd}};
    }
    for (const auto& [key, e] : {std::pair<const char*, const std::optional<double>*>{"lvedv_effect_pct", &a.edv_effect},
                                 {"lvesv_effect_pct", &a.esv_effect}, {"lvsv_effect_pct", &a.sv_effect},
                                 {"lvef_effect_pct", &a.ef_effect}}) {
      j[key] = *e ? nlohmann::ordered_json(**e) : nlohmann::ordered_json(nullptr);
    }
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

}  // namespace lvcov
