#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lvcov/metrics.hpp"
#include "lvcov/network.hpp"
#include "lvcov/phantom.hpp"

namespace lvcov {

enum class Verdict { full, mbs, mas, both };

std::string verdict_name(Verdict v);  // Full, MBS, MAS, MBS+MAS
Verdict verdict_from_name(const std::string& name);
const std::vector<std::string>& verdict_names();  // in enum order

/// A probability strictly above the threshold flags the defect.
Verdict combine_verdict(double mbs_probability, double mas_probability, double threshold = 0.5);
/// Ground-truth category of a volume from its coverage flags.
Verdict reference_verdict(const VolumeStack& volume);

enum class TripletStrategy {
  extreme,  // topmost triplet for MBS, bottommost for MAS
  max,      // highest score over all sliding triplets
};

std::string strategy_name(TripletStrategy s);
TripletStrategy strategy_from_name(const std::string& name);

struct CoverageVerdict {
  std::uint64_t volume_id = 0;
  double mbs_probability = 0.0;
  double mas_probability = 0.0;
  Verdict verdict = Verdict::full;
  std::vector<double> mbs_scores;  // per sliding triplet, top to bottom
  std::vector<double> mas_scores;
};

CoverageVerdict classify_coverage(const VolumeStack& volume, const Model& mbs_model, const Model& mas_model,
                                  double threshold = 0.5, TripletStrategy strategy = TripletStrategy::extreme);

/// Verdict of the hand-crafted detectors: a base (apex) that is not found
/// counts as missing.
Verdict baseline_verdict(const VolumeStack& volume);

std::string verdict_tsv_header();
std::string verdict_tsv_row(const CoverageVerdict& v);
/// One JSON object per line: id, mbs_probability, mas_probability, verdict,
/// mbs_scores, mas_scores.
std::string verdict_json(const CoverageVerdict& v);

// ---------------------------------------------------------------------------
// Evaluation against coverage flags
// ---------------------------------------------------------------------------

struct EvalReport {
  BinaryCounts mbs;
  BinaryCounts mas;
  BinaryCounts combined;  // both tasks pooled
  ConfusionMatrix confusion{verdict_names()};

  void add(Verdict reference, Verdict predicted);
  /// task, error %, precision %, sensitivity %, n
  std::string to_tsv() const;
};

// ---------------------------------------------------------------------------
// Clinical impact
// ---------------------------------------------------------------------------

/// Blood-pool volume in ml from the mask labels (label 1).
double blood_volume(const VolumeStack& volume);

struct SubjectVolumes {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  double edv = 0.0;  // ml
  double esv = 0.0;

  double sv() const { return edv - esv; }
  double ef() const { return 100.0 * sv() / edv; }  // percent
};

SubjectVolumes subject_volumes(const CohortSubject& subject);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation
};

struct ClinicalArm {
  std::string name;
  std::size_t n = 0;
  MeanSd edv, esv, sv, ef;
  // Percentage change of the arm mean relative to the full-coverage mean.
  std::optional<double> edv_effect, esv_effect, sv_effect, ef_effect;
};

struct ClinicalReport {
  std::vector<ClinicalArm> arms;  // arms[0] is full coverage

  std::string to_tsv() const;
  std::string to_json() const;
};

/// Each arm must list the same subjects (id and seed) in the same order as
/// the full-coverage arm; otherwise InputError.
ClinicalReport clinical_impact(const std::vector<SubjectVolumes>& full,
                               const std::vector<std::pair<std::string, std::vector<SubjectVolumes>>>& arms);

}  // namespace lvcov
