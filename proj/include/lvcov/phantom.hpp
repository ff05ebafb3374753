#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lvcov/kernels.hpp"
#include "lvcov/tensor.hpp"

namespace lvcov {

constexpr std::size_t kCropSize = 120;

struct Spacing {
  double dx = 1.8;
  double dy = 1.8;
  double dz = 8.0;
};

enum class Phase { ed, es };
enum class Task { mbs, mas };
enum class Ablation { none, drop_base, drop_apex, drop_both };

std::string task_name(Task task);
Task task_from_name(const std::string& name);
std::string ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

/// Generator parameters. Lengths are in pixels unless noted.
struct PhantomSpec {
  std::size_t n_slices = 10;
  std::size_t image_size = 160;
  Spacing spacing;

  double center_jitter_sd = 3.0;
  double center_jitter_max = 6.0;
  double orientation_max_deg = 45.0;

  double pool_radius_min = 13.0;  // mid-ventricle blood-pool radius
  double pool_radius_max = 17.0;
  double myo_thickness_min = 5.0;
  double myo_thickness_max = 7.0;
  double base_eccentricity_min = 1.15;  // base ellipse major semi-axis / radius
  double base_eccentricity_max = 1.3;
  double base_minor_scale = 0.9;  // base ellipse minor semi-axis / radius
  double lvot_length_min = 8.0;   // protrusion beyond the ellipse
  double lvot_length_max = 14.0;
  double lvot_halfwidth_min = 3.5;
  double lvot_halfwidth_max = 5.0;
  double mid_bulge = 0.04;          // extra radius fraction just below the base
  double apical_taper = 0.25;       // radius loss from mid to the penultimate slice
  double apex_fraction_min = 0.08;  // last-slice radius / mid radius
  double apex_fraction_max = 0.14;

  double pool_intensity = 0.9;
  double myo_intensity = 0.35;
  double background_intensity = 0.3;
  double texture_amplitude = 0.1;
  double noise_sd = 0.03;

  // End-systole: radius scale falls linearly from es_scale_base at slice 0
  // to es_scale_base - es_scale_drop at the last slice; wall thickens.
  double es_scale_base = 0.85;
  double es_scale_drop = 0.30;
  double es_thickening = 1.3;

  /// Texture and noise off.
  static PhantomSpec noiseless();
  void validate() const;
};

struct TextureWave {
  double frequency;  // cycles per pixel
  double direction;  // radians
  double phase;
};

/// Per-subject random draws, shared by the ED and ES renderings.
struct SubjectGeometry {
  double cx, cy;  // LV centre in pixel coordinates
  double theta;   // in-plane orientation, radians
  double radius;
  double thickness;
  double eccentricity;
  double lvot_length;
  double lvot_halfwidth;
  double apex_fraction;
  std::array<TextureWave, 3> texture;
  std::uint64_t noise_key;
};

struct VolumeStack {
  Tensor slices;  // [n, H, W], intensities in [0, 1], slice 0 most basal
  Tensor masks;   // [n, H, W] labels 0 background, 1 blood pool, 2 myocardium; empty if absent
  Spacing spacing;
  bool has_base = true;
  bool has_apex = true;
  Phase phase = Phase::ed;
  std::uint64_t id = 0;
  std::uint64_t seed = 0;

  std::size_t n_slices() const { return slices.empty() ? 0 : slices.extent(0); }
  bool has_masks() const { return !masks.empty(); }
};

SubjectGeometry draw_subject(const PhantomSpec& spec, Rng& rng);

/// Radius multiplier of slice k relative to the mid-ventricle radius (ED).
double radius_profile(const PhantomSpec& spec, const SubjectGeometry& subject, std::size_t k);
/// ES linear scale of slice k.
double es_scale(const PhantomSpec& spec, std::size_t k);

VolumeStack render_volume(const PhantomSpec& spec, const SubjectGeometry& subject, Phase phase);

/// Draws a subject from rng and renders it. Two calls with equal rng state
/// and different phases give the ED/ES pair of one subject.
VolumeStack gen_volume(const PhantomSpec& spec, Rng& rng, Phase phase = Phase::ed);

/// Exact area in pixels of the generating blood-pool shapes on slice k.
double analytic_pool_area(const PhantomSpec& spec, const SubjectGeometry& subject, Phase phase, std::size_t k);

struct Triplet {
  Tensor block;  // [3, 120, 120]
  Task classifier = Task::mbs;
  int polarity = -1;  // 1 = target structure absent, 0 = present, -1 = unlabeled
  std::uint64_t volume_id = 0;
  std::size_t first_slice = 0;
};

/// Centre crop of `count` slices starting at `first` to 120x120; smaller
/// images are zero-padded symmetrically.
Tensor center_crop(const Tensor& slices, std::size_t first, std::size_t count);

/// First slice of the positive (structure-absent) triplet for each task.
std::size_t positive_start(Task task, std::size_t n_slices);

/// MBS-negative, MBS-positive, MAS-negative, MAS-positive.
std::vector<Triplet> make_training_samples(const VolumeStack& volume);
/// The two samples of one task: negative then positive.
std::vector<Triplet> training_samples_for(const VolumeStack& volume, Task task);

/// In-plane rotation (degrees) and scale about the crop centre, bilinear,
/// zero outside.
Triplet transform_triplet(const Triplet& t, double angle_deg, double scale);
/// {-45, +45} degrees x {0.75, 1.25}.
std::vector<Triplet> augment(const Triplet& t);

std::vector<Triplet> extract_test_triplets(const VolumeStack& volume);

VolumeStack ablate(const VolumeStack& volume, Ablation ablation);

struct CohortSubject {
  VolumeStack ed;
  std::optional<VolumeStack> es;
};

struct Cohort {
  std::vector<CohortSubject> subjects;
  Ablation ablation = Ablation::none;
};

/// Calls `sink` for every subject in id order without keeping volumes alive.
void for_each_cohort_subject(std::size_t n_volumes, const PhantomSpec& spec, std::uint64_t seed, Ablation ablation,
                             bool with_es, const std::function<void(CohortSubject&&)>& sink);

Cohort gen_cohort(std::size_t n_volumes, const PhantomSpec& spec, std::uint64_t seed, Ablation ablation,
                  bool with_es = true);

// Cohort on disk: vol_<id>.tnsr, mask_<id>.tnsr (+ _es variants) and a
// tab-separated manifest.tsv.

struct ManifestRow {
  std::uint64_t id;
  std::size_t n_slices;
  bool has_base;
  bool has_apex;
  std::uint64_t seed;
};

std::string manifest_line(const ManifestRow& row);
ManifestRow parse_manifest_line(const std::string& line);

class CohortWriter {
 public:
  explicit CohortWriter(std::string dir);
  void add(const CohortSubject& subject);
  void finish();

 private:
  std::string dir_;
  Spacing spacing_;
  std::vector<ManifestRow> rows_;
};

std::vector<ManifestRow> read_manifest(const std::string& dir);
/// Coverage removal shared by every row (none when all rows are complete).
Ablation manifest_ablation(const std::vector<ManifestRow>& rows);
CohortSubject load_subject(const std::string& dir, const ManifestRow& row, bool with_es = true);
Cohort load_cohort(const std::string& dir, bool with_es = true);
void save_cohort(const Cohort& cohort, const std::string& dir);

}  // namespace lvcov
