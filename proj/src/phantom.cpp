#include "lvcov/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lvcov/random.hpp"

namespace lvcov {
namespace {

constexpr double kPi = std::numbers::pi;

void check_range(double lo, double hi, const char* name, bool allow_zero = false) {
  if (!(lo <= hi) || !(allow_zero ? lo >= 0.0 : lo > 0.0)) {
    throw SpecError(std::string(name) + " range [" + std::to_string(lo) + ", " + std::to_string(hi) + "] is invalid");
  }
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Largest distance from the LV centre reached by any rendered structure.
double max_extent(const PhantomSpec& s) {
  const double r = s.pool_radius_max;
  const double a = s.base_eccentricity_max * r;
  const double b = s.base_minor_scale * r;
  const double tau = s.myo_thickness_max * std::max(1.0, s.es_thickening);
  const double tip = std::hypot(a + s.lvot_length_max, s.lvot_halfwidth_max);
  const double mid = r * (1.0 + s.mid_bulge) + tau;
  return std::max({a + tau, b + tau, tip, mid});
}

}  // namespace

std::string task_name(Task task) { return task == Task::mbs ? "mbs" : "mas"; }

Task task_from_name(const std::string& name) {
  if (name == "mbs" || name == "MBS") return Task::mbs;
  if (name == "mas" || name == "MAS") return Task::mas;
  throw ParameterError("unknown task '" + name + "' (expected mbs or mas)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::drop_base: return "drop_base";
    case Ablation::drop_apex: return "drop_apex";
    case Ablation::drop_both: return "drop_both";
  }
  return "?";
}

Ablation ablation_from_name(const std::string& name) {
  if (name == "none") return Ablation::none;
  if (name == "drop_base") return Ablation::drop_base;
  if (name == "drop_apex") return Ablation::drop_apex;
  if (name == "drop_both") return Ablation::drop_both;
  throw ParameterError("unknown ablation '" + name + "' (expected none, drop_base, drop_apex or drop_both)");
}

PhantomSpec PhantomSpec::noiseless() {
  PhantomSpec s;
  s.noise_sd = 0.0;
  s.texture_amplitude = 0.0;
  return s;
}

void PhantomSpec::validate() const {
  if (n_slices < 3) throw SpecError("a volume needs at least 3 slices, got " + std::to_string(n_slices));
  if (image_size < 16) throw SpecError("image_size too small");
  if (!(spacing.dx > 0 && spacing.dy > 0 && spacing.dz > 0)) throw SpecError("voxel spacing must be positive");
  check_range(pool_radius_min, pool_radius_max, "pool radius");
  check_range(myo_thickness_min, myo_thickness_max, "myocardium thickness");
  check_range(base_eccentricity_min, base_eccentricity_max, "base eccentricity");
  check_range(lvot_length_min, lvot_length_max, "LVOT length", true);
  check_range(lvot_halfwidth_min, lvot_halfwidth_max, "LVOT half-width");
  check_range(apex_fraction_min, apex_fraction_max, "apex fraction");
  if (apex_fraction_max >= 1.0 - apical_taper) throw SpecError("apex fraction must stay below the tapered radius");
  if (!(apical_taper > 0.0 && apical_taper < 1.0)) throw SpecError("apical_taper must lie in (0, 1)");
  if (!(mid_bulge >= 0.0)) throw SpecError("mid_bulge must be >= 0");
  if (!(base_minor_scale > 0.0)) throw SpecError("base_minor_scale must be positive");
  if (!(noise_sd >= 0.0 && texture_amplitude >= 0.0)) throw SpecError("noise and texture must be >= 0");
  if (!(center_jitter_sd >= 0.0 && center_jitter_max >= 0.0)) throw SpecError("centre jitter must be >= 0");
  if (!(orientation_max_deg >= 0.0 && orientation_max_deg <= 180.0)) throw SpecError("orientation range invalid");
  if (!(es_scale_base > 0.0 && es_scale_base - es_scale_drop > 0.0 && es_scale_base <= 1.0)) {
    throw SpecError("ES scale profile must stay in (0, 1]");
  }
  // Augmentation scales content by up to 1.25 about the crop centre.
  const double reach = center_jitter_max + 1.25 * max_extent(*this) + 1.0;
  if (reach > kCropSize / 2.0) {
    throw SpecError("LV geometry reaches " + std::to_string(reach) + " px from the crop centre, beyond the " +
                    std::to_string(kCropSize / 2) + " px half-crop");
  }
  if (center_jitter_max + max_extent(*this) + 1.0 > image_size / 2.0) {
    throw SpecError("LV geometry does not fit a " + std::to_string(image_size) + " px image");
  }
}

SubjectGeometry draw_subject(const PhantomSpec& spec, Rng& rng) {
  spec.validate();
  SubjectGeometry g{};
  std::normal_distribution<double> jitter(0.0, spec.center_jitter_sd);
  const double half = spec.image_size / 2.0;
  g.cx = half + std::clamp(jitter(rng), -spec.center_jitter_max, spec.center_jitter_max);
  g.cy = half + std::clamp(jitter(rng), -spec.center_jitter_max, spec.center_jitter_max);
  g.theta = uniform(rng, -spec.orientation_max_deg, spec.orientation_max_deg) * kPi / 180.0;
  g.radius = uniform(rng, spec.pool_radius_min, spec.pool_radius_max);
  g.thickness = uniform(rng, spec.myo_thickness_min, spec.myo_thickness_max);
  g.eccentricity = uniform(rng, spec.base_eccentricity_min, spec.base_eccentricity_max);
  g.lvot_length = uniform(rng, spec.lvot_length_min, spec.lvot_length_max);
  g.lvot_halfwidth = uniform(rng, spec.lvot_halfwidth_min, spec.lvot_halfwidth_max);
  g.apex_fraction = uniform(rng, spec.apex_fraction_min, spec.apex_fraction_max);
  for (auto& w : g.texture) {
    w.frequency = uniform(rng, 0.005, 0.02);
    w.direction = uniform(rng, 0.0, kPi);
    w.phase = uniform(rng, 0.0, 2.0 * kPi);
  }
  g.noise_key = rng();
  return g;
}

double radius_profile(const PhantomSpec& spec, const SubjectGeometry& subject, std::size_t k) {
  const std::size_t n = spec.n_slices;
  if (k >= n) throw ParameterError("slice index out of range");
  const std::size_t m = n / 2;
  if (k == 0) return 1.0;
  if (k == n - 1) return subject.apex_fraction;
  if (k < m) return 1.0 + spec.mid_bulge * static_cast<double>(m - 1 - k) / static_cast<double>(std::max<std::size_t>(1, m - 1));
  return 1.0 - spec.apical_taper * static_cast<double>(k - m + 1) / static_cast<double>(n - 1 - m);
}

double es_scale(const PhantomSpec& spec, std::size_t k) {
  return spec.es_scale_base - spec.es_scale_drop * static_cast<double>(k) / static_cast<double>(spec.n_slices - 1);
}

namespace {

struct SliceShape {
  bool base;
  double a, b;     // base ellipse semi-axes (pool)
  double r;        // circular pool radius
  double tau;      // wall thickness
  double lvot_len; // protrusion beyond a
  double lvot_w;   // half-width
};

SliceShape slice_shape(const PhantomSpec& spec, const SubjectGeometry& g, Phase phase, std::size_t k) {
  const double s = phase == Phase::es ? es_scale(spec, k) : 1.0;
  SliceShape sh{};
  sh.base = k == 0;
  sh.tau = g.thickness * (phase == Phase::es ? spec.es_thickening : 1.0);
  const double r = g.radius * radius_profile(spec, g, k) * s;
  sh.r = r;
  sh.a = g.eccentricity * r;
  sh.b = spec.base_minor_scale * r;
  sh.lvot_len = g.lvot_length * s;
  sh.lvot_w = g.lvot_halfwidth * s;
  return sh;
}

}  // namespace

double analytic_pool_area(const PhantomSpec& spec, const SubjectGeometry& subject, Phase phase, std::size_t k) {
  const SliceShape sh = slice_shape(spec, subject, phase, k);
  if (!sh.base) return kPi * sh.r * sh.r;
  // Ellipse plus the part of the LVOT rectangle u in [0, a + len], |v| <= w
  // that lies outside the ellipse.
  const double s = std::min(1.0, sh.lvot_w / sh.b);
  const double overlap = sh.a * sh.b * (s * std::sqrt(1.0 - s * s) + std::asin(s));
  return kPi * sh.a * sh.b + 2.0 * sh.lvot_w * (sh.a + sh.lvot_len) - overlap;
}

VolumeStack render_volume(const PhantomSpec& spec, const SubjectGeometry& g, Phase phase) {
  spec.validate();
  const std::size_t n = spec.n_slices;
  const std::size_t size = spec.image_size;
  VolumeStack vol;
  vol.slices = Tensor({n, size, size});
  vol.masks = Tensor({n, size, size});
  vol.spacing = spec.spacing;
  vol.phase = phase;

  std::vector<double> background(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double v = spec.background_intensity;
      for (const auto& w : g.texture) {
        const double t = px * std::cos(w.direction) + py * std::sin(w.direction);
        v += spec.texture_amplitude / 3.0 * std::sin(2.0 * kPi * w.frequency * t + w.phase);
      }
      background[y * size + x] = v;
    }
  }

  Rng noise_rng(derive_seed(g.noise_key, phase == Phase::ed ? 0 : 1));
  std::normal_distribution<double> noise(0.0, spec.noise_sd > 0.0 ? spec.noise_sd : 1.0);
  const double ct = std::cos(g.theta), st = std::sin(g.theta);

  for (std::size_t k = 0; k < n; ++k) {
    const SliceShape sh = slice_shape(spec, g, phase, k);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = x + 0.5 - g.cx, dy = y + 0.5 - g.cy;
        int label = 0;
        if (sh.base) {
          const double u = dx * ct + dy * st;
          const double v = -dx * st + dy * ct;
          const double ao = sh.a + sh.tau, bo = sh.b + sh.tau;
          if ((u * u) / (ao * ao) + (v * v) / (bo * bo) <= 1.0) label = 2;
          const bool pool = (u * u) / (sh.a * sh.a) + (v * v) / (sh.b * sh.b) <= 1.0;
          const bool lvot = u >= 0.0 && u <= sh.a + sh.lvot_len && std::abs(v) <= sh.lvot_w;
          if (pool || lvot) label = 1;
        } else {
          const double rr = dx * dx + dy * dy;
          if (rr <= (sh.r + sh.tau) * (sh.r + sh.tau)) label = 2;
          if (rr <= sh.r * sh.r) label = 1;
        }
        double value = label == 1 ? spec.pool_intensity : label == 2 ? spec.myo_intensity : background[y * size + x];
        if (spec.noise_sd > 0.0) value += spec.noise_sd * (noise(noise_rng) / 1.0);
        const std::size_t idx = (k * size + y) * size + x;
        vol.slices[idx] = static_cast<Real>(std::clamp(value, 0.0, 1.0));
        vol.masks[idx] = static_cast<Real>(label);
      }
    }
  }
  return vol;
}

VolumeStack gen_volume(const PhantomSpec& spec, Rng& rng, Phase phase) {
  const SubjectGeometry g = draw_subject(spec, rng);
  return render_volume(spec, g, phase);
}

Tensor center_crop(const Tensor& slices, std::size_t first, std::size_t count) {
  if (slices.rank() != 3) throw DimensionError("slice stack must be [n, H, W], got " + shape_string(slices.shape()));
  if (count == 0 || first + count > slices.extent(0)) {
    throw DimensionError("slices " + std::to_string(first) + ".." + std::to_string(first + count) +
                         " exceed a stack of " + std::to_string(slices.extent(0)));
  }
  const std::size_t h = slices.extent(1), w = slices.extent(2);
  Tensor out({count, kCropSize, kCropSize});
  // Offsets of the crop in the source (positive) or of the source in the crop (padding).
  const auto place = [](std::size_t src, std::ptrdiff_t& shift) {
    shift = (static_cast<std::ptrdiff_t>(src) - static_cast<std::ptrdiff_t>(kCropSize)) / 2;
  };
  std::ptrdiff_t oy = 0, ox = 0;
  place(h, oy);
  place(w, ox);
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t y = 0; y < kCropSize; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + oy;
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t x = 0; x < kCropSize; ++x) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + ox;
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
        out[(k * kCropSize + y) * kCropSize + x] =
            slices[((first + k) * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
    }
  }
  return out;
}

std::size_t positive_start(Task task, std::size_t n) {
  if (n < 6) throw SampleError("training samples need at least 6 slices, got " + std::to_string(n));
  if (task == Task::mbs) return std::max<std::size_t>(n / 2 >= 2 ? n / 2 - 2 : 0, 3);
  return std::min((n - 1) / 2, n - 6);
}

std::vector<Triplet> training_samples_for(const VolumeStack& volume, Task task) {
  const std::size_t n = volume.n_slices();
  const std::size_t pos = positive_start(task, n);
  const std::size_t neg = task == Task::mbs ? 0 : n - 3;
  std::vector<Triplet> out;
  out.push_back({center_crop(volume.slices, neg, 3), task, 0, volume.id, neg});
  out.push_back({center_crop(volume.slices, pos, 3), task, 1, volume.id, pos});
  return out;
}

std::vector<Triplet> make_training_samples(const VolumeStack& volume) {
  std::vector<Triplet> out = training_samples_for(volume, Task::mbs);
  for (auto& t : training_samples_for(volume, Task::mas)) out.push_back(std::move(t));
  return out;
}

Triplet transform_triplet(const Triplet& t, double angle_deg, double scale) {
  if (!(scale > 0.0)) throw ParameterError("scale must be positive");
  if (t.block.rank() != 3) throw DimensionError("triplet block must be [3, H, W]");
  const std::size_t d = t.block.extent(0), h = t.block.extent(1), w = t.block.extent(2);
  Triplet out = t;
  out.block = Tensor(t.block.shape());
  const double th = angle_deg * kPi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cx = w / 2.0, cy = h / 2.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map of the output pixel centre into source pixel indices.
      const double px = x + 0.5 - cx, py = y + 0.5 - cy;
      const double sx = (c * px + s * py) / scale + cx - 0.5;
      const double sy = (-s * px + c * py) / scale + cy - 0.5;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double fx = sx - fx0, fy = sy - fy0;
      const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      for (std::size_t k = 0; k < d; ++k) {
        const auto at = [&](long yy, long xx) -> double {
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
          return t.block[(k * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)];
        };
        double v = (1 - fy) * ((1 - fx) * at(y0, x0) + (fx != 0.0 ? fx * at(y0, x0 + 1) : 0.0));
        if (fy != 0.0) v += fy * ((1 - fx) * at(y0 + 1, x0) + (fx != 0.0 ? fx * at(y0 + 1, x0 + 1) : 0.0));
        out.block[(k * h + y) * w + x] = static_cast<Real>(v);
      }
    }
  }
  return out;
}

std::vector<Triplet> augment(const Triplet& t) {
  std::vector<Triplet> out;
  for (double angle : {-45.0, 45.0}) {
    for (double scale : {0.75, 1.25}) out.push_back(transform_triplet(t, angle, scale));
  }
  return out;
}

std::vector<Triplet> extract_test_triplets(const VolumeStack& volume) {
  const std::size_t n = volume.n_slices();
  if (n < 3) throw SampleError("test triplets need at least 3 slices, got " + std::to_string(n));
  std::vector<Triplet> out;
  for (std::size_t k = 0; k + 3 <= n; ++k) out.push_back({center_crop(volume.slices, k, 3), Task::mbs, -1, volume.id, k});
  return out;
}

VolumeStack ablate(const VolumeStack& volume, Ablation ablation) {
  const std::size_t n = volume.n_slices();
  const bool drop_base = ablation == Ablation::drop_base || ablation == Ablation::drop_both;
  const bool drop_apex = ablation == Ablation::drop_apex || ablation == Ablation::drop_both;
  const std::size_t first = drop_base ? 1 : 0;
  const std::size_t last = drop_apex ? n - 1 : n;
  if (last <= first + 2) throw SampleError("ablation would leave fewer than 3 slices");
  const auto slice_range = [&](const Tensor& t) {
    const std::size_t plane = t.extent(1) * t.extent(2);
    std::vector<Real> data(t.data() + first * plane, t.data() + last * plane);
    return Tensor({last - first, t.extent(1), t.extent(2)}, std::move(data));
  };
  VolumeStack out = volume;
  out.slices = slice_range(volume.slices);
  if (volume.has_masks()) out.masks = slice_range(volume.masks);
  out.has_base = volume.has_base && !drop_base;
  out.has_apex = volume.has_apex && !drop_apex;
  return out;
}

void for_each_cohort_subject(std::size_t n_volumes, const PhantomSpec& spec, std::uint64_t seed, Ablation ablation,
                             bool with_es, const std::function<void(CohortSubject&&)>& sink) {
  if (n_volumes == 0) throw ParameterError("cohort needs at least one volume");
  spec.validate();
  for (std::size_t id = 0; id < n_volumes; ++id) {
    const std::uint64_t vseed = derive_seed(seed, id);
    Rng rng(vseed);
    const SubjectGeometry g = draw_subject(spec, rng);
    CohortSubject subject;
    subject.ed = ablate(render_volume(spec, g, Phase::ed), ablation);
    subject.ed.id = id;
    subject.ed.seed = vseed;
    if (with_es) {
      subject.es = ablate(render_volume(spec, g, Phase::es), ablation);
      subject.es->id = id;
      subject.es->seed = vseed;
    }
    sink(std::move(subject));
  }
}

Cohort gen_cohort(std::size_t n_volumes, const PhantomSpec& spec, std::uint64_t seed, Ablation ablation,
                  bool with_es) {
  Cohort cohort;
  cohort.ablation = ablation;
  for_each_cohort_subject(n_volumes, spec, seed, ablation, with_es,
                          [&](CohortSubject&& s) { cohort.subjects.push_back(std::move(s)); });
  return cohort;
}

}  // namespace lvcov
