#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lvcov/baseline.hpp"
#include "lvcov/random.hpp"

using namespace lvcov;

namespace {

Mask disk_mask(std::size_t size, double cx, double cy, double r) {
  Mask m(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      m.bits[y * size + x] = std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r;
  return m;
}

Mask rotate90(const Mask& m) {
  Mask out(m.width, m.height);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) out.bits[x * out.width + (m.height - 1 - y)] = m.bits[y * m.width + x];
  return out;
}

Tensor affine(const Tensor& t, float a, float b) {
  Tensor out = t;
  for (auto& v : out.values()) v = a * v + b;
  return out;
}

}  // namespace

TEST(Otsu, BimodalBlocks) {
  Tensor img({8, 8}, 0.2f);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 4; x < 8; ++x) img.at({y, x}) = 0.9f;
  const OtsuResult r = otsu_threshold(img);
  EXPECT_GT(r.threshold, 0.2);
  EXPECT_LE(r.threshold, 0.9);
  const Mask m = otsu_mask(img);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(m.bits[y * 8 + x], x >= 4);
}

TEST(Otsu, ConstantImageAndRank) {
  EXPECT_THROW(otsu_threshold(Tensor({4, 4}, 0.5f)), MeasurementError);
  EXPECT_THROW(otsu_threshold(Tensor({2, 4, 4}, 0.5f)), DimensionError);
}

TEST(Otsu, InvertedImageGivesComplement) {
  // Dyadic levels keep 1 - x exact in float.
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> level(0, 8);
  int checked = 0;
  for (int trial = 0; trial < 4000; ++trial) {
    Tensor img({8, 8});
    // Odd trials use only two levels, which produces many tied splits.
    const int a = level(rng), b = level(rng);
    for (auto& v : img.values()) {
      const int l = trial % 2 ? (rng() % 2 ? a : b) : level(rng);
      v = static_cast<float>(l) / 8.0f;
    }
    const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
    if (*lo == *hi) continue;
    const Tensor inv = affine(img, -1.0f, 1.0f);
    EXPECT_EQ(otsu_mask(inv, OtsuConvention::inverted), otsu_mask(img).complement()) << trial;
    ++checked;
  }
  EXPECT_GT(checked, 3000);
}

TEST(Otsu, PhantomMidSliceCoversPool) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(derive_seed(3, seed));
    const VolumeStack v = gen_volume(PhantomSpec{}, rng);
    const std::size_t mid = v.n_slices() / 2;
    const Tensor roi = center_crop(v.slices, mid, 1).reshaped({kCropSize, kCropSize});
    const Tensor truth = center_crop(v.masks, mid, 1);
    const Mask m = otsu_mask(roi);
    double pool = 0, hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] != 1.0f) continue;
      pool += 1;
      hit += m.bits[i];
    }
    EXPECT_GE(hit / pool, 0.95) << seed;
  }
}

TEST(Components, LargestEightConnected) {
  Mask m(6, 6);
  // Diagonal chain of 4 (one component under 8-connectivity) and a 3-pixel bar.
  for (std::size_t i = 0; i < 4; ++i) m.bits[i * 6 + i] = 1;
  m.bits[0 * 6 + 5] = m.bits[1 * 6 + 5] = m.bits[2 * 6 + 5] = 1;
  const Mask c = largest_component(m);
  EXPECT_EQ(c.count(), 4u);
  EXPECT_EQ(c.bits[3 * 6 + 3], 1);
  EXPECT_EQ(c.bits[0 * 6 + 5], 0);
}

TEST(Components, TieGoesToFirstInRasterOrder) {
  Mask m(4, 4);
  m.bits[0] = m.bits[1] = 1;
  m.bits[3 * 4 + 2] = m.bits[3 * 4 + 3] = 1;
  const Mask c = largest_component(m);
  EXPECT_EQ(c.bits[0], 1);
  EXPECT_EQ(c.bits[15], 0);
}

TEST(MajorAxis, DiskIsTwiceRadius) {
  EXPECT_NEAR(major_axis_length(disk_mask(64, 32, 32, 20)), 40.0, 0.02 * 40.0);
}

TEST(MajorAxis, RectangleClosedForm) {
  for (auto [a, b] : {std::pair<std::size_t, std::size_t>{40, 10}, {25, 25}, {31, 7}}) {
    Mask m(50, 50);
    for (std::size_t y = 5; y < 5 + b; ++y)
      for (std::size_t x = 3; x < 3 + a; ++x) m.bits[y * 50 + x] = 1;
    EXPECT_NEAR(major_axis_length(m), a * std::sqrt(4.0 / 3.0), 0.02 * a);
  }
}

TEST(MajorAxis, SinglePixelAndEmpty) {
  Mask m(5, 5);
  m.bits[12] = 1;
  EXPECT_NEAR(major_axis_length(m), kSinglePixelMajorAxis, 1e-12);
  EXPECT_NEAR(kSinglePixelMajorAxis, 4.0 / std::sqrt(12.0), 1e-15);
  EXPECT_THROW(major_axis_length(Mask(5, 5)), MeasurementError);
}

TEST(MajorAxis, TranslationAndRotationInvariant) {
  Mask ell(80, 80);
  for (std::size_t y = 0; y < 80; ++y)
    for (std::size_t x = 0; x < 80; ++x) {
      const double dx = x + 0.5 - 35.0, dy = y + 0.5 - 42.0;
      const double u = (dx + dy) / std::sqrt(2.0), v = (dx - dy) / std::sqrt(2.0);
      ell.bits[y * 80 + x] = (u / 22.0) * (u / 22.0) + (v / 12.0) * (v / 12.0) <= 1.0;
    }
  const double base = major_axis_length(ell);
  Mask shifted(80, 80);
  for (std::size_t y = 0; y + 9 < 80; ++y)
    for (std::size_t x = 0; x + 5 < 80; ++x) shifted.bits[(y + 9) * 80 + x + 5] = ell.bits[y * 80 + x];
  EXPECT_NEAR(major_axis_length(shifted), base, 0.01 * base);
  Mask r = ell;
  for (int k = 0; k < 3; ++k) {
    r = rotate90(r);
    EXPECT_NEAR(major_axis_length(r), base, 0.01 * base);
  }
}

TEST(Rules, BasalExamples) {
  EXPECT_EQ(basal_rule(std::vector<double>{10, 11, 13.5}), std::optional<std::size_t>(2));
  EXPECT_EQ(basal_rule(std::vector<double>{10, 12, 14.4}), std::nullopt);
  EXPECT_EQ(basal_rule(std::vector<double>{10}), std::nullopt);
  EXPECT_EQ(basal_rule(std::vector<double>{10, 13, 20}), std::optional<std::size_t>(1));
}

TEST(Rules, ApicalExamples) {
  EXPECT_EQ(apical_rule(std::vector<double>{10, 9, 1.5}), std::optional<std::size_t>(2));
  EXPECT_EQ(apical_rule(std::vector<double>{10, 5, 1}), std::nullopt);
  EXPECT_EQ(apical_rule(std::vector<double>{8, 4, 2}), std::nullopt);
}

TEST(Detect, DecisionFollowsTheLengthSequence) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(derive_seed(21, seed));
    const VolumeStack v = gen_volume(PhantomSpec{}, rng);
    for (bool basal : {true, false}) {
      const Detection d = basal ? detect_basal(v) : detect_apical(v);
      ASSERT_FALSE(d.scan.empty());
      EXPECT_EQ(d.scan.front().index, v.n_slices() / 2);
      std::vector<double> lengths;
      for (std::size_t i = 0; i < d.scan.size(); ++i) {
        lengths.push_back(d.scan[i].major_axis);
        EXPECT_EQ(d.scan[i].index, basal ? v.n_slices() / 2 - i : v.n_slices() / 2 + i);
        if (i) EXPECT_DOUBLE_EQ(*d.scan[i].ratio_to_previous, d.scan[i].major_axis / d.scan[i - 1].major_axis);
      }
      const auto pos = basal ? basal_rule(lengths) : apical_rule(lengths);
      ASSERT_EQ(pos.has_value(), d.found());
      if (pos) EXPECT_EQ(*d.slice, d.scan[*pos].index);
    }
  }
}

TEST(Detect, NoiselessCohort) {
  int basal = 0, apical = 0, basal_at_zero = 0, apical_at_end = 0;
  const int n = 50;
  for_each_cohort_subject(n, PhantomSpec::noiseless(), 2024, Ablation::none, false, [&](CohortSubject&& s) {
    const Detection b = detect_basal(s.ed);
    const Detection a = detect_apical(s.ed);
    basal += b.found();
    apical += a.found();
    basal_at_zero += b.found() && *b.slice == 0;
    apical_at_end += a.found() && *a.slice == s.ed.n_slices() - 1;
  });
  EXPECT_GE(basal, 45);
  EXPECT_GE(apical, 45);
  EXPECT_GE(basal_at_zero, 45);
  EXPECT_GE(apical_at_end, 45);
}

TEST(Detect, DroppedStructuresAreMostlyMissing) {
  int base_missing = 0, apex_missing = 0;
  const int n = 30;
  for_each_cohort_subject(n, PhantomSpec::noiseless(), 99, Ablation::drop_base, false,
                          [&](CohortSubject&& s) { base_missing += !detect_basal(s.ed).found(); });
  for_each_cohort_subject(n, PhantomSpec::noiseless(), 99, Ablation::drop_apex, false,
                          [&](CohortSubject&& s) { apex_missing += !detect_apical(s.ed).found(); });
  EXPECT_GT(base_missing, n / 2);
  EXPECT_GT(apex_missing, n / 2);
}

TEST(Detect, AffineIntensityInvariance) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(derive_seed(5, seed));
    const VolumeStack v = gen_volume(PhantomSpec::noiseless(), rng);
    const Tensor w = affine(v.slices, 0.5f, 0.25f);
    const Detection b0 = detect_basal(v.slices), b1 = detect_basal(w);
    const Detection a0 = detect_apical(v.slices), a1 = detect_apical(w);
    EXPECT_EQ(b0.slice, b1.slice);
    EXPECT_EQ(a0.slice, a1.slice);
    for (std::size_t i = 0; i < b0.scan.size(); ++i) EXPECT_EQ(b0.scan[i].pool, b1.scan[i].pool);
  }
}

TEST(Detect, NeedsThreeSlices) {
  EXPECT_THROW(detect_basal(Tensor({2, 160, 160}, 0.5f)), InputError);
  EXPECT_THROW(detect_apical(Tensor({2, 160, 160}, 0.5f)), InputError);
}
