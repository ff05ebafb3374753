#include "lvcov/baseline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>

namespace lvcov {
namespace {

constexpr std::size_t kBins = 256;

std::size_t bin_of(double x, double lo, double hi) {
  const double b = std::floor((x - lo) / (hi - lo) * static_cast<double>(kBins));
  return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(kBins - 1)));
}

void check_image(const Tensor& roi) {
  if (roi.rank() != 2) throw DimensionError("threshold ROI must be [H, W], got " + shape_string(roi.shape()));
  if (roi.empty()) throw MeasurementError("threshold ROI is empty");
}

}  // namespace

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

Mask Mask::complement() const {
  Mask out = *this;
  for (auto& b : out.bits) b = b ? 0 : 1;
  return out;
}

OtsuResult otsu_threshold(const Tensor& roi, OtsuConvention convention) {
  check_image(roi);
  const auto [lo_it, hi_it] = std::minmax_element(roi.values().begin(), roi.values().end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw MeasurementError("cannot threshold a constant image");

  std::array<double, kBins> count{}, sum{};
  for (Real v : roi.values()) {
    const std::size_t b = bin_of(v, lo, hi);
    count[b] += 1.0;
    sum[b] += v;
  }
  const double n = static_cast<double>(roi.size());
  double total = 0.0;
  for (double s : sum) total += s;

  // Between-class variance up to the constant factor 1/N^2:
  // (N*S0 - n0*S)^2 / (n0*n1), with class means taken from the pixel values.
  double n0 = 0.0, s0 = 0.0, best = -1.0;
  std::size_t split = 0;
  for (std::size_t k = 1; k < kBins; ++k) {
    n0 += count[k - 1];
    s0 += sum[k - 1];
    const double n1 = n - n0;
    if (n0 == 0.0 || n1 == 0.0) continue;
    const double d = n * s0 - n0 * total;
    const double score = d * d / (n0 * n1);
    const bool better = convention == OtsuConvention::standard ? score > best : score >= best;
    if (better) {
      best = score;
      split = k;
    }
  }
  return {lo + (hi - lo) * static_cast<double>(split) / static_cast<double>(kBins), split};
}

Mask otsu_mask(const Tensor& roi, OtsuConvention convention) {
  const OtsuResult r = otsu_threshold(roi, convention);
  const auto [lo_it, hi_it] = std::minmax_element(roi.values().begin(), roi.values().end());
  Mask m(roi.extent(0), roi.extent(1));
  for (std::size_t i = 0; i < roi.size(); ++i) m.bits[i] = bin_of(roi[i], *lo_it, *hi_it) >= r.split ? 1 : 0;
  return m;
}

Mask largest_component(const Mask& mask) {
  const std::size_t h = mask.height, w = mask.width;
  std::vector<int> label(h * w, -1);
  std::vector<std::size_t> stack;
  int best = -1, current = 0;
  std::size_t best_size = 0;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!mask.bits[start] || label[start] >= 0) continue;
    std::size_t size = 0;
    stack.push_back(start);
    label[start] = current;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t y = p / w, x = p % w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
          const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (mask.bits[q] && label[q] < 0) {
            label[q] = current;
            stack.push_back(q);
          }
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = current;
    }
    ++current;
  }
  Mask out(h, w);
  for (std::size_t i = 0; i < h * w; ++i) out.bits[i] = label[i] == best && best >= 0 ? 1 : 0;
  return out;
}

double major_axis_length(const Mask& mask) {
  const Mask pool = largest_component(mask);
  const std::size_t n = pool.count();
  if (n == 0) throw MeasurementError("mask has no foreground pixels");
  double mx = 0.0, my = 0.0;
  for (std::size_t y = 0; y < pool.height; ++y) {
    for (std::size_t x = 0; x < pool.width; ++x) {
      if (!pool.bits[y * pool.width + x]) continue;
      mx += static_cast<double>(x);
      my += static_cast<double>(y);
    }
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
  for (std::size_t y = 0; y < pool.height; ++y) {
    for (std::size_t x = 0; x < pool.width; ++x) {
      if (!pool.bits[y * pool.width + x]) continue;
      const double dx = static_cast<double>(x) - mx, dy = static_cast<double>(y) - my;
      c(0, 0) += dx * dx;
      c(0, 1) += dx * dy;
      c(1, 1) += dy * dy;
    }
  }
  c /= static_cast<double>(n);
  c(1, 0) = c(0, 1);
  c(0, 0) += 1.0 / 12.0;
  c(1, 1) += 1.0 / 12.0;
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(c, Eigen::EigenvaluesOnly).eigenvalues()(1);
  return 4.0 * std::sqrt(lmax);
}

SliceMeasurement measure_slice(const Tensor& slices, std::size_t k, const SliceMeasurement* previous) {
  const Tensor roi = center_crop(slices, k, 1).reshaped({kCropSize, kCropSize});
  SliceMeasurement m;
  m.index = k;
  try {
    m.pool = largest_component(otsu_mask(roi));
  } catch (const MeasurementError& e) {
    throw MeasurementError("slice " + std::to_string(k) + ": " + e.what());
  }
  m.major_axis = major_axis_length(m.pool);
  if (previous) m.ratio_to_previous = m.major_axis / previous->major_axis;
  return m;
}

std::optional<std::size_t> basal_rule(std::span<const double> lengths) {
  for (std::size_t i = 1; i < lengths.size(); ++i) {
    if (lengths[i] / lengths[i - 1] > kBasalRatio) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> apical_rule(std::span<const double> lengths) {
  for (std::size_t i = 1; i < lengths.size(); ++i) {
    if (lengths[i] / lengths[i - 1] < kApicalRatio) return i;
  }
  return std::nullopt;
}

namespace {

template <typename Rule>
Detection scan(const Tensor& slices, bool toward_base, Rule rule) {
  if (slices.rank() != 3 || slices.extent(0) < 3) {
    throw InputError("baseline detection needs a [n>=3, H, W] stack, got " + shape_string(slices.shape()));
  }
  const std::size_t n = slices.extent(0);
  const std::size_t mid = n / 2;
  Detection d;
  std::vector<double> lengths;
  for (std::size_t step = 0;; ++step) {
    const std::size_t k = toward_base ? mid - step : mid + step;
    d.scan.push_back(measure_slice(slices, k, d.scan.empty() ? nullptr : &d.scan.back()));
    lengths.push_back(d.scan.back().major_axis);
    if (toward_base ? k == 0 : k == n - 1) break;
  }
  if (const auto pos = rule(std::span<const double>(lengths))) d.slice = d.scan[*pos].index;
  return d;
}

}  // namespace

Detection detect_basal(const Tensor& slices) { return scan(slices, true, basal_rule); }
Detection detect_apical(const Tensor& slices) { return scan(slices, false, apical_rule); }

}  // namespace lvcov
