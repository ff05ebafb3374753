#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lvcov/phantom.hpp"
#include "lvcov/tensor.hpp"

namespace lvcov {

struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::size_t count() const;
  Mask complement() const;
  bool operator==(const Mask&) const = default;
};

// Ties between equally good splits go to the lowest split under `standard`
// and to the highest under `inverted`. With that convention
// otsu_mask(1 - x, inverted) is exactly the complement of otsu_mask(x).
enum class OtsuConvention { standard, inverted };

struct OtsuResult {
  double threshold;   // lower edge of the first foreground bin
  std::size_t split;  // first foreground bin, 1..255
};

/// 256-bin histogram over [min, max] of the image. MeasurementError on a
/// constant image.
OtsuResult otsu_threshold(const Tensor& roi, OtsuConvention convention = OtsuConvention::standard);
/// Pixels whose bin is >= the split.
Mask otsu_mask(const Tensor& roi, OtsuConvention convention = OtsuConvention::standard);

/// Largest 8-connected component; equal sizes resolve to the one met first
/// in raster order.
Mask largest_component(const Mask& mask);

/// 4 * sqrt(largest eigenvalue of the second central moments) of the
/// largest component, each pixel counted as a unit square (so a single pixel
/// gives 4 / sqrt(12)).
double major_axis_length(const Mask& mask);

constexpr double kSinglePixelMajorAxis = 1.1547005383792515;  // 4 / sqrt(12)
constexpr double kBasalRatio = 1.2;
constexpr double kApicalRatio = 0.2;

struct SliceMeasurement {
  std::size_t index;
  Mask pool;
  double major_axis;
  std::optional<double> ratio_to_previous;
};

/// Thresholds the central 120x120 crop of slice k and measures its pool.
SliceMeasurement measure_slice(const Tensor& slices, std::size_t k, const SliceMeasurement* previous = nullptr);

/// Position in `lengths` of the first element whose ratio to its predecessor
/// is strictly above kBasalRatio (resp. strictly below kApicalRatio).
std::optional<std::size_t> basal_rule(std::span<const double> lengths);
std::optional<std::size_t> apical_rule(std::span<const double> lengths);

struct Detection {
  std::optional<std::size_t> slice;    // volume slice index where the rule fired
  std::vector<SliceMeasurement> scan;  // in scan order, starting at the mid slice
  bool found() const { return slice.has_value(); }
};

/// Scans from slice floor(n/2) toward slice 0.
Detection detect_basal(const Tensor& slices);
/// Scans from slice floor(n/2) toward slice n-1.
Detection detect_apical(const Tensor& slices);

inline Detection detect_basal(const VolumeStack& v) { return detect_basal(v.slices); }
inline Detection detect_apical(const VolumeStack& v) { return detect_apical(v.slices); }

}  // namespace lvcov
