#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lvcov/error.hpp"

namespace lvcov {

#if defined(LVCOV_REAL_F64)
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

/// Dense row-major array with shape metadata.
///
/// `at()` is bounds-checked and is what tests use; `operator[]` and `data()`
/// are the unchecked paths for the numeric kernels.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_volume(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_volume(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw DimensionError("index rank " + std::to_string(index.size()) + " does not match tensor rank " +
                           std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) {
        throw DimensionError("index " + std::to_string(i) + " out of range on axis " + std::to_string(axis) +
                             " of " + shape_string(shape_));
      }
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Same elements under a new shape of equal volume.
  BasicTensor reshaped(Shape shape) const& { return BasicTensor(std::move(shape), data_); }
  BasicTensor reshaped(Shape shape) && { return BasicTensor(std::move(shape), std::move(data_)); }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (std::size_t axis = 0; axis < shape.size(); ++axis) {
      if (shape[axis] == 0) {
        throw DimensionError("tensor extent on axis " + std::to_string(axis) + " must be positive");
      }
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<Real>;
using TensorF = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace lvcov
