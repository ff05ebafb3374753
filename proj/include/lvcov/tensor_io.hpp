#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "lvcov/tensor.hpp"

namespace lvcov {

/// Element type tag used by the TNSR container header.
template <typename T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() { return "f32"; }
template <>
constexpr const char* dtype_name<double>() { return "f64"; }

/// Writes "TNSR v1 dtype=<f32|f64> shape=d0,d1,...\n" followed by the
/// little-endian element bytes in row-major order.
template <typename T>
void write_tensor(std::ostream& out, const BasicTensor<T>& tensor);

/// Reads one TNSR record. A dtype different from T is a FormatError unless
/// `convert` is set, in which case values are converted on load.
template <typename T>
BasicTensor<T> read_tensor(std::istream& in, bool convert = false);

template <typename T>
void save_tensor(const std::filesystem::path& path, const BasicTensor<T>& tensor);

template <typename T>
BasicTensor<T> load_tensor(const std::filesystem::path& path, bool convert = false);

/// Byte-level equality, so that -0.0 != 0.0 and NaN payloads compare.
template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace lvcov
