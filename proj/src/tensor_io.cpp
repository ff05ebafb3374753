#include "lvcov/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace lvcov {
namespace {

constexpr std::string_view kMagic = "TNSR v1 ";

template <typename T>
void write_le(std::ostream& out, const T* values, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(count * sizeof(T)));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      char bytes[sizeof(T)];
      std::memcpy(bytes, &values[i], sizeof(T));
      for (std::size_t b = 0; b < sizeof(T) / 2; ++b) std::swap(bytes[b], bytes[sizeof(T) - 1 - b]);
      out.write(bytes, sizeof(T));
    }
  }
}

template <typename T>
void read_le(std::istream& in, T* values, std::size_t count) {
  in.read(reinterpret_cast<char*>(values), static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(T)) {
    throw FormatError("tensor payload truncated: expected " + std::to_string(count * sizeof(T)) + " bytes, got " +
                      std::to_string(in.gcount()));
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < count; ++i) {
      auto* bytes = reinterpret_cast<char*>(&values[i]);
      for (std::size_t b = 0; b < sizeof(T) / 2; ++b) std::swap(bytes[b], bytes[sizeof(T) - 1 - b]);
    }
  }
}

struct Header {
  std::string dtype;
  Shape shape;
};

Header parse_header(const std::string& line) {
  if (line.rfind(kMagic, 0) != 0) {
    if (line.rfind("TNSR ", 0) == 0) throw FormatError("unsupported tensor container version: " + line);
    throw FormatError("not a TNSR record: '" + line.substr(0, 32) + "'");
  }
  std::istringstream fields(line.substr(kMagic.size()));
  Header header;
  std::string field;
  while (fields >> field) {
    if (field.rfind("dtype=", 0) == 0) {
      header.dtype = field.substr(6);
    } else if (field.rfind("shape=", 0) == 0) {
      std::istringstream dims(field.substr(6));
      std::string dim;
      while (std::getline(dims, dim, ',')) {
        try {
          std::size_t used = 0;
          unsigned long long extent = std::stoull(dim, &used);
          if (used != dim.size() || extent == 0) throw FormatError("bad extent");
          header.shape.push_back(static_cast<std::size_t>(extent));
        } catch (const std::exception&) {
          throw FormatError("bad tensor extent '" + dim + "'");
        }
      }
    } else {
      throw FormatError("unknown tensor header field '" + field + "'");
    }
  }
  if (header.dtype != "f32" && header.dtype != "f64") throw FormatError("unknown tensor dtype '" + header.dtype + "'");
  if (header.shape.empty()) throw FormatError("tensor header without shape");
  return header;
}

template <typename Stored, typename T>
BasicTensor<T> read_payload(std::istream& in, Shape shape) {
  const std::size_t count = shape_volume(shape);
  if constexpr (std::is_same_v<Stored, T>) {
    std::vector<T> values(count);
    read_le(in, values.data(), count);
    return BasicTensor<T>(std::move(shape), std::move(values));
  } else {
    std::vector<Stored> stored(count);
    read_le(in, stored.data(), count);
    return BasicTensor<T>(std::move(shape), std::vector<T>(stored.begin(), stored.end()));
  }
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const BasicTensor<T>& tensor) {
  out << kMagic << "dtype=" << dtype_name<T>() << " shape=";
  for (std::size_t i = 0; i < tensor.rank(); ++i) out << (i ? "," : "") << tensor.extent(i);
  out << '\n';
  write_le(out, tensor.data(), tensor.size());
}

template <typename T>
BasicTensor<T> read_tensor(std::istream& in, bool convert) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("tensor record truncated: missing header");
  Header header = parse_header(line);
  if (header.dtype != dtype_name<T>() && !convert) {
    throw FormatError("tensor dtype " + header.dtype + " does not match requested " + dtype_name<T>());
  }
  if (header.dtype == "f32") return read_payload<float, T>(in, std::move(header.shape));
  return read_payload<double, T>(in, std::move(header.shape));
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const BasicTensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
  if (!out) throw FormatError("write failed for " + path.string());
}

template <typename T>
BasicTensor<T> load_tensor(const std::filesystem::path& path, bool convert) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensor<T>(in, convert);
}

template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

#define LVCOV_INSTANTIATE(T)                                                                  \
  template void write_tensor<T>(std::ostream&, const BasicTensor<T>&);                        \
  template BasicTensor<T> read_tensor<T>(std::istream&, bool);                                \
  template void save_tensor<T>(const std::filesystem::path&, const BasicTensor<T>&);          \
  template BasicTensor<T> load_tensor<T>(const std::filesystem::path&, bool);                 \
  template bool bitwise_equal<T>(const BasicTensor<T>&, const BasicTensor<T>&);
LVCOV_INSTANTIATE(float)
LVCOV_INSTANTIATE(double)
#undef LVCOV_INSTANTIATE

}  // namespace lvcov
