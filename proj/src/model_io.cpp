#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lvcov/network.hpp"
#include "lvcov/tensor_io.hpp"

namespace lvcov {
namespace {

constexpr std::string_view kModelMagic = "LVCM v1";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string expect_field(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("model file truncated before '" + key + "'");
  if (line.rfind(key + " ", 0) != 0) throw FormatError("model file: expected '" + key + "', found '" + line + "'");
  return line.substr(key.size() + 1);
}

std::uint64_t parse_u64(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw FormatError("model file: bad value for '" + key + "': '" + text + "'");
  }
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void save_model(const BasicModel<T>& model, const std::filesystem::path& path) {
  std::ostringstream body;
  body << kModelMagic << '\n';
  body << "arch " << model.arch.describe() << '\n';
  body << "dtype " << dtype_name<T>() << '\n';
  body << "seed " << model.seed << '\n';
  body << "epochs " << model.epochs << '\n';

  std::vector<std::pair<std::string, const BasicTensor<T>*>> tensors;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (!l.trainable()) continue;
    const std::string nm = model.arch.layer_names[i];
    tensors.emplace_back(nm + ".W", &l.weights);
    tensors.emplace_back(nm + ".b", &l.bias);
    tensors.emplace_back(nm + ".vW", &l.weights_velocity);
    tensors.emplace_back(nm + ".vb", &l.bias_velocity);
  }
  const bool has_trace = !model.objective_trace.empty();
  body << "tensors " << tensors.size() + (has_trace ? 1 : 0) << '\n';
  for (const auto& [name, t] : tensors) {
    body << name << '\n';
    write_tensor(body, *t);
  }
  if (has_trace) {
    body << "trace\n";
    write_tensor(body, TensorD({model.objective_trace.size()}, model.objective_trace));
  }
  // Tensor payloads are binary, so the trailer needs its own line break.
  body << '\n';
  const std::string bytes = body.str();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write model file " + path.string());
  out << bytes << "checksum " << hex64(fnv1a64(bytes)) << '\n';
  if (!out) throw InputError("failed writing model file " + path.string());
}

template <typename T>
BasicModel<T> load_model(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw InputError("cannot open model file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  const std::size_t first_nl = bytes.find('\n');
  const std::string first = bytes.substr(0, first_nl);
  if (first != kModelMagic) {
    if (first.rfind("LVCM ", 0) == 0) throw FormatError("unsupported model container version: '" + first + "'");
    throw FormatError("not a model file: " + path.string());
  }
  if (bytes.empty() || bytes.back() != '\n') throw FormatError("model file truncated (no checksum trailer)");
  const std::size_t trailer = bytes.rfind("\nchecksum ");
  if (trailer == std::string::npos || bytes.size() - trailer != 1 + 9 + 16 + 1) {
    throw FormatError("model file truncated (no checksum trailer)");
  }
  const std::string_view body(bytes.data(), trailer + 1);
  const std::string stored = bytes.substr(trailer + 10, 16);
  if (stored != hex64(fnv1a64(body))) {
    throw FormatError("model checksum mismatch: stored " + stored + ", computed " + hex64(fnv1a64(body)));
  }

  std::istringstream in{std::string(body)};
  std::string line;
  std::getline(in, line);
  const std::string arch_desc = expect_field(in, "arch");
  const std::string dtype = expect_field(in, "dtype");
  if (dtype != dtype_name<T>()) {
    throw FormatError("model stores dtype " + dtype + " but " + dtype_name<T>() + " was requested");
  }
  BasicModel<T> model;
  model.arch = arch_by_name(arch_desc.substr(0, arch_desc.find(' ')));
  if (model.arch.describe() != arch_desc) throw FormatError("model architecture does not match: " + arch_desc);
  model.seed = parse_u64(expect_field(in, "seed"), "seed");
  model.epochs = parse_u64(expect_field(in, "epochs"), "epochs");
  const std::uint64_t count = parse_u64(expect_field(in, "tensors"), "tensors");

  model.layers.resize(model.arch.layers.size());
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name;
    if (!std::getline(in, name)) throw FormatError("model file truncated in tensor list");
    if (name == "trace") {
      const TensorD t = read_tensor<double>(in);
      model.objective_trace.assign(t.values().begin(), t.values().end());
      continue;
    }
    const std::size_t dot = name.rfind('.');
    const std::string layer = name.substr(0, dot);
    const std::string part = dot == std::string::npos ? "" : name.substr(dot + 1);
    const auto it = std::find(model.arch.layer_names.begin(), model.arch.layer_names.end(), layer);
    if (it == model.arch.layer_names.end()) throw FormatError("model file names unknown layer '" + layer + "'");
    auto& l = model.layers[static_cast<std::size_t>(it - model.arch.layer_names.begin())];
    BasicTensor<T> t = read_tensor<T>(in);
    if (part == "W") l.weights = std::move(t);
    else if (part == "b") l.bias = std::move(t);
    else if (part == "vW") l.weights_velocity = std::move(t);
    else if (part == "vb") l.bias_velocity = std::move(t);
    else throw FormatError("model file has unknown tensor '" + name + "'");
  }

  // Shapes must agree with a fresh model of the same architecture.
  const BasicModel<T> ref = init_params<T>(model.arch, 0);
  for (std::size_t i = 0; i < ref.layers.size(); ++i) {
    const auto& a = model.layers[i];
    const auto& b = ref.layers[i];
    if (a.weights.shape() != b.weights.shape() || a.bias.shape() != b.bias.shape() ||
        a.weights_velocity.shape() != b.weights_velocity.shape() || a.bias_velocity.shape() != b.bias_velocity.shape()) {
      throw FormatError("model tensors for layer " + model.arch.layer_names[i] + " have the wrong shape");
    }
  }
  if (model.objective_trace.size() != model.epochs) {
    throw FormatError("objective trace has " + std::to_string(model.objective_trace.size()) + " entries for " +
                      std::to_string(model.epochs) + " epochs");
  }
  return model;
}

template void save_model<float>(const BasicModel<float>&, const std::filesystem::path&);
template void save_model<double>(const BasicModel<double>&, const std::filesystem::path&);
template BasicModel<float> load_model<float>(const std::filesystem::path&);
template BasicModel<double> load_model<double>(const std::filesystem::path&);

}  // namespace lvcov
