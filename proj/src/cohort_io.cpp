#include <filesystem>
#include <fstream>
#include <sstream>

#include "lvcov/phantom.hpp"
#include "lvcov/tensor_io.hpp"

namespace lvcov {
namespace fs = std::filesystem;
namespace {

constexpr const char* kManifestName = "manifest.tsv";
constexpr const char* kManifestHeader = "# id\tn_slices\thas_base\thas_apex\tseed";

fs::path volume_path(const std::string& dir, std::uint64_t id, Phase phase, bool mask) {
  std::string name = (mask ? "mask_" : "vol_") + std::to_string(id);
  if (phase == Phase::es) name += "_es";
  return fs::path(dir) / (name + ".tnsr");
}

std::string spacing_line(const Spacing& s) {
  std::ostringstream out;
  out.precision(17);
  out << "# spacing\t" << s.dx << '\t' << s.dy << '\t' << s.dz;
  return out.str();
}

void write_volume(const std::string& dir, const VolumeStack& v) {
  save_tensor(volume_path(dir, v.id, v.phase, false), v.slices);
  if (v.has_masks()) save_tensor(volume_path(dir, v.id, v.phase, true), v.masks);
}

Spacing read_spacing(const std::string& dir) {
  std::ifstream in(fs::path(dir) / kManifestName);
  std::string line;
  while (std::getline(in, line) && line.rfind('#', 0) == 0) {
    if (line.rfind("# spacing\t", 0) != 0) continue;
    std::istringstream fields(line.substr(10));
    Spacing s;
    if (!(fields >> s.dx >> s.dy >> s.dz)) throw FormatError("manifest has a malformed spacing line: " + line);
    return s;
  }
  return Spacing{};
}

}  // namespace

std::string manifest_line(const ManifestRow& row) {
  std::ostringstream out;
  out << row.id << '\t' << row.n_slices << '\t' << (row.has_base ? 1 : 0) << '\t' << (row.has_apex ? 1 : 0) << '\t'
      << row.seed;
  return out.str();
}

ManifestRow parse_manifest_line(const std::string& line) {
  std::istringstream in(line);
  ManifestRow row{};
  int base = -1, apex = -1;
  std::string rest;
  if (!(in >> row.id >> row.n_slices >> base >> apex >> row.seed) || (in >> rest) || base < 0 || base > 1 ||
      apex < 0 || apex > 1) {
    throw FormatError("malformed manifest line: '" + line + "'");
  }
  row.has_base = base == 1;
  row.has_apex = apex == 1;
  return row;
}

CohortWriter::CohortWriter(std::string dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec || !fs::is_directory(dir_)) throw InputError("cannot create cohort directory " + dir_);
}

void CohortWriter::add(const CohortSubject& subject) {
  write_volume(dir_, subject.ed);
  if (subject.es) write_volume(dir_, *subject.es);
  if (rows_.empty()) spacing_ = subject.ed.spacing;
  rows_.push_back({subject.ed.id, subject.ed.n_slices(), subject.ed.has_base, subject.ed.has_apex, subject.ed.seed});
}

void CohortWriter::finish() {
  std::ofstream out(fs::path(dir_) / kManifestName, std::ios::trunc);
  if (!out) throw InputError("cannot write manifest in " + dir_);
  out << spacing_line(spacing_) << '\n' << kManifestHeader << '\n';
  for (const auto& row : rows_) out << manifest_line(row) << '\n';
  if (!out) throw InputError("failed writing manifest in " + dir_);
}

std::vector<ManifestRow> read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / kManifestName);
  if (!in) throw InputError("no manifest.tsv in " + dir);
  std::vector<ManifestRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    rows.push_back(parse_manifest_line(line));
  }
  if (rows.empty()) throw InputError("manifest in " + dir + " lists no volumes");
  return rows;
}

CohortSubject load_subject(const std::string& dir, const ManifestRow& row, bool with_es) {
  const Spacing spacing = read_spacing(dir);
  const auto load = [&](Phase phase) {
    VolumeStack v;
    const fs::path vp = volume_path(dir, row.id, phase, false);
    if (!fs::exists(vp)) throw InputError("manifest lists volume " + std::to_string(row.id) + " but " +
                                          vp.string() + " is missing");
    v.slices = load_tensor<Real>(vp, true);
    if (v.slices.rank() != 3 || v.n_slices() != row.n_slices) {
      throw InputError("volume " + std::to_string(row.id) + " has shape " + shape_string(v.slices.shape()) +
                       ", manifest says " + std::to_string(row.n_slices) + " slices");
    }
    const fs::path mp = volume_path(dir, row.id, phase, true);
    if (fs::exists(mp)) {
      v.masks = load_tensor<Real>(mp, true);
      if (v.masks.shape() != v.slices.shape()) throw InputError("mask shape differs from volume " + std::to_string(row.id));
    }
    v.spacing = spacing;
    v.has_base = row.has_base;
    v.has_apex = row.has_apex;
    v.phase = phase;
    v.id = row.id;
    v.seed = row.seed;
    return v;
  };
  CohortSubject s;
  s.ed = load(Phase::ed);
  if (with_es && fs::exists(volume_path(dir, row.id, Phase::es, false))) s.es = load(Phase::es);
  return s;
}

Ablation manifest_ablation(const std::vector<ManifestRow>& rows) {
  bool all_base = true, all_apex = true;
  for (const auto& row : rows) {
    all_base = all_base && row.has_base;
    all_apex = all_apex && row.has_apex;
  }
  if (!all_base && !all_apex) return Ablation::drop_both;
  if (!all_base) return Ablation::drop_base;
  if (!all_apex) return Ablation::drop_apex;
  return Ablation::none;
}

Cohort load_cohort(const std::string& dir, bool with_es) {
  Cohort cohort;
  const auto rows = read_manifest(dir);
  for (const auto& row : rows) cohort.subjects.push_back(load_subject(dir, row, with_es));
  cohort.ablation = manifest_ablation(rows);
  return cohort;
}

void save_cohort(const Cohort& cohort, const std::string& dir) {
  CohortWriter writer(dir);
  for (const auto& s : cohort.subjects) writer.add(s);
  writer.finish();
}

}  // namespace lvcov
