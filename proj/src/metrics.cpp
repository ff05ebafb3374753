#include "lvcov/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "lvcov/error.hpp"

namespace lvcov {

std::optional<double> precision(std::size_t tp, std::size_t fp) {
  if (tp + fp == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::optional<double> sensitivity(std::size_t tp, std::size_t fn) {
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> error_rate(std::size_t fp, std::size_t fn, std::size_t n) {
  if (n == 0) return std::nullopt;
  return static_cast<double>(fp + fn) / static_cast<double>(n);
}

void BinaryCounts::add(bool truth, bool predicted) {
  if (truth && predicted) ++tp;
  else if (!truth && predicted) ++fp;
  else if (truth) ++fn;
  else ++tn;
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> categories)
    : categories_(std::move(categories)),
      counts_(categories_.size(), std::vector<std::size_t>(categories_.size(), 0)) {
  if (categories_.empty()) throw ParameterError("confusion matrix needs at least one category");
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (categories_[i] == categories_[j]) throw ParameterError("duplicate category '" + categories_[i] + "'");
    }
  }
}

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> categories, std::vector<std::vector<std::size_t>> counts)
    : ConfusionMatrix(std::move(categories)) {
  if (counts.size() != size()) throw DimensionError("confusion counts must be square in the category count");
  for (const auto& row : counts) {
    if (row.size() != size()) throw DimensionError("confusion counts must be square in the category count");
  }
  counts_ = std::move(counts);
}

std::size_t ConfusionMatrix::index_of(const std::string& category) const {
  const auto it = std::find(categories_.begin(), categories_.end(), category);
  if (it == categories_.end()) throw ParameterError("unknown category '" + category + "'");
  return static_cast<std::size_t>(it - categories_.begin());
}

void ConfusionMatrix::add(std::size_t reference, std::size_t predicted, std::size_t count) {
  if (reference >= size() || predicted >= size()) throw ParameterError("confusion category index out of range");
  counts_[reference][predicted] += count;
}

void ConfusionMatrix::add(const std::string& reference, const std::string& predicted) {
  add(index_of(reference), index_of(predicted));
}

std::size_t ConfusionMatrix::at(std::size_t reference, std::size_t predicted) const {
  return counts_.at(reference).at(predicted);
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (std::size_t k = 0; k < size(); ++k) t += row_total(k);
  return t;
}

std::size_t ConfusionMatrix::row_total(std::size_t k) const {
  return std::accumulate(counts_.at(k).begin(), counts_.at(k).end(), std::size_t{0});
}

std::size_t ConfusionMatrix::col_total(std::size_t k) const {
  std::size_t t = 0;
  for (const auto& row : counts_) t += row.at(k);
  return t;
}

std::optional<double> ConfusionMatrix::row_ratio(std::size_t k) const {
  const std::size_t r = row_total(k);
  if (r == 0) return std::nullopt;
  return static_cast<double>(counts_[k][k]) / static_cast<double>(r);
}

std::optional<double> ConfusionMatrix::column_precision(std::size_t k) const {
  const std::size_t c = col_total(k);
  if (c == 0) return std::nullopt;
  return static_cast<double>(counts_[k][k]) / static_cast<double>(c);
}

ConfusionMatrix ConfusionMatrix::transposed() const {
  ConfusionMatrix t(categories_);
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t j = 0; j < size(); ++j) t.counts_[j][i] = counts_[i][j];
  }
  return t;
}

ConfusionMatrix ConfusionMatrix::permuted(const std::vector<std::size_t>& order) const {
  if (order.size() != size()) throw ParameterError("permutation length differs from the category count");
  std::vector<bool> seen(size(), false);
  for (std::size_t o : order) {
    if (o >= size() || seen[o]) throw ParameterError("not a permutation of the categories");
    seen[o] = true;
  }
  std::vector<std::string> names;
  for (std::size_t o : order) names.push_back(categories_[o]);
  ConfusionMatrix p(std::move(names));
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t j = 0; j < size(); ++j) p.counts_[i][j] = counts_[order[i]][order[j]];
  }
  return p;
}

std::string ConfusionMatrix::to_tsv() const {
  std::ostringstream out;
  out << "reference\\predicted";
  for (const auto& c : categories_) out << '\t' << c;
  out << "\tcorrect\n";
  for (std::size_t i = 0; i < size(); ++i) {
    out << categories_[i];
    for (std::size_t j = 0; j < size(); ++j) out << '\t' << counts_[i][j];
    out << '\t' << format_percent(row_ratio(i)) << '\n';
  }
  return out.str();
}

std::optional<double> cohens_kappa(const ConfusionMatrix& m) {
  const double n = static_cast<double>(m.total());
  if (n == 0.0) return std::nullopt;
  double diag = 0.0, chance = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    diag += static_cast<double>(m.at(k, k));
    chance += static_cast<double>(m.row_total(k)) * static_cast<double>(m.col_total(k));
  }
  const double po = diag / n;
  const double pe = chance / (n * n);
  if (pe == 1.0) return std::nullopt;
  return (po - pe) / (1.0 - pe);
}

std::string format_percent(const std::optional<double>& value) {
  if (!value) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *value);
  return buf;
}

}  // namespace lvcov
