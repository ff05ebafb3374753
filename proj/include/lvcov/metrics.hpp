#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace lvcov {

// Every metric returns nullopt when its denominator is zero. "Positive"
// means the defect (missing slice) is present.

std::optional<double> precision(std::size_t tp, std::size_t fp);
std::optional<double> sensitivity(std::size_t tp, std::size_t fn);
std::optional<double> error_rate(std::size_t fp, std::size_t fn, std::size_t n);

struct BinaryCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  void add(bool truth, bool predicted);
  std::size_t total() const { return tp + fp + tn + fn; }
  std::optional<double> precision() const { return lvcov::precision(tp, fp); }
  std::optional<double> sensitivity() const { return lvcov::sensitivity(tp, fn); }
  std::optional<double> error_rate() const { return lvcov::error_rate(fp, fn, total()); }
};

/// Rows are the reference, columns the prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<std::string> categories);
  ConfusionMatrix(std::vector<std::string> categories, std::vector<std::vector<std::size_t>> counts);

  std::size_t size() const { return categories_.size(); }
  const std::vector<std::string>& categories() const { return categories_; }
  std::size_t index_of(const std::string& category) const;

  void add(std::size_t reference, std::size_t predicted, std::size_t count = 1);
  void add(const std::string& reference, const std::string& predicted);
  std::size_t at(std::size_t reference, std::size_t predicted) const;

  std::size_t total() const;
  std::size_t row_total(std::size_t k) const;
  std::size_t col_total(std::size_t k) const;
  /// Diagonal over row total.
  std::optional<double> row_ratio(std::size_t k) const;
  /// Diagonal over column total.
  std::optional<double> column_precision(std::size_t k) const;

  ConfusionMatrix transposed() const;
  /// Reorders categories: new index i holds old category order[i].
  ConfusionMatrix permuted(const std::vector<std::size_t>& order) const;

  /// Tab-separated, header row of predictions, one row per reference
  /// category with counts and the row ratio.
  std::string to_tsv() const;

 private:
  std::vector<std::string> categories_;
  std::vector<std::vector<std::size_t>> counts_;
};

/// nullopt for an empty matrix or when chance agreement is 1.
std::optional<double> cohens_kappa(const ConfusionMatrix& m);

/// Percentage with two decimals, or "undefined".
std::string format_percent(const std::optional<double>& value);

}  // namespace lvcov
