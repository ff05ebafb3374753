#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "lvcov/error.hpp"
#include "lvcov/metrics.hpp"

using namespace lvcov;

namespace {

// p_o and p_e summed as integers, divided once at the end.
double kappa_oracle(const std::vector<std::vector<std::size_t>>& c) {
  const std::size_t k = c.size();
  long double n = 0, diag = 0, chance = 0;
  std::vector<long double> rows(k, 0), cols(k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      n += c[i][j];
      rows[i] += c[i][j];
      cols[j] += c[i][j];
      if (i == j) diag += c[i][j];
    }
  for (std::size_t i = 0; i < k; ++i) chance += rows[i] * cols[i];
  const long double po = diag / n, pe = chance / (n * n);
  return static_cast<double>((po - pe) / (1 - pe));
}

ConfusionMatrix random_matrix(std::uint64_t seed, std::size_t k) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> u(0, 30);
  std::vector<std::vector<std::size_t>> c(k, std::vector<std::size_t>(k));
  for (auto& row : c)
    for (auto& v : row) v = u(rng);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("c" + std::to_string(i));
  return ConfusionMatrix(names, c);
}

}  // namespace

TEST(Rates, HandValues) {
  EXPECT_EQ(precision(9, 1), 0.9);
  EXPECT_EQ(sensitivity(3, 1), 0.75);
  EXPECT_EQ(error_rate(0, 0, 10), 0.0);
  EXPECT_EQ(error_rate(2, 3, 20), 0.25);
}

TEST(Rates, UndefinedIsNotZero) {
  EXPECT_EQ(precision(0, 0), std::nullopt);
  EXPECT_EQ(sensitivity(0, 0), std::nullopt);
  EXPECT_EQ(error_rate(0, 0, 0), std::nullopt);
  EXPECT_EQ(precision(0, 4), 0.0);
  EXPECT_EQ(format_percent(std::nullopt), "undefined");
  EXPECT_EQ(format_percent(0.04875), "4.88");
}

TEST(Rates, StayInUnitInterval) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> u(0, 50);
  for (int i = 0; i < 1000; ++i) {
    BinaryCounts b{u(rng), u(rng), u(rng), u(rng)};
    for (const auto& v : {b.precision(), b.sensitivity(), b.error_rate()}) {
      if (!v) continue;
      EXPECT_GE(*v, 0.0);
      EXPECT_LE(*v, 1.0);
    }
  }
}

TEST(Rates, BinaryCountsAccumulate) {
  BinaryCounts b;
  b.add(true, true);
  b.add(true, false);
  b.add(false, true);
  b.add(false, false);
  b.add(false, false);
  EXPECT_EQ(b.tp, 1u);
  EXPECT_EQ(b.fn, 1u);
  EXPECT_EQ(b.fp, 1u);
  EXPECT_EQ(b.tn, 2u);
  EXPECT_EQ(b.error_rate(), 0.4);
}

TEST(Confusion, RowRatio) {
  ConfusionMatrix m({"MBS", "MAS", "Full"});
  m.add(0, 0, 67);
  m.add(0, 1, 1);
  m.add(0, 2, 2);
  EXPECT_EQ(m.row_total(0), 70u);
  EXPECT_NEAR(*m.row_ratio(0), 67.0 / 70.0, 1e-15);
  EXPECT_NEAR(*m.row_ratio(0), 0.96, 0.005);
  EXPECT_EQ(m.row_ratio(1), std::nullopt);
  EXPECT_EQ(m.column_precision(2), 0.0);
}

TEST(Confusion, NamedAddAndErrors) {
  ConfusionMatrix m({"a", "b"});
  m.add("a", "b");
  m.add("b", "b");
  EXPECT_EQ(m.at(0, 1), 1u);
  EXPECT_EQ(m.col_total(1), 2u);
  EXPECT_EQ(m.total(), 2u);
  EXPECT_THROW(m.add("c", "a"), ParameterError);
  EXPECT_THROW(m.add(2, 0), ParameterError);
  EXPECT_THROW(ConfusionMatrix({"a", "a"}), ParameterError);
  EXPECT_THROW(ConfusionMatrix({"a", "b"}, {{1, 2}}), DimensionError);
}

TEST(Confusion, TsvLayout) {
  ConfusionMatrix m({"x", "y"}, {{3, 1}, {0, 4}});
  const std::string tsv = m.to_tsv();
  EXPECT_NE(tsv.find("x\t3\t1\t75.00"), std::string::npos) << tsv;
  EXPECT_NE(tsv.find("y\t0\t4\t100.00"), std::string::npos) << tsv;
}

TEST(Kappa, HandExample) {
  const ConfusionMatrix m({"a", "b"}, {{40, 10}, {10, 40}});
  EXPECT_NEAR(*cohens_kappa(m), 0.6, 1e-12);
}

TEST(Kappa, PerfectAndIndependent) {
  EXPECT_NEAR(*cohens_kappa(ConfusionMatrix({"a", "b", "c"}, {{5, 0, 0}, {0, 7, 0}, {0, 0, 2}})), 1.0, 1e-12);
  // Outer product of marginals (2,3) x (4,1): rank one.
  EXPECT_NEAR(*cohens_kappa(ConfusionMatrix({"a", "b"}, {{8, 2}, {12, 3}})), 0.0, 1e-12);
}

TEST(Kappa, Undefined) {
  EXPECT_EQ(cohens_kappa(ConfusionMatrix({"a", "b"})), std::nullopt);
  EXPECT_EQ(cohens_kappa(ConfusionMatrix({"a", "b"}, {{9, 0}, {0, 0}})), std::nullopt);
}

TEST(Kappa, MatchesOracleOnRandomMatrices) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const ConfusionMatrix m = random_matrix(seed, 2 + seed % 4);
    std::vector<std::vector<std::size_t>> c(m.size(), std::vector<std::size_t>(m.size()));
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = 0; j < m.size(); ++j) c[i][j] = m.at(i, j);
    EXPECT_NEAR(*cohens_kappa(m), kappa_oracle(c), 1e-12);
  }
}

TEST(Kappa, TransposeAndPermutationInvariant) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const ConfusionMatrix m = random_matrix(seed + 1000, 4);
    const double k = *cohens_kappa(m);
    EXPECT_NEAR(*cohens_kappa(m.transposed()), k, 1e-12);
    std::vector<std::size_t> order(4);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
    const ConfusionMatrix p = m.permuted(order);
    EXPECT_NEAR(*cohens_kappa(p), k, 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(p.categories()[i], m.categories()[order[i]]);
      EXPECT_EQ(p.column_precision(i), m.column_precision(order[i]));
      EXPECT_EQ(p.row_ratio(i), m.row_ratio(order[i]));
    }
  }
}
