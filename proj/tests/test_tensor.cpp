#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include "lvcov/tensor.hpp"
#include "lvcov/tensor_io.hpp"

using namespace lvcov;

TEST(Tensor, ShapeAndVolumeAgree) {
  TensorD t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.extent(2), 4u);
  for (double v : t.values()) EXPECT_EQ(v, 1.5);
}

TEST(Tensor, RejectsZeroExtentAndEmptyShape) {
  EXPECT_THROW(TensorD({2, 0, 3}), DimensionError);
  EXPECT_THROW(TensorD(Shape{}), DimensionError);
  EXPECT_THROW(TensorD({2, 2}, std::vector<double>(3)), DimensionError);
}

TEST(Tensor, CheckedIndexingIsRowMajor) {
  TensorD t({2, 3});
  for (std::size_t i = 0; i < 6; ++i) t[i] = static_cast<double>(i);
  EXPECT_EQ(t.at({1, 2}), 5.0);
  EXPECT_EQ(t.at({0, 1}), 1.0);
  EXPECT_THROW(t.at({2, 0}), DimensionError);
  EXPECT_THROW(t.at({0}), DimensionError);
}

TEST(Tensor, ReshapeKeepsData) {
  TensorD t({2, 3});
  t[4] = 7.0;
  const TensorD r = t.reshaped({3, 2});
  EXPECT_EQ(r.at({2, 0}), 7.0);
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(TensorIo, HeaderFormat) {
  std::ostringstream out;
  write_tensor(out, TensorF({2, 3}, 1.0f));
  const std::string s = out.str();
  const std::string header = "TNSR v1 dtype=f32 shape=2,3\n";
  ASSERT_EQ(s.substr(0, header.size()), header);
  EXPECT_EQ(s.size(), header.size() + 6 * sizeof(float));
  float first;
  std::memcpy(&first, s.data() + header.size(), sizeof first);
  EXPECT_EQ(first, 1.0f);
}

TEST(TensorIo, RoundTripIsBitwise) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  TensorD t({3, 4, 5});
  for (auto& v : t.values()) v = g(rng);
  t[0] = -0.0;
  t[1] = std::numeric_limits<double>::denorm_min();
  std::stringstream io;
  write_tensor(io, t);
  const TensorD back = read_tensor<double>(io);
  EXPECT_TRUE(bitwise_equal(t, back));
}

TEST(TensorIo, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "lvcov_tensor_io_test.tnsr";
  TensorF t({4}, std::vector<float>{1.f, -2.f, 3.5f, 0.25f});
  save_tensor(path, t);
  EXPECT_TRUE(bitwise_equal(t, load_tensor<float>(path)));
  std::filesystem::remove(path);
}

TEST(TensorIo, DtypeMismatchUnlessConverting) {
  std::stringstream io;
  write_tensor(io, TensorD({2}, std::vector<double>{0.5, 2.0}));
  const std::string bytes = io.str();
  std::istringstream strict(bytes);
  EXPECT_THROW(read_tensor<float>(strict), FormatError);
  std::istringstream loose(bytes);
  const TensorF f = read_tensor<float>(loose, true);
  EXPECT_EQ(f[1], 2.0f);
}

TEST(TensorIo, TruncatedPayloadAndBadHeaders) {
  std::stringstream io;
  write_tensor(io, TensorD({8}, 1.0));
  std::string bytes = io.str();
  bytes.resize(bytes.size() - 3);
  std::istringstream cut(bytes);
  EXPECT_THROW(read_tensor<double>(cut), FormatError);

  std::istringstream v2("TNSR v2 dtype=f64 shape=1\n");
  EXPECT_THROW(read_tensor<double>(v2), FormatError);
  std::istringstream junk("hello\n");
  EXPECT_THROW(read_tensor<double>(junk), FormatError);
  std::istringstream zero("TNSR v1 dtype=f64 shape=0\n");
  EXPECT_THROW(read_tensor<double>(zero), FormatError);
}

TEST(TensorIo, BitwiseEqualDistinguishesSignedZero) {
  TensorD a({1}, 0.0), b({1}, -0.0);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(bitwise_equal(a, b));
}
