#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <cstring>
#include <unistd.h>

#include "eap/im2col.hpp"
#include "eap/tensor_io.hpp"
#include "oracles.hpp"

using namespace eap;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("eap_test_" + name + "_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TensorIoError::Kind decode_error(const std::vector<unsigned char>& bytes) {
  try {
    decode_tensor(bytes);
  } catch (const TensorIoError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return TensorIoError::Kind::kOpen;
}

}  // namespace

TEST(Tensor, DimsMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ConfigError);
  Tensor t({2, 3}, std::vector<float>(6, 1.0f));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.dims_string(), "[2,3]");
}

TEST(Im2col, SingleWindowOfOnes) {
  Tensor x({1, 1, 3, 3}, 1.0f);
  auto cols = im2col(x, LayerShape::conv(1, 3, 3, 3, 1, 1, 0, 1));
  ASSERT_EQ(cols.dims(), (std::vector<std::size_t>{1, 9}));
  for (float v : cols.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Im2col, WindowEnumeration) {
  Tensor x({1, 1, 4, 4});
  std::iota(x.data().begin(), x.data().end(), 0.0f);
  auto cols = im2col(x, LayerShape::conv(1, 4, 4, 3, 1, 1, 0, 1));
  ASSERT_EQ(cols.dims(), (std::vector<std::size_t>{4, 9}));
  const std::vector<float> row0{0, 1, 2, 4, 5, 6, 8, 9, 10};
  for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(cols[j], row0[j]);
  const std::vector<float> row3{5, 6, 7, 9, 10, 11, 13, 14, 15};
  for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(cols[27 + j], row3[j]);
}

TEST(Im2col, StridedPaddedMatchesNaiveConvolution) {
  std::mt19937_64 rng(7);
  auto s = LayerShape::conv(2, 5, 5, 3, 4, 2, 1, 2);
  FilterBank b(s);
  oracle::randomize(b, rng);
  auto x = oracle::random_tensor({2, 2, 5, 5}, rng);
  auto y = layer_forward(x, b);
  auto ref = oracle::naive_conv(x, b);
  ASSERT_EQ(y.size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
}

TEST(Im2col, MismatchNamesLayerAndDim) {
  Tensor x({1, 2, 5, 5});
  try {
    im2col(x, LayerShape::conv(3, 5, 5, 3, 1, 1, 0, 1), "conv7");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("conv7"), std::string::npos);
    EXPECT_NE(msg.find("channels"), std::string::npos);
  }
}

TEST(Im2col, Col2imIsAdjoint) {
  // <im2col(x), c> == <x, col2im(c)>
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = oracle::random_conv_shape(rng);
    auto x = oracle::random_tensor({s.batch, s.in_c, s.in_h, s.in_w}, rng);
    auto cols = im2col(x, s);
    auto c = oracle::random_tensor(cols.dims(), rng);
    auto back = col2im(c, s, s.batch);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cols.size(); ++i) lhs += double(cols[i]) * c[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += double(x[i]) * back[i];
    EXPECT_NEAR(lhs, rhs, 1e-3 * (1.0 + std::abs(lhs)));
  }
}

TEST(LayerForward, FcHandArithmetic) {
  FilterBank b(LayerShape::fc(2, 1));
  b.weights = {2.0f, 3.0f};
  b.bias = {1.0f};
  Tensor x({1, 2, 1, 1}, 1.0f);
  auto y = layer_forward(x, b);
  EXPECT_EQ(y.size(), 1u);
  EXPECT_FLOAT_EQ(y[0], 6.0f);
}

TEST(LayerForward, ZeroWeightsAnnihilate) {
  std::mt19937_64 rng(1);
  auto s = LayerShape::conv(3, 6, 6, 3, 4, 1, 1, 2);
  FilterBank b(s);
  auto y = layer_forward(oracle::random_tensor({2, 3, 6, 6}, rng), b);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerForward, RandomShapesMatchOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 120; ++trial) {
    auto s = oracle::random_conv_shape(rng);
    FilterBank b(s);
    oracle::randomize(b, rng);
    auto x = oracle::random_tensor({s.batch, s.in_c, s.in_h, s.in_w}, rng);
    auto y = layer_forward(x, b);
    auto ref = oracle::naive_conv(x, b);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y[i] - ref[i]));
    EXPECT_LT(worst, 1e-5) << "trial " << trial;
  }
}

TEST(TensorIo, RoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  auto dir = temp_dir("io");
  for (const auto& dims : std::vector<std::vector<std::size_t>>{{1}, {3, 4}, {2, 3, 4, 5}, {0}}) {
    Tensor t = oracle::random_tensor(dims, rng);
    if (!t.data().empty()) t[0] = -0.0f;
    write_tensor(dir / "t.tnsr", t);
    Tensor u = read_tensor(dir / "t.tnsr");
    ASSERT_EQ(u.dims(), t.dims());
    EXPECT_EQ(std::memcmp(u.data().data(), t.data().data(), t.size() * 4), 0);
  }
  fs::remove_all(dir);
}

TEST(TensorIo, HeaderLayout) {
  Tensor t({2, 1}, std::vector<float>{1.0f, -2.0f});
  auto bytes = encode_tensor(t);
  ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 8 + 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TNSR");
  EXPECT_EQ(bytes[4], 0x01);
  EXPECT_EQ(bytes[5], 2);
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(bytes[10], 1);
  // 1.0f = 0x3f800000 little-endian
  EXPECT_EQ(bytes[14], 0x00);
  EXPECT_EQ(bytes[17], 0x3f);
}

TEST(TensorIo, DistinctErrors) {
  using K = TensorIoError::Kind;
  EXPECT_EQ(decode_error({}), K::kBadMagic);
  EXPECT_EQ(decode_error({'N', 'O', 'P', 'E', 1, 0}), K::kBadMagic);
  EXPECT_EQ(decode_error({'T', 'N', 'S', 'R', 2, 0}), K::kBadVersion);
  EXPECT_EQ(decode_error({'T', 'N', 'S', 'R', 1, 2, 4, 0, 0}), K::kTruncatedHeader);

  auto bytes = encode_tensor(Tensor({4}, 1.0f));
  bytes.resize(bytes.size() - 4);
  EXPECT_EQ(decode_error(bytes), K::kTruncatedPayload);

  // 3 dims of 2^32-1 overflow any realistic element count.
  std::vector<unsigned char> big{'T', 'N', 'S', 'R', 1, 3};
  for (int d = 0; d < 3; ++d)
    for (int b = 0; b < 4; ++b) big.push_back(0xff);
  EXPECT_EQ(decode_error(big), K::kDimOverflow);
}

TEST(TensorIo, EmptyFileIsBadMagic) {
  auto dir = temp_dir("empty");
  write_bytes(dir / "e.tnsr", {});
  try {
    read_tensor(dir / "e.tnsr");
    FAIL();
  } catch (const TensorIoError& e) {
    EXPECT_EQ(e.kind(), TensorIoError::Kind::kBadMagic);
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
  EXPECT_THROW(read_tensor(dir / "missing.tnsr"), TensorIoError);
  fs::remove_all(dir);
}
