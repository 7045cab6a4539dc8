#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "softdiamond/binary_io.hpp"
#include "softdiamond/error.hpp"
#include "softdiamond/prior_table.hpp"
#include "softdiamond/rng.hpp"

using namespace softdiamond;
using prior::DerivTable;
using stable::StableParams;

namespace {

const DerivTable& cauchy_table() {
  static const DerivTable t = DerivTable::build(StableParams::symmetric(1.0, 1.0), 2.0, 20);
  return t;
}

double max_cauchy_error(double delta) {
  const auto n = static_cast<std::size_t>(std::llround(2.0 / delta));
  const auto t = DerivTable::build(StableParams::symmetric(1.0, 1.0), 2.0, n);
  double worst = 0.0;
  for (std::int64_t k = -t.n_grid(); k <= t.n_grid(); ++k)
    worst = std::max(worst, std::abs(t.value_at(k) - oracle::cauchy_log_derivative(t.grid_point(k), 1.0)));
  return worst;
}

}  // namespace

TEST(DerivTable, DefaultGridHasStepTwoThousandths) {
  EXPECT_EQ(prior::kDefaultGridCount, 400u);
  EXPECT_DOUBLE_EQ(prior::kDefaultEpsilon / prior::kDefaultGridCount, 0.002);
  const auto t = DerivTable::build(StableParams::symmetric(1.5, 1.0), prior::kDefaultEpsilon,
                                   prior::kDefaultGridCount);
  EXPECT_DOUBLE_EQ(t.delta(), 0.002);
  EXPECT_EQ(t.n_grid(), 400);
  EXPECT_EQ(t.values().size(), 801u);
}

TEST(DerivTable, CauchyValueAtOneIsMinusOne) {
  const auto& t = cauchy_table();
  EXPECT_DOUBLE_EQ(t.grid_point(10), 1.0);
  // third-derivative bound: |error| <= delta^2 / 6 * max |(ln p)'''| = 0.01 / 6 * 4
  EXPECT_NEAR(t.value_at(10), -1.0, 0.01 * 4.0 / 6.0);
}

TEST(DerivTable, ValuesAreCentralDifferencesOfTheDensity) {
  const auto& t = cauchy_table();
  const double d = t.delta();
  for (std::int64_t k : {-20, -7, -1, 1, 3, 19, 20}) {
    const double th = t.grid_point(k);
    const double expected =
        (oracle::cauchy_pdf(th + d, 1.0) - oracle::cauchy_pdf(th - d, 1.0)) / (2.0 * d * oracle::cauchy_pdf(th, 1.0));
    EXPECT_NEAR(t.value_at(k), expected, 1e-12) << "key " << k;
  }
}

TEST(DerivTable, GaussianValuesFollowTheLinearLogDerivative) {
  const auto t = DerivTable::build(StableParams::symmetric(2.0, 1.0), 2.0, 200);
  for (std::int64_t k = -200; k <= 200; k += 25) {
    const double th = t.grid_point(k);
    EXPECT_NEAR(t.value_at(k), -th / 2.0, 1e-4) << "key " << k;
  }
  EXPECT_NEAR(t.value_at(100), -0.5, 1e-4);
}

TEST(DerivTable, ZeroKeyIsExactlyZeroAndValuesAreOdd) {
  Rng rng(21);
  for (int i = 0; i < 6; ++i) {
    const double alpha = 0.4 + 1.6 * uniform01(rng);
    const double gamma = 0.3 + 1.5 * uniform01(rng);
    const auto t = DerivTable::build(StableParams::symmetric(alpha, gamma), 0.8, 100);
    EXPECT_EQ(t.value_at(0), 0.0);
    for (std::int64_t k = 1; k <= t.n_grid(); ++k) {
      EXPECT_NEAR(t.value_at(k), -t.value_at(-k), 1e-12);
      EXPECT_LT(t.value_at(k), 0.0) << "alpha " << alpha << " key " << k;
    }
  }
}

TEST(DerivTable, ConvergesAtSecondOrder) {
  const double e1 = max_cauchy_error(0.008), e2 = max_cauchy_error(0.004), e3 = max_cauchy_error(0.002);
  EXPECT_GE(e1 / e2, 3.5);
  EXPECT_LE(e1 / e2, 4.5);
  EXPECT_GE(e2 / e3, 3.5);
  EXPECT_LE(e2 / e3, 4.5);
}

TEST(DerivTable, KeysQuantizeByFloorAndSaturate) {
  const auto t = DerivTable::from_values(StableParams::symmetric(1.0, 1.0), 0.8, 400, std::vector<double>(801, 0.0));
  EXPECT_EQ(t.key_of(0.0), 0);
  EXPECT_EQ(t.key_of(5.0), 400);
  EXPECT_EQ(t.key_of(0.0031), 1);
  EXPECT_EQ(t.key_of(-0.0001), -1);
  EXPECT_EQ(t.key_of(-5.0), -400);
  EXPECT_EQ(t.key_of(1e300), 400);
  EXPECT_EQ(t.key_of(-INFINITY), -400);
  EXPECT_EQ(t.key_of(NAN), 0);
  EXPECT_TRUE(t.saturates(0.8));
  EXPECT_FALSE(t.saturates(0.79));
  EXPECT_TRUE(t.saturates(-0.7985));
}

TEST(DerivTable, LookupAppliesScaleAndSaturates) {
  const auto t2 = cauchy_table().with_scale(2.0);
  EXPECT_EQ(t2.lookup_grad(0.0), 0.0);
  EXPECT_NEAR(t2.lookup_grad(1.0), -2.0, 0.03);
  EXPECT_EQ(t2.lookup_grad(1e6), 2.0 * cauchy_table().value_at(20));
  EXPECT_EQ(t2.lookup_grad(2.5), t2.lookup_grad(1e9));
  EXPECT_EQ(t2.lookup_grad(-2.0), t2.lookup_grad(-1e9));
}

TEST(DerivTable, LookupPointsTowardZeroEverywhere) {
  const auto t = DerivTable::build(StableParams::symmetric(0.7, 1.0), 0.8, 400);
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double th = 4.0 * uniform01(rng) - 2.0;
    EXPECT_LE(t.lookup_grad(th) * th, 0.0) << th;
  }
}

TEST(DerivTable, OddAtGridPoints) {
  const auto& t = cauchy_table();
  for (std::int64_t k = 1; k < 20; ++k)
    EXPECT_NEAR(t.lookup_grad(t.grid_point(k)), -t.lookup_grad(t.grid_point(-k)), 1e-12);
}

TEST(DerivTable, RejectsInvalidInputs) {
  const auto p = StableParams::symmetric(1.0, 1.0);
  EXPECT_THROW(DerivTable::build(p, 0.0, 10), InvalidParameter);
  EXPECT_THROW(DerivTable::build(p, 0.8, 0), InvalidParameter);
  EXPECT_THROW(DerivTable::build(p, 0.8, 10, {}, 0.0), InvalidParameter);
  EXPECT_THROW(DerivTable::build(StableParams(1.0, 0.5, 1.0, 0.0), 0.8, 10), NonSymmetric);
  EXPECT_THROW(DerivTable::from_values(p, 0.8, 10, std::vector<double>(20)), InvalidParameter);
}

TEST(DerivTable, UnderflowingDensityIsDegenerate) {
  EXPECT_THROW(DerivTable::build(StableParams::symmetric(2.0, 0.01), 10.0, 10), DegenerateDensity);
}

TEST(DerivTable, SerializationRoundTripsBitExactly) {
  const auto t = DerivTable::build(StableParams::symmetric(1.5, 0.5, 0.1), 0.8, 50, {}, 3.0);
  const auto bytes = t.serialize();
  EXPECT_EQ(bytes.size(), 56u + 101u * 8u + 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SDRT");
  const auto back = DerivTable::deserialize(bytes);
  EXPECT_TRUE(back == t);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.checksum(), t.checksum());
}

TEST(DerivTable, RebuildIsBitIdentical) {
  const auto p = StableParams::symmetric(0.9, 1.2);
  EXPECT_EQ(DerivTable::build(p, 0.8, 60).serialize(), DerivTable::build(p, 0.8, 60).serialize());
}

TEST(DerivTable, CorruptByteIsDetected) {
  auto bytes = cauchy_table().serialize();
  for (std::size_t pos : {std::size_t{5}, std::size_t{60}, bytes.size() - 10}) {
    auto bad = bytes;
    bad[pos] ^= 0x40;
    EXPECT_THROW(DerivTable::deserialize(bad), ChecksumMismatch) << "byte " << pos;
  }
}

TEST(DerivTable, VersionIsChecked) {
  auto bytes = cauchy_table().serialize();
  bytes[4] = 2;  // version field, then re-seal so only the version differs
  bytes.resize(bytes.size() - 4);
  const auto crc = io::crc32(bytes);
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  EXPECT_THROW(DerivTable::deserialize(bytes), VersionMismatch);
}

TEST(DerivTable, TruncatedBytesAreRejected) {
  auto bytes = cauchy_table().serialize();
  bytes.resize(30);
  EXPECT_THROW(DerivTable::deserialize(bytes), FormatError);
}

TEST(DerivTable, HeaderOnlyReadSkipsValues) {
  const auto t = DerivTable::build(StableParams::symmetric(1.2, 0.7), 0.8, 40, {}, 2.5);
  const auto bytes = t.serialize();
  const auto h = DerivTable::read_header(std::span(bytes).first(56));
  EXPECT_EQ(h.version, 1u);
  EXPECT_EQ(h.params, t.params());
  EXPECT_EQ(h.epsilon, 0.8);
  EXPECT_EQ(h.n_grid, 40u);
  EXPECT_EQ(h.prior_scale_c, 2.5);

  const auto path = (std::filesystem::temp_directory_path() / "softdiamond_header_test.sdt").string();
  io::write_file(path, bytes);
  const auto hf = DerivTable::read_header_file(path);
  EXPECT_EQ(hf.n_grid, 40u);
  EXPECT_EQ(hf.params.alpha(), 1.2);
  std::remove(path.c_str());
}

TEST(DerivTable, GridPointsMapToTheirOwnKey) {
  for (double eps : {0.8, 1.0, 2.0, 0.3}) {
    for (std::size_t n : {7u, 20u, 400u, 1000u}) {
      const auto t = DerivTable::from_values(StableParams::symmetric(1.0, 1.0), eps, n,
                                             std::vector<double>(2 * n + 1, 0.0));
      for (std::int64_t k = -t.n_grid(); k <= t.n_grid(); ++k) ASSERT_EQ(t.key_of(t.grid_point(k)), k);
      for (std::int64_t k = -t.n_grid() + 1; k <= t.n_grid(); ++k)
        ASSERT_EQ(t.key_of(std::nextafter(t.grid_point(k), -INFINITY)), k - 1);
    }
  }
}
