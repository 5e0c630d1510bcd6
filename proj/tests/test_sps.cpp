// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "cobra/error.hpp"
#include "cobra/selfcheck.hpp"
#include "cobra/sps.hpp"
#include "cobra/synthetic.hpp"

namespace cobra {
namespace {

TEST(Sps, ScoreEqualToThresholdPasses) {
  RealMatrix s(1, 3);
  s(0, 0) = 0.5;
  s(0, 1) = 0.4999999;
  s(0, 2) = 0.75;
  const BitMatrix m = sps_apply(s, 0.5);
  EXPECT_TRUE(m.bit(0, 0));
  EXPECT_FALSE(m.bit(0, 1));
  EXPECT_TRUE(m.bit(0, 2));
  EXPECT_EQ(m.scheme(), Scheme::Unsigned01);
}

TEST(Sps, HigherThresholdNeverAddsOnes) {
  synthetic::Rng rng(51);
  RealMatrix s(16, 16);
  for (auto& v : s.data()) v = synthetic::unit(rng) * 2.0 - 0.5;
  const auto grid = threshold_grid(0.05);
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const BitMatrix lo = sps_apply(s, grid[g - 1]), hi = sps_apply(s, grid[g]);
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j)
        if (hi.bit(i, j)) {
          ASSERT_TRUE(lo.bit(i, j));
        }
  }
}

TEST(Sps, IntegerThresholdMatchesRealTest) {
  const auto grid = threshold_grid(0.01);
  for (std::uint32_t dh = 1; dh <= 128; ++dh) {
    IntMatrix raw(1, dh + 1);
    RealMatrix z(1, dh + 1);
    for (std::uint32_t p = 0; p <= dh; ++p) {
      raw(0, p) = static_cast<std::int32_t>(2 * p) - static_cast<std::int32_t>(dh);
      z(0, p) = raw(0, p) / std::sqrt(static_cast<double>(dh));
    }
    for (double lambda : grid) {
      const std::int32_t t = popcount_threshold(lambda, dh);
      ASSERT_GE(t, 0);
      ASSERT_LE(t, static_cast<std::int32_t>(dh) + 1);
      ASSERT_EQ(sps_apply_raw(raw, t, dh), sps_apply(z, lambda)) << "dh=" << dh << " lambda=" << lambda;
    }
  }
}

TEST(Sps, RawScoresMustMatchHeadDimParity) {
  IntMatrix raw(1, 1);
  raw(0, 0) = 3;
  EXPECT_THROW(sps_apply_raw(raw, 1, 4), DomainError);
  raw(0, 0) = 6;
  EXPECT_THROW(sps_apply_raw(raw, 1, 4), DomainError);
}

TEST(Sps, DistortionExamples) {
  BitMatrix a(2, 2, Scheme::Unsigned01), b(2, 2, Scheme::Unsigned01);
  EXPECT_DOUBLE_EQ(distortion(a, b), 0.0);
  b.set_bit(1, 0, true);
  EXPECT_DOUBLE_EQ(distortion(a, b), 0.25);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) a.set_bit(i, j, !b.bit(i, j));
  EXPECT_DOUBLE_EQ(distortion(a, b), 1.0);
  EXPECT_THROW(distortion(a, BitMatrix(2, 3, Scheme::Unsigned01)), DimensionError);
}

TEST(Sps, GridHasTwentyOneValues) {
  const auto grid = threshold_grid(0.05);
  ASSERT_EQ(grid.size(), 21U);
  EXPECT_EQ(grid.front(), 0.0);
  EXPECT_EQ(grid.back(), 1.0);
  EXPECT_EQ(grid[3], 0.15);
  EXPECT_THROW(threshold_grid(0.0), DomainError);
  EXPECT_THROW(threshold_grid(1.5), DomainError);
}

TEST(Sps, AllOnesReferencePicksZero) {
  CalibrationSet calib = synthetic::random_calibration(2, 2, 8, 8, 3, 52);
  for (auto& s : calib.samples)
    for (auto& r : s.reference)
      for (std::size_t i = 0; i < r.rows(); ++i)
        for (std::size_t j = 0; j < r.cols(); ++j) r.set_bit(i, j, true);
  for (Granularity g : {Granularity::PerLayer, Granularity::PerHead, Granularity::PerRow}) {
    const SpsThresholds t = search_thresholds(calib, g);
    for (double v : t.lambdas()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Sps, SearchMatchesExhaustiveEvaluation) {
  const auto r = selfcheck::check_sps_search(15, 53);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Sps, SingleHeadPerHeadEqualsPerLayer) {
  const CalibrationSet calib = synthetic::random_calibration(3, 1, 12, 16, 4, 54);
  const SpsThresholds a = search_thresholds(calib, Granularity::PerHead);
  const SpsThresholds b = search_thresholds(calib, Granularity::PerLayer);
  EXPECT_EQ(a.lambdas(), b.lambdas());
  EXPECT_EQ(a.derived_thresholds(), b.derived_thresholds());
}

TEST(Sps, FinerGranularityNeverIncreasesDistortion) {
  const CalibrationSet calib = synthetic::random_calibration(2, 3, 12, 16, 4, 55);
  auto total = [](const SpsThresholds& t, std::size_t per_layer_units, std::size_t layers, std::size_t weight) {
    double s = 0.0;
    for (double v : t.distortion) s += v;
    return s * static_cast<double>(weight) / static_cast<double>(per_layer_units * layers);
  };
  const SpsThresholds layer = search_thresholds(calib, Granularity::PerLayer);
  const SpsThresholds head = search_thresholds(calib, Granularity::PerHead);
  const SpsThresholds row = search_thresholds(calib, Granularity::PerRow);
  const double dl = total(layer, 1, 2, 1), dh = total(head, 3, 2, 1), dr = total(row, 36, 2, 1);
  EXPECT_LE(dh, dl + 1e-12);
  EXPECT_LE(dr, dh + 1e-12);
}

TEST(Sps, SearchIsDeterministic) {
  const CalibrationSet calib = synthetic::random_calibration(2, 2, 8, 8, 3, 56);
  const SpsThresholds a = search_thresholds(calib, Granularity::PerRow);
  const SpsThresholds b = search_thresholds(calib, Granularity::PerRow);
  EXPECT_EQ(a.lambdas(), b.lambdas());
  EXPECT_EQ(a.distortion, b.distortion);
}

TEST(Sps, EmptyCalibrationIsRejected) {
  CalibrationSet calib;
  calib.layers = 1;
  calib.heads = 1;
  calib.seq_len = 4;
  calib.head_dim = 4;
  EXPECT_THROW(search_thresholds(calib, Granularity::PerHead), Error);
}

TEST(SpsThresholds, ValidatesShapeAndRange) {
  EXPECT_THROW(SpsThresholds(Granularity::PerHead, 1, 2, 4, 8, {0.1}), DimensionError);
  EXPECT_THROW(SpsThresholds(Granularity::PerLayer, 1, 2, 4, 8, {1.5}), DomainError);
  const SpsThresholds t(Granularity::PerLayer, 2, 2, 4, 16, {0.0, 0.5});
  EXPECT_EQ(t.threshold(1, 1), popcount_threshold(0.5, 16));
  const AttentionThresholds a = t.for_layer(1);
  EXPECT_EQ(a.heads, 2U);
  EXPECT_EQ(a.threshold(1, 3), popcount_threshold(0.5, 16));
  EXPECT_THROW(t.for_layer(2), DimensionError);
}

TEST(SpsThresholds, GranularityNames) {
  EXPECT_EQ(parse_granularity("row"), Granularity::PerRow);
  EXPECT_EQ(parse_granularity("layer"), Granularity::PerLayer);
  EXPECT_THROW(parse_granularity("column"), FormatError);
}

}  // namespace
}  // namespace cobra
