// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <bit>

#include "cobra/error.hpp"
#include "cobra/popcount.hpp"
#include "cobra/synthetic.hpp"

namespace cobra {
namespace {

TEST(Popcount, CompressorEndpoints) {
  EXPECT_EQ(compress_6_3(0b000000), 0);
  EXPECT_EQ(compress_6_3(0b111111), 6);
}

TEST(Popcount, CompressorMatchesNativeOnAllInputs) {
  for (unsigned x = 0; x < 64; ++x) EXPECT_EQ(compress_6_3(static_cast<std::uint8_t>(x)), std::popcount(x)) << x;
}

TEST(Popcount, TreeEndpoints) {
  EXPECT_EQ(popcount_tree36(CompressorWord(0)), 0U);
  EXPECT_EQ(popcount_tree36(CompressorWord(CompressorWord::kMask)), 36U);
}

TEST(Popcount, TreeRejectsWideValues) {
  EXPECT_THROW(CompressorWord(std::uint64_t{1} << 36), Error);
}

TEST(Popcount, TreeMatchesNativeOnComposedSixteenBitInputs) {
  for (std::uint64_t x = 0; x < (1U << 16); ++x)
    ASSERT_EQ(popcount_tree36(CompressorWord(x)), static_cast<unsigned>(std::popcount(x))) << x;
}

TEST(Popcount, TreeStagesRecombine) {
  synthetic::Rng rng(21);
  for (int i = 0; i < 10000; ++i) {
    const std::uint64_t x = rng() & CompressorWord::kMask;
    const TreeStages s = popcount_tree36_stages(CompressorWord(x));
    unsigned groups = 0;
    for (int g = 0; g < 6; ++g) {
      EXPECT_EQ(s.group_counts[g], std::popcount((x >> (6 * g)) & 63U));
      groups += s.group_counts[g];
    }
    EXPECT_EQ(4U * s.fours + 2U * s.twos + s.ones, groups);
    ASSERT_EQ(s.total, static_cast<unsigned>(std::popcount(x)));
  }
}

TEST(Popcount, WideEndpointsAtHiddenWidth) {
  std::vector<std::uint64_t> zeros(12, 0), ones(12, ~std::uint64_t{0});
  EXPECT_EQ(popcount_wide(zeros, 768), 0U);
  EXPECT_EQ(popcount_wide(ones, 768), 768U);
}

TEST(Popcount, WideMatchesNativeOnRandomPacks) {
  synthetic::Rng rng(22);
  for (int i = 0; i < 2000; ++i) {
    std::vector<std::uint64_t> w(12);
    std::size_t native = 0;
    for (auto& x : w) {
      x = rng();
      native += static_cast<std::size_t>(std::popcount(x));
    }
    ASSERT_EQ(popcount_wide(w, 768), native);
    ASSERT_EQ(popcount_words(w, PopcountPath::Compressor), native);
    ASSERT_EQ(popcount_words(w, PopcountPath::Native), native);
  }
}

TEST(Popcount, WideRejectsBitsBeyondLength) {
  std::vector<std::uint64_t> w{std::uint64_t{1} << 40};
  EXPECT_THROW(popcount_wide(w, 40), Error);
  EXPECT_EQ(popcount_wide(w, 41), 1U);
  EXPECT_THROW(popcount_wide(w, 65), Error);
}

TEST(Popcount, Compressor64MatchesNative) {
  synthetic::Rng rng(23);
  for (int i = 0; i < 100000; ++i) {
    const std::uint64_t x = rng();
    ASSERT_EQ(popcount_compressor64(x), static_cast<unsigned>(std::popcount(x)));
  }
  EXPECT_EQ(popcount_compressor64(~std::uint64_t{0}), 64U);
}

}  // namespace
}  // namespace cobra
