// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "cobra/bitpack.hpp"
#include "cobra/error.hpp"
#include "cobra/synthetic.hpp"
#include "test_util.hpp"

namespace cobra {
namespace {

using test::make_matrix;

TEST(Bitpack, AllMinusOnePacksToZeroBits) {
  const auto p = pack_matrix(make_matrix(1, 6, {-1, -1, -1, -1, -1, -1}), Scheme::SignedPM1);
  EXPECT_EQ(p.bits.row_words(0)[0], 0U);
  EXPECT_EQ(p.dc.counts, std::vector<std::uint32_t>{0});
}

TEST(Bitpack, UnsignedRowIsLsbFirstWithZeroCount) {
  const auto p = pack_matrix(make_matrix(1, 6, {0, 1, 0, 1, 1, 0}), Scheme::Unsigned01);
  // Columns 1, 3, 4 set: 0b011010.
  EXPECT_EQ(p.bits.row_words(0)[0], 0b011010U);
  EXPECT_EQ(p.dc.counts, std::vector<std::uint32_t>{3});
}

TEST(Bitpack, UnpackOfZeroAndOneBits) {
  BitMatrix zeros(1, 6, Scheme::SignedPM1);
  EXPECT_EQ(unpack_matrix(zeros), make_matrix(1, 6, {-1, -1, -1, -1, -1, -1}));
  BitMatrix ones(1, 6, Scheme::Unsigned01);
  for (std::size_t c = 0; c < 6; ++c) ones.set_bit(0, c, true);
  EXPECT_EQ(unpack_matrix(ones), make_matrix(1, 6, {1, 1, 1, 1, 1, 1}));
}

TEST(Bitpack, RoundTripRandomMatrices) {
  synthetic::Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const IntMatrix m = synthetic::random_pm1(3, 70, rng);
    const auto p = pack_matrix(m, Scheme::SignedPM1);
    EXPECT_TRUE(p.bits.pad_is_clean());
    ASSERT_EQ(unpack_matrix(p.bits), m);
    ASSERT_EQ(pack_matrix(unpack_matrix(p.bits), Scheme::SignedPM1).bits, p.bits);
  }
}

TEST(Bitpack, ZeroCountPlusPopcountIsWidth) {
  synthetic::Rng rng(12);
  const IntMatrix m = synthetic::random_01(9, 131, rng);
  const auto p = pack_matrix(m, Scheme::Unsigned01);
  for (std::size_t r = 0; r < m.rows(); ++r) EXPECT_EQ(p.dc.counts[r] + p.bits.row_popcount(r), 131U);
  EXPECT_EQ(count_dont_cares(p.bits), p.dc);
}

TEST(Bitpack, SignedOperandsCarryZeroDcCounts) {
  synthetic::Rng rng(13);
  const auto p = pack_matrix(synthetic::random_pm1(4, 10, rng), Scheme::SignedPM1);
  EXPECT_EQ(p.dc.counts, std::vector<std::uint32_t>(4, 0));
}

TEST(Bitpack, RejectsOutOfDomainValueWithLocation) {
  try {
    pack_matrix(make_matrix(2, 3, {1, -1, 1, 1, 0, 1}), Scheme::SignedPM1);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("0"), std::string::npos) << msg;
  }
  EXPECT_THROW(pack_matrix(make_matrix(1, 2, {1, -1}), Scheme::Unsigned01), DomainError);
  EXPECT_THROW(pack_matrix(make_matrix(1, 2, {2, 1}), Scheme::Unsigned01), DomainError);
}

TEST(Bitpack, TransposeExamples) {
  BitMatrix one(1, 1, Scheme::Unsigned01);
  one.set_bit(0, 0, true);
  EXPECT_EQ(transpose_packed(one), one);
  const auto m = pack_matrix(make_matrix(2, 2, {1, 0, 1, 1}), Scheme::Unsigned01).bits;
  EXPECT_EQ(unpack_matrix(transpose_packed(m)), make_matrix(2, 2, {1, 1, 0, 1}));
  EXPECT_EQ(transpose_packed(m).scheme(), Scheme::Unsigned01);
}

TEST(Bitpack, DoubleTransposeIsIdentity) {
  synthetic::Rng rng(14);
  for (int i = 0; i < 20; ++i) {
    const BitMatrix m = synthetic::random_bits(65, 130, Scheme::SignedPM1, rng);
    const BitMatrix t = transpose_packed(m);
    EXPECT_TRUE(t.pad_is_clean());
    EXPECT_EQ(t.rows(), 130U);
    EXPECT_EQ(t.bit(7, 64), m.bit(64, 7));
    EXPECT_EQ(transpose_packed(t), m);
  }
}

TEST(Bitpack, FromWordsRejectsDirtyPadding) {
  EXPECT_THROW(BitMatrix::from_words(1, 3, Scheme::SignedPM1, {0b1000}), Error);
  EXPECT_THROW(BitMatrix::from_words(2, 3, Scheme::SignedPM1, {0b111}), Error);
  EXPECT_NO_THROW(BitMatrix::from_words(1, 3, Scheme::SignedPM1, {0b111}));
}

TEST(Bitpack, SlicesAndConcatenationKeepPadsClean) {
  synthetic::Rng rng(15);
  const BitMatrix m = synthetic::random_bits(5, 200, Scheme::Unsigned01, rng);
  const BitMatrix left = slice_columns(m, 0, 77);
  const BitMatrix right = slice_columns(m, 77, 123);
  EXPECT_TRUE(left.pad_is_clean());
  EXPECT_TRUE(right.pad_is_clean());
  const std::vector<BitMatrix> parts{left, right};
  EXPECT_EQ(hconcat(parts), m);
  const std::vector<BitMatrix> rows{slice_rows(m, 0, 2), slice_rows(m, 2, 3)};
  EXPECT_EQ(vstack(rows), m);
  const auto words = slice_bits(m.row(3), 70, 70);
  for (std::size_t c = 0; c < 70; ++c) EXPECT_EQ(((words[c / 64] >> (c % 64)) & 1U) != 0, m.bit(3, 70 + c));
  EXPECT_EQ(words[1] >> 6, 0U);
}

TEST(Bitpack, PackColumnsIsPackOfTranspose) {
  const IntMatrix w = make_matrix(2, 3, {1, -1, 1, -1, -1, 1});
  const BitMatrix cols = pack_columns(w, Scheme::SignedPM1);
  ASSERT_EQ(cols.rows(), 3U);
  EXPECT_EQ(unpack_matrix(cols), make_matrix(3, 2, {1, -1, -1, -1, 1, 1}));
}

}  // namespace
}  // namespace cobra
