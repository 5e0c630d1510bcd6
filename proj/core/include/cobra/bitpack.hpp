// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cobra/matrix.hpp"

namespace cobra {

/// Binarization domain of a packed operand. In both schemes bit 1 encodes +1;
/// bit 0 encodes -1 (SignedPM1) or 0 (Unsigned01).
enum class Scheme : std::uint8_t { SignedPM1 = 0, Unsigned01 = 1 };

const char* to_string(Scheme s) noexcept;

inline constexpr std::size_t kWordBits = 64;

constexpr std::size_t words_for_bits(std::size_t nbits) noexcept {
  return (nbits + kWordBits - 1) / kWordBits;
}

/// Mask selecting the valid bits of the last word of an `nbits`-long row.
constexpr std::uint64_t tail_mask(std::size_t nbits) noexcept {
  const std::size_t rem = nbits % kWordBits;
  return rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
}

/// Read-only view of an `nbits`-long packed vector (a datapack).
struct Datapack {
  std::span<const std::uint64_t> words;
  std::size_t nbits = 0;
};

/// Binary matrix packed one bit per element, row-major, LSB-first: column c of
/// a row lives in word c / 64 at bit c % 64. Pad bits past `cols` in the last
/// word of every row are always zero.
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t cols, Scheme scheme);

  /// Adopts `words`; throws DimensionError on size mismatch and DomainError if
  /// any pad bit is set.
  static BitMatrix from_words(std::size_t rows, std::size_t cols, Scheme scheme,
                              std::vector<std::uint64_t> words);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t words_per_row() const noexcept { return stride_; }
  Scheme scheme() const noexcept { return scheme_; }

  bool bit(std::size_t r, std::size_t c) const noexcept {
    return (words_[r * stride_ + c / kWordBits] >> (c % kWordBits)) & 1U;
  }
  void set_bit(std::size_t r, std::size_t c, bool v) noexcept {
    std::uint64_t& w = words_[r * stride_ + c / kWordBits];
    const std::uint64_t m = std::uint64_t{1} << (c % kWordBits);
    w = v ? (w | m) : (w & ~m);
  }

  /// Decoded element value: +1/-1 for SignedPM1, 1/0 for Unsigned01.
  int value(std::size_t r, std::size_t c) const noexcept {
    if (bit(r, c)) return 1;
    return scheme_ == Scheme::SignedPM1 ? -1 : 0;
  }

  std::span<const std::uint64_t> row_words(std::size_t r) const noexcept {
    return {words_.data() + r * stride_, stride_};
  }
  Datapack row(std::size_t r) const noexcept { return {row_words(r), cols_}; }

  const std::vector<std::uint64_t>& words() const noexcept { return words_; }

  /// Number of set bits in row `r`.
  std::size_t row_popcount(std::size_t r) const noexcept;

  bool pad_is_clean() const noexcept;

  bool operator==(const BitMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t stride_ = 0;
  Scheme scheme_ = Scheme::SignedPM1;
  std::vector<std::uint64_t> words_;
};

/// Per-row "don't care" counts: number of zero elements of each row of an
/// Unsigned01 operand. All zero (and unused) for SignedPM1 operands.
struct DCVector {
  std::vector<std::uint32_t> counts;

  bool operator==(const DCVector&) const = default;
};

struct PackedMatrix {
  BitMatrix bits;
  DCVector dc;
};

/// Packs an integer matrix. Values must be in {-1,+1} for SignedPM1 or {0,1}
/// for Unsigned01; anything else throws DomainError naming row, column, value.
PackedMatrix pack_matrix(const IntMatrix& values, Scheme scheme);

IntMatrix unpack_matrix(const BitMatrix& m);

BitMatrix transpose_packed(const BitMatrix& m);

/// DC counts recomputed from the bits (zeros per row for Unsigned01).
DCVector count_dont_cares(const BitMatrix& m);

/// Packs the columns of `b` as datapacks: row p of the result is column p of
/// `b`. This is the orientation the engine expects for its B operand.
BitMatrix pack_columns(const IntMatrix& b, Scheme scheme);

/// Copies bits [start, start + len) of a datapack into a fresh word vector.
std::vector<std::uint64_t> slice_bits(Datapack src, std::size_t start, std::size_t len);

/// Columns [first, first + count) of every row.
BitMatrix slice_columns(const BitMatrix& m, std::size_t first, std::size_t count);

/// Rows [first, first + count).
BitMatrix slice_rows(const BitMatrix& m, std::size_t first, std::size_t count);

/// Stacks matrices with equal column counts and schemes vertically.
BitMatrix vstack(std::span<const BitMatrix> parts);

/// Concatenates matrices with equal row counts and schemes along columns.
BitMatrix hconcat(std::span<const BitMatrix> parts);

}  // namespace cobra
