// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace cobra {

/// Which population-count implementation a kernel uses. Both paths are
/// bit-equivalent; only their cost differs.
enum class PopcountPath : std::uint8_t { Native, Compressor };

const char* to_string(PopcountPath p) noexcept;

/// Six-group 36-bit operand of the compressor tree.
class CompressorWord {
 public:
  static constexpr std::size_t kBits = 36;
  static constexpr std::uint64_t kMask = (std::uint64_t{1} << kBits) - 1;

  /// Throws DomainError when `bits` >= 2^36.
  explicit CompressorWord(std::uint64_t bits);

  std::uint64_t bits() const noexcept { return bits_; }

 private:
  std::uint64_t bits_;
};

/// 6:3 compressor: number of set bits of the low six bits of `x`, read from a
/// 64-entry table. Higher bits of `x` are ignored.
std::uint8_t compress_6_3(std::uint8_t x) noexcept;

/// Intermediate values of one pass through the compressor tree.
struct TreeStages {
  std::array<std::uint8_t, 6> group_counts{};  ///< stage 1, one per 6-bit group
  std::uint8_t fours = 0;   ///< stage 2 over bit 2 of every group count
  std::uint8_t twos = 0;    ///< stage 2 over bit 1
  std::uint8_t ones = 0;    ///< stage 2 over bit 0
  std::uint8_t total = 0;   ///< stage 3: 4*fours + 2*twos + ones
};

TreeStages popcount_tree36_stages(CompressorWord x) noexcept;

inline unsigned popcount_tree36(CompressorWord x) noexcept {
  return popcount_tree36_stages(x).total;
}

/// Population count of the first `nbits` bits of `words`, computed by feeding
/// 36-bit chunks through the compressor tree (the trailing chunk is
/// zero-extended). Throws DomainError if any bit at or past `nbits` is set,
/// DimensionError if `words` is too short.
std::size_t popcount_wide(std::span<const std::uint64_t> words, std::size_t nbits);

/// Population count of every bit of `words` along the selected path.
std::size_t popcount_words(std::span<const std::uint64_t> words, PopcountPath path) noexcept;

/// Compressor-tree count of an arbitrary 64-bit word (two 36-bit chunks).
unsigned popcount_compressor64(std::uint64_t w) noexcept;

}  // namespace cobra
