// SPDX-License-Identifier: Apache-2.0
#include "cobra/popcount.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "cobra/bitpack.hpp"
#include "cobra/error.hpp"

namespace cobra {
namespace {

constexpr std::array<std::uint8_t, 64> make_rom() {
  std::array<std::uint8_t, 64> rom{};
  for (unsigned i = 0; i < 64; ++i) {
    std::uint8_t n = 0;
    for (unsigned b = 0; b < 6; ++b) n = static_cast<std::uint8_t>(n + ((i >> b) & 1U));
    rom[i] = n;
  }
  return rom;
}

constexpr std::array<std::uint8_t, 64> kRom = make_rom();

// Bit `bit` of each of the six 3-bit counts, gathered into one 6-bit word.
std::uint8_t gather_bit(const std::array<std::uint8_t, 6>& counts, unsigned bit) noexcept {
  std::uint8_t v = 0;
  for (unsigned g = 0; g < 6; ++g) v = static_cast<std::uint8_t>(v | (((counts[g] >> bit) & 1U) << g));
  return v;
}

}  // namespace

const char* to_string(PopcountPath p) noexcept {
  return p == PopcountPath::Native ? "native" : "compressor";
}

CompressorWord::CompressorWord(std::uint64_t bits) : bits_(bits) {
  if (bits > kMask) throw DomainError("CompressorWord: value exceeds 36 bits");
}

std::uint8_t compress_6_3(std::uint8_t x) noexcept { return kRom[x & 0x3F]; }

TreeStages popcount_tree36_stages(CompressorWord x) noexcept {
  TreeStages s;
  const std::uint64_t v = x.bits();
  for (unsigned g = 0; g < 6; ++g)
    s.group_counts[g] = compress_6_3(static_cast<std::uint8_t>((v >> (6 * g)) & 0x3F));
  s.fours = compress_6_3(gather_bit(s.group_counts, 2));
  s.twos = compress_6_3(gather_bit(s.group_counts, 1));
  s.ones = compress_6_3(gather_bit(s.group_counts, 0));
  s.total = static_cast<std::uint8_t>((s.fours << 2) + (s.twos << 1) + s.ones);
  return s;
}

unsigned popcount_compressor64(std::uint64_t w) noexcept {
  return popcount_tree36(CompressorWord(w & CompressorWord::kMask)) +
         popcount_tree36(CompressorWord(w >> CompressorWord::kBits));
}

std::size_t popcount_words(std::span<const std::uint64_t> words, PopcountPath path) noexcept {
  std::size_t n = 0;
  if (path == PopcountPath::Native) {
    for (std::uint64_t w : words) n += static_cast<std::size_t>(std::popcount(w));
  } else {
    for (std::uint64_t w : words) n += popcount_compressor64(w);
  }
  return n;
}

std::size_t popcount_wide(std::span<const std::uint64_t> words, std::size_t nbits) {
  if (words_for_bits(nbits) > words.size()) {
    throw DimensionError("popcount_wide: " + std::to_string(nbits) + " bits need " +
                         std::to_string(words_for_bits(nbits)) + " words, got " +
                         std::to_string(words.size()));
  }
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::size_t lo = w * kWordBits;
    std::uint64_t allowed = 0;
    if (nbits >= lo + kWordBits) {
      allowed = ~std::uint64_t{0};
    } else if (nbits > lo) {
      allowed = tail_mask(nbits - lo);
    }
    if (words[w] & ~allowed) {
      throw DomainError("popcount_wide: set bit beyond bit length " + std::to_string(nbits) +
                        " in word " + std::to_string(w));
    }
  }
  const Datapack pack{words, nbits};
  std::size_t total = 0;
  for (std::size_t start = 0; start < nbits; start += CompressorWord::kBits) {
    const std::size_t len = std::min(CompressorWord::kBits, nbits - start);
    const auto chunk = slice_bits(pack, start, len);
    total += popcount_tree36(CompressorWord(chunk[0]));
  }
  return total;
}

}  // namespace cobra
