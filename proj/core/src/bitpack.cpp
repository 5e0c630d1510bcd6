// SPDX-License-Identifier: Apache-2.0
#include "cobra/bitpack.hpp"

#include <bit>
#include <string>

#include "cobra/error.hpp"

namespace cobra {

const char* to_string(Scheme s) noexcept {
  return s == Scheme::SignedPM1 ? "SignedPM1" : "Unsigned01";
}

BitMatrix::BitMatrix(std::size_t rows, std::size_t cols, Scheme scheme)
    : rows_(rows),
      cols_(cols),
      stride_(words_for_bits(cols)),
      scheme_(scheme),
      words_(rows * words_for_bits(cols), 0) {}

BitMatrix BitMatrix::from_words(std::size_t rows, std::size_t cols, Scheme scheme,
                                std::vector<std::uint64_t> words) {
  BitMatrix m(rows, cols, scheme);
  if (words.size() != m.words_.size()) {
    throw DimensionError("BitMatrix: expected " + std::to_string(m.words_.size()) +
                         " words for " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + std::to_string(words.size()));
  }
  m.words_ = std::move(words);
  if (!m.pad_is_clean()) {
    throw DomainError("BitMatrix: nonzero pad bits past column " + std::to_string(cols));
  }
  return m;
}

std::size_t BitMatrix::row_popcount(std::size_t r) const noexcept {
  std::size_t n = 0;
  for (std::uint64_t w : row_words(r)) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

bool BitMatrix::pad_is_clean() const noexcept {
  if (stride_ == 0) return true;
  const std::uint64_t pad = ~tail_mask(cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    if (words_[r * stride_ + stride_ - 1] & pad) return false;
  }
  return true;
}

PackedMatrix pack_matrix(const IntMatrix& values, Scheme scheme) {
  PackedMatrix out{BitMatrix(values.rows(), values.cols(), scheme), DCVector{}};
  out.dc.counts.assign(values.rows(), 0);
  const int low = scheme == Scheme::SignedPM1 ? -1 : 0;
  for (std::size_t r = 0; r < values.rows(); ++r) {
    std::uint32_t zeros = 0;
    for (std::size_t c = 0; c < values.cols(); ++c) {
      const std::int32_t v = values(r, c);
      if (v == 1) {
        out.bits.set_bit(r, c, true);
      } else if (v == low) {
        ++zeros;
      } else {
        throw DomainError("pack_matrix: value " + std::to_string(v) + " at row " +
                          std::to_string(r) + ", column " + std::to_string(c) +
                          " is not valid for scheme " + to_string(scheme));
      }
    }
    if (scheme == Scheme::Unsigned01) out.dc.counts[r] = zeros;
  }
  return out;
}

IntMatrix unpack_matrix(const BitMatrix& m) {
  IntMatrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m.value(r, c);
  return out;
}

BitMatrix transpose_packed(const BitMatrix& m) {
  BitMatrix t(m.cols(), m.rows(), m.scheme());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto words = m.row_words(r);
    for (std::size_t w = 0; w < words.size(); ++w) {
      std::uint64_t bits = words[w];
      while (bits) {
        const std::size_t c = w * kWordBits + static_cast<std::size_t>(std::countr_zero(bits));
        t.set_bit(c, r, true);
        bits &= bits - 1;
      }
    }
  }
  return t;
}

DCVector count_dont_cares(const BitMatrix& m) {
  DCVector dc;
  dc.counts.assign(m.rows(), 0);
  if (m.scheme() == Scheme::Unsigned01) {
    for (std::size_t r = 0; r < m.rows(); ++r)
      dc.counts[r] = static_cast<std::uint32_t>(m.cols() - m.row_popcount(r));
  }
  return dc;
}

BitMatrix pack_columns(const IntMatrix& b, Scheme scheme) {
  IntMatrix t(b.cols(), b.rows());
  for (std::size_t r = 0; r < b.rows(); ++r)
    for (std::size_t c = 0; c < b.cols(); ++c) t(c, r) = b(r, c);
  return pack_matrix(t, scheme).bits;
}

std::vector<std::uint64_t> slice_bits(Datapack src, std::size_t start, std::size_t len) {
  if (start + len > src.nbits) {
    throw DimensionError("slice_bits: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds " +
                         std::to_string(src.nbits) + " bits");
  }
  std::vector<std::uint64_t> out(words_for_bits(len), 0);
  const std::size_t shift = start % kWordBits;
  const std::size_t first = start / kWordBits;
  for (std::size_t w = 0; w < out.size(); ++w) {
    std::uint64_t v = src.words[first + w] >> shift;
    if (shift != 0 && first + w + 1 < src.words.size())
      v |= src.words[first + w + 1] << (kWordBits - shift);
    out[w] = v;
  }
  if (!out.empty()) out.back() &= tail_mask(len);
  return out;
}

BitMatrix slice_columns(const BitMatrix& m, std::size_t first, std::size_t count) {
  BitMatrix out(m.rows(), count, m.scheme());
  std::vector<std::uint64_t> words;
  words.reserve(m.rows() * out.words_per_row());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto part = slice_bits(m.row(r), first, count);
    words.insert(words.end(), part.begin(), part.end());
  }
  return BitMatrix::from_words(m.rows(), count, m.scheme(), std::move(words));
}

BitMatrix slice_rows(const BitMatrix& m, std::size_t first, std::size_t count) {
  if (first + count > m.rows()) throw DimensionError("slice_rows: row range out of bounds");
  const auto begin = m.words().begin() + static_cast<std::ptrdiff_t>(first * m.words_per_row());
  std::vector<std::uint64_t> words(begin,
                                   begin + static_cast<std::ptrdiff_t>(count * m.words_per_row()));
  return BitMatrix::from_words(count, m.cols(), m.scheme(), std::move(words));
}

BitMatrix vstack(std::span<const BitMatrix> parts) {
  if (parts.empty()) return {};
  std::size_t rows = 0;
  std::vector<std::uint64_t> words;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols() || p.scheme() != parts[0].scheme())
      throw DimensionError("vstack: column count or scheme mismatch");
    rows += p.rows();
    words.insert(words.end(), p.words().begin(), p.words().end());
  }
  return BitMatrix::from_words(rows, parts[0].cols(), parts[0].scheme(), std::move(words));
}

BitMatrix hconcat(std::span<const BitMatrix> parts) {
  if (parts.empty()) return {};
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows() || p.scheme() != parts[0].scheme())
      throw DimensionError("hconcat: row count or scheme mismatch");
    cols += p.cols();
  }
  BitMatrix out(parts[0].rows(), cols, parts[0].scheme());
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < p.rows(); ++r)
      for (std::size_t c = 0; c < p.cols(); ++c)
        if (p.bit(r, c)) out.set_bit(r, offset + c, true);
    offset += p.cols();
  }
  return out;
}

}  // namespace cobra
