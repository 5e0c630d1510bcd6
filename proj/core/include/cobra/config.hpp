// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cobra {

inline constexpr std::uint32_t kMaxSequenceLength = 512;

/// Dimension contract shared by every engine execution.
struct ModelConfig {
  std::uint32_t d = 0;           ///< hidden dimension
  std::uint32_t h = 0;           ///< attention heads
  std::uint32_t l = 0;           ///< sequence length
  std::uint32_t ff_size = 0;     ///< FFN hidden dimension, a multiple of d
  std::uint32_t num_layers = 1;
  std::uint32_t n_pe = 1;        ///< RBVM results per engine invocation

  std::uint32_t head_dim() const noexcept { return h == 0 ? 0 : d / h; }
  std::uint32_t ffn_blocks() const noexcept { return d == 0 ? 0 : ff_size / d; }

  /// B_o = max(ceil(log2 FF_size) + 1, h): width of engine integer outputs.
  std::uint32_t output_bits() const noexcept;

  /// Throws DimensionError on any broken dimension relation.
  void validate() const;

  /// d=768, h=12, l=512, FF=3072, 12 layers, N_pe=32.
  static ModelConfig bert_base();

  /// key=value lines: d, h, l, ff_size, layers, n_pe. Blank lines and
  /// '#' comments are ignored. Throws FormatError naming the line.
  static ModelConfig parse(std::string_view text);
  std::string to_text() const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace cobra
