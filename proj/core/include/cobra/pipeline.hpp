// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <mutex>
#include <span>
#include <vector>

#include "cobra/bitpack.hpp"
#include "cobra/config.hpp"
#include "cobra/matrix.hpp"
#include "cobra/quant.hpp"
#include "cobra/rbmm.hpp"
#include "cobra/sps.hpp"

namespace cobra {

/// Signed Q8.8 fixed-point value. Conversions saturate to [-128, 128).
struct FixedPoint16 {
  static constexpr int kFracBits = 8;
  static constexpr std::int32_t kOne = 1 << kFracBits;

  std::int16_t raw = 0;

  static FixedPoint16 from_double(double v) noexcept;
  static FixedPoint16 saturate(std::int64_t raw) noexcept;
  double to_double() const noexcept { return static_cast<double>(raw) / kOne; }

  bool operator==(const FixedPoint16&) const = default;
};

/// Row LayerNorm in Q8.8: mean rounded to Q8.8, population variance in Q16.16
/// plus one Q8.8 quantum, integer square root, then gain * normalized + bias
/// with saturation. Throws DimensionError on empty or mismatched input.
std::vector<FixedPoint16> layernorm_fixed(std::span<const std::int32_t> x,
                                          std::span<const FixedPoint16> gain,
                                          std::span<const FixedPoint16> bias);

/// Packed weights and quantization parameters of one encoder layer. All weight
/// matrices are SignedPM1 column datapacks (row p = output column p).
struct LayerWeights {
  BitMatrix wq, wk, wv, wo;           ///< d x d
  std::vector<BitMatrix> y_blocks;    ///< R blocks, each d x d
  std::vector<BitMatrix> z_blocks;    ///< R blocks, each d x d
  QuantParams q_q, q_k, q_v;          ///< M1 outputs (SignedPM1)
  QuantParams q_ctx;                  ///< M3 output (SignedPM1)
  QuantParams q_ffn1;                 ///< F1 output (Unsigned01, ReLU fused), FF_size wide
  QuantParams q_ln1, q_ln2;           ///< LayerNorm re-binarization, raw Q8.8 units
  std::vector<FixedPoint16> ln1_gain, ln1_bias, ln2_gain, ln2_bias;

  /// Throws DimensionError/DomainError when anything disagrees with `cfg`.
  void validate(const ModelConfig& cfg) const;

  bool operator==(const LayerWeights&) const = default;
};

/// Byte-serialized staging of integer matrices, standing in for off-chip
/// memory on platforms that cannot hold the l x d outputs on chip.
class StagingArea {
 public:
  IntMatrix round_trip(const IntMatrix& m);
  std::size_t bytes_staged() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> buffer_;
  std::size_t bytes_ = 0;
};

struct ForwardOptions {
  EngineOptions engine;
  bool spill_emulation = false;
};

/// Intermediate values of one layer, for inspection and tests.
struct LayerTrace {
  BitMatrix q, k, v;
  RbmmOutput attention;
  BitMatrix context;
  IntMatrix attention_out;
  IntMatrix residual1;
  BitMatrix ffn_input;
  IntMatrix ffn_out;
  FfnWorkspaceStats ffn_workspace;
  std::size_t staged_bytes = 0;
};

struct LayerOutput {
  BitMatrix hidden;   ///< l x d, SignedPM1
  IntMatrix logits;   ///< raw Q8.8 LayerNorm outputs
};

/// +-1 integer view of a SignedPM1 matrix, used on the residual path.
IntMatrix residual_values(const BitMatrix& m);

/// M1 (Q, K, V) -> M2 + SPS -> M3 -> M4 -> residual + LayerNorm ->
/// F1/F2 (decomposed) -> residual + LayerNorm -> binarization.
LayerOutput encoder_layer_forward(const BitMatrix& x, const LayerWeights& w, const ModelConfig& cfg,
                                  const AttentionThresholds& sps, const AttentionMask& mask = {},
                                  const ForwardOptions& opts = {}, EngineCounters* counters = nullptr,
                                  LayerTrace* trace = nullptr);

/// Sequential application of every layer. Throws DimensionError when the
/// layer count or threshold table disagrees with `cfg`.
LayerOutput model_forward(const BitMatrix& x, std::span<const LayerWeights> layers,
                          const ModelConfig& cfg, const SpsThresholds& thresholds,
                          const AttentionMask& mask = {}, const ForwardOptions& opts = {},
                          EngineCounters* counters = nullptr);

/// A loaded model. Forward passes on one instance are serialized; the
/// instance accumulates engine counters across calls.
class BinaryEncoder {
 public:
  BinaryEncoder(ModelConfig cfg, std::vector<LayerWeights> layers, SpsThresholds thresholds);

  LayerOutput forward(const BitMatrix& x, const AttentionMask& mask = {},
                      const ForwardOptions& opts = {});

  const ModelConfig& config() const noexcept { return cfg_; }
  EngineCounters counters() const;
  void reset_counters();

 private:
  ModelConfig cfg_;
  std::vector<LayerWeights> layers_;
  SpsThresholds thresholds_;
  mutable std::mutex mu_;
  EngineCounters counters_;
};

}  // namespace cobra
