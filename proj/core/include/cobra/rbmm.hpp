// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cobra/bitpack.hpp"
#include "cobra/config.hpp"
#include "cobra/matrix.hpp"
#include "cobra/popcount.hpp"
#include "cobra/quant.hpp"
#include "cobra/sps.hpp"

namespace cobra {

/// Real binary vector multiplication of two `n`-bit datapacks. `b` is always
/// (-1,1)-encoded. For a SignedPM1 `a` the result is 2*popcount(XNOR) - n; for
/// an Unsigned01 `a` it is 2*popcount(AND) - n + delta_a, where delta_a (the
/// zero count of `a`) must be supplied.
std::int64_t rbvm(Datapack a, Datapack b, Scheme scheme_a,
                  std::optional<std::uint32_t> delta_a = std::nullopt,
                  PopcountPath path = PopcountPath::Native);

struct RbvmSegment {
  Datapack a;
  Datapack b;
  Scheme scheme_a = Scheme::SignedPM1;
  std::optional<std::uint32_t> delta_a;
};

/// Sum of per-segment RBVM results (the HEAD PE -> ACC PATH accumulation).
std::int64_t rbvm_split_accumulate(std::span<const RbvmSegment> parts,
                                   PopcountPath path = PopcountPath::Native);

enum class ModeTag : std::uint8_t { M1_QKV, M2_AttnScore, M3_Context, M4_Linear, F1_FFN1, F2_FFN2 };
inline constexpr std::size_t kModeCount = 6;
const char* to_string(ModeTag t) noexcept;

enum class OutputKind : std::uint8_t { Binary, Integer, ConcatHeads };

/// (n x*y*z): n matrix products of an x-by-y and a y-by-z operand.
struct ModeDims {
  std::uint32_t n = 1;
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t z = 0;
  bool operator==(const ModeDims&) const = default;
};

/// One boundary per query row: key position j of row i is masked iff
/// j >= boundary[i]. An empty mask leaves every position visible.
struct AttentionMask {
  std::vector<std::uint32_t> boundary;

  bool masked(std::size_t row, std::size_t col) const noexcept {
    return !boundary.empty() && col >= boundary[row];
  }
  static AttentionMask none() { return {}; }
  static AttentionMask padding(std::uint32_t seq_len, std::uint32_t valid_len);
  static AttentionMask causal(std::uint32_t seq_len);
};

struct RbmmMode {
  ModeTag tag = ModeTag::M1_QKV;
  ModeDims dims;
  std::uint32_t heads = 1;
  std::uint32_t head_dim = 1;
  OutputKind output_kind = OutputKind::Binary;
  AttentionMask mask;

  /// Mode descriptor for `cfg`. F1/F2 describe one d-wide FFN block.
  static RbmmMode make(ModeTag tag, const ModelConfig& cfg, AttentionMask mask = {});
  /// F1 as l x d x FF_size or F2 as l x FF_size x d.
  static RbmmMode ffn_full(ModeTag tag, const ModelConfig& cfg);
};

/// DC RETURN: zeros produced per output row (DC FULL) and per (row, head
/// segment) (DC HEAD).
struct DcReturn {
  DCVector full;
  std::uint32_t num_heads = 0;
  std::vector<std::uint32_t> heads;  ///< rows x num_heads

  std::uint32_t head(std::size_t row, std::size_t k) const noexcept {
    return heads[row * num_heads + k];
  }
  bool operator==(const DcReturn&) const = default;
};

struct RbmmOutput {
  std::optional<BitMatrix> binary;    ///< M1, M3, F1
  std::vector<BitMatrix> head_maps;   ///< M2: one l x l Unsigned01 map per head
  std::optional<IntMatrix> integers;  ///< M4
  DcReturn dc_return;

  /// M2 physical layout: bit k of the result is head k's bit at (row, col).
  std::uint32_t concat_bits(std::size_t row, std::size_t col) const;
};

struct EngineOptions {
  std::uint32_t n_pe = 1;
  PopcountPath popcount = PopcountPath::Native;
  /// Mutation hook for the verifier: flips the low bit of selected popcounts.
  bool inject_fault = false;
};

/// Runtime instrumentation: engine invocations (N_pe results each) and
/// executions (pipeline fills) per mode.
struct EngineCounters {
  std::array<std::uint64_t, kModeCount> invocations{};
  std::array<std::uint64_t, kModeCount> executions{};
  std::uint64_t rbvm_results = 0;

  std::uint64_t total_invocations() const noexcept;
  void reset() noexcept { *this = EngineCounters{}; }
};

/// Operands of one execution. Which fields are required depends on the mode:
///   M1/M4/F1: a (SignedPM1), b, theta (not M4)
///   M2:       a = Q, b = K (both l x d), sps
///   M3:       a_heads (M2 maps), dc_in (M2 DC RETURN), b = V^T, theta
///   F2:       a (Unsigned01, F1 output), dc_in (F1 DC RETURN), b, accumulator
/// b holds column datapacks: row p of b is column p of the mathematical B.
struct RbmmInputs {
  const BitMatrix* a = nullptr;
  std::span<const BitMatrix> a_heads;
  const DcReturn* dc_in = nullptr;
  const BitMatrix* b = nullptr;
  const ThetaVector* theta = nullptr;
  const AttentionThresholds* sps = nullptr;
  IntMatrix* accumulator = nullptr;
};

/// Throws DimensionError or MissingOperandError on a contract violation.
RbmmOutput rbmm_execute(const RbmmMode& mode, const RbmmInputs& in,
                        const EngineOptions& opts = {}, EngineCounters* counters = nullptr);

struct FfnWorkspaceStats {
  std::size_t buffers_allocated = 0;
  std::size_t buffer_rows = 0;
  std::size_t buffer_cols = 0;
};

/// sum_r F2(F1(X, Y_r), Z_r) using two l x d working buffers. y_blocks[r] and
/// z_blocks[r] are d x d column-datapack blocks; theta_f1 spans FF_size
/// columns. Throws DimensionError when R*d != FF_size.
IntMatrix ffn_decomposed(const BitMatrix& x, std::span<const BitMatrix> y_blocks,
                         std::span<const BitMatrix> z_blocks, const ThetaVector& theta_f1,
                         const ModelConfig& cfg, const EngineOptions& opts = {},
                         EngineCounters* counters = nullptr, FfnWorkspaceStats* stats = nullptr);

/// Undecomposed two-pass FFN: one l x FF_size F1 followed by one F2.
IntMatrix ffn_monolithic(const BitMatrix& x, const BitMatrix& y_full, const BitMatrix& z_full,
                         const ThetaVector& theta_f1, const ModelConfig& cfg,
                         const EngineOptions& opts = {}, EngineCounters* counters = nullptr);

}  // namespace cobra
