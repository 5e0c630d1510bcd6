// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cobra/bitpack.hpp"
#include "cobra/config.hpp"
#include "cobra/matrix.hpp"
#include "cobra/quant.hpp"
#include "cobra/rbmm.hpp"

/// Full-precision and plain-integer reference implementations. Nothing here
/// calls into the packed engine; these routines exist to check it.
namespace cobra::reference {

/// exp(z_i) / sum_j exp(z_j), with max subtraction. Throws Error when empty.
std::vector<double> softmax_row(std::span<const double> z);

/// Plain triple-loop product of natural-orientation matrices.
IntMatrix matmul(const IntMatrix& a, const IntMatrix& b);

/// Q K^T / sqrt(d_k) for integer Q, K of shape l x d_k.
RealMatrix attention_scores(const IntMatrix& q, const IntMatrix& k);

/// Elastic binarization of softmax attention:
/// clip(round(softmax(Q K^T / sqrt(d_k)) / alpha), 0, 1). Throws DomainError
/// for alpha <= 0.
IntMatrix bit_attention_prob(const BitMatrix& q, const BitMatrix& k, double alpha);

/// Two-step output binarization of an integer c for column j:
///   (0,1):  clip(round((c - beta_j) / alpha), 0, 1)
///   (-1,1): sign((c - beta_j) / alpha) with sign(0) = +1
/// With relu_fused the (0,1) result is additionally gated by c >= 0.
std::int32_t quantize_two_step(std::int64_t c, const QuantParams& q, std::size_t column);

IntMatrix quantize_matrix(const IntMatrix& c, const QuantParams& q);

/// Unpacked operands for one mode. `b` is in natural orientation: d x P
/// weights for M1/M4/F1/F2, K (l x d) for M2, V (l x d) for M3.
struct ModeInputs {
  ModeTag tag = ModeTag::M1_QKV;
  std::uint32_t heads = 1;
  IntMatrix a;
  std::vector<IntMatrix> a_heads;   ///< M3 attention maps (0/1)
  IntMatrix b;
  QuantParams quant;
  std::vector<double> lambdas;      ///< M2: heads x rows (rows = 1 or l)
  std::uint32_t lambda_rows = 1;
  AttentionMask mask;
  IntMatrix previous;               ///< F2 accumulator input
};

struct ModeOutputs {
  IntMatrix values;                 ///< M1/M3 (+-1), M4/F2 integers, F1 (0/1)
  std::vector<IntMatrix> head_maps; ///< M2 (0/1 per head)
};

/// Throws DimensionError on shape mismatch.
ModeOutputs reference_mode_pipeline(const ModeInputs& in);

/// LayerNorm under the engine's Q8.8 rule, implemented independently.
std::vector<std::int16_t> layernorm_q88(std::span<const std::int32_t> x,
                                        std::span<const std::int16_t> gain_raw,
                                        std::span<const std::int16_t> bias_raw);

/// Double-precision LayerNorm with variance epsilon `eps`.
std::vector<double> layernorm_real(std::span<const std::int32_t> x, std::span<const double> gain,
                                   std::span<const double> bias, double eps);

/// Unpacked weights of one encoder layer (natural orientation).
struct LayerParams {
  IntMatrix wq, wk, wv, wo;  ///< d x d
  IntMatrix y;               ///< d x FF_size
  IntMatrix z;               ///< FF_size x d
  QuantParams q_q, q_k, q_v, q_ctx, q_ffn1, q_ln1, q_ln2;
  std::vector<std::int16_t> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct LayerResult {
  IntMatrix hidden;                     ///< +-1, l x d
  IntMatrix logits;                     ///< LN2 raw Q8.8 values
  std::vector<IntMatrix> attention;     ///< per-head 0/1 maps
  IntMatrix attention_out;              ///< M4 integers
  IntMatrix ffn_out;                    ///< FFN integers before the residual
};

/// One encoder layer on plain integers. `lambdas` is heads x lambda_rows.
LayerResult encoder_layer(const IntMatrix& x, const LayerParams& p, const ModelConfig& cfg,
                          std::span<const double> lambdas, std::uint32_t lambda_rows,
                          const AttentionMask& mask);

}  // namespace cobra::reference
