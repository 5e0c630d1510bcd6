// SPDX-License-Identifier: Apache-2.0
#include "cobra/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "cobra/error.hpp"

namespace cobra {
namespace {

std::int64_t floor_div(std::int64_t num, std::int64_t den) {
  std::int64_t q = num / den;
  if (num % den != 0 && num < 0) --q;
  return q;
}

// num / den rounded to nearest, halves toward +infinity; den > 0.
std::int64_t div_round(std::int64_t num, std::int64_t den) { return floor_div(2 * num + den, 2 * den); }

std::uint64_t isqrt(std::uint64_t v) {
  auto s = static_cast<std::uint64_t>(std::sqrt(static_cast<double>(v)));
  while (s > 0 && s * s > v) --s;
  while ((s + 1) * (s + 1) <= v) ++s;
  return s;
}

void check_bound(const IntMatrix& m, const ModelConfig& cfg, const char* what) {
  const std::int64_t limit = std::int64_t{1} << cfg.output_bits();
  for (auto v : m.data()) {
    if (std::abs(std::int64_t{v}) >= limit)
      throw Error(std::string(what) + ": value " + std::to_string(v) + " exceeds " +
                  std::to_string(cfg.output_bits()) + "-bit output width");
  }
}

IntMatrix add(const IntMatrix& a, const IntMatrix& b) {
  IntMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

// LayerNorm every row of `s`, re-binarize with theta, keep the raw values.
BitMatrix normalize_and_binarize(const IntMatrix& s, std::span<const FixedPoint16> gain,
                                 std::span<const FixedPoint16> bias, const ThetaVector& theta,
                                 IntMatrix* raw_out) {
  BitMatrix bits(s.rows(), s.cols(), Scheme::SignedPM1);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto y = layernorm_fixed(s.row(i), gain, bias);
    for (std::size_t j = 0; j < s.cols(); ++j) {
      if (quantize_unified(y[j].raw, theta.theta[j])) bits.set_bit(i, j, true);
      if (raw_out) (*raw_out)(i, j) = y[j].raw;
    }
  }
  return bits;
}

void check_quant(const QuantParams& q, std::size_t width, Scheme scheme, bool relu, const char* name) {
  q.validate();
  if (q.beta.size() != width || q.scheme != scheme || q.relu_fused != relu)
    throw DimensionError(std::string("LayerWeights: ") + name + " quantization must be " +
                         to_string(scheme) + (relu ? "+ReLU" : "") + " with " +
                         std::to_string(width) + " shifts");
}

void check_block(const BitMatrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols || m.scheme() != Scheme::SignedPM1)
    throw DimensionError(std::string("LayerWeights: ") + name + " must be SignedPM1 " +
                         std::to_string(rows) + "x" + std::to_string(cols));
}

}  // namespace

FixedPoint16 FixedPoint16::saturate(std::int64_t raw) noexcept {
  return FixedPoint16{static_cast<std::int16_t>(std::clamp<std::int64_t>(
      raw, std::numeric_limits<std::int16_t>::min(), std::numeric_limits<std::int16_t>::max()))};
}

FixedPoint16 FixedPoint16::from_double(double v) noexcept {
  if (std::isnan(v)) return {};
  const double scaled = std::clamp(v * kOne, -65536.0, 65536.0);
  return saturate(round_half_up(scaled));
}

std::vector<FixedPoint16> layernorm_fixed(std::span<const std::int32_t> x,
                                          std::span<const FixedPoint16> gain,
                                          std::span<const FixedPoint16> bias) {
  if (x.empty()) throw DimensionError("layernorm_fixed: empty row");
  if (gain.size() != x.size() || bias.size() != x.size())
    throw DimensionError("layernorm_fixed: gain/bias length differs from row length");
  const auto n = static_cast<std::int64_t>(x.size());
  std::int64_t sum = 0;
  for (auto v : x) sum += v;
  const std::int64_t mean = div_round(sum * FixedPoint16::kOne, n);  // Q8.8

  std::uint64_t sq = 0;  // Q16.16
  for (auto v : x) {
    const std::int64_t diff = std::int64_t{v} * FixedPoint16::kOne - mean;
    sq += static_cast<std::uint64_t>(diff * diff);
  }
  // Variance plus one Q8.8 quantum (1/256 = 256 in Q16.16).
  const std::uint64_t var = sq / static_cast<std::uint64_t>(n) + 256;
  const auto stddev = static_cast<std::int64_t>(isqrt(var << 16));  // Q16.16

  std::vector<FixedPoint16> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::int64_t diff = std::int64_t{x[i]} * FixedPoint16::kOne - mean;
    const FixedPoint16 norm = FixedPoint16::saturate(div_round(diff * 65536, stddev));
    const std::int64_t scaled = div_round(std::int64_t{gain[i].raw} * norm.raw, FixedPoint16::kOne);
    y[i] = FixedPoint16::saturate(scaled + bias[i].raw);
  }
  return y;
}

void LayerWeights::validate(const ModelConfig& cfg) const {
  cfg.validate();
  const std::size_t d = cfg.d;
  check_block(wq, d, d, "W_Q");
  check_block(wk, d, d, "W_K");
  check_block(wv, d, d, "W_V");
  check_block(wo, d, d, "W_O");
  if (y_blocks.size() != cfg.ffn_blocks() || z_blocks.size() != cfg.ffn_blocks())
    throw DimensionError("LayerWeights: expected " + std::to_string(cfg.ffn_blocks()) +
                         " Y and Z blocks");
  for (const auto& b : y_blocks) check_block(b, d, d, "Y block");
  for (const auto& b : z_blocks) check_block(b, d, d, "Z block");
  check_quant(q_q, d, Scheme::SignedPM1, false, "Q");
  check_quant(q_k, d, Scheme::SignedPM1, false, "K");
  check_quant(q_v, d, Scheme::SignedPM1, false, "V");
  check_quant(q_ctx, d, Scheme::SignedPM1, false, "context");
  check_quant(q_ffn1, cfg.ff_size, Scheme::Unsigned01, true, "FFN1");
  check_quant(q_ln1, d, Scheme::SignedPM1, false, "LN1");
  check_quant(q_ln2, d, Scheme::SignedPM1, false, "LN2");
  for (const auto* v : {&ln1_gain, &ln1_bias, &ln2_gain, &ln2_bias})
    if (v->size() != d) throw DimensionError("LayerWeights: LayerNorm parameters must have d entries");
}

IntMatrix StagingArea::round_trip(const IntMatrix& m) {
  buffer_.resize(m.data().size() * sizeof(std::int32_t));
  for (std::size_t i = 0; i < m.data().size(); ++i) {
    const auto u = static_cast<std::uint32_t>(m.data()[i]);
    for (int b = 0; b < 4; ++b) buffer_[4 * i + b] = static_cast<std::uint8_t>(u >> (8 * b));
  }
  bytes_ += buffer_.size();
  IntMatrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < out.data().size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= std::uint32_t{buffer_[4 * i + b]} << (8 * b);
    out.data()[i] = static_cast<std::int32_t>(u);
  }
  return out;
}

IntMatrix residual_values(const BitMatrix& m) {
  if (m.scheme() != Scheme::SignedPM1) throw DomainError("residual_values: expected SignedPM1 bits");
  return unpack_matrix(m);
}

LayerOutput encoder_layer_forward(const BitMatrix& x, const LayerWeights& w, const ModelConfig& cfg,
                                  const AttentionThresholds& sps, const AttentionMask& mask,
                                  const ForwardOptions& opts, EngineCounters* counters,
                                  LayerTrace* trace) {
  w.validate(cfg);
  if (x.rows() != cfg.l || x.cols() != cfg.d || x.scheme() != Scheme::SignedPM1)
    throw DimensionError("encoder_layer_forward: input must be SignedPM1 l x d");
  const EngineOptions& eng = opts.engine;
  StagingArea staging;
  auto stage = [&](IntMatrix m) { return opts.spill_emulation ? staging.round_trip(m) : m; };

  const RbmmMode m1 = RbmmMode::make(ModeTag::M1_QKV, cfg);
  auto project = [&](const BitMatrix& weights, const QuantParams& q) {
    const ThetaVector theta = compute_theta(q);
    RbmmInputs in;
    in.a = &x;
    in.b = &weights;
    in.theta = &theta;
    return std::move(*rbmm_execute(m1, in, eng, counters).binary);
  };
  BitMatrix q = project(w.wq, w.q_q);
  BitMatrix k = project(w.wk, w.q_k);
  BitMatrix v = project(w.wv, w.q_v);

  RbmmInputs in2;
  in2.a = &q;
  in2.b = &k;
  in2.sps = &sps;
  RbmmOutput att = rbmm_execute(RbmmMode::make(ModeTag::M2_AttnScore, cfg, mask), in2, eng, counters);

  const BitMatrix vt = transpose_packed(v);
  const ThetaVector theta_ctx = compute_theta(w.q_ctx);
  RbmmInputs in3;
  in3.a_heads = att.head_maps;
  in3.dc_in = &att.dc_return;
  in3.b = &vt;
  in3.theta = &theta_ctx;
  BitMatrix context = std::move(*rbmm_execute(RbmmMode::make(ModeTag::M3_Context, cfg), in3, eng, counters).binary);

  RbmmInputs in4;
  in4.a = &context;
  in4.b = &w.wo;
  IntMatrix attention_out =
      stage(std::move(*rbmm_execute(RbmmMode::make(ModeTag::M4_Linear, cfg), in4, eng, counters).integers));
  check_bound(attention_out, cfg, "M4");

  IntMatrix residual1 = stage(add(attention_out, residual_values(x)));
  const BitMatrix ffn_in = normalize_and_binarize(residual1, w.ln1_gain, w.ln1_bias,
                                                  compute_theta(w.q_ln1), nullptr);

  FfnWorkspaceStats ffn_stats;
  IntMatrix ffn_out = stage(ffn_decomposed(ffn_in, w.y_blocks, w.z_blocks, compute_theta(w.q_ffn1),
                                           cfg, eng, counters, &ffn_stats));
  check_bound(ffn_out, cfg, "F2");

  LayerOutput out;
  out.logits = IntMatrix(cfg.l, cfg.d);
  out.hidden = normalize_and_binarize(add(ffn_out, residual_values(ffn_in)), w.ln2_gain, w.ln2_bias,
                                      compute_theta(w.q_ln2), &out.logits);
  if (trace) {
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->attention = std::move(att);
    trace->context = std::move(context);
    trace->attention_out = std::move(attention_out);
    trace->residual1 = std::move(residual1);
    trace->ffn_input = ffn_in;
    trace->ffn_out = std::move(ffn_out);
    trace->ffn_workspace = ffn_stats;
    trace->staged_bytes = staging.bytes_staged();
  }
  return out;
}

namespace {

bool thresholds_fit(const SpsThresholds& t, const ModelConfig& cfg) {
  return t.layers() == cfg.num_layers && t.heads() == cfg.h && t.head_dim() == cfg.head_dim() &&
         (t.granularity() != Granularity::PerRow || t.rows() == cfg.l);
}

}  // namespace

LayerOutput model_forward(const BitMatrix& x, std::span<const LayerWeights> layers,
                          const ModelConfig& cfg, const SpsThresholds& thresholds,
                          const AttentionMask& mask, const ForwardOptions& opts,
                          EngineCounters* counters) {
  if (layers.size() != cfg.num_layers)
    throw DimensionError("model_forward: " + std::to_string(layers.size()) + " layers for a " +
                         std::to_string(cfg.num_layers) + "-layer config");
  if (!thresholds_fit(thresholds, cfg))
    throw DimensionError("model_forward: threshold table does not match the model config");
  LayerOutput state{x, IntMatrix{}};
  for (std::uint32_t i = 0; i < cfg.num_layers; ++i)
    state = encoder_layer_forward(state.hidden, layers[i], cfg, thresholds.for_layer(i), mask, opts, counters);
  return state;
}

BinaryEncoder::BinaryEncoder(ModelConfig cfg, std::vector<LayerWeights> layers, SpsThresholds thresholds)
    : cfg_(cfg), layers_(std::move(layers)), thresholds_(std::move(thresholds)) {
  cfg_.validate();
  if (layers_.size() != cfg_.num_layers) throw DimensionError("BinaryEncoder: layer count mismatch");
  for (const auto& l : layers_) l.validate(cfg_);
  if (!thresholds_fit(thresholds_, cfg_))
    throw DimensionError("BinaryEncoder: threshold table does not match the model config");
}

LayerOutput BinaryEncoder::forward(const BitMatrix& x, const AttentionMask& mask, const ForwardOptions& opts) {
  std::lock_guard lock(mu_);
  return model_forward(x, layers_, cfg_, thresholds_, mask, opts, &counters_);
}

EngineCounters BinaryEncoder::counters() const {
  std::lock_guard lock(mu_);
  return counters_;
}

void BinaryEncoder::reset_counters() {
  std::lock_guard lock(mu_);
  counters_.reset();
}

}  // namespace cobra
