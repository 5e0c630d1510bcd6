// SPDX-License-Identifier: Apache-2.0
#include "cobra/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cobra/error.hpp"

namespace cobra::reference {
namespace {

__extension__ typedef __int128 i128;
__extension__ typedef unsigned __int128 u128;

void need(bool ok, const std::string& what) {
  if (!ok) throw DimensionError("reference: " + what);
}

// Nearest integer, halves toward +infinity.
double round_up_half(double v) {
  const double f = std::floor(v);
  return v - f >= 0.5 ? f + 1.0 : f;
}

IntMatrix columns(const IntMatrix& m, std::size_t first, std::size_t count) {
  IntMatrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, first + c);
  return out;
}

IntMatrix transpose(const IntMatrix& m) {
  IntMatrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

IntMatrix add(const IntMatrix& a, const IntMatrix& b) {
  need(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  IntMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

// floor(num / den) for den > 0.
i128 floor_div(i128 num, i128 den) {
  i128 q = num / den;
  if ((num % den != 0) && (num < 0)) --q;
  return q;
}

i128 div_round_half_up(i128 num, i128 den) { return floor_div(2 * num + den, 2 * den); }

// Largest s with s*s <= v, by bitwise construction.
std::uint64_t isqrt_bits(u128 v) {
  std::uint64_t s = 0;
  for (int bit = 63; bit >= 0; --bit) {
    const std::uint64_t cand = s | (std::uint64_t{1} << bit);
    if (static_cast<u128>(cand) * cand <= v) s = cand;
  }
  return s;
}

std::int16_t sat16(i128 v) {
  if (v > std::numeric_limits<std::int16_t>::max()) return std::numeric_limits<std::int16_t>::max();
  if (v < std::numeric_limits<std::int16_t>::min()) return std::numeric_limits<std::int16_t>::min();
  return static_cast<std::int16_t>(v);
}

}  // namespace

std::vector<double> softmax_row(std::span<const double> z) {
  if (z.empty()) throw Error("softmax_row: empty input");
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

IntMatrix matmul(const IntMatrix& a, const IntMatrix& b) {
  need(a.cols() == b.rows(), "matmul: inner dimensions differ");
  IntMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      std::int64_t s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += std::int64_t{a(i, k)} * b(k, j);
      c(i, j) = static_cast<std::int32_t>(s);
    }
  return c;
}

RealMatrix attention_scores(const IntMatrix& q, const IntMatrix& k) {
  need(q.cols() == k.cols(), "attention_scores: head dims differ");
  const IntMatrix raw = matmul(q, transpose(k));
  const double scale = std::sqrt(static_cast<double>(q.cols()));
  RealMatrix z(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < raw.rows(); ++i)
    for (std::size_t j = 0; j < raw.cols(); ++j) z(i, j) = static_cast<double>(raw(i, j)) / scale;
  return z;
}

IntMatrix bit_attention_prob(const BitMatrix& q, const BitMatrix& k, double alpha) {
  if (!(alpha > 0.0)) throw DomainError("bit_attention_prob: alpha must be positive");
  const RealMatrix z = attention_scores(unpack_matrix(q), unpack_matrix(k));
  IntMatrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto prob = softmax_row(z.row(i));
    for (std::size_t j = 0; j < z.cols(); ++j)
      out(i, j) = static_cast<std::int32_t>(std::clamp(round_up_half(prob[j] / alpha), 0.0, 1.0));
  }
  return out;
}

std::int32_t quantize_two_step(std::int64_t c, const QuantParams& q, std::size_t column) {
  const double v = static_cast<double>(c - q.beta.at(column)) / static_cast<double>(q.alpha);
  if (q.scheme == Scheme::SignedPM1) return v >= 0.0 ? 1 : -1;
  auto bit = static_cast<std::int32_t>(std::clamp(round_up_half(v), 0.0, 1.0));
  if (q.relu_fused && c < 0) bit = 0;
  return bit;
}

IntMatrix quantize_matrix(const IntMatrix& c, const QuantParams& q) {
  need(q.beta.size() == c.cols(), "quantize_matrix: beta length differs from column count");
  IntMatrix out(c.rows(), c.cols());
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j) out(i, j) = quantize_two_step(c(i, j), q, j);
  return out;
}

ModeOutputs reference_mode_pipeline(const ModeInputs& in) {
  ModeOutputs out;
  switch (in.tag) {
    case ModeTag::M1_QKV:
    case ModeTag::F1_FFN1:
      out.values = quantize_matrix(matmul(in.a, in.b), in.quant);
      break;
    case ModeTag::M4_Linear:
      out.values = matmul(in.a, in.b);
      break;
    case ModeTag::F2_FFN2:
      out.values = add(in.previous, matmul(in.a, in.b));
      break;
    case ModeTag::M2_AttnScore: {
      need(in.a.cols() == in.b.cols() && in.a.cols() % in.heads == 0, "M2: Q/K widths");
      const std::size_t dh = in.a.cols() / in.heads;
      need(in.lambdas.size() == in.heads * std::size_t{in.lambda_rows}, "M2: lambda table size");
      for (std::uint32_t k = 0; k < in.heads; ++k) {
        const RealMatrix z = attention_scores(columns(in.a, k * dh, dh), columns(in.b, k * dh, dh));
        IntMatrix map(z.rows(), z.cols());
        for (std::size_t i = 0; i < z.rows(); ++i) {
          const double lambda = in.lambdas[k * in.lambda_rows + (in.lambda_rows == 1 ? 0 : i)];
          for (std::size_t j = 0; j < z.cols(); ++j)
            map(i, j) = (!in.mask.masked(i, j) && z(i, j) >= lambda) ? 1 : 0;
        }
        out.head_maps.push_back(std::move(map));
      }
      break;
    }
    case ModeTag::M3_Context: {
      need(in.a_heads.size() == in.heads && in.b.cols() % in.heads == 0, "M3: head count");
      const std::size_t dh = in.b.cols() / in.heads;
      IntMatrix ctx(in.b.rows(), in.b.cols());
      for (std::uint32_t k = 0; k < in.heads; ++k) {
        const IntMatrix part = matmul(in.a_heads[k], columns(in.b, k * dh, dh));
        for (std::size_t i = 0; i < part.rows(); ++i)
          for (std::size_t c = 0; c < dh; ++c) ctx(i, k * dh + c) = part(i, c);
      }
      out.values = quantize_matrix(ctx, in.quant);
      break;
    }
  }
  return out;
}

std::vector<std::int16_t> layernorm_q88(std::span<const std::int32_t> x,
                                        std::span<const std::int16_t> gain_raw,
                                        std::span<const std::int16_t> bias_raw) {
  need(!x.empty(), "layernorm_q88: empty row");
  need(gain_raw.size() == x.size() && bias_raw.size() == x.size(), "layernorm_q88: parameter length");
  const i128 n = static_cast<i128>(x.size());
  i128 sum = 0;
  for (auto v : x) sum += v;
  const i128 mean_q8 = div_round_half_up(sum * 256, n);
  i128 sq = 0;
  for (auto v : x) {
    const i128 diff = static_cast<i128>(v) * 256 - mean_q8;
    sq += diff * diff;
  }
  const i128 var_q16 = floor_div(sq, n) + 256;
  const std::uint64_t std_q16 = isqrt_bits(static_cast<u128>(var_q16) << 16);
  std::vector<std::int16_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const i128 diff = static_cast<i128>(x[i]) * 256 - mean_q8;
    const std::int16_t norm = sat16(div_round_half_up(diff * 65536, static_cast<i128>(std_q16)));
    const i128 scaled = div_round_half_up(static_cast<i128>(gain_raw[i]) * norm, 256);
    out[i] = sat16(scaled + bias_raw[i]);
  }
  return out;
}

std::vector<double> layernorm_real(std::span<const std::int32_t> x, std::span<const double> gain,
                                   std::span<const double> bias, double eps) {
  need(!x.empty(), "layernorm_real: empty row");
  double mean = 0.0;
  for (auto v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (auto v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gain[i] * (x[i] - mean) * inv + bias[i];
  return out;
}

LayerResult encoder_layer(const IntMatrix& x, const LayerParams& p, const ModelConfig& cfg,
                          std::span<const double> lambdas, std::uint32_t lambda_rows,
                          const AttentionMask& mask) {
  need(x.rows() == cfg.l && x.cols() == cfg.d, "encoder_layer: input shape");
  auto linear = [&](ModeTag tag, const IntMatrix& a, const IntMatrix& w, const QuantParams& q) {
    ModeInputs in;
    in.tag = tag;
    in.a = a;
    in.b = w;
    in.quant = q;
    return reference_mode_pipeline(in).values;
  };
  const IntMatrix q = linear(ModeTag::M1_QKV, x, p.wq, p.q_q);
  const IntMatrix k = linear(ModeTag::M1_QKV, x, p.wk, p.q_k);
  const IntMatrix v = linear(ModeTag::M1_QKV, x, p.wv, p.q_v);

  LayerResult res;
  ModeInputs m2;
  m2.tag = ModeTag::M2_AttnScore;
  m2.heads = cfg.h;
  m2.a = q;
  m2.b = k;
  m2.lambdas.assign(lambdas.begin(), lambdas.end());
  m2.lambda_rows = lambda_rows;
  m2.mask = mask;
  res.attention = reference_mode_pipeline(m2).head_maps;

  ModeInputs m3;
  m3.tag = ModeTag::M3_Context;
  m3.heads = cfg.h;
  m3.a_heads = res.attention;
  m3.b = v;
  m3.quant = p.q_ctx;
  const IntMatrix ctx = reference_mode_pipeline(m3).values;

  res.attention_out = matmul(ctx, p.wo);
  const IntMatrix s1 = add(res.attention_out, x);

  IntMatrix h1(cfg.l, cfg.d);
  for (std::size_t i = 0; i < cfg.l; ++i) {
    const auto ln = layernorm_q88(s1.row(i), p.ln1_gain, p.ln1_bias);
    for (std::size_t j = 0; j < cfg.d; ++j) h1(i, j) = quantize_two_step(ln[j], p.q_ln1, j);
  }

  const IntMatrix hidden = linear(ModeTag::F1_FFN1, h1, p.y, p.q_ffn1);
  res.ffn_out = matmul(hidden, p.z);
  const IntMatrix s2 = add(res.ffn_out, h1);

  res.hidden = IntMatrix(cfg.l, cfg.d);
  res.logits = IntMatrix(cfg.l, cfg.d);
  for (std::size_t i = 0; i < cfg.l; ++i) {
    const auto ln = layernorm_q88(s2.row(i), p.ln2_gain, p.ln2_bias);
    for (std::size_t j = 0; j < cfg.d; ++j) {
      res.logits(i, j) = ln[j];
      res.hidden(i, j) = quantize_two_step(ln[j], p.q_ln2, j);
    }
  }
  return res;
}

}  // namespace cobra::reference
