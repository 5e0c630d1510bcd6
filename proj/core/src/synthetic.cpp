// SPDX-License-Identifier: Apache-2.0
#include "cobra/synthetic.hpp"

#include <algorithm>
#include <numeric>

#include "cobra/error.hpp"

namespace cobra::synthetic {

std::int64_t uniform(Rng& rng, std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw DomainError("uniform: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(rng());
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % span);
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return lo + static_cast<std::int64_t>(x % span);
}

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

IntMatrix random_pm1(std::size_t rows, std::size_t cols, Rng& rng) {
  IntMatrix m(rows, cols);
  for (auto& v : m.data()) v = (rng() & 1U) ? 1 : -1;
  return m;
}

IntMatrix random_01(std::size_t rows, std::size_t cols, Rng& rng) {
  IntMatrix m(rows, cols);
  for (auto& v : m.data()) v = static_cast<std::int32_t>(rng() & 1U);
  return m;
}

BitMatrix random_bits(std::size_t rows, std::size_t cols, Scheme scheme, Rng& rng) {
  BitMatrix m(rows, cols, scheme);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m.set_bit(r, c, rng() & 1U);
  return m;
}

namespace {

QuantParams signed_quant(std::size_t n, std::int64_t spread, Rng& rng) {
  QuantParams q;
  q.scheme = Scheme::SignedPM1;
  q.alpha = static_cast<std::uint32_t>(uniform(rng, 1, 4));
  q.beta.resize(n);
  for (auto& b : q.beta) b = static_cast<std::int32_t>(uniform(rng, -spread, spread));
  return q;
}

std::vector<std::int16_t> random_i16(std::size_t n, std::int64_t lo, std::int64_t hi, Rng& rng) {
  std::vector<std::int16_t> v(n);
  for (auto& x : v) x = static_cast<std::int16_t>(uniform(rng, lo, hi));
  return v;
}

}  // namespace

reference::LayerParams random_layer(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  reference::LayerParams p;
  p.wq = random_pm1(cfg.d, cfg.d, rng);
  p.wk = random_pm1(cfg.d, cfg.d, rng);
  p.wv = random_pm1(cfg.d, cfg.d, rng);
  p.wo = random_pm1(cfg.d, cfg.d, rng);
  p.y = random_pm1(cfg.d, cfg.ff_size, rng);
  p.z = random_pm1(cfg.ff_size, cfg.d, rng);
  p.q_q = signed_quant(cfg.d, 2, rng);
  p.q_k = signed_quant(cfg.d, 2, rng);
  p.q_v = signed_quant(cfg.d, 2, rng);
  p.q_ctx = signed_quant(cfg.d, 1, rng);
  p.q_ffn1.scheme = Scheme::Unsigned01;
  p.q_ffn1.relu_fused = true;
  p.q_ffn1.alpha = static_cast<std::uint32_t>(uniform(rng, 1, 4));
  p.q_ffn1.beta.resize(cfg.ff_size);
  for (auto& b : p.q_ffn1.beta) b = static_cast<std::int32_t>(uniform(rng, -2, 2));
  p.q_ln1 = signed_quant(cfg.d, 32, rng);
  p.q_ln2 = signed_quant(cfg.d, 32, rng);
  p.ln1_gain = random_i16(cfg.d, 192, 320, rng);
  p.ln1_bias = random_i16(cfg.d, -32, 32, rng);
  p.ln2_gain = random_i16(cfg.d, 192, 320, rng);
  p.ln2_bias = random_i16(cfg.d, -32, 32, rng);
  return p;
}

io::RawModel random_model(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  io::RawModel m;
  m.config = cfg;
  for (std::uint32_t i = 0; i < cfg.num_layers; ++i) m.layers.push_back(random_layer(cfg, rng));
  return m;
}

io::InputTensor random_input(const ModelConfig& cfg, std::uint64_t seed, bool padded) {
  cfg.validate();
  Rng rng(seed);
  io::InputTensor t;
  t.hidden = random_bits(cfg.l, cfg.d, Scheme::SignedPM1, rng);
  if (padded) t.mask = AttentionMask::padding(cfg.l, static_cast<std::uint32_t>(uniform(rng, 1, cfg.l)));
  return t;
}

CalibrationSet random_calibration(std::uint32_t layers, std::uint32_t heads, std::uint32_t seq_len,
                                  std::uint32_t head_dim, std::uint32_t samples, std::uint64_t seed,
                                  double alpha) {
  if (alpha <= 0.0) alpha = 2.0 / seq_len;
  Rng rng(seed);
  CalibrationSet c;
  c.layers = layers;
  c.heads = heads;
  c.seq_len = seq_len;
  c.head_dim = head_dim;
  for (std::uint32_t s = 0; s < samples; ++s) {
    CalibrationSample smp;
    smp.layer = s % layers;
    for (std::uint32_t h = 0; h < heads; ++h) {
      BitMatrix q = random_bits(seq_len, head_dim, Scheme::SignedPM1, rng);
      std::vector<std::size_t> perm(seq_len);
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(uniform(rng, 0, static_cast<std::int64_t>(i) - 1))]);
      BitMatrix k(seq_len, head_dim, Scheme::SignedPM1);
      for (std::size_t j = 0; j < seq_len; ++j)
        for (std::size_t t = 0; t < head_dim; ++t)
          k.set_bit(j, t, q.bit(perm[j], t) != (uniform(rng, 0, 9) < 3));
      const IntMatrix ref = reference::bit_attention_prob(q, k, alpha);
      smp.reference.push_back(pack_matrix(ref, Scheme::Unsigned01).bits);
      smp.q.push_back(std::move(q));
      smp.k.push_back(std::move(k));
    }
    c.samples.push_back(std::move(smp));
  }
  c.validate();
  return c;
}

}  // namespace cobra::synthetic
