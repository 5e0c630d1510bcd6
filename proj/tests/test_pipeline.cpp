// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "cobra/error.hpp"
#include "cobra/io.hpp"
#include "cobra/pipeline.hpp"
#include "cobra/reference.hpp"
#include "cobra/synthetic.hpp"

namespace cobra {
namespace {

std::vector<FixedPoint16> fill(std::size_t n, double v) {
  return std::vector<FixedPoint16>(n, FixedPoint16::from_double(v));
}

TEST(FixedPoint, ConversionsSaturateAndRound) {
  EXPECT_EQ(FixedPoint16::from_double(1.0).raw, 256);
  EXPECT_EQ(FixedPoint16::from_double(-0.5).raw, -128);
  EXPECT_EQ(FixedPoint16::from_double(1000.0).raw, 32767);
  EXPECT_EQ(FixedPoint16::from_double(-1000.0).raw, -32768);
  EXPECT_EQ(FixedPoint16::from_double(1.0 / 512).raw, 1);
  EXPECT_EQ(FixedPoint16::saturate(40000).raw, 32767);
  EXPECT_DOUBLE_EQ(FixedPoint16{384}.to_double(), 1.5);
}

TEST(LayerNormFixed, ConstantRowGivesBias) {
  const std::vector<std::int32_t> x(16, -7);
  const auto y = layernorm_fixed(x, fill(16, 1.0), fill(16, 0.25));
  for (auto v : y) EXPECT_EQ(v.raw, 64);
}

TEST(LayerNormFixed, SymmetricPair) {
  const std::vector<std::int32_t> x{-1, 1};
  const auto y = layernorm_fixed(x, fill(2, 1.0), fill(2, 0.0));
  EXPECT_NEAR(y[0].to_double(), -1.0, 1.0 / 128);
  EXPECT_NEAR(y[1].to_double(), 1.0, 1.0 / 128);
}

TEST(LayerNormFixed, CloseToRealLayerNorm) {
  synthetic::Rng rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(synthetic::uniform(rng, 2, 96));
    std::vector<std::int32_t> x(n);
    for (auto& v : x) v = static_cast<std::int32_t>(synthetic::uniform(rng, -60, 60));
    const auto y = layernorm_fixed(x, fill(n, 1.0), fill(n, 0.0));
    const std::vector<double> g(n, 1.0), b(n, 0.0);
    const auto want = reference::layernorm_real(x, g, b, 1.0 / 256);
    for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(y[i].to_double(), want[i], 1.0 / 128) << "trial " << trial;
  }
}

TEST(LayerNormFixed, EqualsIndependentOracle) {
  synthetic::Rng rng(72);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = static_cast<std::size_t>(synthetic::uniform(rng, 1, 64));
    std::vector<std::int32_t> x(n);
    std::vector<FixedPoint16> g(n), b(n);
    std::vector<std::int16_t> gr(n), br(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<std::int32_t>(synthetic::uniform(rng, -3000, 3000));
      gr[i] = static_cast<std::int16_t>(synthetic::uniform(rng, -32768, 32767));
      br[i] = static_cast<std::int16_t>(synthetic::uniform(rng, -32768, 32767));
      g[i].raw = gr[i];
      b[i].raw = br[i];
    }
    const auto got = layernorm_fixed(x, g, b);
    const auto want = reference::layernorm_q88(x, gr, br);
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(got[i].raw, want[i]) << "trial " << trial << " i " << i;
  }
}

TEST(LayerNormFixed, ShapeErrors) {
  const std::vector<std::int32_t> x(4, 1);
  EXPECT_THROW(layernorm_fixed({}, {}, {}), DimensionError);
  EXPECT_THROW(layernorm_fixed(x, fill(3, 1.0), fill(4, 0.0)), DimensionError);
}

TEST(Staging, RoundTripPreservesValues) {
  synthetic::Rng rng(73);
  IntMatrix m(5, 9);
  for (auto& v : m.data()) v = static_cast<std::int32_t>(synthetic::uniform(rng, -100000, 100000));
  StagingArea s;
  EXPECT_EQ(s.round_trip(m), m);
  EXPECT_EQ(s.bytes_staged(), 5U * 9U * 4U);
}

struct Toy {
  ModelConfig cfg{16, 2, 8, 32, 1, 4};
  io::RawModel raw;
  io::WeightFile packed;
  io::InputTensor input;

  explicit Toy(std::uint32_t layers = 1, std::uint64_t seed = 74, bool padded = false) {
    cfg.num_layers = layers;
    raw = synthetic::random_model(cfg, seed);
    packed = io::pack_model(raw);
    input = synthetic::random_input(cfg, seed + 1, padded);
  }
};

std::vector<double> lambdas_for(const ModelConfig& cfg, std::uint64_t seed) {
  synthetic::Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(cfg.num_layers) * cfg.h);
  for (auto& x : v) x = static_cast<double>(synthetic::uniform(rng, 0, 20)) * 0.05;
  return v;
}

TEST(EncoderLayer, ToyMatchesOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Toy t(1, 200 + s);
    const auto lambdas = lambdas_for(t.cfg, s);
    const SpsThresholds th(Granularity::PerHead, 1, t.cfg.h, t.cfg.l, t.cfg.head_dim(), lambdas);
    LayerTrace trace;
    const LayerOutput got = encoder_layer_forward(t.input.hidden, t.packed.layers[0], t.cfg, th.for_layer(0), t.input.mask,
                                                  {}, nullptr, &trace);
    const auto want = reference::encoder_layer(unpack_matrix(t.input.hidden), t.raw.layers[0], t.cfg, lambdas, 1, t.input.mask);
    EXPECT_EQ(unpack_matrix(got.hidden), want.hidden);
    EXPECT_EQ(got.logits, want.logits);
    EXPECT_EQ(trace.attention_out, want.attention_out);
    EXPECT_EQ(trace.ffn_out, want.ffn_out);
    ASSERT_EQ(trace.attention.head_maps.size(), want.attention.size());
    for (std::size_t k = 0; k < want.attention.size(); ++k)
      EXPECT_EQ(unpack_matrix(trace.attention.head_maps[k]), want.attention[k]);
    EXPECT_EQ(trace.ffn_workspace.buffers_allocated, 2U);
  }
}

TEST(EncoderLayer, CausalMaskZeroesUpperTriangle) {
  Toy t;
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerHead, 1, t.cfg.h, t.cfg.l, t.cfg.head_dim(), 0.0);
  LayerTrace trace;
  encoder_layer_forward(t.input.hidden, t.packed.layers[0], t.cfg, th.for_layer(0), AttentionMask::causal(t.cfg.l), {},
                        nullptr, &trace);
  for (const auto& map : trace.attention.head_maps)
    for (std::size_t i = 0; i < t.cfg.l; ++i)
      for (std::size_t j = i + 1; j < t.cfg.l; ++j) EXPECT_FALSE(map.bit(i, j));
}

TEST(EncoderLayer, Deterministic) {
  Toy t;
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerHead, 1, t.cfg.h, t.cfg.l, t.cfg.head_dim(), 0.3);
  const auto a = encoder_layer_forward(t.input.hidden, t.packed.layers[0], t.cfg, th.for_layer(0));
  const auto b = encoder_layer_forward(t.input.hidden, t.packed.layers[0], t.cfg, th.for_layer(0));
  EXPECT_EQ(a.hidden, b.hidden);
  EXPECT_EQ(a.logits, b.logits);
}

TEST(EncoderLayer, SpillEmulationIsTransparent) {
  Toy t(2, 75, true);
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerRow, 2, t.cfg.h, t.cfg.l, t.cfg.head_dim(), 0.2);
  ForwardOptions spill;
  spill.spill_emulation = true;
  LayerTrace trace;
  const auto a = encoder_layer_forward(t.input.hidden, t.packed.layers[0], t.cfg, th.for_layer(0), t.input.mask);
  const auto b = encoder_layer_forward(t.input.hidden, t.packed.layers[0], t.cfg, th.for_layer(0), t.input.mask, spill,
                                       nullptr, &trace);
  EXPECT_EQ(a.hidden, b.hidden);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_GT(trace.staged_bytes, 0U);
}

TEST(EncoderLayer, WeightShapeIsValidated) {
  Toy t;
  LayerWeights w = t.packed.layers[0];
  w.y_blocks.pop_back();
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerHead, 1, t.cfg.h, t.cfg.l, t.cfg.head_dim(), 0.0);
  EXPECT_THROW(encoder_layer_forward(t.input.hidden, w, t.cfg, th.for_layer(0)), DimensionError);
  const BitMatrix wrong(t.cfg.l + 1, t.cfg.d, Scheme::SignedPM1);
  EXPECT_THROW(encoder_layer_forward(wrong, t.packed.layers[0], t.cfg, th.for_layer(0)), DimensionError);
}

TEST(Model, SingleLayerEqualsLayerForward) {
  Toy t;
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerLayer, 1, t.cfg.h, t.cfg.l, t.cfg.head_dim(), 0.1);
  const auto a = model_forward(t.input.hidden, t.packed.layers, t.cfg, th);
  const auto b = encoder_layer_forward(t.input.hidden, t.packed.layers[0], t.cfg, th.for_layer(0));
  EXPECT_EQ(a.hidden, b.hidden);
  EXPECT_EQ(a.logits, b.logits);
}

TEST(Model, TwoLayersMatchOracleComposition) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Toy t(2, 300 + s);
    const auto lambdas = lambdas_for(t.cfg, s + 7);
    const SpsThresholds th(Granularity::PerHead, 2, t.cfg.h, t.cfg.l, t.cfg.head_dim(), lambdas);
    const auto got = model_forward(t.input.hidden, t.packed.layers, t.cfg, th, t.input.mask);
    IntMatrix x = unpack_matrix(t.input.hidden);
    reference::LayerResult want;
    for (std::uint32_t layer = 0; layer < 2; ++layer) {
      const auto at = th.for_layer(layer);
      want = reference::encoder_layer(x, t.raw.layers[layer], t.cfg, at.lambda, at.rows, t.input.mask);
      x = want.hidden;
    }
    EXPECT_EQ(unpack_matrix(got.hidden), want.hidden);
    EXPECT_EQ(got.logits, want.logits);
  }
}

TEST(Model, LayerAndThresholdCountsAreChecked) {
  Toy t(2);
  const SpsThresholds one = SpsThresholds::uniform(Granularity::PerHead, 1, t.cfg.h, t.cfg.l, t.cfg.head_dim(), 0.0);
  EXPECT_THROW(model_forward(t.input.hidden, t.packed.layers, t.cfg, one), DimensionError);
  const SpsThresholds two = SpsThresholds::uniform(Granularity::PerHead, 2, t.cfg.h, t.cfg.l, t.cfg.head_dim(), 0.0);
  const std::span<const LayerWeights> first(t.packed.layers.data(), 1);
  EXPECT_THROW(model_forward(t.input.hidden, first, t.cfg, two), DimensionError);
}

TEST(Model, BertBaseLayerShapes) {
  ModelConfig cfg = ModelConfig::bert_base();
  cfg.num_layers = 1;
  synthetic::Rng rng(76);
  const std::vector<LayerWeights> layers{io::pack_layer(synthetic::random_layer(cfg, rng), cfg)};
  const io::InputTensor input = synthetic::random_input(cfg, 77);
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerHead, 1, cfg.h, cfg.l, cfg.head_dim(), 0.5);
  ForwardOptions fo;
  fo.engine.n_pe = cfg.n_pe;
  const auto out = model_forward(input.hidden, layers, cfg, th, {}, fo);
  EXPECT_EQ(out.hidden.rows(), 512U);
  EXPECT_EQ(out.hidden.cols(), 768U);
  EXPECT_EQ(out.logits.rows(), 512U);
  EXPECT_EQ(out.logits.cols(), 768U);
}

TEST(BinaryEncoder, AccumulatesCounters) {
  Toy t(2);
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerHead, 2, t.cfg.h, t.cfg.l, t.cfg.head_dim(), 0.2);
  BinaryEncoder enc(t.cfg, t.packed.layers, th);
  const auto a = enc.forward(t.input.hidden, t.input.mask);
  const auto once = enc.counters().total_invocations();
  EXPECT_GT(once, 0U);
  const auto b = enc.forward(t.input.hidden, t.input.mask);
  EXPECT_EQ(enc.counters().total_invocations(), 2 * once);
  EXPECT_EQ(a.logits, b.logits);
  enc.reset_counters();
  EXPECT_EQ(enc.counters().total_invocations(), 0U);
}

TEST(BinaryEncoder, RejectsMismatchedModel) {
  Toy t(2);
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerHead, 1, t.cfg.h, t.cfg.l, t.cfg.head_dim(), 0.2);
  EXPECT_THROW(BinaryEncoder(t.cfg, t.packed.layers, th), DimensionError);
}

}  // namespace
}  // namespace cobra
