// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "cobra/error.hpp"
#include "cobra/perf_model.hpp"
#include "cobra/selfcheck.hpp"

namespace cobra {
namespace {

std::uint64_t inv(const InvocationCounts& c, ModeTag t) { return c.invocations[static_cast<std::size_t>(t)]; }

TEST(Perf, BertBaseQkvCount) {
  const InvocationCounts c = invocation_counts(ModelConfig::bert_base());
  EXPECT_EQ(inv(c, ModeTag::M1_QKV), 36864U);  // 3 * 512 * 768 / 32
  EXPECT_EQ(inv(c, ModeTag::M4_Linear), 12288U);
  EXPECT_EQ(inv(c, ModeTag::F1_FFN1), 4U * 12288U);
}

TEST(Perf, FullWidthEngineNeedsOneInvocationPerRow) {
  ModelConfig cfg = ModelConfig::bert_base();
  cfg.n_pe = cfg.d;
  EXPECT_EQ(inv(invocation_counts(cfg), ModeTag::M4_Linear), cfg.l);
}

TEST(Perf, PerHeadScoresMultiplyByHeads) {
  const ModelConfig cfg = ModelConfig::bert_base();
  const auto a = invocation_counts(cfg), b = invocation_counts_per_head_m2(cfg);
  EXPECT_EQ(inv(b, ModeTag::M2_AttnScore), cfg.h * inv(a, ModeTag::M2_AttnScore));
  EXPECT_EQ(inv(b, ModeTag::M1_QKV), inv(a, ModeTag::M1_QKV));
}

TEST(Perf, ClosedFormMatchesInstrumentedRun) {
  for (const ModelConfig& cfg : {ModelConfig{16, 2, 8, 32, 2, 4}, ModelConfig{24, 3, 10, 48, 1, 5},
                                 ModelConfig{32, 4, 9, 96, 2, 7}}) {
    const auto r = selfcheck::check_perf_counts(cfg, 81);
    EXPECT_TRUE(r.passed) << r.detail;
  }
}

TEST(Perf, MonotoneInSequenceLengthAndInverseInEngineWidth) {
  ModelConfig cfg = ModelConfig::bert_base();
  std::uint64_t prev = 0;
  for (std::uint32_t l : {64U, 128U, 256U, 512U}) {
    cfg.l = l;
    const auto t = invocation_counts(cfg).total_invocations();
    EXPECT_GT(t, prev);
    prev = t;
  }
  cfg = ModelConfig::bert_base();
  prev = UINT64_MAX;
  for (std::uint32_t n : {1U, 8U, 32U, 128U}) {
    cfg.n_pe = n;
    const auto t = invocation_counts(cfg).total_invocations();
    EXPECT_LT(t, prev);
    prev = t;
  }
}

TEST(Perf, SerialScheduleIsMuchSlower) {
  PerfConfig p;
  const PerfReport pipe = estimate_throughput(ModelConfig::bert_base(), p);
  p.schedule = Schedule::Serial;
  const PerfReport serial = estimate_throughput(ModelConfig::bert_base(), p);
  EXPECT_GE(serial.model_cycles, 4 * pipe.model_cycles);
  EXPECT_GT(pipe.gops, serial.gops);
}

TEST(Perf, ReportArithmetic) {
  const ModelConfig cfg = ModelConfig::bert_base();
  const PerfReport r = estimate_throughput(cfg);
  EXPECT_EQ(r.layer_invocations, r.per_layer.total_invocations());
  EXPECT_EQ(r.model_invocations, 12 * r.layer_invocations);
  EXPECT_EQ(r.layer_cycles, r.layer_invocations + r.per_layer.total_executions() * 8);
  EXPECT_EQ(r.model_cycles, 12 * r.layer_cycles);
  EXPECT_DOUBLE_EQ(r.latency_s, static_cast<double>(r.model_cycles) / 300e6);
  EXPECT_DOUBLE_EQ(r.model_gop, 12.0 * static_cast<double>(layer_operations(cfg)) / 1e9);
  EXPECT_NEAR(r.gops, r.model_gop / r.latency_s, 1e-9 * r.gops);
  EXPECT_NE(r.to_key_value().find("model_cycles="), std::string::npos);
  EXPECT_NE(r.to_table().find("M1"), std::string::npos);
}

TEST(Perf, LayerOperationsHandCount) {
  const ModelConfig cfg{16, 2, 8, 32, 1, 4};
  // QKV 3*l*d*d, scores and context 2*l*l*d, output l*d*d, FFN 2*l*d*FF, each MAC counted twice.
  EXPECT_EQ(layer_operations(cfg), 2U * (3 * 8 * 16 * 16 + 2 * 8 * 8 * 16 + 8 * 16 * 16 + 2 * 8 * 16 * 32));
}

TEST(Perf, InvalidInputs) {
  EXPECT_THROW(invocation_counts(ModelConfig{}), DimensionError);
  EXPECT_THROW(invocation_counts(ModelConfig{10, 3, 4, 20, 1, 1}), DimensionError);
  PerfConfig p;
  p.clock_hz = 0;
  EXPECT_THROW(estimate_throughput(ModelConfig::bert_base(), p), DomainError);
  p = PerfConfig{};
  p.fill_latency = 0;
  EXPECT_THROW(estimate_throughput(ModelConfig::bert_base(), p), DomainError);
  EXPECT_THROW(parse_schedule("eager"), FormatError);
  EXPECT_EQ(parse_schedule("serial"), Schedule::Serial);
}

}  // namespace
}  // namespace cobra
