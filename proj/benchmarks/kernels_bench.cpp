// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "cobra/cobra.hpp"

namespace {

using namespace cobra;

void BM_Rbvm768(benchmark::State& state) {
  const auto path = static_cast<PopcountPath>(state.range(0));
  synthetic::Rng rng(1);
  const BitMatrix a = synthetic::random_bits(1, 768, Scheme::SignedPM1, rng);
  const BitMatrix b = synthetic::random_bits(1, 768, Scheme::SignedPM1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(rbvm(a.row(0), b.row(0), Scheme::SignedPM1, std::nullopt, path));
  state.SetLabel(to_string(path));
}
BENCHMARK(BM_Rbvm768)->Arg(0)->Arg(1);

void BM_PopcountWords(benchmark::State& state) {
  const auto path = static_cast<PopcountPath>(state.range(0));
  synthetic::Rng rng(2);
  std::vector<std::uint64_t> words(4096);
  for (auto& w : words) w = rng();
  for (auto _ : state) benchmark::DoNotOptimize(popcount_words(words, path));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * 4096 * 8);
  state.SetLabel(to_string(path));
}
BENCHMARK(BM_PopcountWords)->Arg(0)->Arg(1);

void BM_M4Packed(benchmark::State& state) {
  const auto l = static_cast<std::uint32_t>(state.range(0));
  const auto d = static_cast<std::uint32_t>(state.range(1));
  synthetic::Rng rng(3);
  const BitMatrix a = synthetic::random_bits(l, d, Scheme::SignedPM1, rng);
  const BitMatrix w = synthetic::random_bits(d, d, Scheme::SignedPM1, rng);
  const RbmmMode mode = RbmmMode::make(ModeTag::M4_Linear, ModelConfig{d, 1, l, d, 1, 1});
  RbmmInputs in;
  in.a = &a;
  in.b = &w;
  for (auto _ : state) benchmark::DoNotOptimize(rbmm_execute(mode, in));
  state.counters["MACs/s"] = benchmark::Counter(static_cast<double>(l) * d * d, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_M4Packed)->Args({128, 256})->Args({512, 768})->Unit(benchmark::kMillisecond);

void BM_M4Unpacked(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  synthetic::Rng rng(3);
  const IntMatrix a = synthetic::random_pm1(l, d, rng);
  const IntMatrix w = synthetic::random_pm1(d, d, rng);
  for (auto _ : state) benchmark::DoNotOptimize(reference::matmul(a, w));
  state.counters["MACs/s"] = benchmark::Counter(static_cast<double>(l) * d * d, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_M4Unpacked)->Args({128, 256})->Unit(benchmark::kMillisecond);

void BM_EncoderLayer(benchmark::State& state) {
  ModelConfig cfg = state.range(0) == 0 ? ModelConfig{128, 4, 64, 512, 1, 16} : ModelConfig::bert_base();
  cfg.num_layers = 1;
  synthetic::Rng rng(4);
  const LayerWeights w = io::pack_layer(synthetic::random_layer(cfg, rng), cfg);
  const io::InputTensor input = synthetic::random_input(cfg, 5);
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerHead, 1, cfg.h, cfg.l, cfg.head_dim(), 0.5);
  const AttentionThresholds at = th.for_layer(0);
  ForwardOptions fo;
  fo.engine.n_pe = cfg.n_pe;
  for (auto _ : state) benchmark::DoNotOptimize(encoder_layer_forward(input.hidden, w, cfg, at, {}, fo));
  state.SetLabel(state.range(0) == 0 ? "mid" : "bert_base");
}
BENCHMARK(BM_EncoderLayer)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ThresholdSearch(benchmark::State& state) {
  const CalibrationSet calib = synthetic::random_calibration(1, 4, 64, 32, 4, 6);
  for (auto _ : state) benchmark::DoNotOptimize(search_thresholds(calib, Granularity::PerRow));
}
BENCHMARK(BM_ThresholdSearch)->Unit(benchmark::kMillisecond);

void BM_LayerNormFixed(benchmark::State& state) {
  synthetic::Rng rng(7);
  std::vector<std::int32_t> x(768);
  for (auto& v : x) v = static_cast<std::int32_t>(synthetic::uniform(rng, -800, 800));
  const std::vector<FixedPoint16> g(768, FixedPoint16::from_double(1.0)), b(768);
  for (auto _ : state) benchmark::DoNotOptimize(layernorm_fixed(x, g, b));
}
BENCHMARK(BM_LayerNormFixed);

}  // namespace

BENCHMARK_MAIN();
