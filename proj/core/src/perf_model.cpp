// SPDX-License-Identifier: Apache-2.0
#include "cobra/perf_model.hpp"

#include <iomanip>
#include <sstream>

#include "cobra/error.hpp"

namespace cobra {
namespace {

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

constexpr std::size_t idx(ModeTag t) { return static_cast<std::size_t>(t); }

void check_dims(const ModelConfig& cfg) {
  if (cfg.d == 0 || cfg.h == 0 || cfg.l == 0 || cfg.ff_size == 0 || cfg.n_pe == 0 || cfg.num_layers == 0)
    throw DimensionError("invocation_counts: every dimension must be positive");
  if (cfg.d % cfg.h != 0 || cfg.ff_size % cfg.d != 0)
    throw DimensionError("invocation_counts: d must divide by h and FF_size by d");
}

}  // namespace

const char* to_string(Schedule s) noexcept { return s == Schedule::Serial ? "serial" : "pipelined"; }

Schedule parse_schedule(std::string_view s) {
  if (s == "pipelined") return Schedule::Pipelined;
  if (s == "serial") return Schedule::Serial;
  throw FormatError("unknown schedule '" + std::string(s) + "' (expected pipelined or serial)");
}

std::uint64_t InvocationCounts::total_invocations() const noexcept {
  std::uint64_t t = 0;
  for (auto v : invocations) t += v;
  return t;
}

std::uint64_t InvocationCounts::total_executions() const noexcept {
  std::uint64_t t = 0;
  for (auto v : executions) t += v;
  return t;
}

InvocationCounts invocation_counts(const ModelConfig& cfg) {
  check_dims(cfg);
  const std::uint64_t l = cfg.l, d = cfg.d, h = cfg.h, n = cfg.n_pe, r = cfg.ffn_blocks();
  InvocationCounts c;
  c.invocations[idx(ModeTag::M1_QKV)] = 3 * l * ceil_div(d, n);
  c.invocations[idx(ModeTag::M2_AttnScore)] = l * ceil_div(l, n);
  c.invocations[idx(ModeTag::M3_Context)] = h * l * ceil_div(cfg.head_dim(), n);
  c.invocations[idx(ModeTag::M4_Linear)] = l * ceil_div(d, n);
  c.invocations[idx(ModeTag::F1_FFN1)] = r * l * ceil_div(d, n);
  c.invocations[idx(ModeTag::F2_FFN2)] = r * l * ceil_div(d, n);
  c.executions[idx(ModeTag::M1_QKV)] = 3;
  c.executions[idx(ModeTag::M2_AttnScore)] = 1;
  c.executions[idx(ModeTag::M3_Context)] = h;
  c.executions[idx(ModeTag::M4_Linear)] = 1;
  c.executions[idx(ModeTag::F1_FFN1)] = r;
  c.executions[idx(ModeTag::F2_FFN2)] = r;
  return c;
}

InvocationCounts invocation_counts_per_head_m2(const ModelConfig& cfg) {
  InvocationCounts c = invocation_counts(cfg);
  c.invocations[idx(ModeTag::M2_AttnScore)] *= cfg.h;
  c.executions[idx(ModeTag::M2_AttnScore)] = cfg.h;
  return c;
}

std::uint64_t layer_operations(const ModelConfig& cfg) {
  check_dims(cfg);
  const std::uint64_t l = cfg.l, d = cfg.d, ff = cfg.ff_size;
  const std::uint64_t macs = 3 * l * d * d   // Q, K, V
                             + l * l * d     // scores, all heads
                             + l * l * d     // context, all heads
                             + l * d * d     // output projection
                             + 2 * l * d * ff;  // two FFN products
  return 2 * macs;
}

PerfReport estimate_throughput(const ModelConfig& cfg, const PerfConfig& perf) {
  if (!(perf.clock_hz > 0)) throw DomainError("estimate_throughput: clock must be positive");
  if (perf.fill_latency == 0) throw DomainError("estimate_throughput: fill latency must be positive");
  PerfReport r;
  r.config = cfg;
  r.perf = perf;
  r.per_layer = invocation_counts(cfg);
  r.layer_invocations = r.per_layer.total_invocations();
  r.model_invocations = r.layer_invocations * cfg.num_layers;
  r.layer_cycles = perf.schedule == Schedule::Pipelined
                       ? r.layer_invocations + r.per_layer.total_executions() * perf.fill_latency
                       : r.layer_invocations * perf.fill_latency;
  r.model_cycles = r.layer_cycles * cfg.num_layers;
  r.model_gop = static_cast<double>(layer_operations(cfg)) * cfg.num_layers / 1e9;
  r.latency_s = static_cast<double>(r.model_cycles) / perf.clock_hz;
  r.gops = r.model_gop / r.latency_s;
  return r;
}

std::string PerfReport::to_key_value() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "d=" << config.d << "\nh=" << config.h << "\nl=" << config.l << "\nff_size=" << config.ff_size
     << "\nlayers=" << config.num_layers << "\nn_pe=" << config.n_pe << "\nclock_hz=" << perf.clock_hz
     << "\nfill_latency=" << perf.fill_latency << "\nschedule=" << to_string(perf.schedule) << '\n';
  for (std::size_t m = 0; m < kModeCount; ++m) {
    const char* name = to_string(static_cast<ModeTag>(m));
    os << "invocations." << name << '=' << per_layer.invocations[m] << '\n';
    os << "executions." << name << '=' << per_layer.executions[m] << '\n';
  }
  os << "layer_invocations=" << layer_invocations << "\nmodel_invocations=" << model_invocations
     << "\nlayer_cycles=" << layer_cycles << "\nmodel_cycles=" << model_cycles
     << "\nmodel_gop=" << model_gop << "\nlatency_s=" << latency_s << "\ngops=" << gops
     << "\nop_convention=2 ops per MAC over nominal matmul dimensions; not comparable to hardware figures\n";
  return os.str();
}

std::string PerfReport::to_table() const {
  std::ostringstream os;
  os << "mode\tinvocations_per_layer\texecutions_per_layer\n";
  for (std::size_t m = 0; m < kModeCount; ++m)
    os << to_string(static_cast<ModeTag>(m)) << '\t' << per_layer.invocations[m] << '\t'
       << per_layer.executions[m] << '\n';
  os << "total\t" << layer_invocations << '\t' << per_layer.total_executions() << '\n';
  return os.str();
}

}  // namespace cobra
