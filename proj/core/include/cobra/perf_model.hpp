// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "cobra/config.hpp"
#include "cobra/rbmm.hpp"

namespace cobra {

enum class Schedule : std::uint8_t { Pipelined, Serial };
const char* to_string(Schedule s) noexcept;
/// Accepts "pipelined" or "serial". Throws FormatError otherwise.
Schedule parse_schedule(std::string_view s);

/// Engine invocations and executions (pipeline fills) of one encoder layer,
/// indexed by ModeTag.
struct InvocationCounts {
  std::array<std::uint64_t, kModeCount> invocations{};
  std::array<std::uint64_t, kModeCount> executions{};

  std::uint64_t total_invocations() const noexcept;
  std::uint64_t total_executions() const noexcept;
};

/// Closed-form counts with heads concatenated per M2 result (the default
/// dataflow). Throws DimensionError on zero dimensions.
InvocationCounts invocation_counts(const ModelConfig& cfg);

/// Same, with M2 evaluated head by head: h * l * ceil(l / N_pe) invocations.
InvocationCounts invocation_counts_per_head_m2(const ModelConfig& cfg);

/// Equivalent operation count of one layer: 2 ops per multiply-accumulate
/// over the nominal matrix-product dimensions.
std::uint64_t layer_operations(const ModelConfig& cfg);

struct PerfConfig {
  double clock_hz = 300e6;
  std::uint32_t fill_latency = 8;  ///< engine stage depth in cycles
  Schedule schedule = Schedule::Pipelined;
};

struct PerfReport {
  ModelConfig config;
  PerfConfig perf;
  InvocationCounts per_layer;
  std::uint64_t layer_invocations = 0;
  std::uint64_t model_invocations = 0;
  std::uint64_t layer_cycles = 0;
  std::uint64_t model_cycles = 0;
  double model_gop = 0.0;
  double latency_s = 0.0;
  double gops = 0.0;

  /// key=value lines, one per field.
  std::string to_key_value() const;
  /// Per-mode table with a header row, tab separated.
  std::string to_table() const;
};

/// Pipelined: invocations + fills * fill_latency (II = 1).
/// Serial: every invocation waits for the full pipeline, invocations * fill_latency.
/// Throws DomainError for a non-positive clock or zero fill latency.
PerfReport estimate_throughput(const ModelConfig& cfg, const PerfConfig& perf = {});

}  // namespace cobra
