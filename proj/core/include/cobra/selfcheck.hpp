// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cobra/bitpack.hpp"
#include "cobra/config.hpp"
#include "cobra/popcount.hpp"
#include "cobra/rbmm.hpp"
#include "cobra/reference.hpp"
#include "cobra/sps.hpp"

/// Property suites that compare the packed engine against the reference
/// oracle. Each randomized case draws from its own seed so a failure can be
/// replayed from the reported counterexample seed alone.
namespace cobra::selfcheck {

struct CheckResult {
  std::string name;
  bool passed = true;
  std::uint64_t cases = 0;
  std::optional<std::uint64_t> counterexample_seed;
  std::string detail;
  double seconds = 0.0;
};

/// Seed of case `index` in a suite seeded with `seed`.
std::uint64_t case_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// One random mode execution with matching packed and unpacked operands.
struct ModeCase {
  ModeTag tag = ModeTag::M1_QKV;
  std::uint64_t seed = 0;
  ModelConfig cfg;
  reference::ModeInputs oracle;
  BitMatrix a;
  std::vector<BitMatrix> a_heads;
  BitMatrix b;  ///< column datapacks (V^T for M3)
  DcReturn dc_in;
  ThetaVector theta;
  AttentionThresholds sps;
  IntMatrix accumulator;
};

/// Dimensions drawn with d <= max_d and l <= max_l.
ModeCase random_mode_case(ModeTag tag, std::uint64_t seed, std::uint32_t max_d = 32,
                          std::uint32_t max_l = 16);

/// Runs the engine on `c` and compares every output bit or integer, and the
/// DC RETURN counts, with the oracle. Returns a description of the first
/// difference, or nothing when they agree.
std::optional<std::string> compare_mode_case(const ModeCase& c, const EngineOptions& opts = {},
                                             EngineCounters* counters = nullptr);

CheckResult check_rbvm_exhaustive(std::uint32_t max_bits, PopcountPath path = PopcountPath::Native);
CheckResult check_rbvm_random(std::uint64_t cases, std::size_t nbits, std::uint64_t seed,
                              PopcountPath path = PopcountPath::Native);
CheckResult check_split(std::uint64_t cases, std::uint64_t seed);
CheckResult check_popcount(std::uint64_t random_cases, std::uint64_t seed);
CheckResult check_quant_fusion(std::int32_t c_range, std::uint64_t param_sets, std::uint64_t seed);
CheckResult check_mode(ModeTag tag, std::uint64_t cases, std::uint64_t seed, const EngineOptions& opts = {});
/// Decomposed FFN against the monolithic route and the oracle, for each R in
/// `blocks`; also requires exactly two working buffers.
CheckResult check_ffn(const std::vector<std::uint32_t>& blocks, std::uint64_t cases_per_r, std::uint64_t seed,
                      const EngineOptions& opts = {});
/// Threshold search against an exhaustive per-unit grid evaluation over the
/// real-valued scores, for every granularity.
CheckResult check_sps_search(std::uint64_t sets, std::uint64_t seed);
/// Multi-layer packed model against the oracle layer composition.
CheckResult check_encoder(std::uint64_t cases, std::uint64_t seed, const EngineOptions& opts = {});
/// Closed-form invocation and execution counts against live engine counters
/// over one forward pass of `cfg` (random weights shared by every layer).
CheckResult check_perf_counts(const ModelConfig& cfg, std::uint64_t seed);

/// Wall-clock comparison of the packed M4 product against the unpacked
/// integer oracle on an l x d by d x d problem. Times are the best of `reps`.
struct SpeedupResult {
  double packed_seconds = 0.0;
  double oracle_seconds = 0.0;
  double speedup = 0.0;
  bool outputs_equal = false;
};
SpeedupResult measure_packed_speedup(std::uint32_t l, std::uint32_t d, std::uint64_t seed, int reps = 3);

/// Seconds to count `words` random words through each popcount path.
struct PopcountTiming {
  double native_seconds = 0.0;
  double compressor_seconds = 0.0;
  bool counts_equal = false;
};
PopcountTiming measure_popcount_paths(std::size_t words, std::uint64_t seed);

enum class Scale { Quick, Full };
const char* to_string(Scale s) noexcept;
/// Accepts "quick" or "full". Throws FormatError otherwise.
Scale parse_scale(std::string_view s);

struct VerifyOptions {
  Scale scale = Scale::Quick;
  std::uint64_t seed = 1;
  EngineOptions engine;
};

std::vector<CheckResult> run_verify(const VerifyOptions& opts);
/// One "PASS|FAIL name cases=N [seed=S] detail" line per result.
std::string format_report(const std::vector<CheckResult>& results);

}  // namespace cobra::selfcheck
