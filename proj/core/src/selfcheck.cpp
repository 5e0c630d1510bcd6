// SPDX-License-Identifier: Apache-2.0
#include "cobra/selfcheck.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "cobra/error.hpp"
#include "cobra/io.hpp"
#include "cobra/perf_model.hpp"
#include "cobra/pipeline.hpp"
#include "cobra/quant.hpp"
#include "cobra/synthetic.hpp"

namespace cobra::selfcheck {
namespace {

using synthetic::Rng;
using synthetic::uniform;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Records the first failure; later ones are ignored.
void fail(CheckResult& r, std::optional<std::uint64_t> seed, const std::string& detail) {
  if (!r.passed) return;
  r.passed = false;
  r.counterexample_seed = seed;
  r.detail = detail;
}

CheckResult named(std::string name) {
  CheckResult r;
  r.name = std::move(name);
  return r;
}

// Runs one seeded case; an exception counts as that case failing.
template <typename Body>
void run_case(CheckResult& r, std::uint64_t seed, Body&& body) {
  ++r.cases;
  try {
    body();
  } catch (const std::exception& e) {
    fail(r, seed, std::string("exception: ") + e.what());
  }
}

CheckResult finish(CheckResult r, const Timer& t) {
  r.seconds = t.seconds();
  return r;
}

// Dot product of the values encoded by the low n bits of a and b.
std::int64_t dot_bits(std::uint64_t a, std::uint64_t b, std::uint32_t n, Scheme scheme_a) {
  std::int64_t s = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const int av = ((a >> i) & 1U) ? 1 : (scheme_a == Scheme::SignedPM1 ? -1 : 0);
    const int bv = ((b >> i) & 1U) ? 1 : -1;
    s += av * bv;
  }
  return s;
}

std::uint32_t zeros(std::uint64_t a, std::uint32_t n) {
  std::uint32_t z = 0;
  for (std::uint32_t i = 0; i < n; ++i) z += ((a >> i) & 1U) ? 0 : 1;
  return z;
}

std::int64_t dot_matrix_rows(const BitMatrix& a, std::size_t ra, const BitMatrix& b, std::size_t rb) {
  std::int64_t s = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += a.value(ra, c) * b.value(rb, c);
  return s;
}

std::uint32_t row_zeros(const BitMatrix& m, std::size_t r) {
  std::uint32_t z = 0;
  for (std::size_t c = 0; c < m.cols(); ++c) z += m.bit(r, c) ? 0 : 1;
  return z;
}

ModelConfig random_toy_config(Rng& rng, std::uint32_t max_d, std::uint32_t max_l, std::uint32_t blocks = 0) {
  ModelConfig cfg;
  do {
    cfg.h = static_cast<std::uint32_t>(uniform(rng, 1, 4));
    const auto dh = static_cast<std::uint32_t>(uniform(rng, 1, std::max<std::uint32_t>(1, max_d / cfg.h)));
    cfg.d = cfg.h * dh;
  } while (cfg.d > max_d);
  cfg.l = static_cast<std::uint32_t>(uniform(rng, 1, max_l));
  cfg.ff_size = cfg.d * (blocks ? blocks : static_cast<std::uint32_t>(uniform(rng, 1, 2)));
  cfg.n_pe = static_cast<std::uint32_t>(uniform(rng, 1, 8));
  cfg.validate();
  return cfg;
}

std::vector<double> random_lambdas(std::size_t n, Rng& rng) {
  const auto grid = threshold_grid(0.05);
  std::vector<double> v(n);
  for (auto& x : v) x = grid[static_cast<std::size_t>(uniform(rng, 0, static_cast<std::int64_t>(grid.size()) - 1))];
  return v;
}

AttentionMask random_mask(std::uint32_t l, Rng& rng) {
  switch (uniform(rng, 0, 2)) {
    case 0: return AttentionMask::none();
    case 1: return AttentionMask::padding(l, static_cast<std::uint32_t>(uniform(rng, 1, l)));
    default: return AttentionMask::causal(l);
  }
}

QuantParams random_quant(std::size_t n, Scheme scheme, bool relu, std::int64_t spread, Rng& rng) {
  QuantParams q;
  q.scheme = scheme;
  q.relu_fused = relu;
  q.alpha = static_cast<std::uint32_t>(uniform(rng, 1, 8));
  q.beta.resize(n);
  for (auto& b : q.beta) b = static_cast<std::int32_t>(uniform(rng, -spread, spread));
  return q;
}

IntMatrix sub_matrix(const IntMatrix& m, std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) {
  IntMatrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = m(r0 + i, c0 + j);
  return out;
}

std::string where(const char* what, std::size_t r, std::size_t c, std::int64_t got, std::int64_t want) {
  std::ostringstream os;
  os << what << " (" << r << ", " << c << "): engine " << got << ", oracle " << want;
  return os.str();
}

std::optional<std::string> compare_matrix(const char* what, const IntMatrix& got, const IntMatrix& want) {
  if (got.rows() != want.rows() || got.cols() != want.cols()) return std::string(what) + ": shape differs";
  for (std::size_t i = 0; i < got.rows(); ++i)
    for (std::size_t j = 0; j < got.cols(); ++j)
      if (got(i, j) != want(i, j)) return where(what, i, j, got(i, j), want(i, j));
  return std::nullopt;
}

std::string describe(const ModelConfig& c) {
  std::ostringstream os;
  os << "d=" << c.d << " h=" << c.h << " l=" << c.l << " ff=" << c.ff_size << " n_pe=" << c.n_pe;
  return os.str();
}

}  // namespace

std::uint64_t case_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  // splitmix64 finalizer over the pair.
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ModeCase random_mode_case(ModeTag tag, std::uint64_t seed, std::uint32_t max_d, std::uint32_t max_l) {
  Rng rng(seed);
  ModeCase c;
  c.tag = tag;
  c.seed = seed;
  c.cfg = random_toy_config(rng, max_d, max_l);
  const ModelConfig& cfg = c.cfg;
  auto& o = c.oracle;
  o.tag = tag;
  o.heads = cfg.h;
  switch (tag) {
    case ModeTag::M1_QKV:
    case ModeTag::F1_FFN1:
    case ModeTag::M4_Linear: {
      o.a = synthetic::random_pm1(cfg.l, cfg.d, rng);
      o.b = synthetic::random_pm1(cfg.d, cfg.d, rng);
      c.a = pack_matrix(o.a, Scheme::SignedPM1).bits;
      c.b = pack_columns(o.b, Scheme::SignedPM1);
      if (tag == ModeTag::M1_QKV) o.quant = random_quant(cfg.d, Scheme::SignedPM1, false, 3, rng);
      if (tag == ModeTag::F1_FFN1) o.quant = random_quant(cfg.d, Scheme::Unsigned01, uniform(rng, 0, 1) == 1, 4, rng);
      if (tag != ModeTag::M4_Linear) c.theta = compute_theta(o.quant);
      break;
    }
    case ModeTag::F2_FFN2: {
      o.a = synthetic::random_01(cfg.l, cfg.d, rng);
      o.b = synthetic::random_pm1(cfg.d, cfg.d, rng);
      o.previous = IntMatrix(cfg.l, cfg.d);
      for (auto& v : o.previous.data()) v = static_cast<std::int32_t>(uniform(rng, -100, 100));
      PackedMatrix pa = pack_matrix(o.a, Scheme::Unsigned01);
      c.a = std::move(pa.bits);
      c.dc_in.full = std::move(pa.dc);
      c.b = pack_columns(o.b, Scheme::SignedPM1);
      c.accumulator = o.previous;
      break;
    }
    case ModeTag::M2_AttnScore: {
      o.a = synthetic::random_pm1(cfg.l, cfg.d, rng);
      o.b = synthetic::random_pm1(cfg.l, cfg.d, rng);
      c.a = pack_matrix(o.a, Scheme::SignedPM1).bits;
      c.b = pack_matrix(o.b, Scheme::SignedPM1).bits;
      const bool per_row = uniform(rng, 0, 1) == 1;
      o.lambda_rows = per_row ? cfg.l : 1;
      o.lambdas = random_lambdas(std::size_t{cfg.h} * o.lambda_rows, rng);
      o.mask = random_mask(cfg.l, rng);
      c.sps = SpsThresholds(per_row ? Granularity::PerRow : Granularity::PerHead, 1, cfg.h, cfg.l,
                            cfg.head_dim(), o.lambdas)
                  .for_layer(0);
      break;
    }
    case ModeTag::M3_Context: {
      c.dc_in.num_heads = cfg.h;
      c.dc_in.full.counts.assign(cfg.l, 0);
      c.dc_in.heads.assign(std::size_t{cfg.l} * cfg.h, 0);
      for (std::uint32_t k = 0; k < cfg.h; ++k) {
        o.a_heads.push_back(synthetic::random_01(cfg.l, cfg.l, rng));
        PackedMatrix pm = pack_matrix(o.a_heads.back(), Scheme::Unsigned01);
        for (std::size_t i = 0; i < cfg.l; ++i) {
          c.dc_in.heads[i * cfg.h + k] = pm.dc.counts[i];
          c.dc_in.full.counts[i] += pm.dc.counts[i];
        }
        c.a_heads.push_back(std::move(pm.bits));
      }
      o.b = synthetic::random_pm1(cfg.l, cfg.d, rng);
      c.b = pack_columns(o.b, Scheme::SignedPM1);
      o.quant = random_quant(cfg.d, Scheme::SignedPM1, false, 2, rng);
      c.theta = compute_theta(o.quant);
      break;
    }
  }
  return c;
}

std::optional<std::string> compare_mode_case(const ModeCase& c, const EngineOptions& opts,
                                             EngineCounters* counters) {
  const reference::ModeOutputs want = reference::reference_mode_pipeline(c.oracle);
  const RbmmMode mode = RbmmMode::make(c.tag, c.cfg, c.oracle.mask);
  RbmmInputs in;
  IntMatrix acc = c.accumulator;
  switch (c.tag) {
    case ModeTag::M1_QKV:
    case ModeTag::F1_FFN1:
    case ModeTag::M4_Linear:
      in.a = &c.a;
      in.b = &c.b;
      in.theta = &c.theta;
      break;
    case ModeTag::F2_FFN2:
      in.a = &c.a;
      in.b = &c.b;
      in.dc_in = &c.dc_in;
      in.accumulator = &acc;
      break;
    case ModeTag::M2_AttnScore:
      in.a = &c.a;
      in.b = &c.b;
      in.sps = &c.sps;
      break;
    case ModeTag::M3_Context:
      in.a_heads = c.a_heads;
      in.dc_in = &c.dc_in;
      in.b = &c.b;
      in.theta = &c.theta;
      break;
  }
  const RbmmOutput got = rbmm_execute(mode, in, opts, counters);
  const std::string prefix = std::string(to_string(c.tag)) + " " + describe(c.cfg) + ": ";
  auto with_prefix = [&](std::optional<std::string> d) -> std::optional<std::string> {
    if (d) return prefix + *d;
    return d;
  };
  switch (c.tag) {
    case ModeTag::M1_QKV:
    case ModeTag::F1_FFN1:
    case ModeTag::M3_Context: {
      if (auto d = compare_matrix("output", unpack_matrix(*got.binary), want.values)) return with_prefix(d);
      for (std::size_t i = 0; i < c.cfg.l; ++i)
        if (got.dc_return.full.counts[i] != row_zeros(*got.binary, i))
          return prefix + "DC RETURN row " + std::to_string(i) + " disagrees with the output zeros";
      return std::nullopt;
    }
    case ModeTag::M4_Linear: return with_prefix(compare_matrix("output", *got.integers, want.values));
    case ModeTag::F2_FFN2: return with_prefix(compare_matrix("accumulator", acc, want.values));
    case ModeTag::M2_AttnScore: {
      for (std::uint32_t k = 0; k < c.cfg.h; ++k) {
        const std::string what = "head " + std::to_string(k);
        if (auto d = compare_matrix(what.c_str(), unpack_matrix(got.head_maps[k]), want.head_maps[k]))
          return with_prefix(d);
        for (std::size_t i = 0; i < c.cfg.l; ++i)
          if (got.dc_return.head(i, k) != row_zeros(got.head_maps[k], i))
            return prefix + "DC HEAD (" + std::to_string(i) + ", " + std::to_string(k) + ") is wrong";
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

CheckResult check_rbvm_exhaustive(std::uint32_t max_bits, PopcountPath path) {
  Timer t;
  CheckResult r = named("rbvm exhaustive n<=" + std::to_string(max_bits));
  for (std::uint32_t n = 1; n <= max_bits && r.passed; ++n) {
    const std::uint64_t count = std::uint64_t{1} << n;
    for (Scheme s : {Scheme::SignedPM1, Scheme::Unsigned01}) {
      for (std::uint64_t a = 0; a < count && r.passed; ++a) {
        const std::optional<std::uint32_t> delta =
            s == Scheme::Unsigned01 ? std::optional<std::uint32_t>(zeros(a, n)) : std::nullopt;
        for (std::uint64_t b = 0; b < count; ++b) {
          const std::int64_t got = rbvm(Datapack{{&a, 1}, n}, Datapack{{&b, 1}, n}, s, delta, path);
          ++r.cases;
          if (got != dot_bits(a, b, n, s)) {
            std::ostringstream os;
            os << to_string(s) << " n=" << n << " a=" << a << " b=" << b << ": " << got << " vs "
               << dot_bits(a, b, n, s);
            fail(r, std::nullopt, os.str());
            break;
          }
        }
      }
    }
  }
  return finish(r, t);
}

CheckResult check_rbvm_random(std::uint64_t cases, std::size_t nbits, std::uint64_t seed, PopcountPath path) {
  Timer t;
  CheckResult r = named("rbvm random " + std::to_string(nbits) + "-bit");
  Rng rng(seed);
  for (std::uint64_t i = 0; i < cases && r.passed; ++i) {
    const Scheme s = (rng() & 1U) ? Scheme::Unsigned01 : Scheme::SignedPM1;
    const BitMatrix a = synthetic::random_bits(1, nbits, s, rng);
    const BitMatrix b = synthetic::random_bits(1, nbits, Scheme::SignedPM1, rng);
    const std::optional<std::uint32_t> delta =
        s == Scheme::Unsigned01 ? std::optional<std::uint32_t>(row_zeros(a, 0)) : std::nullopt;
    const std::int64_t got = rbvm(a.row(0), b.row(0), s, delta, path);
    const std::int64_t want = dot_matrix_rows(a, 0, b, 0);
    ++r.cases;
    if (got != want) fail(r, seed, "case " + std::to_string(i) + ": " + std::to_string(got) + " vs " + std::to_string(want));
  }
  return finish(r, t);
}

CheckResult check_split(std::uint64_t cases, std::uint64_t seed) {
  Timer t;
  CheckResult r = named("split accumulate");
  for (std::uint64_t i = 0; i < cases && r.passed; ++i) {
    const std::uint64_t cs = case_seed(seed, i);
    Rng rng(cs);
    const auto n = static_cast<std::size_t>(uniform(rng, 1, 768));
    const Scheme s = (rng() & 1U) ? Scheme::Unsigned01 : Scheme::SignedPM1;
    const BitMatrix a = synthetic::random_bits(1, n, s, rng);
    const BitMatrix b = synthetic::random_bits(1, n, Scheme::SignedPM1, rng);
    const auto cuts = static_cast<std::size_t>(uniform(rng, 0, 6));
    std::vector<std::size_t> points{0, n};
    for (std::size_t k = 0; k < cuts; ++k) points.push_back(static_cast<std::size_t>(uniform(rng, 0, static_cast<std::int64_t>(n))));
    std::sort(points.begin(), points.end());
    std::vector<std::vector<std::uint64_t>> storage;
    std::vector<RbvmSegment> parts;
    storage.reserve(2 * points.size());
    for (std::size_t k = 0; k + 1 < points.size(); ++k) {
      const std::size_t len = points[k + 1] - points[k];
      storage.push_back(slice_bits(a.row(0), points[k], len));
      const auto& sa = storage.back();
      storage.push_back(slice_bits(b.row(0), points[k], len));
      const auto& sb = storage.back();
      RbvmSegment seg{Datapack{sa, len}, Datapack{sb, len}, s, std::nullopt};
      if (s == Scheme::Unsigned01) {
        std::uint32_t z = 0;
        for (std::size_t c = points[k]; c < points[k + 1]; ++c) z += a.bit(0, c) ? 0 : 1;
        seg.delta_a = z;
      }
      parts.push_back(seg);
    }
    const std::int64_t got = rbvm_split_accumulate(parts);
    const std::int64_t want = dot_matrix_rows(a, 0, b, 0);
    ++r.cases;
    if (got != want) fail(r, cs, std::to_string(parts.size()) + " segments over " + std::to_string(n) +
                                     " bits: " + std::to_string(got) + " vs " + std::to_string(want));
  }
  return finish(r, t);
}

CheckResult check_popcount(std::uint64_t random_cases, std::uint64_t seed) {
  Timer t;
  CheckResult r = named("compressor popcount");
  for (unsigned x = 0; x < 64; ++x, ++r.cases)
    if (compress_6_3(static_cast<std::uint8_t>(x)) != std::popcount(x))
      fail(r, std::nullopt, "6:3 compressor input " + std::to_string(x));
  for (std::uint64_t x = 0; x < (1U << 16); ++x, ++r.cases)
    if (popcount_tree36(CompressorWord(x)) != static_cast<unsigned>(std::popcount(x)))
      fail(r, std::nullopt, "16-bit input " + std::to_string(x));
  Rng rng(seed);
  for (std::uint64_t i = 0; i < random_cases && r.passed; ++i, ++r.cases) {
    const std::uint64_t x = rng() & CompressorWord::kMask;
    if (popcount_tree36(CompressorWord(x)) != static_cast<unsigned>(std::popcount(x)))
      fail(r, seed, "36-bit input " + std::to_string(x));
    const std::uint64_t w = rng();
    if (popcount_compressor64(w) != static_cast<unsigned>(std::popcount(w)))
      fail(r, seed, "64-bit input " + std::to_string(w));
  }
  for (std::uint64_t i = 0; i < 64 && r.passed; ++i, ++r.cases) {
    const BitMatrix m = synthetic::random_bits(1, static_cast<std::size_t>(uniform(rng, 1, 1024)), Scheme::SignedPM1, rng);
    std::size_t native = 0;
    for (auto w : m.row_words(0)) native += static_cast<std::size_t>(std::popcount(w));
    if (popcount_wide(m.row_words(0), m.cols()) != native ||
        popcount_words(m.row_words(0), PopcountPath::Compressor) != native)
      fail(r, seed, "wide vector of " + std::to_string(m.cols()) + " bits");
  }
  return finish(r, t);
}

CheckResult check_quant_fusion(std::int32_t c_range, std::uint64_t param_sets, std::uint64_t seed) {
  Timer t;
  CheckResult r = named("quantization fusion");
  for (std::uint64_t i = 0; i < param_sets && r.passed; ++i) {
    const std::uint64_t cs = case_seed(seed, i);
    Rng rng(cs);
    QuantParams q;
    q.scheme = (rng() & 1U) ? Scheme::Unsigned01 : Scheme::SignedPM1;
    q.relu_fused = q.scheme == Scheme::Unsigned01 && (rng() & 1U);
    q.alpha = static_cast<std::uint32_t>(uniform(rng, 1, 64));
    q.beta = {static_cast<std::int32_t>(uniform(rng, -c_range, c_range))};
    const std::int64_t theta = compute_theta(q).theta[0];
    for (std::int64_t c = -c_range; c <= c_range; ++c) {
      ++r.cases;
      const bool fused = quantize_unified(c, theta);
      const bool two_step = reference::quantize_two_step(c, q, 0) == 1;
      if (fused != two_step) {
        std::ostringstream os;
        os << to_string(q.scheme) << (q.relu_fused ? "+relu" : "") << " alpha=" << q.alpha
           << " beta=" << q.beta[0] << " c=" << c << ": fused " << fused << ", two-step " << two_step;
        fail(r, cs, os.str());
        break;
      }
    }
  }
  return finish(r, t);
}

CheckResult check_mode(ModeTag tag, std::uint64_t cases, std::uint64_t seed, const EngineOptions& opts) {
  Timer t;
  const char* suffix = opts.popcount == PopcountPath::Compressor ? " compressor" : "";
  CheckResult r = named(std::string("mode ") + to_string(tag) + suffix);
  for (std::uint64_t i = 0; i < cases && r.passed; ++i) {
    const std::uint64_t cs = case_seed(seed, i);
    run_case(r, cs, [&] {
      if (auto d = compare_mode_case(random_mode_case(tag, cs), opts)) fail(r, cs, *d);
    });
  }
  return finish(r, t);
}

CheckResult check_ffn(const std::vector<std::uint32_t>& blocks, std::uint64_t cases_per_r, std::uint64_t seed,
                      const EngineOptions& opts) {
  Timer t;
  CheckResult r = named("ffn decomposition");
  std::uint64_t index = 0;
  for (std::uint32_t rb : blocks) {
    for (std::uint64_t i = 0; i < cases_per_r && r.passed; ++i) {
      const std::uint64_t cs = case_seed(seed, index++);
      run_case(r, cs, [&] {
        Rng rng(cs);
        const ModelConfig cfg = random_toy_config(rng, 32, 16, rb);
        const IntMatrix x = synthetic::random_pm1(cfg.l, cfg.d, rng);
        const IntMatrix y = synthetic::random_pm1(cfg.d, cfg.ff_size, rng);
        const IntMatrix z = synthetic::random_pm1(cfg.ff_size, cfg.d, rng);
        const QuantParams q = random_quant(cfg.ff_size, Scheme::Unsigned01, true, 4, rng);
        const ThetaVector theta = compute_theta(q);
        std::vector<BitMatrix> yb, zb;
        for (std::uint32_t k = 0; k < rb; ++k) {
          yb.push_back(pack_columns(sub_matrix(y, 0, std::size_t{k} * cfg.d, cfg.d, cfg.d), Scheme::SignedPM1));
          zb.push_back(pack_columns(sub_matrix(z, std::size_t{k} * cfg.d, 0, cfg.d, cfg.d), Scheme::SignedPM1));
        }
        const BitMatrix xb = pack_matrix(x, Scheme::SignedPM1).bits;
        FfnWorkspaceStats stats;
        const IntMatrix dec = ffn_decomposed(xb, yb, zb, theta, cfg, opts, nullptr, &stats);
        const IntMatrix mono = ffn_monolithic(xb, pack_columns(y, Scheme::SignedPM1),
                                              pack_columns(z, Scheme::SignedPM1), theta, cfg, opts);
        const IntMatrix want = reference::matmul(reference::quantize_matrix(reference::matmul(x, y), q), z);
        const std::string pre = "R=" + std::to_string(rb) + " " + describe(cfg) + ": ";
        if (auto d = compare_matrix("decomposed vs monolithic", dec, mono)) fail(r, cs, pre + *d);
        else if (auto d2 = compare_matrix("decomposed vs oracle", dec, want)) fail(r, cs, pre + *d2);
        else if (stats.buffers_allocated != 2 || stats.buffer_rows != cfg.l || stats.buffer_cols != cfg.d)
          fail(r, cs, pre + "working buffers: " + std::to_string(stats.buffers_allocated) + " of " +
                          std::to_string(stats.buffer_rows) + "x" + std::to_string(stats.buffer_cols));
      });
    }
  }
  return finish(r, t);
}

CheckResult check_sps_search(std::uint64_t sets, std::uint64_t seed) {
  Timer t;
  CheckResult r = named("sps search");
  const std::vector<double> grid = threshold_grid(0.05);
  for (std::uint64_t i = 0; i < sets && r.passed; ++i) {
    const std::uint64_t cs = case_seed(seed, i);
    run_case(r, cs, [&] {
      Rng rng(cs);
      const auto layers = static_cast<std::uint32_t>(uniform(rng, 1, 2));
      const auto heads = static_cast<std::uint32_t>(uniform(rng, 1, 3));
      const auto l = static_cast<std::uint32_t>(uniform(rng, 2, 12));
      const auto dh = static_cast<std::uint32_t>(uniform(rng, 1, 16));
      const auto samples = static_cast<std::uint32_t>(uniform(rng, layers, 4));
      const CalibrationSet calib = synthetic::random_calibration(layers, heads, l, dh, samples, rng());
      for (Granularity g : {Granularity::PerLayer, Granularity::PerHead, Granularity::PerRow}) {
        const SpsThresholds got = search_thresholds(calib, g, 0.05);
        const SpsThresholds layout = SpsThresholds::uniform(g, layers, heads, l, dh, 0.0);
        const std::size_t units = layout.lambdas().size();
        std::vector<std::uint64_t> miss(units * grid.size(), 0), total(units, 0);
        for (const auto& smp : calib.samples) {
          for (std::uint32_t h = 0; h < heads; ++h) {
            const RealMatrix z = reference::attention_scores(unpack_matrix(smp.q[h]), unpack_matrix(smp.k[h]));
            for (std::uint32_t row = 0; row < l; ++row) {
              const std::size_t u = layout.unit_index(smp.layer, h, row);
              for (std::uint32_t col = 0; col < l; ++col) {
                ++total[u];
                const bool ref = smp.reference[h].bit(row, col);
                for (std::size_t k = 0; k < grid.size(); ++k)
                  miss[u * grid.size() + k] += (sps_decide(z(row, col), grid[k]) != ref) ? 1 : 0;
              }
            }
          }
        }
        for (std::size_t u = 0; u < units && r.passed; ++u) {
          std::size_t best = 0;
          for (std::size_t k = 1; k < grid.size(); ++k)
            if (miss[u * grid.size() + k] < miss[u * grid.size() + best]) best = k;
          const double want_d = total[u] ? static_cast<double>(miss[u * grid.size() + best]) / static_cast<double>(total[u]) : 0.0;
          std::ostringstream os;
          os << to_string(g) << " unit " << u << ": ";
          if (got.lambdas()[u] != grid[best]) {
            os << "lambda " << got.lambdas()[u] << ", exhaustive minimum at " << grid[best];
            fail(r, cs, os.str());
          } else if (std::abs(got.distortion[u] - want_d) > 1e-12) {
            os << "distortion " << got.distortion[u] << " vs " << want_d;
            fail(r, cs, os.str());
          } else if (miss[u * grid.size() + best] > miss[u * grid.size()]) {
            os << "distortion above the lambda=0 value";
            fail(r, cs, os.str());
          }
        }
      }
    });
  }
  return finish(r, t);
}

CheckResult check_encoder(std::uint64_t cases, std::uint64_t seed, const EngineOptions& opts) {
  Timer t;
  CheckResult r = named("encoder vs oracle");
  for (std::uint64_t i = 0; i < cases && r.passed; ++i) {
    const std::uint64_t cs = case_seed(seed, i);
    run_case(r, cs, [&] {
      Rng rng(cs);
      ModelConfig cfg = random_toy_config(rng, 32, 16);
      cfg.num_layers = static_cast<std::uint32_t>(uniform(rng, 1, 2));
      const io::RawModel raw = synthetic::random_model(cfg, rng());
      const io::WeightFile packed = io::pack_model(raw);
      const io::InputTensor input = synthetic::random_input(cfg, rng(), false);
      const AttentionMask mask = random_mask(cfg.l, rng);
      const Granularity g = static_cast<Granularity>(uniform(rng, 0, 2));
      const SpsThresholds layout = SpsThresholds::uniform(g, cfg.num_layers, cfg.h, cfg.l, cfg.head_dim(), 0.0);
      const SpsThresholds th(g, cfg.num_layers, cfg.h, cfg.l, cfg.head_dim(), random_lambdas(layout.lambdas().size(), rng));
      ForwardOptions fo;
      fo.engine = opts;
      fo.spill_emulation = (rng() & 1U) != 0;
      const LayerOutput got = model_forward(input.hidden, packed.layers, cfg, th, mask, fo);
      IntMatrix x = unpack_matrix(input.hidden);
      reference::LayerResult want;
      for (std::uint32_t layer = 0; layer < cfg.num_layers; ++layer) {
        const AttentionThresholds at = th.for_layer(layer);
        want = reference::encoder_layer(x, raw.layers[layer], cfg, at.lambda, at.rows, mask);
        x = want.hidden;
      }
      const std::string pre = describe(cfg) + " layers=" + std::to_string(cfg.num_layers) + ": ";
      if (auto d = compare_matrix("hidden", unpack_matrix(got.hidden), want.hidden)) fail(r, cs, pre + *d);
      else if (auto d2 = compare_matrix("logits", got.logits, want.logits)) fail(r, cs, pre + *d2);
    });
  }
  return finish(r, t);
}

CheckResult check_perf_counts(const ModelConfig& cfg, std::uint64_t seed) {
  Timer t;
  CheckResult r = named("perf counts " + describe(cfg) + " layers=" + std::to_string(cfg.num_layers));
  Rng rng(seed);
  const LayerWeights layer = io::pack_layer(synthetic::random_layer(cfg, rng), cfg);
  const std::vector<LayerWeights> layers(cfg.num_layers, layer);
  const io::InputTensor input = synthetic::random_input(cfg, rng());
  const SpsThresholds th = SpsThresholds::uniform(Granularity::PerHead, cfg.num_layers, cfg.h, cfg.l, cfg.head_dim(), 0.5);
  ForwardOptions fo;
  fo.engine.n_pe = cfg.n_pe;
  EngineCounters counters;
  model_forward(input.hidden, layers, cfg, th, {}, fo, &counters);
  const InvocationCounts want = invocation_counts(cfg);
  r.cases = kModeCount;
  for (std::size_t m = 0; m < kModeCount; ++m) {
    const std::uint64_t wi = want.invocations[m] * cfg.num_layers;
    const std::uint64_t we = want.executions[m] * cfg.num_layers;
    if (counters.invocations[m] != wi || counters.executions[m] != we) {
      std::ostringstream os;
      os << to_string(static_cast<ModeTag>(m)) << ": counted " << counters.invocations[m] << "/"
         << counters.executions[m] << ", closed form " << wi << "/" << we;
      fail(r, seed, os.str());
    }
  }
  return finish(r, t);
}

SpeedupResult measure_packed_speedup(std::uint32_t l, std::uint32_t d, std::uint64_t seed, int reps) {
  Rng rng(seed);
  const IntMatrix a = synthetic::random_pm1(l, d, rng);
  const IntMatrix w = synthetic::random_pm1(d, d, rng);
  const BitMatrix pa = pack_matrix(a, Scheme::SignedPM1).bits;
  const BitMatrix pw = pack_columns(w, Scheme::SignedPM1);
  ModelConfig cfg{d, 1, l, d, 1, 1};
  const RbmmMode mode = RbmmMode::make(ModeTag::M4_Linear, cfg);
  RbmmInputs in;
  in.a = &pa;
  in.b = &pw;
  SpeedupResult r;
  r.packed_seconds = r.oracle_seconds = 1e300;
  IntMatrix packed, oracle;
  for (int i = 0; i < std::max(reps, 1); ++i) {
    Timer t;
    packed = std::move(*rbmm_execute(mode, in).integers);
    r.packed_seconds = std::min(r.packed_seconds, t.seconds());
  }
  for (int i = 0; i < std::max(reps, 1); ++i) {
    Timer t;
    oracle = reference::matmul(a, w);
    r.oracle_seconds = std::min(r.oracle_seconds, t.seconds());
  }
  r.speedup = r.oracle_seconds / r.packed_seconds;
  r.outputs_equal = packed == oracle;
  return r;
}

PopcountTiming measure_popcount_paths(std::size_t words, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint64_t> buf(words);
  for (auto& w : buf) w = rng();
  PopcountTiming r;
  Timer tn;
  const std::size_t native = popcount_words(buf, PopcountPath::Native);
  r.native_seconds = tn.seconds();
  Timer tc;
  const std::size_t comp = popcount_words(buf, PopcountPath::Compressor);
  r.compressor_seconds = tc.seconds();
  r.counts_equal = native == comp;
  return r;
}

const char* to_string(Scale s) noexcept { return s == Scale::Full ? "full" : "quick"; }

Scale parse_scale(std::string_view s) {
  if (s == "quick") return Scale::Quick;
  if (s == "full") return Scale::Full;
  throw FormatError("unknown verify scale '" + std::string(s) + "' (expected quick or full)");
}

std::vector<CheckResult> run_verify(const VerifyOptions& o) {
  const bool full = o.scale == Scale::Full;
  const std::uint64_t s = o.seed;
  std::vector<CheckResult> out;
  out.push_back(check_rbvm_exhaustive(full ? 12 : 10, o.engine.popcount));
  out.push_back(check_rbvm_random(full ? 100000 : 20000, 768, case_seed(s, 1), o.engine.popcount));
  out.push_back(check_split(full ? 10000 : 5000, case_seed(s, 2)));
  out.push_back(check_popcount(full ? 1000000 : 100000, case_seed(s, 3)));
  out.push_back(check_quant_fusion(full ? 4096 : 512, full ? 1000 : 300, case_seed(s, 4)));
  for (std::size_t m = 0; m < kModeCount; ++m)
    out.push_back(check_mode(static_cast<ModeTag>(m), full ? 300 : 100, case_seed(s, 10 + m), o.engine));
  out.push_back(check_ffn({1, 2, 4}, full ? 100 : 30, case_seed(s, 5), o.engine));
  out.push_back(check_sps_search(full ? 100 : 20, case_seed(s, 6)));
  out.push_back(check_encoder(full ? 200 : 50, case_seed(s, 7), o.engine));
  ModelConfig toy{16, 2, 8, 32, 2, 4};
  out.push_back(check_perf_counts(toy, case_seed(s, 8)));
  if (full) {
    ModelConfig mid{128, 4, 64, 256, 2, 16};
    out.push_back(check_perf_counts(mid, case_seed(s, 9)));
  }
  return out;
}

std::string format_report(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  for (const auto& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << r.name << " cases=" << r.cases;
    if (r.counterexample_seed) os << " seed=" << *r.counterexample_seed;
    os << " time=" << std::fixed << std::setprecision(3) << r.seconds << "s";
    if (!r.detail.empty()) os << " " << r.detail;
    os << '\n';
  }
  return os.str();
}

}  // namespace cobra::selfcheck
