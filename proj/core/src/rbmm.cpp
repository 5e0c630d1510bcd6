// SPDX-License-Identifier: Apache-2.0
#include "cobra/rbmm.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "cobra/error.hpp"

namespace cobra {
namespace {

enum class BitOp { Xnor, And };

// Population count of op(a, b) restricted to bits [start, start + len).
std::uint32_t range_count(const std::uint64_t* a, const std::uint64_t* b, std::size_t start,
                          std::size_t len, BitOp op, PopcountPath path, bool fault) noexcept {
  if (len == 0) return 0;
  const std::size_t first = start / kWordBits;
  const std::size_t last = (start + len - 1) / kWordBits;
  std::uint32_t n = 0;
  for (std::size_t w = first; w <= last; ++w) {
    std::uint64_t x = op == BitOp::Xnor ? ~(a[w] ^ b[w]) : (a[w] & b[w]);
    std::uint64_t m = ~std::uint64_t{0};
    if (w == first) m &= ~std::uint64_t{0} << (start % kWordBits);
    if (w == last) m &= tail_mask(start + len - last * kWordBits);
    x &= m;
    n += path == PopcountPath::Native ? static_cast<std::uint32_t>(std::popcount(x))
                                      : popcount_compressor64(x);
  }
  if (fault && ((a[first] >> 5) & 1U)) n ^= 1U;
  return n;
}

// 2 * popcount(op(a, b)) - n over the whole row in one pass.
template <BitOp Op>
std::int64_t full_row(const std::uint64_t* a, const std::uint64_t* b, std::size_t n) noexcept {
  const std::size_t whole = n / kWordBits;
  std::uint64_t count = 0;
  for (std::size_t w = 0; w < whole; ++w)
    count += static_cast<std::uint64_t>(std::popcount(Op == BitOp::Xnor ? ~(a[w] ^ b[w]) : (a[w] & b[w])));
  if (n % kWordBits != 0) {
    const std::uint64_t x = Op == BitOp::Xnor ? ~(a[whole] ^ b[whole]) : (a[whole] & b[whole]);
    count += static_cast<std::uint64_t>(std::popcount(x & tail_mask(n)));
  }
  return 2 * static_cast<std::int64_t>(count) - static_cast<std::int64_t>(n);
}

// HEAD PEs over `seg`-bit segments, accumulated along the ACC PATH. The DC
// correction of an Unsigned01 operand is added once by the caller.
std::int64_t acc_path(const std::uint64_t* a, const std::uint64_t* b, std::size_t n,
                      std::size_t seg, BitOp op, const EngineOptions& opts) noexcept {
  // Segment sums telescope to the full-row count; only the compressor path and
  // the fault hook need the per-segment walk.
  if (opts.popcount == PopcountPath::Native && !opts.inject_fault)
    return op == BitOp::Xnor ? full_row<BitOp::Xnor>(a, b, n) : full_row<BitOp::And>(a, b, n);
  std::int64_t sum = 0;
  for (std::size_t start = 0; start < n; start += seg) {
    const std::size_t len = std::min(seg, n - start);
    const auto p = range_count(a, b, start, len, op, opts.popcount, opts.inject_fault);
    sum += 2 * static_cast<std::int64_t>(p) - static_cast<std::int64_t>(len);
  }
  return sum;
}

void check(bool ok, const char* mode, const std::string& what) {
  if (!ok) throw DimensionError(std::string(mode) + ": " + what);
}

template <typename T>
const T& require(const T* p, const char* mode, const char* name) {
  if (p == nullptr) throw MissingOperandError(std::string(mode) + ": missing " + name);
  return *p;
}

std::string shape(const BitMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

DcReturn make_dc(std::size_t rows, std::uint32_t num_heads) {
  DcReturn dc;
  dc.full.counts.assign(rows, 0);
  dc.num_heads = num_heads;
  dc.heads.assign(rows * num_heads, 0);
  return dc;
}

std::size_t idx(ModeTag t) { return static_cast<std::size_t>(t); }

// Shared row-by-column loop of M1, M4, F1 and F2. `emit(m, p, value)` receives
// each accumulated dot product.
template <typename Emit>
void linear_loop(const RbmmMode& mode, const BitMatrix& a, const BitMatrix& b,
                 const DCVector* delta, const EngineOptions& opts, EngineCounters* counters,
                 Emit&& emit) {
  const BitOp op = a.scheme() == Scheme::SignedPM1 ? BitOp::Xnor : BitOp::And;
  const std::size_t n = a.cols();
  const std::size_t cols_out = b.rows();
  const std::size_t n_pe = std::max<std::uint32_t>(opts.n_pe, 1);
  if (counters) ++counters->executions[idx(mode.tag)];
  for (std::size_t m = 0; m < a.rows(); ++m) {
    const std::uint64_t* arow = a.row_words(m).data();
    const std::int64_t dc = delta ? static_cast<std::int64_t>(delta->counts[m]) : 0;
    for (std::size_t p0 = 0; p0 < cols_out; p0 += n_pe) {
      const std::size_t p1 = std::min(cols_out, p0 + n_pe);
      if (counters) {
        ++counters->invocations[idx(mode.tag)];
        counters->rbvm_results += p1 - p0;
      }
      for (std::size_t p = p0; p < p1; ++p) {
        emit(m, p, acc_path(arow, b.row_words(p).data(), n, mode.head_dim, op, opts) + dc);
      }
    }
  }
}

void check_linear(const RbmmMode& mode, const char* name, const BitMatrix& a, const BitMatrix& b,
                  Scheme a_scheme) {
  check(a.scheme() == a_scheme, name,
        std::string("A must be ") + to_string(a_scheme) + ", got " + to_string(a.scheme()));
  check(b.scheme() == Scheme::SignedPM1, name, "B must be SignedPM1");
  check(a.rows() == mode.dims.x && a.cols() == mode.dims.y, name,
        "A is " + shape(a) + ", expected " + std::to_string(mode.dims.x) + "x" +
            std::to_string(mode.dims.y));
  check(b.rows() == mode.dims.z && b.cols() == mode.dims.y, name,
        "B (column datapacks) is " + shape(b) + ", expected " + std::to_string(mode.dims.z) +
            "x" + std::to_string(mode.dims.y));
}

RbmmOutput run_binary_linear(const RbmmMode& mode, const RbmmInputs& in, Scheme out_scheme,
                             const EngineOptions& opts, EngineCounters* counters) {
  const char* name = to_string(mode.tag);
  const BitMatrix& a = require(in.a, name, "A");
  const BitMatrix& b = require(in.b, name, "B");
  const ThetaVector& theta = require(in.theta, name, "theta");
  check_linear(mode, name, a, b, Scheme::SignedPM1);
  check(theta.size() == b.rows(), name, "theta has " + std::to_string(theta.size()) +
                                            " entries for " + std::to_string(b.rows()) + " columns");
  RbmmOutput out;
  out.binary.emplace(a.rows(), b.rows(), out_scheme);
  out.dc_return = make_dc(a.rows(), static_cast<std::uint32_t>(b.rows() / mode.head_dim));
  BitMatrix& bits = *out.binary;
  DcReturn& dc = out.dc_return;
  linear_loop(mode, a, b, nullptr, opts, counters, [&](std::size_t m, std::size_t p, std::int64_t c) {
    if (quantize_unified(c, theta.theta[p])) {
      bits.set_bit(m, p, true);
    } else {
      ++dc.full.counts[m];
      ++dc.heads[m * dc.num_heads + p / mode.head_dim];
    }
  });
  return out;
}

RbmmOutput run_m4(const RbmmMode& mode, const RbmmInputs& in, const EngineOptions& opts,
                  EngineCounters* counters) {
  const char* name = to_string(mode.tag);
  const BitMatrix& a = require(in.a, name, "A");
  const BitMatrix& b = require(in.b, name, "B");
  check_linear(mode, name, a, b, Scheme::SignedPM1);
  RbmmOutput out;
  out.integers.emplace(a.rows(), b.rows());
  out.dc_return = make_dc(a.rows(), 0);
  IntMatrix& c = *out.integers;
  linear_loop(mode, a, b, nullptr, opts, counters, [&](std::size_t m, std::size_t p, std::int64_t v) {
    c(m, p) = static_cast<std::int32_t>(v);
  });
  return out;
}

RbmmOutput run_f2(const RbmmMode& mode, const RbmmInputs& in, const EngineOptions& opts,
                  EngineCounters* counters) {
  const char* name = to_string(mode.tag);
  const BitMatrix& a = require(in.a, name, "A");
  const BitMatrix& b = require(in.b, name, "B");
  const DcReturn& dc_in = require(in.dc_in, name, "DC INPUT");
  if (in.accumulator == nullptr) throw MissingOperandError(std::string(name) + ": missing accumulator");
  IntMatrix& acc = *in.accumulator;
  check_linear(mode, name, a, b, Scheme::Unsigned01);
  check(dc_in.full.counts.size() == a.rows(), name, "DC INPUT row count mismatch");
  check(acc.rows() == a.rows() && acc.cols() == b.rows(), name, "accumulator shape mismatch");
  RbmmOutput out;
  out.dc_return = make_dc(a.rows(), 0);
  linear_loop(mode, a, b, &dc_in.full, opts, counters, [&](std::size_t m, std::size_t p, std::int64_t v) {
    acc(m, p) += static_cast<std::int32_t>(v);
  });
  return out;
}

RbmmOutput run_m2(const RbmmMode& mode, const RbmmInputs& in, const EngineOptions& opts,
                  EngineCounters* counters) {
  const char* name = to_string(mode.tag);
  const BitMatrix& q = require(in.a, name, "Q");
  const BitMatrix& k = require(in.b, name, "K");
  const AttentionThresholds& sps = require(in.sps, name, "SPS thresholds");
  const std::uint32_t h = mode.heads;
  const std::uint32_t dh = mode.head_dim;
  const std::size_t l = mode.dims.x;
  check(q.scheme() == Scheme::SignedPM1 && k.scheme() == Scheme::SignedPM1, name,
        "Q and K must be SignedPM1");
  check(q.rows() == l && k.rows() == l, name, "Q/K row count must equal l=" + std::to_string(l));
  check(q.cols() == std::size_t{h} * dh && k.cols() == q.cols(), name,
        "Q/K must have h*d_h=" + std::to_string(h * dh) + " columns");
  check(sps.heads == h && sps.head_dim == dh, name, "SPS table heads/head_dim mismatch");
  check(sps.rows == 1 || sps.rows == l, name, "SPS table row count must be 1 or l");
  check(sps.popcount.size() == std::size_t{h} * sps.rows, name, "SPS table size mismatch");
  check(mode.mask.boundary.empty() || mode.mask.boundary.size() == l, name,
        "mask must hold one boundary per row");

  RbmmOutput out;
  out.head_maps.assign(h, BitMatrix(l, l, Scheme::Unsigned01));
  out.dc_return = make_dc(l, h);
  const std::size_t n_pe = std::max<std::uint32_t>(opts.n_pe, 1);
  if (counters) ++counters->executions[idx(mode.tag)];
  for (std::size_t i = 0; i < l; ++i) {
    const std::uint64_t* qrow = q.row_words(i).data();
    for (std::size_t j0 = 0; j0 < l; j0 += n_pe) {
      const std::size_t j1 = std::min(l, j0 + n_pe);
      if (counters) {
        ++counters->invocations[idx(mode.tag)];
        counters->rbvm_results += j1 - j0;
      }
      for (std::size_t j = j0; j < j1; ++j) {
        const bool masked = mode.mask.masked(i, j);
        // CONCAT PATH: every head keeps its own d_h-bit result.
        for (std::uint32_t hd = 0; hd < h; ++hd) {
          bool bit = false;
          if (!masked) {
            const auto p = range_count(qrow, k.row_words(j).data(), std::size_t{hd} * dh, dh,
                                       BitOp::Xnor, opts.popcount, opts.inject_fault);
            bit = static_cast<std::int64_t>(p) >= sps.threshold(hd, static_cast<std::uint32_t>(i));
          }
          if (bit) {
            out.head_maps[hd].set_bit(i, j, true);
          } else {
            ++out.dc_return.heads[i * h + hd];
            ++out.dc_return.full.counts[i];
          }
        }
      }
    }
  }
  return out;
}

RbmmOutput run_m3(const RbmmMode& mode, const RbmmInputs& in, const EngineOptions& opts,
                  EngineCounters* counters) {
  const char* name = to_string(mode.tag);
  const BitMatrix& vt = require(in.b, name, "V^T");
  const DcReturn& dc_in = require(in.dc_in, name, "DC INPUT");
  const ThetaVector& theta = require(in.theta, name, "theta");
  const std::uint32_t h = mode.heads;
  const std::uint32_t dh = mode.head_dim;
  const std::size_t l = mode.dims.x;
  const std::size_t d = std::size_t{h} * dh;
  check(in.a_heads.size() == h, name, "expected " + std::to_string(h) + " attention maps");
  for (const auto& m : in.a_heads) {
    check(m.rows() == l && m.cols() == l, name, "attention map is " + shape(m));
    check(m.scheme() == Scheme::Unsigned01, name, "attention maps must be Unsigned01");
  }
  check(vt.rows() == d && vt.cols() == l && vt.scheme() == Scheme::SignedPM1, name,
        "V^T must be SignedPM1 " + std::to_string(d) + "x" + std::to_string(l) + ", got " +
            shape(vt));
  check(dc_in.num_heads == h && dc_in.heads.size() == l * h, name, "DC INPUT must hold l x h counts");
  check(theta.size() == d, name, "theta must have d entries");

  RbmmOutput out;
  out.binary.emplace(l, d, Scheme::SignedPM1);
  out.dc_return = make_dc(l, h);
  const std::size_t n_pe = std::max<std::uint32_t>(opts.n_pe, 1);
  // Each head's l-bit datapack is spread over the h HEAD PEs and accumulated.
  const std::size_t lane = (l + h - 1) / h;
  for (std::uint32_t hd = 0; hd < h; ++hd) {
    if (counters) ++counters->executions[idx(mode.tag)];
    const BitMatrix& att = in.a_heads[hd];
    for (std::size_t i = 0; i < l; ++i) {
      const std::uint64_t* arow = att.row_words(i).data();
      const std::int64_t delta = dc_in.head(i, hd);
      for (std::size_t c0 = 0; c0 < dh; c0 += n_pe) {
        const std::size_t c1 = std::min<std::size_t>(dh, c0 + n_pe);
        if (counters) {
          ++counters->invocations[idx(mode.tag)];
          counters->rbvm_results += c1 - c0;
        }
        for (std::size_t c = c0; c < c1; ++c) {
          const std::size_t col = std::size_t{hd} * dh + c;
          const std::int64_t v =
              acc_path(arow, vt.row_words(col).data(), l, lane, BitOp::And, opts) + delta;
          if (quantize_unified(v, theta.theta[col])) {
            out.binary->set_bit(i, col, true);
          } else {
            ++out.dc_return.full.counts[i];
            ++out.dc_return.heads[i * h + hd];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

std::int64_t rbvm(Datapack a, Datapack b, Scheme scheme_a, std::optional<std::uint32_t> delta_a,
                  PopcountPath path) {
  if (a.nbits != b.nbits) {
    throw DimensionError("rbvm: bit length mismatch " + std::to_string(a.nbits) + " vs " +
                         std::to_string(b.nbits));
  }
  if (a.words.size() < words_for_bits(a.nbits) || b.words.size() < words_for_bits(b.nbits))
    throw DimensionError("rbvm: datapack shorter than its bit length");
  if (scheme_a == Scheme::Unsigned01 && !delta_a)
    throw MissingOperandError("rbvm: Unsigned01 operand requires its DC count");
  if (scheme_a == Scheme::SignedPM1 && delta_a)
    throw DomainError("rbvm: DC count supplied for a SignedPM1 operand");
  if (a.nbits == 0) return 0;
  const BitOp op = scheme_a == Scheme::SignedPM1 ? BitOp::Xnor : BitOp::And;
  const auto p = range_count(a.words.data(), b.words.data(), 0, a.nbits, op, path, false);
  std::int64_t r = 2 * static_cast<std::int64_t>(p) - static_cast<std::int64_t>(a.nbits);
  if (delta_a) r += *delta_a;
  return r;
}

std::int64_t rbvm_split_accumulate(std::span<const RbvmSegment> parts, PopcountPath path) {
  std::int64_t sum = 0;
  for (const auto& s : parts) sum += rbvm(s.a, s.b, s.scheme_a, s.delta_a, path);
  return sum;
}

const char* to_string(ModeTag t) noexcept {
  switch (t) {
    case ModeTag::M1_QKV: return "M1";
    case ModeTag::M2_AttnScore: return "M2";
    case ModeTag::M3_Context: return "M3";
    case ModeTag::M4_Linear: return "M4";
    case ModeTag::F1_FFN1: return "F1";
    case ModeTag::F2_FFN2: return "F2";
  }
  return "?";
}

AttentionMask AttentionMask::padding(std::uint32_t seq_len, std::uint32_t valid_len) {
  return AttentionMask{std::vector<std::uint32_t>(seq_len, std::min(valid_len, seq_len))};
}

AttentionMask AttentionMask::causal(std::uint32_t seq_len) {
  AttentionMask m;
  m.boundary.resize(seq_len);
  for (std::uint32_t i = 0; i < seq_len; ++i) m.boundary[i] = i + 1;
  return m;
}

RbmmMode RbmmMode::make(ModeTag tag, const ModelConfig& cfg, AttentionMask mask) {
  cfg.validate();
  RbmmMode m;
  m.tag = tag;
  m.heads = cfg.h;
  m.head_dim = cfg.head_dim();
  m.mask = std::move(mask);
  switch (tag) {
    case ModeTag::M1_QKV:
    case ModeTag::F1_FFN1:
      m.dims = {1, cfg.l, cfg.d, cfg.d};
      m.output_kind = OutputKind::Binary;
      break;
    case ModeTag::M2_AttnScore:
      m.dims = {cfg.h, cfg.l, cfg.head_dim(), cfg.l};
      m.output_kind = OutputKind::ConcatHeads;
      break;
    case ModeTag::M3_Context:
      m.dims = {cfg.h, cfg.l, cfg.l, cfg.head_dim()};
      m.output_kind = OutputKind::Binary;
      break;
    case ModeTag::M4_Linear:
    case ModeTag::F2_FFN2:
      m.dims = {1, cfg.l, cfg.d, cfg.d};
      m.output_kind = OutputKind::Integer;
      break;
  }
  return m;
}

RbmmMode RbmmMode::ffn_full(ModeTag tag, const ModelConfig& cfg) {
  if (tag != ModeTag::F1_FFN1 && tag != ModeTag::F2_FFN2)
    throw DimensionError("ffn_full: only F1 and F2 have a full-width form");
  RbmmMode m = make(tag, cfg);
  m.dims = tag == ModeTag::F1_FFN1 ? ModeDims{1, cfg.l, cfg.d, cfg.ff_size}
                                   : ModeDims{1, cfg.l, cfg.ff_size, cfg.d};
  return m;
}

std::uint32_t RbmmOutput::concat_bits(std::size_t row, std::size_t col) const {
  std::uint32_t v = 0;
  for (std::size_t k = 0; k < head_maps.size(); ++k)
    v |= static_cast<std::uint32_t>(head_maps[k].bit(row, col)) << k;
  return v;
}

std::uint64_t EngineCounters::total_invocations() const noexcept {
  std::uint64_t t = 0;
  for (auto v : invocations) t += v;
  return t;
}

RbmmOutput rbmm_execute(const RbmmMode& mode, const RbmmInputs& in, const EngineOptions& opts,
                        EngineCounters* counters) {
  if (mode.head_dim == 0 || mode.heads == 0) throw DimensionError("rbmm_execute: empty head layout");
  switch (mode.tag) {
    case ModeTag::M1_QKV: return run_binary_linear(mode, in, Scheme::SignedPM1, opts, counters);
    case ModeTag::F1_FFN1: return run_binary_linear(mode, in, Scheme::Unsigned01, opts, counters);
    case ModeTag::M2_AttnScore: return run_m2(mode, in, opts, counters);
    case ModeTag::M3_Context: return run_m3(mode, in, opts, counters);
    case ModeTag::M4_Linear: return run_m4(mode, in, opts, counters);
    case ModeTag::F2_FFN2: return run_f2(mode, in, opts, counters);
  }
  throw DimensionError("rbmm_execute: unknown mode");
}

IntMatrix ffn_decomposed(const BitMatrix& x, std::span<const BitMatrix> y_blocks,
                         std::span<const BitMatrix> z_blocks, const ThetaVector& theta_f1,
                         const ModelConfig& cfg, const EngineOptions& opts,
                         EngineCounters* counters, FfnWorkspaceStats* stats) {
  const std::size_t blocks = y_blocks.size();
  if (blocks == 0 || blocks * cfg.d != cfg.ff_size || z_blocks.size() != blocks) {
    throw DimensionError("ffn_decomposed: R*d = " + std::to_string(blocks) + "*" +
                         std::to_string(cfg.d) + " does not match FF_size=" +
                         std::to_string(cfg.ff_size) + " (" + std::to_string(z_blocks.size()) +
                         " Z blocks)");
  }
  if (theta_f1.size() != cfg.ff_size)
    throw DimensionError("ffn_decomposed: theta_f1 must span FF_size columns");

  const RbmmMode f1 = RbmmMode::make(ModeTag::F1_FFN1, cfg);
  const RbmmMode f2 = RbmmMode::make(ModeTag::F2_FFN2, cfg);
  for (std::size_t r = 0; r < blocks; ++r) {
    check_linear(f1, "F1", x, y_blocks[r], Scheme::SignedPM1);
    check(z_blocks[r].rows() == cfg.d && z_blocks[r].cols() == cfg.d, "F2", "Z block must be d x d");
  }

  const std::size_t l = x.rows();
  const std::size_t d = cfg.d;
  // The only two l x d working buffers: F1 pre-activation and F2 partial.
  IntMatrix pre(l, d);
  IntMatrix partial(l, d);
  if (stats) *stats = FfnWorkspaceStats{2, l, d};
  IntMatrix acc(l, d);

  BitMatrix hidden(l, d, Scheme::Unsigned01);
  DcReturn dc = make_dc(l, 0);
  for (std::size_t r = 0; r < blocks; ++r) {
    const std::int32_t* theta = theta_f1.theta.data() + r * d;
    linear_loop(f1, x, y_blocks[r], nullptr, opts, counters,
                [&](std::size_t m, std::size_t p, std::int64_t c) { pre(m, p) = static_cast<std::int32_t>(c); });
    hidden = BitMatrix(l, d, Scheme::Unsigned01);
    std::fill(dc.full.counts.begin(), dc.full.counts.end(), 0U);
    for (std::size_t m = 0; m < l; ++m) {
      for (std::size_t p = 0; p < d; ++p) {
        if (quantize_unified(pre(m, p), theta[p])) {
          hidden.set_bit(m, p, true);
        } else {
          ++dc.full.counts[m];
        }
      }
    }
    linear_loop(f2, hidden, z_blocks[r], &dc.full, opts, counters,
                [&](std::size_t m, std::size_t p, std::int64_t v) { partial(m, p) = static_cast<std::int32_t>(v); });
    for (std::size_t i = 0; i < acc.data().size(); ++i) acc.data()[i] += partial.data()[i];
  }
  return acc;
}

IntMatrix ffn_monolithic(const BitMatrix& x, const BitMatrix& y_full, const BitMatrix& z_full,
                         const ThetaVector& theta_f1, const ModelConfig& cfg,
                         const EngineOptions& opts, EngineCounters* counters) {
  const RbmmMode f1 = RbmmMode::ffn_full(ModeTag::F1_FFN1, cfg);
  const RbmmMode f2 = RbmmMode::ffn_full(ModeTag::F2_FFN2, cfg);
  RbmmInputs in1;
  in1.a = &x;
  in1.b = &y_full;
  in1.theta = &theta_f1;
  const RbmmOutput hidden = rbmm_execute(f1, in1, opts, counters);
  IntMatrix acc(x.rows(), cfg.d);
  RbmmInputs in2;
  in2.a = &*hidden.binary;
  in2.dc_in = &hidden.dc_return;
  in2.b = &z_full;
  in2.accumulator = &acc;
  rbmm_execute(f2, in2, opts, counters);
  return acc;
}

}  // namespace cobra
