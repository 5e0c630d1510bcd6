// SPDX-License-Identifier: Apache-2.0
#include "cobra/sps.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "cobra/error.hpp"

namespace cobra {
namespace {

bool passes(std::int64_t popcount, std::uint32_t head_dim, double lambda) {
  const double raw = static_cast<double>(2 * popcount - static_cast<std::int64_t>(head_dim));
  return sps_decide(raw / std::sqrt(static_cast<double>(head_dim)), lambda);
}

}  // namespace

const char* to_string(Granularity g) noexcept {
  switch (g) {
    case Granularity::PerLayer: return "layer";
    case Granularity::PerHead: return "head";
    case Granularity::PerRow: return "row";
  }
  return "?";
}

Granularity parse_granularity(std::string_view s) {
  if (s == "layer") return Granularity::PerLayer;
  if (s == "head") return Granularity::PerHead;
  if (s == "row") return Granularity::PerRow;
  throw FormatError("unknown threshold granularity '" + std::string(s) + "'");
}

std::int32_t popcount_threshold(double lambda, std::uint32_t head_dim) {
  if (head_dim == 0) throw DimensionError("popcount_threshold: head_dim must be positive");
  const double dh = static_cast<double>(head_dim);
  auto t = static_cast<std::int64_t>(std::ceil((lambda * std::sqrt(dh) + dh) / 2.0));
  t = std::clamp<std::int64_t>(t, 0, std::int64_t{head_dim} + 1);
  // Settle the floating-point boundary against the normalized-score test itself.
  while (t > 0 && passes(t - 1, head_dim, lambda)) --t;
  while (t <= head_dim && !passes(t, head_dim, lambda)) ++t;
  return static_cast<std::int32_t>(t);
}

SpsThresholds::SpsThresholds(Granularity g, std::uint32_t layers, std::uint32_t heads,
                             std::uint32_t rows, std::uint32_t head_dim, std::vector<double> lambdas)
    : granularity_(g),
      layers_(layers),
      heads_(heads),
      rows_(rows),
      head_dim_(head_dim),
      lambdas_(std::move(lambdas)) {
  if (layers_ == 0 || heads_ == 0 || head_dim_ == 0 || (g == Granularity::PerRow && rows_ == 0))
    throw DimensionError("SpsThresholds: layers, heads, head_dim (and rows) must be positive");
  const std::size_t expected = std::size_t{layers_} * units_per_layer();
  if (lambdas_.size() != expected) {
    throw DimensionError("SpsThresholds: expected " + std::to_string(expected) +
                         " lambdas, got " + std::to_string(lambdas_.size()));
  }
  derived_.reserve(lambdas_.size());
  for (double v : lambdas_) {
    if (!(v >= 0.0 && v <= 1.0))
      throw DomainError("SpsThresholds: lambda " + std::to_string(v) + " outside [0, 1]");
    derived_.push_back(popcount_threshold(v, head_dim_));
  }
}

std::size_t SpsThresholds::units_per_layer() const noexcept {
  switch (granularity_) {
    case Granularity::PerLayer: return 1;
    case Granularity::PerHead: return heads_;
    case Granularity::PerRow: return std::size_t{heads_} * rows_;
  }
  return 0;
}

std::size_t SpsThresholds::unit_index(std::uint32_t layer, std::uint32_t head,
                                      std::uint32_t row) const noexcept {
  const std::size_t base = std::size_t{layer} * units_per_layer();
  switch (granularity_) {
    case Granularity::PerLayer: return base;
    case Granularity::PerHead: return base + head;
    case Granularity::PerRow: return base + std::size_t{head} * rows_ + row;
  }
  return base;
}

AttentionThresholds SpsThresholds::for_layer(std::uint32_t layer) const {
  if (layer >= layers_) throw DimensionError("SpsThresholds: layer index out of range");
  AttentionThresholds t;
  t.heads = heads_;
  t.rows = granularity_ == Granularity::PerRow ? rows_ : 1;
  t.head_dim = head_dim_;
  for (std::uint32_t hd = 0; hd < heads_; ++hd) {
    for (std::uint32_t r = 0; r < t.rows; ++r) {
      t.lambda.push_back(lambda(layer, hd, r));
      t.popcount.push_back(threshold(layer, hd, r));
    }
  }
  return t;
}

SpsThresholds SpsThresholds::uniform(Granularity g, std::uint32_t layers, std::uint32_t heads,
                                     std::uint32_t rows, std::uint32_t head_dim, double lambda) {
  std::size_t units = g == Granularity::PerLayer ? 1 : g == Granularity::PerHead ? heads : std::size_t{heads} * rows;
  return SpsThresholds(g, layers, heads, rows, head_dim,
                       std::vector<double>(std::size_t{layers} * units, lambda));
}

BitMatrix sps_apply(const RealMatrix& scores, double lambda) {
  BitMatrix out(scores.rows(), scores.cols(), Scheme::Unsigned01);
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t j = 0; j < scores.cols(); ++j)
      if (sps_decide(scores(i, j), lambda)) out.set_bit(i, j, true);
  return out;
}

BitMatrix sps_apply_raw(const IntMatrix& raw_scores, std::int32_t threshold, std::uint32_t head_dim) {
  BitMatrix out(raw_scores.rows(), raw_scores.cols(), Scheme::Unsigned01);
  for (std::size_t i = 0; i < raw_scores.rows(); ++i) {
    for (std::size_t j = 0; j < raw_scores.cols(); ++j) {
      const std::int64_t twice_p = std::int64_t{raw_scores(i, j)} + head_dim;
      if (twice_p < 0 || twice_p % 2 != 0 || twice_p > 2 * std::int64_t{head_dim})
        throw DomainError("sps_apply_raw: " + std::to_string(raw_scores(i, j)) +
                          " is not a raw score of a " + std::to_string(head_dim) + "-bit dot product");
      if (twice_p / 2 >= threshold) out.set_bit(i, j, true);
    }
  }
  return out;
}

double distortion(const BitMatrix& a, const BitMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("distortion: map shapes differ");
  const std::size_t n = a.rows() * a.cols();
  if (n == 0) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.words().size(); ++i)
    diff += static_cast<std::size_t>(std::popcount(a.words()[i] ^ b.words()[i]));
  return static_cast<double>(diff) / static_cast<double>(n);
}

void CalibrationSet::validate() const {
  auto fail = [](const std::string& why) { throw DimensionError("CalibrationSet: " + why); };
  if (layers == 0 || heads == 0 || seq_len == 0 || head_dim == 0) fail("empty dimensions");
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& smp = samples[s];
    const std::string at = "sample " + std::to_string(s) + ": ";
    if (smp.layer >= layers) fail(at + "layer index out of range");
    if (smp.q.size() != heads || smp.k.size() != heads || smp.reference.size() != heads)
      fail(at + "expected one Q, K and reference map per head");
    for (std::uint32_t hd = 0; hd < heads; ++hd) {
      const auto& q = smp.q[hd];
      const auto& k = smp.k[hd];
      const auto& r = smp.reference[hd];
      if (q.rows() != seq_len || q.cols() != head_dim || q.scheme() != Scheme::SignedPM1 ||
          k.rows() != seq_len || k.cols() != head_dim || k.scheme() != Scheme::SignedPM1)
        fail(at + "Q/K must be SignedPM1 l x d_h");
      if (r.rows() != seq_len || r.cols() != seq_len || r.scheme() != Scheme::Unsigned01)
        fail(at + "reference map must be Unsigned01 l x l");
    }
  }
}

std::vector<double> threshold_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw DomainError("threshold_grid: step must lie in (0, 1]");
  const auto count = static_cast<std::size_t>(std::floor(1.0 / step + 1e-9));
  std::vector<double> grid;
  grid.reserve(count + 1);
  // Snap to 1e-9 so grid points equal their decimal spelling (3 * 0.05 == 0.15).
  for (std::size_t k = 0; k <= count; ++k)
    grid.push_back(std::min(1.0, std::round(static_cast<double>(k) * step * 1e9) / 1e9));
  return grid;
}

SpsThresholds search_thresholds(const CalibrationSet& calib, Granularity granularity, double grid_step) {
  if (calib.samples.empty()) throw Error("search_thresholds: empty calibration set");
  calib.validate();
  const std::vector<double> grid = threshold_grid(grid_step);
  const std::uint32_t dh = calib.head_dim;

  // Placeholder table only used for its unit indexing.
  const SpsThresholds layout = SpsThresholds::uniform(granularity, calib.layers, calib.heads,
                                                      calib.seq_len, dh, 0.0);
  const std::size_t units = layout.lambdas().size();
  const std::size_t bins = std::size_t{dh} + 1;
  // Per unit: counts of popcount values, split by reference bit.
  std::vector<std::uint64_t> hist(units * 2 * bins, 0);
  std::vector<bool> seen_layer(calib.layers, false);

  for (const auto& smp : calib.samples) {
    seen_layer[smp.layer] = true;
    for (std::uint32_t hd = 0; hd < calib.heads; ++hd) {
      const BitMatrix& q = smp.q[hd];
      const BitMatrix& k = smp.k[hd];
      const BitMatrix& ref = smp.reference[hd];
      const std::uint64_t last = tail_mask(dh);
      for (std::uint32_t i = 0; i < calib.seq_len; ++i) {
        const std::size_t u = layout.unit_index(smp.layer, hd, i);
        std::uint64_t* h = hist.data() + u * 2 * bins;
        const auto qw = q.row_words(i);
        for (std::uint32_t j = 0; j < calib.seq_len; ++j) {
          const auto kw = k.row_words(j);
          std::size_t p = 0;
          for (std::size_t w = 0; w < qw.size(); ++w) {
            std::uint64_t x = ~(qw[w] ^ kw[w]);
            if (w + 1 == qw.size()) x &= last;
            p += static_cast<std::size_t>(std::popcount(x));
          }
          ++h[(ref.bit(i, j) ? bins : 0) + p];
        }
      }
    }
  }
  for (std::uint32_t layer = 0; layer < calib.layers; ++layer)
    if (!seen_layer[layer])
      throw Error("search_thresholds: no calibration samples for layer " + std::to_string(layer));

  std::vector<std::int32_t> grid_t;
  for (double v : grid) grid_t.push_back(popcount_threshold(v, dh));

  std::vector<double> best_lambda(units, 0.0);
  std::vector<double> best_distortion(units, 0.0);
  for (std::size_t u = 0; u < units; ++u) {
    const std::uint64_t* zeros = hist.data() + u * 2 * bins;
    const std::uint64_t* ones = zeros + bins;
    std::uint64_t total = 0;
    for (std::size_t p = 0; p < bins; ++p) total += zeros[p] + ones[p];
    std::uint64_t best = ~std::uint64_t{0};
    for (std::size_t g = 0; g < grid.size(); ++g) {
      // SPS bit is 1 for p >= T: mismatches are reference ones below T and
      // reference zeros at or above T.
      std::uint64_t miss = 0;
      for (std::size_t p = 0; p < bins; ++p)
        miss += static_cast<std::int64_t>(p) < grid_t[g] ? ones[p] : zeros[p];
      if (miss < best) {
        best = miss;
        best_lambda[u] = grid[g];
        best_distortion[u] = total == 0 ? 0.0 : static_cast<double>(miss) / static_cast<double>(total);
      }
    }
  }
  SpsThresholds out(granularity, calib.layers, calib.heads, calib.seq_len, dh, std::move(best_lambda));
  out.distortion = std::move(best_distortion);
  return out;
}

}  // namespace cobra
