// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "cobra/bitpack.hpp"
#include "cobra/matrix.hpp"

namespace cobra {

enum class Granularity : std::uint8_t { PerLayer, PerHead, PerRow };

const char* to_string(Granularity g) noexcept;
/// Accepts "layer", "head", "row". Throws FormatError otherwise.
Granularity parse_granularity(std::string_view s);

/// Integer popcount threshold T equivalent to the normalized-score test
/// (2p - head_dim) / sqrt(head_dim) >= lambda, i.e. the smallest p in
/// [0, head_dim + 1] satisfying it. head_dim + 1 means "never".
std::int32_t popcount_threshold(double lambda, std::uint32_t head_dim);

/// Real-valued SPS test on a normalized score.
inline bool sps_decide(double z, double lambda) noexcept { return z >= lambda; }

/// Engine-ready thresholds for one attention layer: a popcount threshold per
/// head, or per (head, query row) for row granularity.
struct AttentionThresholds {
  std::uint32_t heads = 0;
  std::uint32_t rows = 1;  ///< 1 unless thresholds are per query row
  std::uint32_t head_dim = 0;
  std::vector<double> lambda;       ///< heads x rows
  std::vector<std::int32_t> popcount;  ///< heads x rows

  double lambda_at(std::uint32_t head, std::uint32_t row) const noexcept {
    return lambda[head * rows + (rows == 1 ? 0 : row)];
  }
  std::int32_t threshold(std::uint32_t head, std::uint32_t row) const noexcept {
    return popcount[head * rows + (rows == 1 ? 0 : row)];
  }
};

/// Searched or loaded SPS thresholds for a whole model. Lambdas are stored
/// per unit: one per layer, per (layer, head) or per (layer, head, row).
class SpsThresholds {
 public:
  SpsThresholds() = default;
  /// Throws DomainError for a lambda outside [0, 1] and DimensionError when
  /// `lambdas` does not hold exactly one value per unit.
  SpsThresholds(Granularity g, std::uint32_t layers, std::uint32_t heads, std::uint32_t rows,
                std::uint32_t head_dim, std::vector<double> lambdas);

  Granularity granularity() const noexcept { return granularity_; }
  std::uint32_t layers() const noexcept { return layers_; }
  std::uint32_t heads() const noexcept { return heads_; }
  std::uint32_t rows() const noexcept { return rows_; }
  std::uint32_t head_dim() const noexcept { return head_dim_; }

  std::size_t units_per_layer() const noexcept;
  std::size_t unit_index(std::uint32_t layer, std::uint32_t head, std::uint32_t row) const noexcept;

  double lambda(std::uint32_t layer, std::uint32_t head, std::uint32_t row = 0) const noexcept {
    return lambdas_[unit_index(layer, head, row)];
  }
  std::int32_t threshold(std::uint32_t layer, std::uint32_t head, std::uint32_t row = 0) const noexcept {
    return derived_[unit_index(layer, head, row)];
  }

  const std::vector<double>& lambdas() const noexcept { return lambdas_; }
  const std::vector<std::int32_t>& derived_thresholds() const noexcept { return derived_; }

  /// Achieved distortion per unit; empty unless produced by a search.
  std::vector<double> distortion;

  AttentionThresholds for_layer(std::uint32_t layer) const;

  /// A uniform table (every lambda equal), mostly for tests and synthetic runs.
  static SpsThresholds uniform(Granularity g, std::uint32_t layers, std::uint32_t heads,
                               std::uint32_t rows, std::uint32_t head_dim, double lambda);

 private:
  Granularity granularity_ = Granularity::PerHead;
  std::uint32_t layers_ = 0;
  std::uint32_t heads_ = 0;
  std::uint32_t rows_ = 0;
  std::uint32_t head_dim_ = 0;
  std::vector<double> lambdas_;
  std::vector<std::int32_t> derived_;
};

/// Bit is 1 iff the normalized score is >= lambda.
BitMatrix sps_apply(const RealMatrix& scores, double lambda);

/// Integer path over raw dot products (2p - head_dim): bit is 1 iff the
/// implied popcount p is >= threshold.
BitMatrix sps_apply_raw(const IntMatrix& raw_scores, std::int32_t threshold, std::uint32_t head_dim);

/// Mean squared difference of two binary maps, i.e. Hamming distance / n.
double distortion(const BitMatrix& a, const BitMatrix& b);

/// One calibration sample: binarized Q and K per head (l x d_h, SignedPM1)
/// with the reference attention map per head (l x l, Unsigned01).
struct CalibrationSample {
  std::uint32_t layer = 0;
  std::vector<BitMatrix> q;
  std::vector<BitMatrix> k;
  std::vector<BitMatrix> reference;
};

struct CalibrationSet {
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::uint32_t seq_len = 0;
  std::uint32_t head_dim = 0;
  double sampling_fraction = 0.1;
  std::vector<CalibrationSample> samples;

  /// Throws DimensionError on inconsistent shapes.
  void validate() const;
};

/// Candidate grid {0, step, 2*step, ..., 1}.
std::vector<double> threshold_grid(double step);

/// Grid search of lambda per unit, minimizing mean distortion between the
/// reference maps and the SPS maps over all samples. Ties go to the smallest
/// lambda. Throws Error on an empty calibration set.
SpsThresholds search_thresholds(const CalibrationSet& calib, Granularity granularity,
                                double grid_step = 0.05);

}  // namespace cobra
