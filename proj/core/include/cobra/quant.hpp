// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "cobra/bitpack.hpp"

namespace cobra {

/// Output binarization parameters of one engine execution: scaling factor,
/// per-column shift, target scheme, and whether ReLU is folded in (F1 only).
struct QuantParams {
  std::uint32_t alpha = 1;
  std::vector<std::int32_t> beta;
  Scheme scheme = Scheme::SignedPM1;
  bool relu_fused = false;

  /// Throws DomainError when alpha == 0 or relu_fused is set on a SignedPM1
  /// output.
  void validate() const;

  bool operator==(const QuantParams&) const = default;
};

/// Per-column integer thresholds: output bit j is 1 iff c_j >= theta[j].
struct ThetaVector {
  std::vector<std::int32_t> theta;

  std::size_t size() const noexcept { return theta.size(); }
  bool operator==(const ThetaVector&) const = default;
};

/// Rounds half-integers toward +infinity (floor(x + 1/2)) without the
/// precision loss of adding 0.5 to values just below a half.
std::int64_t round_half_up(double x) noexcept;

/// Folds (alpha, beta, scheme, relu) into integer thresholds:
///   SignedPM1:            theta_j = beta_j
///   Unsigned01:           theta_j = r(alpha/2 + beta_j)
///   Unsigned01 + ReLU:    theta_j = max(0, r(alpha/2 + beta_j))
ThetaVector compute_theta(const QuantParams& q);

constexpr bool quantize_unified(std::int64_t c, std::int64_t theta) noexcept {
  return c - theta >= 0;
}

}  // namespace cobra
