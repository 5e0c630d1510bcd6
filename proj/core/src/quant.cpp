// SPDX-License-Identifier: Apache-2.0
#include "cobra/quant.hpp"

#include <algorithm>
#include <cmath>

#include "cobra/error.hpp"

namespace cobra {

void QuantParams::validate() const {
  if (alpha == 0) throw DomainError("QuantParams: alpha must be >= 1");
  if (relu_fused && scheme != Scheme::Unsigned01)
    throw DomainError("QuantParams: ReLU fusion requires an Unsigned01 output");
}

std::int64_t round_half_up(double x) noexcept {
  const double f = std::floor(x);
  return static_cast<std::int64_t>(f) + (x - f >= 0.5 ? 1 : 0);
}

ThetaVector compute_theta(const QuantParams& q) {
  q.validate();
  ThetaVector t;
  t.theta.reserve(q.beta.size());
  for (std::int32_t b : q.beta) {
    if (q.scheme == Scheme::SignedPM1) {
      t.theta.push_back(b);
      continue;
    }
    // alpha/2 + beta is an integer or a half-integer; 2*beta + alpha is exact.
    const std::int64_t twice = 2 * static_cast<std::int64_t>(b) + q.alpha;
    std::int64_t theta = round_half_up(static_cast<double>(twice) / 2.0);
    if (q.relu_fused) theta = std::max<std::int64_t>(0, theta);
    t.theta.push_back(static_cast<std::int32_t>(theta));
  }
  return t;
}

}  // namespace cobra
