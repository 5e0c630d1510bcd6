// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "cobra/matrix.hpp"

namespace cobra::test {

inline IntMatrix make_matrix(std::size_t rows, std::size_t cols, std::initializer_list<int> values) {
  IntMatrix m(rows, cols);
  std::size_t i = 0;
  for (int v : values) m.data()[i++] = v;
  return m;
}

// Plain dot product, independent of the packed kernels.
inline std::int64_t dot(const std::vector<int>& a, const std::vector<int>& b) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::int64_t{a[i]} * b[i];
  return s;
}

}  // namespace cobra::test
