// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cobra/error.hpp"
#include "cobra/reference.hpp"
#include "cobra/synthetic.hpp"
#include "test_util.hpp"

namespace cobra {
namespace {

TEST(Softmax, SingleElementIsOne) {
  const std::vector<double> z{0.0};
  EXPECT_EQ(reference::softmax_row(z), std::vector<double>{1.0});
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  const std::vector<double> z{1.0, -2.0, 3.5, 0.25};
  std::vector<double> shifted = z;
  for (auto& v : shifted) v += 700.0;
  const auto a = reference::softmax_row(z), b = reference::softmax_row(shifted);
  EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-12);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  EXPECT_THROW(reference::softmax_row({}), Error);
}

TEST(Matmul, HandExample) {
  const IntMatrix a = test::make_matrix(2, 3, {1, -1, 1, -1, -1, 1});
  const IntMatrix b = test::make_matrix(3, 2, {1, 1, -1, 1, 1, -1});
  EXPECT_EQ(reference::matmul(a, b), test::make_matrix(2, 2, {3, -1, 1, -3}));
  EXPECT_THROW(reference::matmul(a, a), DimensionError);
}

TEST(BitAttention, LargeAlphaGivesZerosForUniformScores) {
  const BitMatrix q(4, 4, Scheme::SignedPM1);
  const IntMatrix m = reference::bit_attention_prob(q, q, 1.0);
  for (auto v : m.data()) EXPECT_EQ(v, 0);
}

TEST(BitAttention, QuarterAlphaGivesOnesForUniformScores) {
  // Every probability is 1/4, so 0.25 / 0.25 rounds to 1.
  const BitMatrix q(4, 4, Scheme::SignedPM1);
  const IntMatrix m = reference::bit_attention_prob(q, q, 0.25);
  for (auto v : m.data()) EXPECT_EQ(v, 1);
  EXPECT_THROW(reference::bit_attention_prob(q, q, 0.0), DomainError);
}

TEST(BitAttention, TwoByTwoHandCase) {
  // Q = [[1,1],[1,-1]], K = [[1,1],[-1,-1]] gives raw scores [[2,-2],[0,0]].
  BitMatrix q(2, 2, Scheme::SignedPM1), k(2, 2, Scheme::SignedPM1);
  q.set_bit(0, 0, true);
  q.set_bit(0, 1, true);
  q.set_bit(1, 0, true);
  k.set_bit(0, 0, true);
  k.set_bit(0, 1, true);
  const double p = 1.0 / (1.0 + std::exp(-4.0 / std::sqrt(2.0)));
  ASSERT_GT(p, 0.9);
  const IntMatrix m = reference::bit_attention_prob(q, k, 0.5);
  EXPECT_EQ(m, test::make_matrix(2, 2, {1, 0, 1, 1}));
}

TEST(Quantize, TwoStepExamples) {
  QuantParams s;
  s.beta = {2};
  EXPECT_EQ(reference::quantize_two_step(2, s, 0), 1);
  EXPECT_EQ(reference::quantize_two_step(1, s, 0), -1);
  QuantParams u;
  u.scheme = Scheme::Unsigned01;
  u.alpha = 4;
  u.beta = {0};
  EXPECT_EQ(reference::quantize_two_step(1, u, 0), 0);
  EXPECT_EQ(reference::quantize_two_step(2, u, 0), 1);
  EXPECT_EQ(reference::quantize_two_step(100, u, 0), 1);
  u.relu_fused = true;
  u.beta = {-10};
  EXPECT_EQ(reference::quantize_two_step(-1, u, 0), 0);
  EXPECT_EQ(reference::quantize_two_step(0, u, 0), 1);
}

TEST(LayerNormOracle, ConstantRowMapsToBias) {
  const std::vector<std::int32_t> x(8, 5);
  const std::vector<std::int16_t> gain(8, 256), bias(8, 0);
  for (auto v : reference::layernorm_q88(x, gain, bias)) EXPECT_EQ(v, 0);
}

TEST(LayerNormOracle, SymmetricPair) {
  const std::vector<std::int32_t> x{-1, 1};
  const std::vector<std::int16_t> gain(2, 256), bias(2, 0);
  const auto y = reference::layernorm_q88(x, gain, bias);
  EXPECT_NEAR(y[0] / 256.0, -1.0, 1.0 / 64);
  EXPECT_NEAR(y[1] / 256.0, 1.0, 1.0 / 64);
  const std::vector<double> g(2, 1.0), b(2, 0.0);
  const auto r = reference::layernorm_real(x, g, b, 0.0);
  EXPECT_DOUBLE_EQ(r[0], -1.0);
  EXPECT_DOUBLE_EQ(r[1], 1.0);
}

TEST(ModePipeline, ShapeMismatchIsRejected) {
  reference::ModeInputs in;
  in.tag = ModeTag::M4_Linear;
  in.a = IntMatrix(2, 3);
  in.b = IntMatrix(4, 2);
  EXPECT_THROW(reference::reference_mode_pipeline(in), DimensionError);
}

TEST(ModePipeline, M4IsPlainProduct) {
  synthetic::Rng rng(61);
  reference::ModeInputs in;
  in.tag = ModeTag::M4_Linear;
  in.a = synthetic::random_pm1(5, 7, rng);
  in.b = synthetic::random_pm1(7, 3, rng);
  EXPECT_EQ(reference::reference_mode_pipeline(in).values, reference::matmul(in.a, in.b));
}

}  // namespace
}  // namespace cobra
