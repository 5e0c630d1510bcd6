// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "cobra/bitpack.hpp"
#include "cobra/config.hpp"
#include "cobra/io.hpp"
#include "cobra/matrix.hpp"
#include "cobra/reference.hpp"
#include "cobra/sps.hpp"

/// Seeded generators for models, inputs and calibration sets. Only raw
/// mt19937_64 output is consumed, so a seed yields the same data on every
/// platform.
namespace cobra::synthetic {

using Rng = std::mt19937_64;

/// Uniform integer in [lo, hi] by rejection sampling.
std::int64_t uniform(Rng& rng, std::int64_t lo, std::int64_t hi);
/// Uniform double in [0, 1) from the top 53 bits.
double unit(Rng& rng);

IntMatrix random_pm1(std::size_t rows, std::size_t cols, Rng& rng);
IntMatrix random_01(std::size_t rows, std::size_t cols, Rng& rng);
BitMatrix random_bits(std::size_t rows, std::size_t cols, Scheme scheme, Rng& rng);

/// Weights plus quantization and LayerNorm parameters chosen so that every
/// binarization stage produces a mix of both values.
reference::LayerParams random_layer(const ModelConfig& cfg, Rng& rng);
io::RawModel random_model(const ModelConfig& cfg, std::uint64_t seed);

/// Random SignedPM1 l x d input; with `padded` a random valid length masks the rest.
io::InputTensor random_input(const ModelConfig& cfg, std::uint64_t seed, bool padded = false);

/// Calibration samples whose K rows are noisy copies of permuted Q rows, with
/// reference maps from the elastic binarization of softmax attention.
/// `alpha` <= 0 selects 2 / seq_len.
CalibrationSet random_calibration(std::uint32_t layers, std::uint32_t heads, std::uint32_t seq_len,
                                  std::uint32_t head_dim, std::uint32_t samples, std::uint64_t seed,
                                  double alpha = 0.0);

}  // namespace cobra::synthetic
