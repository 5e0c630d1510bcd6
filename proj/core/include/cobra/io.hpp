// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cobra/bitpack.hpp"
#include "cobra/config.hpp"
#include "cobra/matrix.hpp"
#include "cobra/pipeline.hpp"
#include "cobra/reference.hpp"
#include "cobra/sps.hpp"

/// Binary formats are little-endian throughout. Every file starts with a
/// 4-byte magic and a u32 version. Packed matrices use the blob layout
///   rows u32, cols u32, scheme u8, 3 zero bytes, rows * ceil(cols/64) u64 words
/// with LSB-first, row-major bit order and zero pad bits.
namespace cobra::io {

inline constexpr std::uint32_t kFormatVersion = 1;

using Bytes = std::vector<std::uint8_t>;

/// Little-endian encoder into a byte buffer.
class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i16(std::int16_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void blob(const BitMatrix& m);

  const Bytes& bytes() const noexcept { return out_; }

 private:
  Bytes out_;
};

/// Little-endian decoder. Every failure throws FormatError naming the source,
/// the byte offset and the field being read.
class Reader {
 public:
  Reader(const Bytes& data, std::string source) : data_(data), source_(std::move(source)) {}

  std::uint8_t u8(const char* field);
  std::uint32_t u32(const char* field);
  std::int32_t i32(const char* field) { return static_cast<std::int32_t>(u32(field)); }
  std::int16_t i16(const char* field);
  std::uint64_t u64(const char* field);
  double f64(const char* field);
  std::string str(std::size_t n, const char* field);
  BitMatrix blob(const std::string& field);
  void magic(std::string_view expected);
  void expect_end();

  std::size_t offset() const noexcept { return pos_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n, const char* field);

  const Bytes& data_;
  std::string source_;
  std::size_t pos_ = 0;
};

Bytes read_file(const std::filesystem::path& path);
/// Writes atomically enough for a CLI: temp file then rename.
void write_file(const std::filesystem::path& path, const Bytes& data);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// "CBRW": config block, then per layer W_Q, W_K, W_V, W_O, Y_1..Y_R,
/// Z_1..Z_R blobs, QuantParams records, LayerNorm arrays; then a u32-length
/// threshold table path.
struct WeightFile {
  ModelConfig config;
  std::vector<LayerWeights> layers;
  std::string threshold_ref;
};
Bytes encode_weights(const WeightFile& w);
WeightFile decode_weights(const Bytes& data, const std::string& source = "weights");

/// "CBRR": raw interchange weights. Config block, then per layer i8 matrices
/// W_Q, W_K, W_V, W_O (d x d), Y (d x FF), Z (FF x d) in natural row-major
/// orientation, QuantParams records and LayerNorm arrays. Values must lie in
/// {-1, 0, 1}; 0 is later rejected by the SignedPM1 packer.
struct RawModel {
  ModelConfig config;
  std::vector<reference::LayerParams> layers;
};
Bytes encode_raw(const RawModel& m);
RawModel decode_raw(const Bytes& data, const std::string& source = "raw weights");

/// Packs natural-orientation weights into engine layout. Throws DomainError
/// naming the layer, matrix, row and column of any value outside {-1, 1}.
LayerWeights pack_layer(const reference::LayerParams& p, const ModelConfig& cfg, std::size_t layer = 0);
WeightFile pack_model(const RawModel& m, std::string threshold_ref = {});

/// Threshold table text: header lines (granularity, layers, heads, rows,
/// head_dim) then one "layer head row lambda threshold [distortion]" line per
/// unit. Lambdas are written with three decimals.
std::string encode_thresholds(const SpsThresholds& t);
SpsThresholds decode_thresholds(std::string_view text, const std::string& source = "thresholds");

/// "CBRC": calibration set. Header u32 layers, heads, seq_len, head_dim, f64
/// sampling fraction, u32 sample count; per sample a u32 layer and per head
/// the Q, K and reference blobs followed by the l x l f64 plane of normalized
/// scores Q K^T / sqrt(d_h).
Bytes encode_calibration(const CalibrationSet& c);
CalibrationSet decode_calibration(const Bytes& data, const std::string& source = "calibration");

/// "CBRT": input hidden matrix blob, then u32 mask length and boundaries.
struct InputTensor {
  BitMatrix hidden;
  AttentionMask mask;
};
Bytes encode_input(const InputTensor& t);
InputTensor decode_input(const Bytes& data, const std::string& source = "input");

/// "CBRO": final hidden blob, then u32 rows, u32 cols and i32 logits.
Bytes encode_output(const LayerOutput& o);
LayerOutput decode_output(const Bytes& data, const std::string& source = "output");

/// key=value manifest. Unknown keys are rejected.
struct RunManifest {
  std::string config;
  std::string weights;
  std::string thresholds;
  std::string input;
  std::string output;
  std::string calibration;
  std::string popcount = "native";
  std::string schedule = "pipelined";
  std::string granularity = "head";
  double grid_step = 0.05;
  bool spill_emulation = false;
  std::uint64_t seed = 0;

  /// Relative paths are resolved against `base_dir`.
  static RunManifest parse(std::string_view text, const std::filesystem::path& base_dir = {});
  std::string to_text() const;
};

}  // namespace cobra::io
