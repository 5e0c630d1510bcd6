// SPDX-License-Identifier: Apache-2.0
#include "cobra/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "cobra/error.hpp"

namespace cobra::io {
namespace {

constexpr std::size_t kQuantSlots = 7;

void write_config(Writer& w, const ModelConfig& c) {
  for (std::uint32_t v : {c.d, c.h, c.head_dim(), c.l, c.ff_size, c.ffn_blocks(), c.num_layers, c.n_pe})
    w.u32(v);
}

ModelConfig read_config(Reader& r) {
  ModelConfig c;
  c.d = r.u32("config.d");
  c.h = r.u32("config.h");
  const std::uint32_t dh = r.u32("config.d_h");
  c.l = r.u32("config.l");
  c.ff_size = r.u32("config.ff_size");
  const std::uint32_t blocks = r.u32("config.R");
  c.num_layers = r.u32("config.layers");
  c.n_pe = r.u32("config.n_pe");
  try {
    c.validate();
  } catch (const Error& e) {
    r.fail(std::string("invalid config block: ") + e.what());
  }
  if (dh != c.head_dim() || blocks != c.ffn_blocks())
    r.fail("config block d_h/R disagree with d, h and ff_size");
  return c;
}

void write_quant(Writer& w, const QuantParams& q) {
  w.u32(q.alpha);
  w.u8(static_cast<std::uint8_t>(q.scheme));
  w.u8(q.relu_fused ? 1 : 0);
  w.u8(0);
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(q.beta.size()));
  for (auto b : q.beta) w.i32(b);
}

QuantParams read_quant(Reader& r, std::size_t expected_len) {
  QuantParams q;
  q.alpha = r.u32("quant.alpha");
  const auto scheme = r.u8("quant.scheme");
  const auto relu = r.u8("quant.relu");
  r.u8("quant.pad");
  r.u8("quant.pad");
  if (scheme > 1 || relu > 1) r.fail("quant record has an invalid scheme or relu flag");
  q.scheme = static_cast<Scheme>(scheme);
  q.relu_fused = relu == 1;
  const auto n = r.u32("quant.count");
  if (n != expected_len) r.fail("quant record holds " + std::to_string(n) + " shifts, expected " +
                                std::to_string(expected_len));
  q.beta.resize(n);
  for (auto& b : q.beta) b = r.i32("quant.beta");
  try {
    q.validate();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  return q;
}

std::array<const QuantParams*, kQuantSlots> quant_slots(const LayerWeights& w) {
  return {&w.q_q, &w.q_k, &w.q_v, &w.q_ctx, &w.q_ffn1, &w.q_ln1, &w.q_ln2};
}
std::array<QuantParams*, kQuantSlots> quant_slots(LayerWeights& w) {
  return {&w.q_q, &w.q_k, &w.q_v, &w.q_ctx, &w.q_ffn1, &w.q_ln1, &w.q_ln2};
}
std::array<const QuantParams*, kQuantSlots> quant_slots(const reference::LayerParams& w) {
  return {&w.q_q, &w.q_k, &w.q_v, &w.q_ctx, &w.q_ffn1, &w.q_ln1, &w.q_ln2};
}
std::array<QuantParams*, kQuantSlots> quant_slots(reference::LayerParams& w) {
  return {&w.q_q, &w.q_k, &w.q_v, &w.q_ctx, &w.q_ffn1, &w.q_ln1, &w.q_ln2};
}

std::size_t slot_width(std::size_t slot, const ModelConfig& c) { return slot == 4 ? c.ff_size : c.d; }

void write_i16s(Writer& w, const std::vector<std::int16_t>& v) {
  for (auto x : v) w.i16(x);
}
std::vector<std::int16_t> read_i16s(Reader& r, std::size_t n, const char* field) {
  std::vector<std::int16_t> v(n);
  for (auto& x : v) x = r.i16(field);
  return v;
}

std::vector<std::int16_t> raw_of(const std::vector<FixedPoint16>& v) {
  std::vector<std::int16_t> out;
  out.reserve(v.size());
  for (auto x : v) out.push_back(x.raw);
  return out;
}
std::vector<FixedPoint16> fixed_of(const std::vector<std::int16_t>& v) {
  std::vector<FixedPoint16> out;
  out.reserve(v.size());
  for (auto x : v) out.push_back(FixedPoint16{x});
  return out;
}

void write_i8_matrix(Writer& w, const IntMatrix& m) {
  for (auto v : m.data()) w.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(v)));
}

IntMatrix read_i8_matrix(Reader& r, std::size_t rows, std::size_t cols, const std::string& name) {
  IntMatrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t at = r.offset();
      const auto v = static_cast<std::int8_t>(r.u8(name.c_str()));
      if (v < -1 || v > 1) {
        std::ostringstream os;
        os << name << " value " << int{v} << " at row " << i << ", column " << j << " (byte " << at
           << ") is outside {-1, 0, 1}";
        r.fail(os.str());
      }
      m(i, j) = v;
    }
  }
  return m;
}

std::string join(std::size_t layer, const char* name) {
  return "layer " + std::to_string(layer) + " " + name;
}

BitMatrix pack_weight(const IntMatrix& m, std::size_t layer, const char* name) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (m(i, j) != 1 && m(i, j) != -1)
        throw DomainError(join(layer, name) + ": value " + std::to_string(m(i, j)) + " at row " +
                          std::to_string(i) + ", column " + std::to_string(j) +
                          " is not a SignedPM1 value");
  return pack_columns(m, Scheme::SignedPM1);
}

IntMatrix block(const IntMatrix& m, std::size_t r0, std::size_t c0, std::size_t rows, std::size_t cols) {
  IntMatrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = m(r0 + i, c0 + j);
  return out;
}

void check_shape(const IntMatrix& m, std::size_t rows, std::size_t cols, std::size_t layer, const char* name) {
  if (m.rows() != rows || m.cols() != cols)
    throw DimensionError(join(layer, name) + " must be " + std::to_string(rows) + "x" + std::to_string(cols));
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& s, const std::string& where) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) throw FormatError(where + ": bad number '" + s + "'");
  return v;
}

double parse_real(const std::string& s, const std::string& where) {
  std::istringstream is(s);
  is.imbue(std::locale::classic());
  double v = 0;
  if (!(is >> v) || !is.eof()) throw FormatError(where + ": bad number '" + s + "'");
  return v;
}

}  // namespace

void Writer::u32(std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void Writer::i16(std::int16_t v) {
  const auto u = static_cast<std::uint16_t>(v);
  out_.push_back(static_cast<std::uint8_t>(u));
  out_.push_back(static_cast<std::uint8_t>(u >> 8));
}

void Writer::u64(std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::blob(const BitMatrix& m) {
  u32(static_cast<std::uint32_t>(m.rows()));
  u32(static_cast<std::uint32_t>(m.cols()));
  u8(static_cast<std::uint8_t>(m.scheme()));
  u8(0);
  u8(0);
  u8(0);
  for (auto w : m.words()) u64(w);
}

void Reader::fail(const std::string& what) const {
  throw FormatError(source_ + ": offset " + std::to_string(pos_) + ": " + what);
}

void Reader::need(std::size_t n, const char* field) {
  if (data_.size() - pos_ < n) fail(std::string("truncated while reading ") + field);
}

std::uint8_t Reader::u8(const char* field) {
  need(1, field);
  return data_[pos_++];
}

std::uint32_t Reader::u32(const char* field) {
  need(4, field);
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= std::uint32_t{data_[pos_ + b]} << (8 * b);
  pos_ += 4;
  return v;
}

std::int16_t Reader::i16(const char* field) {
  need(2, field);
  const auto u = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return static_cast<std::int16_t>(u);
}

std::uint64_t Reader::u64(const char* field) {
  need(8, field);
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= std::uint64_t{data_[pos_ + b]} << (8 * b);
  pos_ += 8;
  return v;
}

double Reader::f64(const char* field) { return std::bit_cast<double>(u64(field)); }

std::string Reader::str(std::size_t n, const char* field) {
  need(n, field);
  std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return s;
}

BitMatrix Reader::blob(const std::string& field) {
  const char* f = field.c_str();
  const std::size_t start = pos_;
  const auto rows = u32(f);
  const auto cols = u32(f);
  const auto scheme = u8(f);
  if (scheme > 1) fail(field + ": unknown scheme " + std::to_string(scheme));
  for (int i = 0; i < 3; ++i)
    if (u8(f) != 0) fail(field + ": nonzero header padding");
  const std::size_t nwords = std::size_t{rows} * words_for_bits(cols);
  if ((data_.size() - pos_) / 8 < nwords) fail(std::string("truncated while reading ") + field);
  std::vector<std::uint64_t> words(nwords);
  for (auto& w : words) w = u64(f);
  try {
    return BitMatrix::from_words(rows, cols, static_cast<Scheme>(scheme), std::move(words));
  } catch (const Error& e) {
    pos_ = start;
    fail(field + ": " + e.what());
  }
}

void Reader::magic(std::string_view expected) {
  if (str(4, "magic") != expected) {
    pos_ = 0;
    fail("bad magic, expected \"" + std::string(expected) + "\"");
  }
  const auto version = u32("version");
  if (version != kFormatVersion) fail("unsupported version " + std::to_string(version));
}

void Reader::expect_end() {
  if (pos_ != data_.size()) fail(std::to_string(data_.size() - pos_) + " trailing bytes");
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const Bytes& data) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw FormatError(path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, Bytes(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

Bytes encode_weights(const WeightFile& f) {
  f.config.validate();
  if (f.layers.size() != f.config.num_layers)
    throw DimensionError("encode_weights: layer count disagrees with config");
  Writer w;
  w.raw("CBRW");
  w.u32(kFormatVersion);
  write_config(w, f.config);
  for (const auto& layer : f.layers) {
    layer.validate(f.config);
    for (const auto* m : {&layer.wq, &layer.wk, &layer.wv, &layer.wo}) w.blob(*m);
    for (const auto& m : layer.y_blocks) w.blob(m);
    for (const auto& m : layer.z_blocks) w.blob(m);
    for (const auto* q : quant_slots(layer)) write_quant(w, *q);
    for (const auto* v : {&layer.ln1_gain, &layer.ln1_bias, &layer.ln2_gain, &layer.ln2_bias})
      write_i16s(w, raw_of(*v));
  }
  w.u32(static_cast<std::uint32_t>(f.threshold_ref.size()));
  w.raw(f.threshold_ref);
  return w.bytes();
}

WeightFile decode_weights(const Bytes& data, const std::string& source) {
  Reader r(data, source);
  r.magic("CBRW");
  WeightFile f;
  f.config = read_config(r);
  const std::size_t d = f.config.d;
  for (std::uint32_t li = 0; li < f.config.num_layers; ++li) {
    LayerWeights lw;
    const std::string p = "layer " + std::to_string(li) + " ";
    lw.wq = r.blob(p + "W_Q");
    lw.wk = r.blob(p + "W_K");
    lw.wv = r.blob(p + "W_V");
    lw.wo = r.blob(p + "W_O");
    for (std::uint32_t b = 0; b < f.config.ffn_blocks(); ++b) lw.y_blocks.push_back(r.blob(p + "Y_" + std::to_string(b + 1)));
    for (std::uint32_t b = 0; b < f.config.ffn_blocks(); ++b) lw.z_blocks.push_back(r.blob(p + "Z_" + std::to_string(b + 1)));
    auto slots = quant_slots(lw);
    for (std::size_t s = 0; s < kQuantSlots; ++s) *slots[s] = read_quant(r, slot_width(s, f.config));
    lw.ln1_gain = fixed_of(read_i16s(r, d, "ln1.gain"));
    lw.ln1_bias = fixed_of(read_i16s(r, d, "ln1.bias"));
    lw.ln2_gain = fixed_of(read_i16s(r, d, "ln2.gain"));
    lw.ln2_bias = fixed_of(read_i16s(r, d, "ln2.bias"));
    try {
      lw.validate(f.config);
    } catch (const Error& e) {
      r.fail(p + e.what());
    }
    f.layers.push_back(std::move(lw));
  }
  f.threshold_ref = r.str(r.u32("threshold path length"), "threshold path");
  r.expect_end();
  return f;
}

Bytes encode_raw(const RawModel& m) {
  m.config.validate();
  if (m.layers.size() != m.config.num_layers) throw DimensionError("encode_raw: layer count disagrees with config");
  Writer w;
  w.raw("CBRR");
  w.u32(kFormatVersion);
  write_config(w, m.config);
  const std::size_t d = m.config.d, ff = m.config.ff_size;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& p = m.layers[li];
    for (const auto* x : {&p.wq, &p.wk, &p.wv, &p.wo}) check_shape(*x, d, d, li, "attention weight");
    check_shape(p.y, d, ff, li, "Y");
    check_shape(p.z, ff, d, li, "Z");
    for (const auto* x : {&p.wq, &p.wk, &p.wv, &p.wo, &p.y, &p.z}) write_i8_matrix(w, *x);
    for (const auto* q : quant_slots(p)) write_quant(w, *q);
    for (const auto* v : {&p.ln1_gain, &p.ln1_bias, &p.ln2_gain, &p.ln2_bias}) {
      if (v->size() != d) throw DimensionError(join(li, "LayerNorm parameters") + " must have d entries");
      write_i16s(w, *v);
    }
  }
  return w.bytes();
}

RawModel decode_raw(const Bytes& data, const std::string& source) {
  Reader r(data, source);
  r.magic("CBRR");
  RawModel m;
  m.config = read_config(r);
  const std::size_t d = m.config.d, ff = m.config.ff_size;
  for (std::uint32_t li = 0; li < m.config.num_layers; ++li) {
    reference::LayerParams p;
    const std::string pre = "layer " + std::to_string(li) + " ";
    p.wq = read_i8_matrix(r, d, d, pre + "W_Q");
    p.wk = read_i8_matrix(r, d, d, pre + "W_K");
    p.wv = read_i8_matrix(r, d, d, pre + "W_V");
    p.wo = read_i8_matrix(r, d, d, pre + "W_O");
    p.y = read_i8_matrix(r, d, ff, pre + "Y");
    p.z = read_i8_matrix(r, ff, d, pre + "Z");
    auto slots = quant_slots(p);
    for (std::size_t s = 0; s < kQuantSlots; ++s) *slots[s] = read_quant(r, slot_width(s, m.config));
    p.ln1_gain = read_i16s(r, d, "ln1.gain");
    p.ln1_bias = read_i16s(r, d, "ln1.bias");
    p.ln2_gain = read_i16s(r, d, "ln2.gain");
    p.ln2_bias = read_i16s(r, d, "ln2.bias");
    m.layers.push_back(std::move(p));
  }
  r.expect_end();
  return m;
}

LayerWeights pack_layer(const reference::LayerParams& p, const ModelConfig& cfg, std::size_t layer) {
  cfg.validate();
  const std::size_t d = cfg.d, ff = cfg.ff_size;
  check_shape(p.wq, d, d, layer, "W_Q");
  check_shape(p.wk, d, d, layer, "W_K");
  check_shape(p.wv, d, d, layer, "W_V");
  check_shape(p.wo, d, d, layer, "W_O");
  check_shape(p.y, d, ff, layer, "Y");
  check_shape(p.z, ff, d, layer, "Z");
  LayerWeights w;
  w.wq = pack_weight(p.wq, layer, "W_Q");
  w.wk = pack_weight(p.wk, layer, "W_K");
  w.wv = pack_weight(p.wv, layer, "W_V");
  w.wo = pack_weight(p.wo, layer, "W_O");
  // FFN1 column block r covers Y columns [r*d, (r+1)*d); FFN2 block r covers Z rows.
  for (std::size_t r = 0; r < cfg.ffn_blocks(); ++r) {
    w.y_blocks.push_back(pack_weight(block(p.y, 0, r * d, d, d), layer, "Y"));
    w.z_blocks.push_back(pack_weight(block(p.z, r * d, 0, d, d), layer, "Z"));
  }
  w.q_q = p.q_q;
  w.q_k = p.q_k;
  w.q_v = p.q_v;
  w.q_ctx = p.q_ctx;
  w.q_ffn1 = p.q_ffn1;
  w.q_ln1 = p.q_ln1;
  w.q_ln2 = p.q_ln2;
  w.ln1_gain = fixed_of(p.ln1_gain);
  w.ln1_bias = fixed_of(p.ln1_bias);
  w.ln2_gain = fixed_of(p.ln2_gain);
  w.ln2_bias = fixed_of(p.ln2_bias);
  w.validate(cfg);
  return w;
}

WeightFile pack_model(const RawModel& m, std::string threshold_ref) {
  if (m.layers.size() != m.config.num_layers) throw DimensionError("pack_model: layer count disagrees with config");
  WeightFile f;
  f.config = m.config;
  f.threshold_ref = std::move(threshold_ref);
  for (std::size_t i = 0; i < m.layers.size(); ++i) f.layers.push_back(pack_layer(m.layers[i], m.config, i));
  return f;
}

std::string encode_thresholds(const SpsThresholds& t) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << "granularity=" << to_string(t.granularity()) << "\nlayers=" << t.layers() << "\nheads=" << t.heads()
     << "\nrows=" << t.rows() << "\nhead_dim=" << t.head_dim() << '\n';
  const bool with_distortion = t.distortion.size() == t.lambdas().size();
  os << "# layer head row lambda threshold" << (with_distortion ? " distortion" : "") << '\n';
  const std::uint32_t heads = t.granularity() == Granularity::PerLayer ? 1 : t.heads();
  const std::uint32_t rows = t.granularity() == Granularity::PerRow ? t.rows() : 1;
  for (std::uint32_t layer = 0; layer < t.layers(); ++layer)
    for (std::uint32_t h = 0; h < heads; ++h)
      for (std::uint32_t row = 0; row < rows; ++row) {
        const std::size_t u = t.unit_index(layer, h, row);
        os << layer << ' ' << h << ' ' << row << ' ' << std::fixed << std::setprecision(3) << t.lambdas()[u]
           << ' ' << t.derived_thresholds()[u];
        if (with_distortion) os << ' ' << std::setprecision(6) << t.distortion[u];
        os << '\n';
      }
  return os.str();
}

SpsThresholds decode_thresholds(std::string_view text, const std::string& source) {
  std::map<std::string, std::string> header;
  struct Unit {
    std::uint32_t layer, head, row;
    double lambda;
    std::int32_t threshold;
    std::optional<double> distortion;
    std::size_t line;
  };
  std::vector<Unit> units;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string where = source + ": line " + std::to_string(lineno);
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (const auto eq = line.find('='); eq != std::string::npos) {
      if (!units.empty()) throw FormatError(where + ": header line after unit lines");
      header[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
      continue;
    }
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string tok; ls >> tok;) f.push_back(tok);
    if (f.size() != 5 && f.size() != 6) throw FormatError(where + ": expected 5 or 6 fields");
    Unit u{parse_number<std::uint32_t>(f[0], where), parse_number<std::uint32_t>(f[1], where),
           parse_number<std::uint32_t>(f[2], where), parse_real(f[3], where),
           parse_number<std::int32_t>(f[4], where), std::nullopt, lineno};
    if (f.size() == 6) u.distortion = parse_real(f[5], where);
    units.push_back(u);
  }
  auto get = [&](const char* key) {
    const auto it = header.find(key);
    if (it == header.end()) throw FormatError(source + ": missing header '" + key + "'");
    return it->second;
  };
  for (const auto& [key, value] : header)
    if (key != "granularity" && key != "layers" && key != "heads" && key != "rows" && key != "head_dim")
      throw FormatError(source + ": unknown header '" + key + "'");
  const Granularity g = parse_granularity(get("granularity"));
  const auto layers = parse_number<std::uint32_t>(get("layers"), source);
  const auto heads = parse_number<std::uint32_t>(get("heads"), source);
  const auto rows = parse_number<std::uint32_t>(get("rows"), source);
  const auto head_dim = parse_number<std::uint32_t>(get("head_dim"), source);

  SpsThresholds layout = SpsThresholds::uniform(g, layers, heads, rows, head_dim, 0.0);
  const std::size_t n = layout.lambdas().size();
  if (units.size() != n)
    throw FormatError(source + ": expected " + std::to_string(n) + " unit lines, found " + std::to_string(units.size()));
  std::vector<double> lambdas(n);
  std::vector<bool> seen(n, false);
  for (const auto& u : units) {
    const std::string where = source + ": line " + std::to_string(u.line);
    if (u.layer >= layers || u.head >= heads || u.row >= std::max<std::uint32_t>(rows, 1))
      throw FormatError(where + ": unit index out of range");
    const std::size_t idx = layout.unit_index(u.layer, u.head, u.row);
    if (seen[idx]) throw FormatError(where + ": duplicate unit");
    seen[idx] = true;
    lambdas[idx] = u.lambda;
  }
  SpsThresholds t = [&] {
    try {
      return SpsThresholds(g, layers, heads, rows, head_dim, lambdas);
    } catch (const Error& e) {
      throw FormatError(source + ": " + e.what());
    }
  }();
  const bool all_distortion = std::all_of(units.begin(), units.end(), [](const Unit& u) { return u.distortion.has_value(); });
  if (all_distortion) t.distortion.assign(n, 0.0);
  for (const auto& u : units) {
    const std::size_t idx = layout.unit_index(u.layer, u.head, u.row);
    if (t.derived_thresholds()[idx] != u.threshold)
      throw FormatError(source + ": line " + std::to_string(u.line) + ": threshold " + std::to_string(u.threshold) +
                        " disagrees with lambda (expected " + std::to_string(t.derived_thresholds()[idx]) + ")");
    if (all_distortion) t.distortion[idx] = *u.distortion;
  }
  return t;
}

Bytes encode_calibration(const CalibrationSet& c) {
  c.validate();
  Writer w;
  w.raw("CBRC");
  w.u32(kFormatVersion);
  w.u32(c.layers);
  w.u32(c.heads);
  w.u32(c.seq_len);
  w.u32(c.head_dim);
  w.f64(c.sampling_fraction);
  w.u32(static_cast<std::uint32_t>(c.samples.size()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.head_dim));
  for (const auto& s : c.samples) {
    w.u32(s.layer);
    for (std::uint32_t h = 0; h < c.heads; ++h) {
      w.blob(s.q[h]);
      w.blob(s.k[h]);
      w.blob(s.reference[h]);
      const IntMatrix q = unpack_matrix(s.q[h]);
      const IntMatrix k = unpack_matrix(s.k[h]);
      for (std::size_t i = 0; i < c.seq_len; ++i)
        for (std::size_t j = 0; j < c.seq_len; ++j) {
          std::int64_t dot = 0;
          for (std::size_t t = 0; t < c.head_dim; ++t) dot += q(i, t) * k(j, t);
          w.f64(static_cast<double>(dot) * scale);
        }
    }
  }
  return w.bytes();
}

CalibrationSet decode_calibration(const Bytes& data, const std::string& source) {
  Reader r(data, source);
  r.magic("CBRC");
  CalibrationSet c;
  c.layers = r.u32("layers");
  c.heads = r.u32("heads");
  c.seq_len = r.u32("seq_len");
  c.head_dim = r.u32("head_dim");
  c.sampling_fraction = r.f64("sampling_fraction");
  const auto count = r.u32("sample count");
  if (c.heads == 0 || c.seq_len == 0 || c.head_dim == 0) r.fail("zero dimension in calibration header");
  for (std::uint32_t s = 0; s < count; ++s) {
    CalibrationSample smp;
    smp.layer = r.u32("sample layer");
    const std::string p = "sample " + std::to_string(s) + " ";
    for (std::uint32_t h = 0; h < c.heads; ++h) {
      const std::string ph = p + "head " + std::to_string(h) + " ";
      smp.q.push_back(r.blob(ph + "Q"));
      smp.k.push_back(r.blob(ph + "K"));
      smp.reference.push_back(r.blob(ph + "reference"));
      for (std::size_t i = 0; i < std::size_t{c.seq_len} * c.seq_len; ++i) r.f64("score plane");
    }
    c.samples.push_back(std::move(smp));
  }
  r.expect_end();
  try {
    c.validate();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  return c;
}

Bytes encode_input(const InputTensor& t) {
  Writer w;
  w.raw("CBRT");
  w.u32(kFormatVersion);
  w.blob(t.hidden);
  w.u32(static_cast<std::uint32_t>(t.mask.boundary.size()));
  for (auto b : t.mask.boundary) w.u32(b);
  return w.bytes();
}

InputTensor decode_input(const Bytes& data, const std::string& source) {
  Reader r(data, source);
  r.magic("CBRT");
  InputTensor t;
  t.hidden = r.blob("hidden");
  if (t.hidden.scheme() != Scheme::SignedPM1) r.fail("input hidden matrix must be SignedPM1");
  const auto n = r.u32("mask length");
  if (n != 0 && n != t.hidden.rows()) r.fail("mask length must be 0 or the sequence length");
  t.mask.boundary.resize(n);
  for (auto& b : t.mask.boundary) b = r.u32("mask boundary");
  r.expect_end();
  return t;
}

Bytes encode_output(const LayerOutput& o) {
  Writer w;
  w.raw("CBRO");
  w.u32(kFormatVersion);
  w.blob(o.hidden);
  w.u32(static_cast<std::uint32_t>(o.logits.rows()));
  w.u32(static_cast<std::uint32_t>(o.logits.cols()));
  for (auto v : o.logits.data()) w.i32(v);
  return w.bytes();
}

LayerOutput decode_output(const Bytes& data, const std::string& source) {
  Reader r(data, source);
  r.magic("CBRO");
  LayerOutput o;
  o.hidden = r.blob("hidden");
  const auto rows = r.u32("logit rows");
  const auto cols = r.u32("logit cols");
  if ((data.size() - r.offset()) / 4 < std::size_t{rows} * cols) r.fail("truncated logits");
  o.logits = IntMatrix(rows, cols);
  for (auto& v : o.logits.data()) v = r.i32("logit");
  r.expect_end();
  return o;
}

RunManifest RunManifest::parse(std::string_view text, const std::filesystem::path& base_dir) {
  RunManifest m;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  auto path = [&](const std::string& v) {
    if (v.empty()) return std::string{};
    const std::filesystem::path p(v);
    return (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
  };
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string where = "manifest: line " + std::to_string(lineno);
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "config") m.config = path(value);
    else if (key == "weights") m.weights = path(value);
    else if (key == "thresholds") m.thresholds = path(value);
    else if (key == "input") m.input = path(value);
    else if (key == "output") m.output = path(value);
    else if (key == "calibration") m.calibration = path(value);
    else if (key == "popcount") m.popcount = value;
    else if (key == "schedule") m.schedule = value;
    else if (key == "granularity") m.granularity = value;
    else if (key == "grid_step") m.grid_step = parse_real(value, where);
    else if (key == "spill_emulation") {
      if (value != "true" && value != "false") throw FormatError(where + ": spill_emulation must be true or false");
      m.spill_emulation = value == "true";
    } else if (key == "seed") m.seed = parse_number<std::uint64_t>(value, where);
    else throw FormatError(where + ": unknown key '" + key + "'");
  }
  return m;
}

std::string RunManifest::to_text() const {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << "config=" << config << "\nweights=" << weights << "\nthresholds=" << thresholds << "\ninput=" << input
     << "\noutput=" << output << "\ncalibration=" << calibration << "\npopcount=" << popcount
     << "\nschedule=" << schedule << "\ngranularity=" << granularity << "\ngrid_step=" << grid_step
     << "\nspill_emulation=" << (spill_emulation ? "true" : "false") << "\nseed=" << seed << '\n';
  return os.str();
}

}  // namespace cobra::io
