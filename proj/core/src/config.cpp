// SPDX-License-Identifier: Apache-2.0
#include "cobra/config.hpp"

#include <algorithm>

#include <bit>
#include <charconv>
#include <sstream>

#include "cobra/error.hpp"

namespace cobra {

std::uint32_t ModelConfig::output_bits() const noexcept {
  if (ff_size == 0) return h;
  const auto log2_ceil = static_cast<std::uint32_t>(std::bit_width(ff_size - 1));
  return std::max(log2_ceil + 1, h);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw DimensionError("ModelConfig: " + why); };
  if (d == 0 || h == 0 || l == 0 || ff_size == 0 || num_layers == 0 || n_pe == 0)
    fail("all dimensions must be positive");
  if (d % h != 0) fail("d=" + std::to_string(d) + " is not divisible by h=" + std::to_string(h));
  if (ff_size % d != 0)
    fail("ff_size=" + std::to_string(ff_size) + " is not a multiple of d=" + std::to_string(d));
  if (l > kMaxSequenceLength) fail("l=" + std::to_string(l) + " exceeds 512");
  if (output_bits() > 31) fail("output width exceeds 31 bits");
}

ModelConfig ModelConfig::bert_base() {
  return ModelConfig{.d = 768, .h = 12, .l = 512, .ff_size = 3072, .num_layers = 12, .n_pe = 32};
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    val.erase(0, val.find_first_not_of(" \t"));
    std::uint32_t v = 0;
    auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), v);
    if (ec != std::errc{} || ptr != val.data() + val.size())
      throw FormatError("config line " + std::to_string(lineno) + ": '" + val +
                        "' is not an unsigned integer");
    if (key == "d") cfg.d = v;
    else if (key == "h") cfg.h = v;
    else if (key == "l") cfg.l = v;
    else if (key == "ff_size") cfg.ff_size = v;
    else if (key == "layers") cfg.num_layers = v;
    else if (key == "n_pe") cfg.n_pe = v;
    else throw FormatError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "d=" << d << "\nh=" << h << "\nl=" << l << "\nff_size=" << ff_size
      << "\nlayers=" << num_layers << "\nn_pe=" << n_pe << "\n";
  return out.str();
}

}  // namespace cobra
