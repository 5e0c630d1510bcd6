// SPDX-License-Identifier: Apache-2.0
// Command-line driver: synthesize, pack, infer, search thresholds, verify and
// benchmark. Exit codes: 0 success, 1 verification failure, 2 input error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "cobra/cobra.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitInputError = 2;

const std::map<std::string, cobra::PopcountPath> kPopcountNames{
    {"native", cobra::PopcountPath::Native}, {"compressor", cobra::PopcountPath::Compressor}};

cobra::PopcountPath parse_popcount(const std::string& s) {
  const auto it = kPopcountNames.find(s);
  if (it == kPopcountNames.end())
    throw cobra::FormatError("unknown popcount path '" + s + "' (expected native or compressor)");
  return it->second;
}

// Writes `name` under $COBRA_REPORT_DIR when the variable is set.
void emit_report(const std::string& name, const std::string& text) {
  const char* dir = std::getenv("COBRA_REPORT_DIR");
  if (dir == nullptr || *dir == '\0') return;
  fs::create_directories(dir);
  cobra::io::write_text(fs::path(dir) / name, text);
}

cobra::ModelConfig load_config(const std::string& path) {
  return cobra::ModelConfig::parse(cobra::io::read_text(path));
}

void require_same_dims(const cobra::ModelConfig& file_cfg, const cobra::ModelConfig& given, const std::string& what) {
  if (file_cfg != given)
    throw cobra::DimensionError("--config disagrees with the " + what + " header:\n" + given.to_text() +
                                "versus\n" + file_cfg.to_text());
}

std::string counters_text(const cobra::EngineCounters& c) {
  std::ostringstream os;
  for (std::size_t m = 0; m < cobra::kModeCount; ++m) {
    const char* name = cobra::to_string(static_cast<cobra::ModeTag>(m));
    os << "counted.invocations." << name << '=' << c.invocations[m] << '\n'
       << "counted.executions." << name << '=' << c.executions[m] << '\n';
  }
  os << "counted.total_invocations=" << c.total_invocations() << "\ncounted.rbvm_results=" << c.rbvm_results << '\n';
  return os.str();
}

// ---- pack ----------------------------------------------------------------

struct PackArgs {
  std::string raw, out, config, threshold_ref;
};

int cmd_pack(const PackArgs& a) {
  const cobra::io::RawModel raw = cobra::io::decode_raw(cobra::io::read_file(a.raw), a.raw);
  if (!a.config.empty()) require_same_dims(raw.config, load_config(a.config), "raw weights");
  const cobra::io::Bytes bytes = cobra::io::encode_weights(cobra::io::pack_model(raw, a.threshold_ref));
  cobra::io::write_file(a.out, bytes);
  std::ostringstream os;
  os << "packed=" << a.out << "\nbytes=" << bytes.size() << '\n' << raw.config.to_text();
  std::cout << os.str();
  emit_report("pack.txt", os.str());
  return kExitOk;
}

// ---- inspect -------------------------------------------------------------

int cmd_inspect(const std::string& path) {
  const cobra::io::Bytes data = cobra::io::read_file(path);
  if (data.size() < 4) throw cobra::FormatError(path + ": too short to hold a magic");
  const std::string magic(data.begin(), data.begin() + 4);
  std::ostringstream os;
  os << "file=" << path << "\nmagic=" << magic << '\n';
  if (magic == "CBRW") {
    const auto w = cobra::io::decode_weights(data, path);
    os << w.config.to_text() << "threshold_ref=" << w.threshold_ref << '\n';
  } else if (magic == "CBRR") {
    os << cobra::io::decode_raw(data, path).config.to_text();
  } else if (magic == "CBRT") {
    const auto t = cobra::io::decode_input(data, path);
    os << "rows=" << t.hidden.rows() << "\ncols=" << t.hidden.cols() << "\nmask=" << t.mask.boundary.size() << '\n';
  } else if (magic == "CBRO") {
    const auto o = cobra::io::decode_output(data, path);
    os << "rows=" << o.hidden.rows() << "\ncols=" << o.hidden.cols() << '\n';
  } else if (magic == "CBRC") {
    const auto c = cobra::io::decode_calibration(data, path);
    os << "layers=" << c.layers << "\nheads=" << c.heads << "\nseq_len=" << c.seq_len << "\nhead_dim="
       << c.head_dim << "\nsamples=" << c.samples.size() << '\n';
  } else {
    throw cobra::FormatError(path + ": unknown magic '" + magic + "'");
  }
  std::cout << os.str();
  return kExitOk;
}

// ---- infer ---------------------------------------------------------------

struct InferArgs {
  std::string manifest, config, weights, thresholds, input, output, popcount, schedule;
  bool spill = false;
  std::optional<std::uint64_t> seed;
};

int cmd_infer(const InferArgs& a) {
  cobra::io::RunManifest m;
  if (!a.manifest.empty())
    m = cobra::io::RunManifest::parse(cobra::io::read_text(a.manifest), fs::path(a.manifest).parent_path());
  auto take = [](std::string& dst, const std::string& flag) {
    if (!flag.empty()) dst = flag;
  };
  take(m.config, a.config);
  take(m.weights, a.weights);
  take(m.thresholds, a.thresholds);
  take(m.input, a.input);
  take(m.output, a.output);
  take(m.popcount, a.popcount);
  take(m.schedule, a.schedule);
  if (a.spill) m.spill_emulation = true;
  if (a.seed) m.seed = *a.seed;
  if (m.weights.empty()) throw cobra::FormatError("infer: no weights given (--weights or manifest)");
  if (m.output.empty()) throw cobra::FormatError("infer: no output path given (--output or manifest)");

  cobra::io::WeightFile w = cobra::io::decode_weights(cobra::io::read_file(m.weights), m.weights);
  if (!m.config.empty()) require_same_dims(w.config, load_config(m.config), "weight file");
  std::string th_path = m.thresholds;
  if (th_path.empty() && !w.threshold_ref.empty()) {
    const fs::path ref(w.threshold_ref);
    th_path = (ref.is_relative() ? fs::path(m.weights).parent_path() / ref : ref).string();
  }
  if (th_path.empty()) throw cobra::FormatError("infer: no threshold table (--thresholds, manifest or weight file)");
  cobra::SpsThresholds th = cobra::io::decode_thresholds(cobra::io::read_text(th_path), th_path);

  const cobra::io::InputTensor input =
      m.input.empty() ? cobra::synthetic::random_input(w.config, m.seed)
                      : cobra::io::decode_input(cobra::io::read_file(m.input), m.input);
  if (input.hidden.rows() != w.config.l || input.hidden.cols() != w.config.d)
    throw cobra::DimensionError("infer: input is " + std::to_string(input.hidden.rows()) + "x" +
                                std::to_string(input.hidden.cols()) + ", model expects l x d = " +
                                std::to_string(w.config.l) + "x" + std::to_string(w.config.d));

  cobra::ForwardOptions fo;
  fo.engine.n_pe = w.config.n_pe;
  fo.engine.popcount = parse_popcount(m.popcount);
  fo.spill_emulation = m.spill_emulation;
  cobra::PerfConfig pc;
  pc.schedule = cobra::parse_schedule(m.schedule);

  cobra::BinaryEncoder encoder(w.config, std::move(w.layers), std::move(th));
  const cobra::LayerOutput out = encoder.forward(input.hidden, input.mask, fo);
  cobra::io::write_file(m.output, cobra::io::encode_output(out));

  std::ostringstream log;
  log << "output=" << m.output << "\npopcount=" << m.popcount << "\nspill_emulation="
      << (m.spill_emulation ? "true" : "false") << '\n'
      << counters_text(encoder.counters()) << cobra::estimate_throughput(w.config, pc).to_key_value();
  std::cout << log.str();
  emit_report("infer.log", log.str());
  return kExitOk;
}

// ---- search-thresholds ---------------------------------------------------

struct SearchArgs {
  std::string manifest, calibration, granularity, out;
  std::optional<double> grid_step;
};

int cmd_search(const SearchArgs& a) {
  cobra::io::RunManifest m;
  if (!a.manifest.empty())
    m = cobra::io::RunManifest::parse(cobra::io::read_text(a.manifest), fs::path(a.manifest).parent_path());
  if (!a.calibration.empty()) m.calibration = a.calibration;
  if (!a.granularity.empty()) m.granularity = a.granularity;
  if (a.grid_step) m.grid_step = *a.grid_step;
  if (!a.out.empty()) m.thresholds = a.out;
  if (m.calibration.empty()) throw cobra::FormatError("search-thresholds: no calibration file given");
  if (m.thresholds.empty()) throw cobra::FormatError("search-thresholds: no output path given (--out or manifest thresholds)");

  const cobra::CalibrationSet calib = cobra::io::decode_calibration(cobra::io::read_file(m.calibration), m.calibration);
  const cobra::SpsThresholds t = cobra::search_thresholds(calib, cobra::parse_granularity(m.granularity), m.grid_step);
  const std::string table = cobra::io::encode_thresholds(t);
  cobra::io::write_text(m.thresholds, table);

  double mean = 0.0;
  for (double d : t.distortion) mean += d;
  mean /= static_cast<double>(t.distortion.size());
  std::ostringstream os;
  os << "thresholds=" << m.thresholds << "\ngranularity=" << m.granularity << "\nunits=" << t.lambdas().size()
     << "\nmean_distortion=" << std::setprecision(6) << mean << '\n';
  std::cout << os.str();
  emit_report("search.txt", os.str() + table);
  return kExitOk;
}

// ---- verify --------------------------------------------------------------

struct VerifyArgs {
  std::string scale = "quick", popcount = "native";
  std::uint64_t seed = 1;
  bool inject_fault = false;
};

int cmd_verify(const VerifyArgs& a) {
  cobra::selfcheck::VerifyOptions o;
  o.scale = cobra::selfcheck::parse_scale(a.scale);
  o.seed = a.seed;
  o.engine.popcount = parse_popcount(a.popcount);
  o.engine.inject_fault = a.inject_fault;
  const auto results = cobra::selfcheck::run_verify(o);
  const std::string report = cobra::selfcheck::format_report(results);
  std::cout << report;
  emit_report("verify.txt", report);
  for (const auto& r : results)
    if (!r.passed) return kExitVerifyFailed;
  return kExitOk;
}

// ---- bench ---------------------------------------------------------------

struct BenchArgs {
  std::string config, popcount = "native", schedule = "pipelined";
  std::uint32_t fill_latency = 8;
  double clock_mhz = 300.0;
  std::uint64_t seed = 1;
  bool skip_timing = false;
};

int cmd_bench(const BenchArgs& a) {
  const cobra::ModelConfig cfg = a.config.empty() ? cobra::ModelConfig::bert_base() : load_config(a.config);
  cobra::PerfConfig pc;
  pc.clock_hz = a.clock_mhz * 1e6;
  pc.fill_latency = a.fill_latency;
  pc.schedule = cobra::parse_schedule(a.schedule);
  parse_popcount(a.popcount);
  const cobra::PerfReport report = cobra::estimate_throughput(cfg, pc);
  std::ostringstream os;
  os << report.to_key_value() << report.to_table();
  if (!a.skip_timing) {
    const auto sp = cobra::selfcheck::measure_packed_speedup(cfg.l, cfg.d, a.seed);
    const auto pt = cobra::selfcheck::measure_popcount_paths(std::size_t{1} << 20, a.seed);
    os << std::setprecision(6) << "timing.packed_rbmm_s=" << sp.packed_seconds
       << "\ntiming.oracle_matmul_s=" << sp.oracle_seconds << "\ntiming.packed_speedup=" << sp.speedup
       << "\ntiming.packed_equals_oracle=" << (sp.outputs_equal ? "true" : "false")
       << "\ntiming.popcount_native_s=" << pt.native_seconds
       << "\ntiming.popcount_compressor_s=" << pt.compressor_seconds
       << "\ntiming.popcount_paths_agree=" << (pt.counts_equal ? "true" : "false") << '\n';
  }
  std::cout << os.str();
  emit_report("bench.txt", os.str());
  return kExitOk;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  std::uint64_t seed = 1;
  bool padded = false;
  std::uint32_t samples = 8;
};

int cmd_synth(const std::string& what, const SynthArgs& a) {
  const cobra::ModelConfig cfg = load_config(a.config);
  cfg.validate();
  cobra::io::Bytes bytes;
  if (what == "model") {
    bytes = cobra::io::encode_raw(cobra::synthetic::random_model(cfg, a.seed));
  } else if (what == "input") {
    bytes = cobra::io::encode_input(cobra::synthetic::random_input(cfg, a.seed, a.padded));
  } else {
    bytes = cobra::io::encode_calibration(
        cobra::synthetic::random_calibration(cfg.num_layers, cfg.h, cfg.l, cfg.head_dim(), a.samples, a.seed));
  }
  cobra::io::write_file(a.out, bytes);
  std::cout << what << '=' << a.out << "\nbytes=" << bytes.size() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-packed binary transformer engine: pack, infer, search-thresholds, verify, bench"};
  app.require_subcommand(1);
  std::function<int()> run;

  PackArgs pack;
  auto* p = app.add_subcommand("pack", "Pack raw i8 weights (CBRR) into an engine weight file (CBRW)");
  p->add_option("raw", pack.raw, "Raw weight file")->required()->check(CLI::ExistingFile);
  p->add_option("out", pack.out, "Output weight file")->required();
  p->add_option("--config", pack.config, "Model config to check against the raw header")->check(CLI::ExistingFile);
  p->add_option("--threshold-ref", pack.threshold_ref, "Threshold table path recorded in the weight file");
  p->callback([&] { run = [&] { return cmd_pack(pack); }; });

  std::string inspect_path;
  auto* ins = app.add_subcommand("inspect", "Print the header of any cobra file");
  ins->add_option("file", inspect_path, "File to inspect")->required()->check(CLI::ExistingFile);
  ins->callback([&] { run = [&] { return cmd_inspect(inspect_path); }; });

  InferArgs infer;
  auto* inf = app.add_subcommand("infer", "Run the encoder stack on a pre-binarized input");
  inf->add_option("--manifest", infer.manifest, "key=value run manifest")->check(CLI::ExistingFile);
  inf->add_option("--config", infer.config, "Model config (must match the weights)");
  inf->add_option("--weights", infer.weights, "Packed weight file (CBRW)");
  inf->add_option("--thresholds", infer.thresholds, "Threshold table");
  inf->add_option("--input", infer.input, "Input tensor (CBRT); synthesized from --seed when absent");
  inf->add_option("--output", infer.output, "Output tensor (CBRO)");
  inf->add_option("--popcount", infer.popcount, "native or compressor");
  inf->add_option("--schedule", infer.schedule, "pipelined or serial (cycle accounting)");
  inf->add_flag("--spill-emulation", infer.spill, "Route integer matrices through a byte staging area");
  inf->add_option("--seed", infer.seed, "Seed for a synthesized input");
  inf->callback([&] { run = [&] { return cmd_infer(infer); }; });

  SearchArgs search;
  auto* se = app.add_subcommand("search-thresholds", "Grid-search SPS thresholds on a calibration set");
  se->add_option("--manifest", search.manifest, "key=value run manifest")->check(CLI::ExistingFile);
  se->add_option("--calibration", search.calibration, "Calibration file (CBRC)");
  se->add_option("--granularity", search.granularity, "layer, head or row");
  se->add_option("--grid-step", search.grid_step, "Grid spacing in (0, 1]");
  se->add_option("--out,--thresholds", search.out, "Output threshold table");
  se->callback([&] { run = [&] { return cmd_search(search); }; });

  VerifyArgs verify;
  auto* ve = app.add_subcommand("verify", "Run the oracle-equivalence and invariant suites");
  ve->add_option("--scale", verify.scale, "quick or full")->capture_default_str();
  ve->add_option("--seed", verify.seed, "Suite seed")->capture_default_str();
  ve->add_option("--popcount", verify.popcount, "native or compressor")->capture_default_str();
  ve->add_flag("--inject-fault", verify.inject_fault, "Flip popcount bits in the engine (mutation check)");
  ve->callback([&] { run = [&] { return cmd_verify(verify); }; });

  BenchArgs bench;
  auto* be = app.add_subcommand("bench", "Analytic performance report plus kernel timings");
  be->add_option("--config", bench.config, "Model config (default: BERT-base dimensions)")->check(CLI::ExistingFile);
  be->add_option("--popcount", bench.popcount, "native or compressor")->capture_default_str();
  be->add_option("--schedule", bench.schedule, "pipelined or serial")->capture_default_str();
  be->add_option("--fill-latency", bench.fill_latency, "Pipeline depth in cycles")->capture_default_str();
  be->add_option("--clock-mhz", bench.clock_mhz, "Clock for the GOPS estimate")->capture_default_str();
  be->add_option("--seed", bench.seed, "Seed for timing operands")->capture_default_str();
  be->add_flag("--skip-timing", bench.skip_timing, "Only print the analytic report");
  be->callback([&] { run = [&] { return cmd_bench(bench); }; });

  SynthArgs synth;
  std::string synth_what;
  auto* sy = app.add_subcommand("synth", "Generate a random raw model, input or calibration set");
  sy->add_option("what", synth_what, "model, input or calibration")
      ->required()
      ->check(CLI::IsMember({"model", "input", "calibration"}));
  sy->add_option("--config", synth.config, "Model config")->required()->check(CLI::ExistingFile);
  sy->add_option("--out", synth.out, "Output file")->required();
  sy->add_option("--seed", synth.seed, "Seed")->capture_default_str();
  sy->add_option("--samples", synth.samples, "Calibration samples")->capture_default_str();
  sy->add_flag("--padded", synth.padded, "Input with a random padding mask");
  sy->callback([&] { run = [&] { return cmd_synth(synth_what, synth); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitInputError;
  }
  try {
    return run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInputError;
  }
}
