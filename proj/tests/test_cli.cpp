// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "cobra/io.hpp"

namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cobra_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    cobra::io::write_text(dir_ / "toy.cfg", "d=16\nh=2\nl=8\nff_size=32\nlayers=2\nn_pe=4\n");
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Exit status of the CLI run with `args`; stdout and stderr go to dir_/log.
  int run(const std::string& args, const std::string& env = {}) const {
    const std::string cmd =
        env + " '" COBRA_CLI_PATH "' " + args + " > '" + (dir_ / "log").string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string p(const std::string& name) const { return "'" + (dir_ / name).string() + "'"; }
  std::string log() const { return cobra::io::read_text(dir_ / "log"); }
  cobra::io::Bytes bytes(const std::string& name) const { return cobra::io::read_file(dir_ / name); }

  // Model, calibration, thresholds and packed weights for the toy config.
  void prepare() const {
    ASSERT_EQ(run("synth model --config " + p("toy.cfg") + " --out " + p("raw.bin") + " --seed 3"), 0) << log();
    ASSERT_EQ(run("synth calibration --config " + p("toy.cfg") + " --out " + p("calib.bin") + " --seed 4 --samples 3"), 0)
        << log();
    ASSERT_EQ(run("search-thresholds --calibration " + p("calib.bin") + " --granularity head --out " + p("th.txt")), 0)
        << log();
    ASSERT_EQ(run("pack " + p("raw.bin") + " " + p("w.bin") + " --config " + p("toy.cfg") + " --threshold-ref th.txt"),
              0)
        << log();
  }

  fs::path dir_;
};

TEST_F(Cli, PackIsByteStable) {
  prepare();
  ASSERT_EQ(run("pack " + p("raw.bin") + " " + p("w2.bin") + " --config " + p("toy.cfg") + " --threshold-ref th.txt"), 0);
  EXPECT_EQ(bytes("w.bin"), bytes("w2.bin"));
  EXPECT_EQ(run("inspect " + p("w.bin")), 0);
  EXPECT_NE(log().find("CBRW"), std::string::npos) << log();
}

TEST_F(Cli, InferIsDeterministicAndSpillInvariant) {
  prepare();
  ASSERT_EQ(run("infer --config " + p("toy.cfg") + " --weights " + p("w.bin") + " --seed 9 --output " + p("o1.bin")), 0)
      << log();
  ASSERT_EQ(run("infer --config " + p("toy.cfg") + " --weights " + p("w.bin") + " --seed 9 --output " + p("o2.bin") +
                " --spill-emulation --popcount compressor"),
            0)
      << log();
  EXPECT_EQ(bytes("o1.bin"), bytes("o2.bin"));
  const auto out = cobra::io::decode_output(bytes("o1.bin"));
  EXPECT_EQ(out.hidden.rows(), 8U);
  EXPECT_EQ(out.logits.cols(), 16U);
}

TEST_F(Cli, ManifestRun) {
  prepare();
  cobra::io::write_text(dir_ / "run.manifest",
                        "config=toy.cfg\nweights=w.bin\nthresholds=th.txt\noutput=o.bin\nseed=5\n");
  ASSERT_EQ(run("infer --manifest " + p("run.manifest"), "COBRA_REPORT_DIR=" + p("reports")), 0) << log();
  EXPECT_TRUE(fs::exists(dir_ / "o.bin"));
  EXPECT_TRUE(fs::exists(dir_ / "reports" / "infer.log"));
}

TEST_F(Cli, SearchIsDeterministic) {
  prepare();
  ASSERT_EQ(run("search-thresholds --calibration " + p("calib.bin") + " --granularity head --out " + p("th2.txt")), 0);
  EXPECT_EQ(bytes("th.txt"), bytes("th2.txt"));
}

TEST_F(Cli, VerifyAndFaultInjection) {
  EXPECT_EQ(run("verify --scale quick --seed 2", "COBRA_REPORT_DIR=" + p("reports")), 0) << log();
  EXPECT_NE(cobra::io::read_text(dir_ / "reports" / "verify.txt").find("PASS"), std::string::npos);
  EXPECT_EQ(run("verify --scale quick --seed 2 --inject-fault"), 1);
  EXPECT_NE(log().find("FAIL"), std::string::npos);
}

TEST_F(Cli, BenchPrintsAnalyticReport) {
  ASSERT_EQ(run("bench --skip-timing"), 0) << log();
  EXPECT_NE(log().find("model_cycles="), std::string::npos) << log();
}

TEST_F(Cli, ErrorsExitWithTwo) {
  EXPECT_EQ(run("infer --config " + p("toy.cfg") + " --weights " + p("missing.bin")), 2);
  EXPECT_EQ(run("search-thresholds --calibration " + p("toy.cfg")), 2);
  EXPECT_EQ(run("verify --scale enormous"), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  cobra::io::write_text(dir_ / "bad.cfg", "d=16\nh=3\n");
  EXPECT_EQ(run("synth model --config " + p("bad.cfg") + " --out " + p("x.bin")), 2);
  EXPECT_FALSE(log().empty());
}

}  // namespace
