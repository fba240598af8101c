#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>

#include <gtest/gtest.h>

#include "faultlab/pipeline.hpp"

namespace fl = faultlab;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(FAULTLAB_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() { return fs::temp_directory_path() / "faultlab_test_cli"; }
  static std::string p(const std::string& name) { return (dir() / name).string(); }

  // Small three-speed dataset and a briefly trained checkpoint shared by the suite.
  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    const std::string gen = "generate --speeds -1200 600 1800 --n-samples 5000 --severity-mode grid --out ";
    ASSERT_EQ(run(gen + p("train.csv")).code, 0);
    ASSERT_EQ(run(gen + p("test.csv") + " --seed 77").code, 0);
    train_ = run("train --data " + p("train.csv") + " --out " + p("ck.bin") + " --curves " + p("curves.csv") +
                 " --summary " + p("summary.txt") + " --iterations 300 --batch-size 32 --val-every 100 --lr 0.01");
  }

  static Result train_;
};

Result Cli::train_;

}  // namespace

TEST_F(Cli, GenerateSingleRunAndIsReproducible) {
  const std::string args = "generate --speeds 600 --faults None --n-samples 2000 --out ";
  const auto a = run(args + p("one_a.csv"));
  ASSERT_EQ(a.code, 0) << a.output;
  EXPECT_NE(a.output.find("1 runs, 2000 rows"), std::string::npos) << a.output;
  ASSERT_EQ(run(args + p("one_b.csv")).code, 0);
  EXPECT_EQ(fl::sha256_file(p("one_a.csv")), fl::sha256_file(p("one_b.csv")));
  ASSERT_EQ(run(args + p("one_c.csv") + " --seed 5").code, 0);
  EXPECT_NE(fl::sha256_file(p("one_a.csv")), fl::sha256_file(p("one_c.csv")));
  EXPECT_EQ(fl::read_csv(p("one_a.csv")).size(), 1u);
}

TEST_F(Cli, TestSplitUsesMidpointSpeeds) {
  const auto r = run("generate --split test --faults None --n-samples 1000 --out " + p("mid.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("36 runs"), std::string::npos) << r.output;
  const auto runs = fl::read_csv(p("mid.csv"));
  EXPECT_EQ(runs.front().rpm, -2625.0);
}

TEST_F(Cli, TrainReportsParameterCountAndWritesArtifacts) {
  ASSERT_EQ(train_.code, 0) << train_.output;
  EXPECT_NE(train_.output.find("parameters: 4725 (4533 learnable, 18900 bytes FP32)"), std::string::npos);
  EXPECT_TRUE(fs::exists(p("ck.bin")));
  EXPECT_TRUE(fs::exists(p("summary.txt")));
  std::ifstream curves(p("curves.csv"));
  std::string header;
  std::getline(curves, header);
  EXPECT_EQ(header.rfind("iteration", 0), 0u) << header;
  std::size_t rows = 0;
  for (std::string line; std::getline(curves, line);) ++rows;
  EXPECT_EQ(rows, 3u);
}

TEST_F(Cli, EvalWithBaselineAndCrossSpeed) {
  const auto r = run("eval --checkpoint " + p("ck.bin") + " --data " + p("test.csv") + " --train-data " +
                     p("train.csv") + " --cross-speed --out-dir " + p("report"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("KNN (k=7)"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("cross-speed grid: 3 speeds"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::is_empty(p("report")));
}

TEST_F(Cli, Bench) {
  const auto r = run("bench --checkpoint " + p("ck.bin") + " --trials 200");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("latency over 200 trials"), std::string::npos) << r.output;
}

TEST_F(Cli, InferHealthyFrame) {
  fl::FaultScenario sc;
  sc.op.rpm = 1200.0;
  sc.n_samples = 1000;
  sc.seed = 4242;
  const auto run_data = fl::synthesize_run(sc, {});
  {
    std::ofstream out(p("frame.csv"));
    out << "torque,ia,ib,ic,va,vb,vc\n";
    for (std::size_t t = 0; t < 1000; ++t) {
      for (int c = 0; c < fl::kSignalChannels; ++c) out << (c ? "," : "") << run_data.channels[c][t];
      out << '\n';
    }
  }
  const auto r = run("infer --checkpoint " + p("ck.bin") + " --frame " + p("frame.csv") + " --rpm 1200");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output.rfind("class None\n", 0), 0u) << r.output;
  const std::regex line(R"(\n  \S+\s+([0-9.]+))");
  double sum = 0.0;
  int n = 0;
  for (auto it = std::sregex_iterator(r.output.begin(), r.output.end(), line); it != std::sregex_iterator(); ++it) {
    sum += std::stod((*it)[1]);
    ++n;
  }
  EXPECT_EQ(n, 5);
  EXPECT_NEAR(sum, 1.0, 1e-5);

  {
    std::ofstream out(p("short.csv"));
    for (int t = 0; t < 10; ++t) out << "1,2,3,4,5,6,7\n";
  }
  EXPECT_EQ(run("infer --checkpoint " + p("ck.bin") + " --frame " + p("short.csv") + " --rpm 1200").code, 3);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("generate").code, 2);
  EXPECT_EQ(run("--config " + p("nope.json") + " generate --out " + p("x.csv")).code, 2);
  {
    std::ofstream(p("bad.json")) << R"({"training": {"unknown": 1}})";
  }
  EXPECT_EQ(run("--config " + p("bad.json") + " generate --out " + p("x.csv")).code, 2);
  EXPECT_EQ(run("generate --faults Broken --out " + p("x.csv")).code, 2);
  EXPECT_EQ(run("train --data " + p("missing.csv") + " --out " + p("x.bin")).code, 3);
  {
    std::ofstream(p("garbage.csv")) << "not,a,dataset\n";
  }
  EXPECT_EQ(run("train --data " + p("garbage.csv") + " --out " + p("x.bin")).code, 3);
  {
    std::ofstream(p("garbage.bin")) << "XXXXXXXX";
  }
  EXPECT_EQ(run("bench --checkpoint " + p("garbage.bin")).code, 3);
  EXPECT_EQ(run("train --data " + p("train.csv") + " --out " + p("nan.bin") + " --lr 1e300 --iterations 5").code, 4);
  EXPECT_FALSE(fs::exists(p("nan.bin")));
}

TEST(RawFrame, HeaderIsOptionalAndExponentsParse) {
  const auto path = fs::temp_directory_path() / "faultlab_raw_frame.csv";
  {
    std::ofstream out(path);
    out << "1e-05,2,3,4,5,6,7\n-2.5E+1,0,0,0,0,0,1\n";
  }
  auto f = fl::read_raw_frame(path, 2);
  EXPECT_EQ(f[0], 1e-05);
  EXPECT_EQ(f[1], -25.0);
  EXPECT_EQ(f[6 * 2 + 1], 1.0);
  {
    std::ofstream out(path);
    out << "torque,ia,ib,ic,va,vb,vc\r\n1,2,3,4,5,6,7\r\n8,9,10,11,12,13,14\r\n";
  }
  f = fl::read_raw_frame(path, 2);
  EXPECT_EQ(f[0], 1.0);
  EXPECT_EQ(f[1], 8.0);
  EXPECT_EQ(f[2], 2.0);
  {
    std::ofstream out(path);
    out << "1,2,3,4,5,6\n1,2,3,4,5,6,7\n";
  }
  EXPECT_THROW(fl::read_raw_frame(path, 2), fl::DataError);
  {
    std::ofstream out(path);
    out << "1,2,3,4,5,6,7,8\n1,2,3,4,5,6,7\n";
  }
  EXPECT_THROW(fl::read_raw_frame(path, 2), fl::DataError);
}
