#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "sisr/coupling.hpp"
#include "sisr/systems.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / ("sisr_cli_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = std::string(SISR_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  fs::remove(log);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sisr_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenDataWritesBuiltInDataset) {
  const CliRun r = run("gen-data --system oscillator --dataset 1 --out " + path("d.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto ds = sisr::load_dataset(path("d.json"));
  EXPECT_EQ(ds.samples.size(), 30);
  EXPECT_DOUBLE_EQ(ds.spec.constant("m"), 1.23);
  EXPECT_DOUBLE_EQ(ds.spec.constant("omega"), 1.65);
  EXPECT_NE(r.out.find("energy drift"), std::string::npos);
}

TEST_F(Cli, GenDataNoise) {
  ASSERT_EQ(run("gen-data --system pendulum --dataset 2 --noise --out " + path("p.json")).code, 0);
  EXPECT_DOUBLE_EQ(sisr::load_dataset(path("p.json")).noise_sigma, 0.005);
}

TEST_F(Cli, UsageErrors) {
  const CliRun bad = run("gen-data --system oscillator --dataset 9 --out " + path("x.json"));
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("dataset"), std::string::npos);
  EXPECT_EQ(run("gen-data --system rotor --out " + path("x.json")).code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("extract-priors --data " + path("missing.json") + " --out " + path("s.json")).code, 2);
  EXPECT_EQ(run("discover --data " + path("missing.json") + " --out " + path("r.json")).code, 2);
}

TEST_F(Cli, ConfigRejectsUnknownKeys) {
  std::ofstream(path("c.json")) << R"({"training": {"bogus": 1}})";
  ASSERT_EQ(run("gen-data --system oscillator --out " + path("d.json")).code, 0);
  const CliRun r = run("discover --data " + path("d.json") + " --config " + path("c.json") + " --out " + path("r.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("bogus"), std::string::npos);
}

TEST_F(Cli, ExtractPriorsDegenerate) {
  ASSERT_EQ(run("gen-data --system oscillator --out " + path("d.json")).code, 0);
  const CliRun r = run("extract-priors --data " + path("d.json") + " --out " + path("s.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("degenerate"), std::string::npos);
  const auto spec = sisr::load_coupling(path("s.json"));
  EXPECT_EQ(spec.T_form.kind, sisr::CouplingForm::Kind::CompleteDecoupling);
}

TEST_F(Cli, ExtractPriorsSmallSearch) {
  ASSERT_EQ(run("gen-data --system two_body --out " + path("d.json")).code, 0);
  const CliRun r = run("extract-priors --data " + path("d.json") + " --epochs 2 --seeds 1 --hidden 4 --depth 1 --out " +
                    path("s.json") + " --table " + path("t.txt"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NO_THROW(sisr::load_coupling(path("s.json")).validate(2, 2));
  EXPECT_NE(slurp(path("t.txt")).find("baseline"), std::string::npos);
}

TEST_F(Cli, DiscoverZeroBatches) {
  ASSERT_EQ(run("gen-data --system oscillator --out " + path("d.json")).code, 0);
  const CliRun r = run("discover --data " + path("d.json") + " --max-batches 0 --out " + path("r.json"));
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_TRUE(fs::exists(path("r.json")));
  EXPECT_TRUE(fs::exists(path("r.rewards.csv")));
  EXPECT_TRUE(fs::exists(path("r.trajectory.csv")));
  EXPECT_TRUE(fs::exists(path("r.timing.csv")));
}

TEST_F(Cli, DiscoverIsReproducible) {
  ASSERT_EQ(run("gen-data --system oscillator --out " + path("d.json")).code, 0);
  std::ofstream(path("c.json")) << R"({"training": {"batch_size": 20, "initial_batch_size": 80, "max_batches": 2,
      "policy_hidden": 16}})";
  const std::string common = "discover --quiet --open --seed 4 --data " + path("d.json") + " --config " + path("c.json");
  ASSERT_EQ(run(common + " --out " + path("a.json")).code, 0);
  ASSERT_EQ(run(common + " --out " + path("b.json")).code, 0);
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
  EXPECT_EQ(slurp(path("a.rewards.csv")), slurp(path("b.rewards.csv")));
  EXPECT_EQ(slurp(path("a.trajectory.csv")), slurp(path("b.trajectory.csv")));
}

TEST_F(Cli, EvalMetrics) {
  ASSERT_EQ(run("gen-data --system oscillator --dataset 1 --out " + path("d.json")).code, 0);
  // H = p^2 / (2m) + m w^2 q^2 / 2 with m = 1.23, w = 1.65
  const CliRun truth = run("eval --data " + path("d.json") + " --expr \"(p1x * p1x) / 2.46 + 1.6743375 * (q1x * q1x)\"");
  ASSERT_EQ(truth.code, 0) << truth.out;
  EXPECT_NE(truth.out.find("equivalent true"), std::string::npos);
  const double reward = std::stod(truth.out.substr(truth.out.find("reward ") + 7));
  EXPECT_GE(reward, 0.999);

  const CliRun wrong = run("eval --data " + path("d.json") + " --expr \"q1x + p1x\"");
  ASSERT_EQ(wrong.code, 0);
  EXPECT_NE(wrong.out.find("equivalent false"), std::string::npos);
  EXPECT_LT(std::stod(wrong.out.substr(wrong.out.find("reward ") + 7)), 0.9);

  const CliRun bad = run("eval --data " + path("d.json") + " --expr \"q1x + * p1x\"");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("position 6"), std::string::npos);
}
