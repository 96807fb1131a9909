#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; stdout is captured.
Run cli(const std::string& args) {
  const std::string cmd = std::string(PROSODY_RL_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("prosody_rl_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  [[nodiscard]] std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SolveWritesQCsv) {
  ASSERT_EQ(cli("--seed 42 simulate --kind map --out " + path("m.json")).code, 0);
  ASSERT_EQ(cli("solve --map " + path("m.json") + " --out " + path("q.csv")).code, 0);
  const auto csv = slurp(path("q.csv"));
  EXPECT_EQ(csv.rfind("# prosody-rl-solution 1.0\n", 0), 0u);
  const auto second = csv.find('\n') + 1;
  EXPECT_EQ(csv.substr(second, csv.find('\n', second) - second), "state,action,Q,advantage");
  EXPECT_GT(std::count(csv.begin(), csv.end(), '\n'), 100);
}

TEST_F(Cli, TrainTamerPrintsOptimalActionCount) {
  ASSERT_EQ(cli("--seed 3 simulate --kind session --steps 300 --out " + path("s.jsonl")).code, 0);
  const auto r = cli("train-tamer --variant prosody --session " + path("s.jsonl") + " --out " + path("h.json"));
  ASSERT_EQ(r.code, 0);
  std::size_t used = 0;
  const long n = std::stol(r.out, &used);
  EXPECT_GE(n, 0);
  EXPECT_EQ(r.out.substr(used), "\n");
  EXPECT_TRUE(nlohmann::json::parse(slurp(path("h.json"))).contains("weights"));
  const auto b = cli("train-tamer --variant baseline --session " + path("s.jsonl"));
  EXPECT_EQ(b.code, 0);
}

TEST_F(Cli, ExtractOnSineFixture) {
  ASSERT_EQ(cli("simulate --kind audio --pitch 440 --duration 0.6 --out " + path("sine.wav")).code, 0);
  std::ofstream(path("labels.json")) << R"([{"word":"yes","t":0.3}])";
  // 440 Hz sits above the default 80-400 Hz speech band, so widen it.
  const auto r = cli("extract --f-max 1000 --wav " + path("sine.wav") + " --labels " + path("labels.json"));
  ASSERT_EQ(r.code, 0);
  const auto row = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
  EXPECT_EQ(row.at("word"), "yes");
  EXPECT_NEAR(row.at("pitch_mean").get<double>(), 440.0, 4.4);
  EXPECT_NEAR(row.at("duration").get<double>(), 0.6, 0.05);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("train-tamer --variant fancy --session x").code, 1);
  EXPECT_EQ(cli("analyze").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Cli, DataErrorsExitTwo) {
  EXPECT_EQ(cli("replay --session " + path("missing.jsonl")).code, 2);
  std::ofstream(path("bad.jsonl")) << "{\"kind\":\"header\"\n";
  EXPECT_EQ(cli("analyze --session " + path("bad.jsonl")).code, 2);
  std::ofstream(path("bad.json")) << "[1,2";
  EXPECT_EQ(cli("solve --map " + path("bad.json")).code, 2);
}

TEST_F(Cli, ConfigFileFillsAbsentFlags) {
  std::ofstream(path("cfg.toml")) << "seed = 42\n";
  const auto a = cli("--config " + path("cfg.toml") + " simulate --kind map");
  const auto b = cli("--seed 42 simulate --kind map");
  const auto c = cli("--config " + path("cfg.toml") + " --seed 5 simulate --kind map");
  const auto d = cli("--seed 5 simulate --kind map");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(c.out, d.out);
  EXPECT_NE(a.out, d.out);
}

TEST_F(Cli, ByteReproducibleArtifacts) {
  for (const char* kind : {"session", "dataset"}) {
    const std::string k = kind;
    const std::string extra = k == "session" ? " --steps 200" : " --snippets 30";
    ASSERT_EQ(cli("--seed 9 simulate --kind " + k + extra + " --out " + path(k + "1")).code, 0);
    ASSERT_EQ(cli("--seed 9 simulate --kind " + k + extra + " --out " + path(k + "2")).code, 0);
    EXPECT_EQ(slurp(path(k + "1")), slurp(path(k + "2"))) << k;
  }
  const auto t1 = cli("--seed 1 train-trex --epochs 3 --pairs 40 --dataset " + path("dataset1") + " --out " + path("n1.json"));
  const auto t2 = cli("--seed 1 train-trex --epochs 3 --pairs 40 --dataset " + path("dataset1") + " --out " + path("n2.json"));
  ASSERT_EQ(t1.code, 0);
  EXPECT_EQ(t1.out, t2.out);
  EXPECT_EQ(slurp(path("n1.json")), slurp(path("n2.json")));
  const auto report = nlohmann::json::parse(t1.out);
  EXPECT_TRUE(report.contains("heldout_spearman"));
  EXPECT_TRUE(report.contains("policy_mean_score"));

  const auto a1 = cli("analyze --format json --session " + path("session1"));
  const auto a2 = cli("analyze --format json --session " + path("session1"));
  ASSERT_EQ(a1.code, 0);
  EXPECT_EQ(a1.out, a2.out);
}

TEST_F(Cli, ReplayStreamsJsonFrames) {
  ASSERT_EQ(cli("--seed 2 simulate --kind session --steps 20 --out " + path("s.jsonl")).code, 0);
  const auto r = cli("replay --format json --session " + path("s.jsonl"));
  ASSERT_EQ(r.code, 0);
  std::istringstream is(r.out);
  std::string line;
  int ticks = 0;
  std::string first;
  while (std::getline(is, line)) {
    const auto f = nlohmann::json::parse(line);
    if (first.empty()) first = f.at("frame");
    ticks += f.at("frame") == "tick";
  }
  EXPECT_EQ(first, "header");
  EXPECT_EQ(ticks, 20);
}
