#include "ciim/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "ciim/json_io.hpp"

namespace ciim {
namespace {

namespace fs = std::filesystem;

const fs::path kData = CIIM_TEST_DATA_DIR;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ciim");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double reported(const std::string& text, const std::string& label) {
  std::smatch m;
  const std::regex re(label + ": ([0-9.eE+-]+)");
  if (!std::regex_search(text, m, re)) return -1.0;
  return std::stod(m[1]);
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("ciim-cli-") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string file(const std::string& name) const { return (dir_ / name).string(); }
  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

  fs::path dir_;
};

TEST_F(CliTest, ScoreWorkedExample) {
  const Result r = cli({"score", "--state", (kData / "worked_state.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json j = Json::parse(r.out);
  EXPECT_EQ(j["kind"], "projection");
  EXPECT_NEAR(j["value"].get<double>(), 1.18, 1e-12);
}

TEST_F(CliTest, ScoreCollapseAndErrors) {
  const Result c = cli({"score", "--state", (kData / "collapse_state.json").string()});
  ASSERT_EQ(c.code, 0);
  EXPECT_EQ(Json::parse(c.out)["kind"], "collapse");
  EXPECT_FALSE(Json::parse(c.out).contains("value"));

  write("bad.json", R"({"state": {"threat": 0.5, "vulnerability": 1.5, "exposure": 0.5, "resilience": 0.4}})");
  const Result bad = cli({"score", "--state", file("bad.json")});
  EXPECT_EQ(bad.code, 2);
  EXPECT_TRUE(bad.out.empty());
  EXPECT_NE(bad.err.find("state.vulnerability"), std::string::npos);
}

TEST_F(CliTest, SimulateWritesOneLinePerTick) {
  const std::string cfg = (kData / "noisy_org.json").string();
  ASSERT_EQ(cli({"simulate", "--config", cfg, "--ticks", "40", "--out", file("a.jsonl")}).code, 0);
  ASSERT_EQ(cli({"simulate", "--config", cfg, "--ticks", "40", "--out", file("b.jsonl")}).code, 0);
  const std::string a = slurp(file("a.jsonl"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 40);
  EXPECT_EQ(a, slurp(file("b.jsonl")));

  ASSERT_EQ(cli({"simulate", "--config", cfg, "--ticks", "40", "--seed", "9", "--out", file("c.jsonl")}).code, 0);
  EXPECT_NE(a, slurp(file("c.jsonl")));

  const Result to_stdout = cli({"simulate", "--config", cfg, "--ticks", "3", "--policy", "scripted"});
  EXPECT_EQ(std::count(to_stdout.out.begin(), to_stdout.out.end(), '\n'), 3);
}

TEST_F(CliTest, SimulateConfigErrors) {
  EXPECT_EQ(cli({"simulate", "--config", file("missing.json"), "--ticks", "5"}).code, 2);
  EXPECT_EQ(cli({"simulate", "--ticks", "5"}).code, 2);
  write("bad.json", R"({"initial": {"threat": 0, "vulnerability": 0, "exposure": 0, "resilience": 1},
                        "dynamics": {"attack": {"rate": 2}}})");
  const Result r = cli({"simulate", "--config", file("bad.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("dynamics.attack.rate"), std::string::npos);
  EXPECT_EQ(cli({"simulate", "--config", (kData / "noisy_org.json").string(), "--policy", "random"}).code, 2);
}

TEST_F(CliTest, TrainForecasterOnConstantTrace) {
  write("flat.json", R"({"initial": {"threat": 0.3, "vulnerability": 0.6, "exposure": 0.2, "resilience": 0.8,
                         "sources": {"d_hist": 0.1, "d_real": 0.5, "b_user": 0.4, "a_patterns": 0.9}}})");
  ASSERT_EQ(cli({"simulate", "--config", file("flat.json"), "--ticks", "12", "--out", file("flat.jsonl")}).code, 0);
  const Result r = cli({"train", "--what", "forecaster", "--trace", file("flat.jsonl"), "--out", file("gru.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const double mse = reported(r.err, "one-step MSE");
  EXPECT_GE(mse, 0.0);
  EXPECT_LT(mse, 1e-3);
  EXPECT_EQ(json_io::read_file(file("gru.json"), "gru")["format"], "ciim.gru");
}

TEST_F(CliTest, TrainClassifierReportsAgreement) {
  const Result r = cli({"train", "--what", "classifier", "--seed", "4", "--out", file("stumps.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GE(reported(r.err, "training agreement"), 0.95);
}

TEST_F(CliTest, TrainAgentMatchesOracle) {
  const Result r = cli({"train", "--what", "agent", "--trace", (kData / "frozen_mdp.json").string(), "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("policy matches oracle: true"), std::string::npos);
  EXPECT_EQ(Json::parse(r.out)["format"], "ciim.qtable");
}

TEST_F(CliTest, TrainedModelsPlugIntoScenario) {
  const std::string cfg = (kData / "noisy_org.json").string();
  ASSERT_EQ(cli({"simulate", "--config", cfg, "--ticks", "30", "--out", file("t.jsonl")}).code, 0);
  ASSERT_EQ(cli({"train", "--what", "forecaster", "--trace", file("t.jsonl"), "--out", file("gru.json")}).code, 0);
  ASSERT_EQ(cli({"train", "--what", "classifier", "--out", file("stumps.json")}).code, 0);
  ASSERT_EQ(cli({"train", "--what", "agent", "--trace", file("t.jsonl"), "--out", file("q.json")}).code, 0);

  Json config = json_io::read_file(cfg, "cfg");
  config["models"] = {{"forecaster", file("gru.json")}, {"classifier", file("stumps.json")}, {"agent", file("q.json")}};
  write("with_models.json", config.dump());
  ASSERT_EQ(cli({"simulate", "--config", file("with_models.json"), "--ticks", "20", "--policy", "agent", "--out",
                 file("m.jsonl")}).code,
            0);
  std::ifstream in(file("m.jsonl"));
  std::string line;
  std::getline(in, line);
  const Json first = Json::parse(line);
  EXPECT_EQ(first["forecast"]["model"], "GRU");
  EXPECT_TRUE(first["ensemble_level"].is_string());
  EXPECT_EQ(cli({"replay", "--trace", file("m.jsonl")}).code, 0);
}

TEST_F(CliTest, ReplayExitCodes) {
  const std::string cfg = (kData / "noisy_org.json").string();
  ASSERT_EQ(cli({"simulate", "--config", cfg, "--ticks", "50", "--policy", "agent", "--out", file("t.jsonl")}).code, 0);
  EXPECT_EQ(cli({"replay", "--trace", file("t.jsonl")}).code, 0);

  std::string text = slurp(file("t.jsonl"));
  const std::size_t pos = text.find("\"baseline\":", text.size() / 2) + 11;
  text[pos] = text[pos] == '1' ? '2' : '1';
  write("flipped.jsonl", text);
  EXPECT_NE(cli({"replay", "--trace", file("flipped.jsonl")}).code, 0);
  EXPECT_EQ(cli({"replay", "--trace", file("missing.jsonl")}).code, 2);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"train", "--what", "oracle"}).code, 2);
  EXPECT_EQ(cli({"train", "--what", "forecaster"}).code, 2);
  const Result help = cli({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("simulate"), std::string::npos);
}

}  // namespace
}  // namespace ciim
