#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("teamred_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the CLI with `args`; stdout and stderr go to files in the scratch directory.
  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " '" + std::string(TEAMRED_CLI_PATH) + "' " + args + " > '" + path("stdout") +
                            "' 2> '" + path("stderr") + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string slurp(const std::string& name) const {
    std::ifstream in(path(name));
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }
  nlohmann::json json(const std::string& name) const { return nlohmann::json::parse(slurp(name)); }
  void write(const std::string& name, const nlohmann::json& j) const { std::ofstream(path(name)) << j.dump(2); }

  fs::path dir_;
};

TEST_F(Cli, ListsScenarios) {
  EXPECT_EQ(run("list"), 0);
  EXPECT_NE(slurp("stdout").find("example1"), std::string::npos);
  EXPECT_NE(slurp("stdout").find("finite_toy"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("verify --scenario example1 --samples 0"), 2);
  EXPECT_EQ(run("verify --scenario example1 --no-such-flag"), 2);
  EXPECT_NE(slurp("stderr").find("verify"), std::string::npos);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("verify --scenario nope"), 2);
  EXPECT_EQ(run("verify --scenario example2 --params '{\"beta\": 1.0}'"), 2);
  EXPECT_EQ(run("reduce --scenario example1 --form xx"), 2);
  EXPECT_EQ(run("lqg --config '" + path("missing.json") + "'"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, VerifyExample3Report) {
  ASSERT_EQ(run("verify --scenario example3 --out '" + path("r.json") + "' --csv '" + path("r.csv") + "'"), 0);
  const auto r = json("r.json");
  EXPECT_EQ(r.at("schema"), 1);
  EXPECT_EQ(r.at("seed"), 42);
  EXPECT_EQ(r.at("scenario"), "example3");
  EXPECT_TRUE(r.at("matched").get<bool>());
  EXPECT_TRUE(r.contains("timestamp"));
  bool found = false;
  for (const auto& c : r.at("checks")) {
    EXPECT_TRUE(c.contains("id") && c.contains("form") && c.contains("verdict") && c.contains("expected"));
    if (c.at("id") == "stationarity_residual_dm1") {
      found = true;
      EXPECT_NEAR(c.at("estimate").get<double>(), 1.0, 1e-6);
    }
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(slurp("r.csv").rfind("scenario,check,dm,direction,residual,se\n", 0), 0u);
}

TEST_F(Cli, SameSeedSameReport) {
  ASSERT_EQ(run("verify --scenario example1 --samples 5000 --out '" + path("a.json") + "'"), 0);
  ASSERT_EQ(run("verify --scenario example1 --samples 5000 --out '" + path("b.json") + "'", "TEAMRED_THREADS=2"), 0);
  auto a = json("a.json"), b = json("b.json");
  a.erase("timestamp");
  b.erase("timestamp");
  EXPECT_EQ(a.dump(), b.dump());
}

TEST_F(Cli, ExportValidateRoundTrip) {
  ASSERT_EQ(run("export --scenario example4 --out '" + path("s.json") + "'"), 0);
  EXPECT_EQ(run("validate --config '" + path("s.json") + "'"), 0);
  auto j = json("s.json");
  j["expected"][0]["expected"] = "fail-or-whatever";
  write("t.json", j);
  EXPECT_EQ(run("validate --config '" + path("t.json") + "'"), 1);
}

TEST_F(Cli, LqgSolve) {
  write("team.json", {{"N", 2},
                      {"Sigma_zeta", {{1.0, 0.0}, {0.0, 1.0}}},
                      {"H", {{{1.0, 0.0}}, {{0.0, 1.0}}}},
                      {"dims", {{"u", {1, 1}}}},
                      {"B", {{"(2,1)", 5.0}}},
                      {"Q", {{1.0, 0.0}, {0.0, 1.0}}},
                      {"R", {{1.0, 0.0}, {0.0, 1.0}}},
                      {"S", {{1.0, 0.0}, {0.0, 1.0}}}});
  ASSERT_EQ(run("lqg --config '" + path("team.json") + "' --out '" + path("out.json") + "'"), 0);
  const auto out = json("out.json");
  EXPECT_NE(out.dump().find("K"), std::string::npos);
  auto bad = json("team.json");
  bad["R"] = {{1.0, 0.0}, {0.0, -1.0}};
  write("bad.json", bad);
  EXPECT_EQ(run("lqg --config '" + path("bad.json") + "'"), 2);
}

TEST_F(Cli, ReduceForms) {
  EXPECT_EQ(run("reduce --scenario example1 --form pi --samples 2000 --out '" + path("pi.json") + "'"), 0);
  EXPECT_TRUE(json("pi.json").is_object());
  write("policy.json", {{"entries",
                         {{{"dm", 1}, {"kind", "affine"}, {"gain", {{0.0}}}, {"bias", {2.0}}},
                          {{"dm", 2}, {"kind", "affine"}, {"gain", {{1.0}}}, {"bias", {0.0}}}}}});
  EXPECT_EQ(run("reduce --scenario example1 --form s --policy '" + path("policy.json") + "' --out '" + path("s.json") + "'"),
            0)
      << slurp("stderr");
  EXPECT_NE(slurp("s.json").find("2.0"), std::string::npos);
  EXPECT_EQ(run("reduce --scenario example4 --form cs --out '" + path("cs.json") + "'"), 0);
}

TEST_F(Cli, MultistageNested) {
  write("ms.json", {{"scenario", "example6_ms"}, {"policy", "reference"}});
  EXPECT_EQ(run("multistage --config '" + path("ms.json") + "' --check nested"), 0);
  write("bad.json", {{"scenario", "example1"}});
  EXPECT_EQ(run("multistage --config '" + path("bad.json") + "' --check nested"), 2);
}

}  // namespace
