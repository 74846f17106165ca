#include <gtest/gtest.h>

#include <map>

#include "teamred/errors.hpp"
#include "teamred/scenarios.hpp"

namespace teamred {
namespace {

TEST(Scenarios, CatalogueIsComplete) {
  std::vector<std::string> names;
  for (const auto& s : scenario_catalogue()) names.push_back(s.name);
  const std::vector<std::string> expect{"example1", "example2", "example3", "example4", "example5_lqg",
                                        "example6_ms", "example7_ms", "finite_toy"};
  EXPECT_EQ(names, expect);
}

TEST(Scenarios, ParameterErrors) {
  EXPECT_THROW(build_scenario("example2", {{"beta", 1.0}}), ParameterError);
  EXPECT_THROW(build_scenario("example2", {{"beta", 0.5}}), ParameterError);
  EXPECT_THROW(build_scenario("example1", {{"alpha", 0.0}}), ParameterError);
  EXPECT_THROW(build_scenario("example1", {{"alpha", 1.0}}), ParameterError);
  EXPECT_THROW(build_scenario("example2", {{"alpha", 1.5}}), ParameterError);
  EXPECT_THROW(build_scenario("example4", {{"c1", -1.0}}), ParameterError);
  EXPECT_THROW(build_scenario("nope"), ConfigurationError);
  EXPECT_THROW(build_scenario("example1", {{"gamma", 1.0}}), ConfigurationError);
  EXPECT_NO_THROW(build_scenario("example2", {{"beta", 1.0001}}));
}

TEST(Scenarios, BuildIsPure) {
  for (const auto& s : scenario_catalogue()) {
    const auto a = export_scenario(build_scenario(s.name));
    const auto b = export_scenario(build_scenario(s.name));
    EXPECT_EQ(a.dump(), b.dump()) << s.name;
  }
}

TEST(Scenarios, ExportValidatesAndTamperingIsDetected) {
  for (const auto& s : scenario_catalogue()) {
    const auto j = export_scenario(build_scenario(s.name));
    EXPECT_TRUE(validate_scenario_json(j).empty()) << s.name;
  }
  auto j = export_scenario(build_scenario("example1", {{"alpha", 0.25}}));
  EXPECT_TRUE(validate_scenario_json(j).empty());
  j["problem"]["label"] = "tampered";
  EXPECT_FALSE(validate_scenario_json(j).empty());
}

TEST(Scenarios, MultistageConfig) {
  const auto c = multistage_from_json({{"scenario", "example6_ms"}, {"policy", "zero"}});
  EXPECT_TRUE(c.bundle.multistage.has_value());
  EXPECT_THROW(multistage_from_json({{"scenario", "example1"}}), ConfigurationError);
  EXPECT_THROW(multistage_from_json({{"scenario", "example6_ms"}, {"policy", "nope"}}), ConfigurationError);
}

class VerdictsAcrossSeeds : public ::testing::TestWithParam<std::string> {};

TEST_P(VerdictsAcrossSeeds, AllMatch) {
  const auto bundle = build_scenario(GetParam());
  for (std::uint64_t seed : {42ULL, 7ULL, 2024ULL}) {
    MonteCarloPlan plan;
    plan.samples = 20000;
    plan.seed = seed;
    const auto rep = run_scenario(bundle, plan);
    for (const auto& c : rep.checks)
      EXPECT_TRUE(c.matched) << GetParam() << " seed " << seed << ": " << c.spec.id << " [" << c.spec.form << ", "
                             << c.spec.policy << "] expected " << c.spec.expected << " got " << c.verdict;
  }
}

TEST(Scenarios, Example2SharedSignalVariantHasSameVerdicts) {
  const auto base = run_scenario(build_scenario("example2"), MonteCarloPlan{20000, 42});
  const auto shared = run_scenario(build_scenario("example2", {{"variant", "y1"}}), MonteCarloPlan{20000, 42});
  std::map<std::string, std::string> verdicts;
  for (const auto& c : base.checks) verdicts[c.spec.id + "/" + c.spec.form + "/" + c.spec.policy] = c.verdict;
  std::size_t compared = 0;
  for (const auto& c : shared.checks) {
    EXPECT_TRUE(c.matched) << c.spec.id << " [" << c.spec.form << "] got " << c.verdict;
    const auto it = verdicts.find(c.spec.id + "/" + c.spec.form + "/" + c.spec.policy);
    if (it == verdicts.end()) continue;
    ++compared;
    EXPECT_EQ(c.verdict, it->second) << c.spec.id << " [" << c.spec.form << "]";
  }
  EXPECT_GE(compared, 3u);
}

INSTANTIATE_TEST_SUITE_P(All, VerdictsAcrossSeeds,
                         ::testing::Values("example1", "example2", "example3", "example4", "example5_lqg",
                                           "example6_ms", "example7_ms", "finite_toy"));

}  // namespace
}  // namespace teamred
