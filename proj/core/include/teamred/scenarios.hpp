#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teamred/lqg.hpp"
#include "teamred/multistage.hpp"
#include "teamred/optimality.hpp"
#include "teamred/reduction_dependent.hpp"
#include "teamred/reduction_independent.hpp"

namespace teamred {

struct ExpectedVerdict {
  std::string id;
  std::string form;
  std::string policy;
  std::string expected;  // "pass", "fail", "unbounded", "certified", "inconclusive"
  std::string citation;
};

// One row of the plot-ready residual table.
struct ResidualRow {
  std::string check;
  std::string dm;
  std::string direction;
  double residual = 0.0;
  double se = 0.0;
};

struct CheckResult {
  ExpectedVerdict spec;
  std::string verdict;
  bool matched = false;
  std::optional<double> estimate;
  std::optional<double> std_error;
  nlohmann::json details = nlohmann::json::object();
  std::vector<ResidualRow> rows;
  nlohmann::json to_json() const;
};

struct ScenarioBundle {
  std::string name;
  nlohmann::json params;
  std::optional<TeamProblem> problem;  // dynamic form
  std::optional<InvertibleObservation> inverse;
  std::optional<ReducedProblem> reduced;  // policy-independent reduction
  std::optional<LqgTeam> lqg;
  std::optional<MultiStageTeam> multistage;
  std::map<std::string, Policy> policies;
  std::map<std::string, MultiPolicy> multi_policies;
  std::vector<ExpectedVerdict> expected;
  std::function<CheckResult(const ExpectedVerdict&, const MonteCarloPlan&)> evaluate;
};

struct ScenarioInfo {
  std::string name;
  std::string summary;
  nlohmann::json defaults;
};

const std::vector<ScenarioInfo>& scenario_catalogue();

// Unknown names raise ConfigurationError; out-of-range parameters raise ParameterError.
ScenarioBundle build_scenario(const std::string& name, const nlohmann::json& params = nlohmann::json::object());

struct ScenarioReport {
  std::string name;
  nlohmann::json params;
  std::vector<CheckResult> checks;
  bool all_matched() const;
  nlohmann::json to_json() const;
};

ScenarioReport run_scenario(const ScenarioBundle& bundle, const MonteCarloPlan& plan);

// Scenario JSON: builtin kinds only, closures are referenced by id.
nlohmann::json problem_to_json(const TeamProblem& problem);
nlohmann::json export_scenario(const ScenarioBundle& bundle);
// Rebuilds the bundle named in a scenario file and checks that it serializes
// to the same problem; returns the list of differences.
std::vector<std::string> validate_scenario_json(const nlohmann::json& j);

// Multistage config for the CLI: {"scenario": "example6_ms" | "example7_ms",
// "params": {...}, "policy": "reference" | "zero"}.
struct MultiStageConfig {
  ScenarioBundle bundle;
  MultiPolicy policy;
};
MultiStageConfig multistage_from_json(const nlohmann::json& j);

// The reduced multistage model a scenario declares (independent-data or agent-nested).
std::unique_ptr<MultiStageModel> reduced_multistage(const ScenarioBundle& bundle);
// Stage densities of the independent-data reduction for the Example 6 family.
StageDensityFamily example6_densities(const MultiStageTeam& team, double coupling);

}  // namespace teamred
