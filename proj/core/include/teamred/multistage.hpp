#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teamred/monte_carlo.hpp"
#include "teamred/optimality.hpp"

namespace teamred {

// Actions indexed [stage][agent].
using ActionHistory = std::vector<std::vector<Vector>>;

// x_{t+1} = f(t, ω₀, x_{0:t}, u_{0:t}, w_t); ω₀ is empty when the team has none.
using StageDynamics = std::function<Vector(std::size_t t, const Vector& omega0, std::span<const Vector> xs,
                                           const ActionHistory& us, const Vector& w)>;
// y_t^i = h(t, i, x_{0:t}, u_{0:t-1}, v_t^i)
using StageObservation = std::function<Vector(std::size_t t, std::size_t i, std::span<const Vector> xs,
                                              const ActionHistory& us, const Vector& v)>;
// c_t(ω₀, x_t, u_t^{1:N}); ω₀ is empty when the team has none.
using StageCost =
    std::function<double(std::size_t t, const Vector& omega0, const Vector& x, std::span<const Vector> u)>;
using TerminalCost = std::function<double(const Vector& x)>;

struct StageSignal {
  enum class Kind { observation, action } kind = Kind::observation;
  std::size_t t = 0;
  std::size_t agent = 0;
  friend bool operator==(const StageSignal&, const StageSignal&) = default;
};

struct MultiStageTeam {
  std::string label;
  std::size_t T = 1;
  std::size_t N = 1;
  Distribution x0 = Distribution::standard_normal(1);
  std::vector<Distribution> w;               // per stage
  std::vector<std::vector<Distribution>> v;  // [t][i]
  std::optional<Distribution> omega0;
  std::vector<std::size_t> obs_dims;         // per agent
  std::vector<ActionSpace> action_spaces;    // per agent
  StageDynamics dynamics;
  StageObservation observation;
  StageCost stage_cost;
  TerminalCost terminal_cost;
  std::vector<std::vector<std::vector<StageSignal>>> info;  // I_t^i, [t][i]
  bool costs_nonnegative = true;

  std::size_t action_dim(std::size_t i) const { return action_spaces.at(i).dim(); }
  std::size_t info_dim(std::size_t t, std::size_t i) const;
  std::vector<std::string> validate() const;
};

// γ_t^i, indexed [t][i].
struct MultiPolicy {
  std::vector<std::vector<PolicyEntry>> entries;
  const PolicyEntry& at(std::size_t t, std::size_t i) const { return entries.at(t).at(i); }
  MultiPolicy with_entry(std::size_t t, std::size_t i, PolicyEntry e) const;
  static MultiPolicy zero(const MultiStageTeam& team);
};

struct Trajectory {
  Vector omega0;
  std::vector<Vector> x;                   // x_0 .. x_T
  std::vector<std::vector<Vector>> y;      // [t][i]
  ActionHistory u;                         // [t][i]
  std::vector<std::vector<Vector>> info;   // [t][i]
  std::vector<double> stage_costs;         // c_0 .. c_{T-1}, then c_T
  double cost = 0.0;                       // Σ c_t + c_T, tilted in reduced forms
  double log_weight = 0.0;
  double weight = 1.0;
};

// Stacked actions of one agent over all stages, replacing its policy.
struct ActionOverride {
  std::size_t agent = 0;
  std::vector<Vector> actions;
};

class MultiStageModel {
 public:
  virtual ~MultiStageModel() = default;
  virtual const MultiStageTeam& team() const = 0;
  virtual const PrimitiveSpace& sampling_space() const = 0;
  virtual Trajectory run(const PrimitiveSample& sample, const MultiPolicy& policy,
                         const ActionOverride* override_actions = nullptr) const = 0;
  virtual std::string form() const = 0;
};

class DirectMultiStage final : public MultiStageModel {
 public:
  explicit DirectMultiStage(MultiStageTeam team);
  const MultiStageTeam& team() const override { return team_; }
  const PrimitiveSpace& sampling_space() const override { return space_; }
  Trajectory run(const PrimitiveSample& sample, const MultiPolicy& policy,
                 const ActionOverride* override_actions = nullptr) const override;
  std::string form() const override { return "dynamic"; }

 private:
  MultiStageTeam team_;
  PrimitiveSpace space_;
};

Trajectory rollout(const MultiStageTeam& team, const MultiPolicy& policy, const PrimitiveSample& sample);

// Conditioning arguments of φ_t^i (or of a state factor ψ_t^i).
struct StageContext {
  std::size_t t;
  std::size_t agent;
  const Vector& value;  // y_t^i, or the agent's block of x_{t+1}
  const Vector& omega0;
  std::span<const Vector> x;            // x_0 .. x_t
  std::span<const std::vector<Vector>> y;  // y_0 .. y_{t-1}
  const ActionHistory& u;               // u_0 .. u_{t-1} (or .. u_t for state factors)
};

using StageLogFactor = std::function<double(const StageContext&)>;

struct StageFactor {
  Distribution reference;
  StageLogFactor log_factor;
};

// φ_t^i and Q̃_t^i, [t][i].
struct StageDensityFamily {
  std::vector<std::vector<StageFactor>> factors;
};

// Per-agent state references: x_{t+1} is split into agent blocks, each
// drawn from its reference with factor ψ_t^i.
struct StateReferenceFamily {
  std::vector<std::pair<std::size_t, std::size_t>> blocks;  // (offset, length) per agent
  std::vector<std::vector<StageFactor>> factors;           // [t][i]
};

// Additive Gaussian observations y = ĥ(t, i, x_{0:t}, u_{0:t-1}) + v_t^i.
using StageMean =
    std::function<Vector(std::size_t t, std::size_t i, std::span<const Vector> xs, const ActionHistory& us)>;
StageDensityFamily gaussian_additive_densities(const MultiStageTeam& team, StageMean hhat);
// Observations read no state: φ ≡ 1 and Q̃ is the law of v_t^i.
StageDensityFamily identity_densities(const MultiStageTeam& team);
// x^i_{t+1} = f̂(t, i, ω₀, x_{0:t}, u_{0:t}) + w^i_t with Gaussian w_t; references given per agent.
using StateMean = std::function<Vector(std::size_t t, std::size_t i, const Vector& omega0, std::span<const Vector> xs,
                                       const ActionHistory& us)>;
StateReferenceFamily gaussian_state_references(const MultiStageTeam& team,
                                               std::vector<std::pair<std::size_t, std::size_t>> blocks,
                                               StateMean fhat, std::vector<Distribution> references);

// Independent-data reduction (measurement references) and/or agent-wise
// nested reduction (state references). Eliminated noises are not sampled.
class ReducedMultiStage final : public MultiStageModel {
 public:
  ReducedMultiStage(MultiStageTeam team, std::optional<StageDensityFamily> measurement_refs,
                    std::optional<StateReferenceFamily> state_refs = std::nullopt);
  const MultiStageTeam& team() const override { return team_; }
  const PrimitiveSpace& sampling_space() const override { return space_; }
  Trajectory run(const PrimitiveSample& sample, const MultiPolicy& policy,
                 const ActionOverride* override_actions = nullptr) const override;
  std::string form() const override;

 private:
  MultiStageTeam team_;
  std::optional<StageDensityFamily> meas_;
  std::optional<StateReferenceFamily> state_;
  PrimitiveSpace space_;
  std::optional<std::size_t> x0_, omega_;
  std::vector<std::optional<std::size_t>> w_;
  std::vector<std::vector<std::optional<std::size_t>>> v_, yref_, xref_;
};

// ∏_t ∏_i φ_t^i along a trajectory.
double independent_data_weight(const MultiStageTeam& team, const StageDensityFamily& densities,
                               const Trajectory& trajectory);

bool check_agwise_nested(const MultiStageTeam& team);

Estimate multistage_cost(const MultiStageModel& model, const MultiPolicy& policy, const MonteCarloPlan& plan);
PairedCosts multistage_paired_costs(const MultiStageModel& model, std::span<const MultiPolicy> policies,
                                    const MonteCarloPlan& plan);

enum class MultiClass { affine, grid };

struct MultiBestResponseOptions {
  MultiClass cls = MultiClass::affine;
  std::vector<Vector> action_grid;  // open-loop constants per stage
  ProbeSettings probe;
};

struct MultiResponse {
  std::size_t agent = 0;
  std::optional<std::size_t> stage;  // empty for agent-wise deviations
  double improvement = 0.0;
  double std_error = 0.0;
  bool unbounded_below = false;
  std::string method;
  nlohmann::json to_json() const;
};

struct MultiPbpReport {
  std::string kind;  // "agwise" or "dmwise"
  std::vector<MultiResponse> responses;
  double j = 0.0;
  double tol = 0.0;
  bool pass = true;
  nlohmann::json to_json() const;
};

MultiPbpReport dmwise_pbp_check(const MultiStageModel& model, const MultiPolicy& policy, const MonteCarloPlan& plan,
                                const MultiBestResponseOptions& options = {});
MultiPbpReport agwise_pbp_check(const MultiStageModel& model, const MultiPolicy& policy, const MonteCarloPlan& plan,
                                const MultiBestResponseOptions& options = {});

struct MultiCertificate {
  bool certified = false;
  bool dmwise_pass = false;
  bool chord_convex = false;
  bool pairings_finite = false;
  std::size_t chord_points = 0;
  std::size_t chord_violations = 0;
  nlohmann::json evidence;
  std::string verdict() const { return certified ? "certified" : "inconclusive"; }
};

MultiCertificate certify_agwise_global(const MultiStageModel& reduced, const MultiPolicy& policy,
                                       const MonteCarloPlan& plan, const MultiBestResponseOptions& options = {},
                                       std::size_t chord_points = 1000);

// Brute-force search over two-stage quadratic costs
//   c = a u0² + b u1² + c u0 u1 + d u0 + e u1
// for a profile on the action grid that is a coordinate-wise minimum but not
// a joint minimum.
struct CoordinateTrap {
  double a = 0, b = 0, c = 0, d = 0, e = 0;
  double u0 = 0, u1 = 0;          // coordinate-wise minimum
  double joint_u0 = 0, joint_u1 = 0;
  double trap_value = 0, joint_value = 0;
  nlohmann::json to_json() const;
};

std::optional<CoordinateTrap> find_coordinate_trap(const std::vector<double>& coefficient_values,
                                                   const std::vector<double>& grid);

// Single agent, T = 2, x_1 = u_0, open-loop information, box [-1, 1].
MultiStageTeam coordinate_trap_team(const CoordinateTrap& trap);
MultiPolicy constant_policy(const MultiStageTeam& team, const std::vector<std::vector<Vector>>& values);

}  // namespace teamred
