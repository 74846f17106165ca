#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teamred/cost_model.hpp"
#include "teamred/reduction_independent.hpp"

namespace teamred {

Estimate evaluate_cost(const TeamProblem& problem, const Policy& policy, const MonteCarloPlan& plan);

// tol_stationarity: 1e-3 for sampling, 1e-9 for exact plans.
double default_stationarity_tol(const MonteCarloPlan& plan);

struct DirectionResidual {
  std::string label;
  double residual = 0.0;
  double std_error = 0.0;
};

struct DmStationarity {
  std::size_t dm = 0;
  std::vector<DirectionResidual> residuals;
  bool pass = true;
};

struct StationarityReport {
  std::vector<DmStationarity> dms;
  double tol = 0.0;
  bool pass = true;
  nlohmann::json to_json() const;
};

// `tests[i]` overrides the standard family of DM i when provided.
StationarityReport stationarity_check(const CostModel& model, const Policy& policy,
                                      const MonteCarloPlan& plan, std::optional<double> tol = {},
                                      const std::vector<TestDirectionFamily>* tests = nullptr);

// ---- parametric minimization shared by single- and multi-stage checks ----

// A candidate is either a parameter vector or the incumbent (nullopt).
using Candidate = std::optional<Vector>;
// Paired evaluation of candidates on common samples (see PairedCosts).
using CandidateEvaluator = std::function<PairedCosts(std::span<const Candidate>)>;

struct ParametricResult {
  Vector theta;
  double j_incumbent = 0.0;
  double j_best = 0.0;
  double improvement = 0.0;
  double std_error = 0.0;
  bool unbounded_below = false;
  Vector ray;
  bool quadratic = false;
  std::string method;
};

struct ProbeSettings {
  int max_doubling = 20;   // scales 2^0 .. 2^20
  int persistence = 5;     // last doublings that must each halve J
};

ParametricResult minimize_parametric(std::size_t dim, const Vector& theta0,
                                     const CandidateEvaluator& evaluate, std::uint64_t seed,
                                     const ProbeSettings& probe = {});

// ---- best response ----

enum class BestResponseClass { affine, tabular };

struct BestResponseOptions {
  BestResponseClass cls = BestResponseClass::affine;
  std::vector<Vector> action_grid;  // tabular class
  ProbeSettings probe;
};

struct BestResponseResult {
  std::size_t dm = 0;
  Policy improved;
  double j_incumbent = 0.0;
  double j_best = 0.0;
  double improvement = 0.0;  // +inf when unbounded below
  double std_error = 0.0;
  bool unbounded_below = false;
  Vector ray;
  std::string method;
  nlohmann::json to_json() const;
};

BestResponseResult best_response(const CostModel& model, const Policy& policy, std::size_t dm,
                                 const MonteCarloPlan& plan, const BestResponseOptions& options = {});

// Affine class: u = K x + b projected on the action box; theta = [b; vec(K)].
PolicyEntry affine_from_theta(const Vector& theta, std::size_t in_dim, std::size_t out_dim,
                              const ActionSpace& box);
Vector theta_from_affine(const AffineMap& map);

struct PbpReport {
  std::vector<BestResponseResult> responses;
  double j = 0.0;
  double tol = 0.0;
  bool pass = true;
  nlohmann::json to_json() const;
};

double pbp_tolerance(double j);

// options[i] applies to DM i; a single entry applies to all DMs.
PbpReport pbp_check(const CostModel& model, const Policy& policy, const MonteCarloPlan& plan,
                    const std::vector<BestResponseOptions>& options = {{}});

// ---- convexity in policies ----

struct ConvexityPoint {
  double alpha = 0.0;
  double violation = 0.0;
  double std_error = 0.0;
};

struct ConvexityReport {
  std::vector<ConvexityPoint> points;
  double max_violation = 0.0;
  double max_violation_alpha = 0.0;
  double max_violation_se = 0.0;
  bool own_path_mixing = false;
  bool witness = false;  // violation beyond 3 SE (and beyond rounding)
  nlohmann::json to_json() const;
};

std::vector<double> alpha_grid(std::size_t steps = 10);

// Dynamic forms mix policies and let measurements respond to the mixed
// actions. Static and control-sharing forms mix the actions each profile
// produces on its own path.
ConvexityReport convexity_in_policies_check(const CostModel& model, const Policy& gamma,
                                            const Policy& gamma_prime, std::span<const double> alphas,
                                            const MonteCarloPlan& plan);

// ---- one-dimensional frozen-cost profile ----

struct QuadraticProfile {
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;  // J(t) ≈ c0 + c1 t + c2 t^2
  double max_fit_error = 0.0;
  std::vector<double> ts, js;
};

// J along γ^dm + t δ(I^dm) with every other policy frozen.
QuadraticProfile frozen_cost_profile(const CostModel& model, const Policy& policy, std::size_t dm,
                                     const TestDirection& direction, std::span<const double> ts,
                                     const MonteCarloPlan& plan);

// ---- global optimality certificate ----

struct Certificate {
  bool certified = false;
  bool stationary = false;
  bool flat = false;
  bool chord_convex = false;
  bool pairings_finite = false;
  std::size_t chord_points = 0;
  std::size_t chord_violations = 0;
  double worst_chord_violation = 0.0;
  nlohmann::json evidence;
  std::string verdict() const { return certified ? "certified" : "inconclusive"; }
};

Certificate certify_global_optimality(const ReducedProblem& reduced, const Policy& policy,
                                      const MonteCarloPlan& plan, std::size_t chord_points = 1000);

// Sampled chord test of the tilted cost in the joint action profile.
struct ChordResult {
  std::size_t points = 0;
  std::size_t violations = 0;
  double worst = 0.0;
};
ChordResult tilted_chord_test(const CostModel& model, const Policy& policy, std::size_t points,
                              std::uint64_t seed);

}  // namespace teamred
