#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "teamred/model.hpp"
#include "teamred/monte_carlo.hpp"

namespace teamred {

struct PathOutcome {
  double cost = 0.0;    // tilted in reduced forms
  double weight = 1.0;  // change-of-measure weight; 1 in dynamic forms
  std::vector<Vector> measurements;
  std::vector<Vector> actions;
  std::vector<Vector> info;
};

// A way of turning (sample, policy) into a realized cost: the dynamic form
// of a problem, one of its static forms, or a change-of-measure reduction.
class CostModel {
 public:
  virtual ~CostModel() = default;

  virtual const TeamProblem& problem() const = 0;
  virtual const PrimitiveSpace& sampling_space() const = 0;
  virtual PathOutcome run(const PrimitiveSample& sample, const Policy& policy) const = 0;
  // Cost of `actions` with every measurement of `reference` held fixed.
  virtual double cost_with_actions(const PrimitiveSample& sample, const PathOutcome& reference,
                                   std::span<const Vector> actions) const = 0;
  virtual std::string form() const = 0;
  // True when measurements do not react to actions (static or reduced forms).
  virtual bool static_measurements() const = 0;
};

class DynamicModel final : public CostModel {
 public:
  explicit DynamicModel(TeamProblem problem, std::string form = "D");

  const TeamProblem& problem() const override { return problem_; }
  const PrimitiveSpace& sampling_space() const override { return problem_.primitives; }
  PathOutcome run(const PrimitiveSample& sample, const Policy& policy) const override;
  double cost_with_actions(const PrimitiveSample& sample, const PathOutcome& reference,
                           std::span<const Vector> actions) const override;
  std::string form() const override { return form_; }
  bool static_measurements() const override { return static_; }

 private:
  TeamProblem problem_;
  std::string form_;
  bool static_ = false;
};

struct TestDirection {
  std::string label;
  std::function<Vector(const Vector& info)> fn;
};

// Deviation directions δ_k(I^i) used for weak-form checks.
class TestDirectionFamily {
 public:
  TestDirectionFamily() = default;
  explicit TestDirectionFamily(std::vector<TestDirection> dirs) : dirs_(std::move(dirs)) {}

  // Constant unit vectors, then coordinates of I^i, then degree-2 monomials.
  static TestDirectionFamily standard(std::size_t info_dim, std::size_t action_dim,
                                      int max_degree = 2);
  static TestDirectionFamily constants(std::size_t action_dim);

  std::size_t size() const { return dirs_.size(); }
  const TestDirection& operator[](std::size_t k) const { return dirs_.at(k); }

 private:
  std::vector<TestDirection> dirs_;
};

enum class PathQuantity { cost, weight };

// Weak-form directional derivatives: for each direction k, the mean over
// paths of d/dε q(path with u^dm + ε δ_k(I^dm)) at ε = 0. The perturbation
// flows through every downstream measurement and frozen policy. One-sided
// differences are used where the two-sided stencil leaves the action box.
std::vector<Estimate> directional_derivatives(const CostModel& model, const Policy& policy,
                                              std::size_t dm, const TestDirectionFamily& tests,
                                              const MonteCarloPlan& plan,
                                              PathQuantity quantity = PathQuantity::cost);

// Expected cost under the model's sampling measure.
Estimate expected_cost(const CostModel& model, const Policy& policy, const MonteCarloPlan& plan);

// Means of several policies on common samples; entry k of the second vector
// is the paired estimate of J(policies[k]) - J(policies[0]).
struct PairedCosts {
  std::vector<Estimate> costs;
  std::vector<Estimate> differences;
};
PairedCosts paired_costs(const CostModel& model, std::span<const Policy> policies,
                         const MonteCarloPlan& plan);

}  // namespace teamred
