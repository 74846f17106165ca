#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "teamred/cost_model.hpp"
#include "teamred/model.hpp"
#include "teamred/monte_carlo.hpp"

namespace teamred {

// Arguments of a density factor f^i. `sample` is a point of the reference
// space; measurements[0..dm] and actions[0..dm-1] are realized.
struct DensityContext {
  const PrimitiveSample& sample;
  std::span<const Vector> measurements;
  std::span<const Vector> actions;
  std::size_t dm;
};

using LogDensityFactor = std::function<double(const DensityContext&)>;

struct ReferenceFactor {
  Distribution reference;       // Q^i on the measurement space of DM i
  LogDensityFactor log_factor;  // log f^i
  std::string kind;             // builtin id, for export
};

struct ReferenceMeasureFamily {
  std::vector<ReferenceFactor> factors;
};

// The cost written in (retained primitives, measurements, actions).
using ReducedCostEval = std::function<double(
    const PrimitiveSample& sample, std::span<const Vector> measurements, std::span<const Vector> actions)>;

// Policy-independent reduction. Retained primitives keep their law; every
// measurement is drawn independently from its reference measure.
class ReducedProblem {
 public:
  // Without `cost`, the base cost is used and must read retained primitives only.
  ReducedProblem(TeamProblem base, ReferenceMeasureFamily refs, std::vector<std::string> retained,
                 ReducedCostEval cost = {});

  const TeamProblem& base() const { return base_; }
  const ReferenceMeasureFamily& refs() const { return refs_; }
  const PrimitiveSpace& reference_space() const { return space_; }
  const std::vector<std::string>& retained() const { return retained_; }
  // Position of the reference draw of y^dm in the reference space.
  std::size_t measurement_slot(std::size_t dm) const { return retained_.size() + dm; }

  double log_factor(const DensityContext& ctx) const;
  double cost(const PrimitiveSample& sample, std::span<const Vector> measurements,
              std::span<const Vector> actions) const;

 private:
  TeamProblem base_;
  ReferenceMeasureFamily refs_;
  std::vector<std::string> retained_;
  ReducedCostEval cost_;
  PrimitiveSpace space_;
};

struct ReducedPath {
  std::vector<Vector> measurements;
  std::vector<Vector> actions;
  std::vector<Vector> info;
  double base_cost = 0.0;
  double log_weight = 0.0;
  double weight = 1.0;
  double tilted_cost = 0.0;
};

inline constexpr double kMaxLogWeight = 700.0;

ReducedPath simulate_reduced_path(const ReducedProblem& reduced, const Policy& policy,
                                  const PrimitiveSample& sample);

// ∏_i f^i along a reduced path, in log space.
double weight(const ReducedProblem& reduced, const PrimitiveSample& sample, const ReducedPath& path);

class ReducedModel final : public CostModel {
 public:
  explicit ReducedModel(ReducedProblem reduced) : reduced_(std::move(reduced)) {}

  const ReducedProblem& reduced() const { return reduced_; }
  const TeamProblem& problem() const override { return reduced_.base(); }
  const PrimitiveSpace& sampling_space() const override { return reduced_.reference_space(); }
  PathOutcome run(const PrimitiveSample& sample, const Policy& policy) const override;
  double cost_with_actions(const PrimitiveSample& sample, const PathOutcome& reference,
                           std::span<const Vector> actions) const override;
  std::string form() const override { return "PI"; }
  bool static_measurements() const override { return true; }

 private:
  ReducedProblem reduced_;
};

Estimate evaluate_cost_reduced(const ReducedProblem& reduced, const Policy& policy,
                               const MonteCarloPlan& plan);

// Weak-form estimates of ∇_{u^dm} E_Q[dP/dQ | I^dm] paired with each test direction.
std::vector<Estimate> weight_flatness_residual(const ReducedProblem& reduced, const Policy& policy,
                                               std::size_t dm, const TestDirectionFamily& tests,
                                               const MonteCarloPlan& plan);

// ∫ f^dm dQ^dm with the conditioning arguments of `ctx` held fixed.
Estimate factor_normalization(const ReducedProblem& reduced, const PrimitiveSample& sample,
                              std::span<const Vector> measurements, std::span<const Vector> actions,
                              std::size_t dm, const MonteCarloPlan& plan);

// Builders for the standard reference choices.
ReferenceFactor identity_factor(Distribution law);
// y = mean(ctx) + noise; Q = law of the noise; f = p(y - mean) / p(y).
ReferenceFactor additive_noise_factor(Distribution noise,
                                      std::function<Vector(const DensityContext&)> mean);
// Finite channel with conditional pmf over `atoms`; Q uniform on the atoms.
ReferenceFactor finite_channel_factor(std::vector<Vector> atoms,
                                      std::function<std::vector<double>(const DensityContext&)> pmf);

}  // namespace teamred
