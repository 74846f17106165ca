#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "teamred/distribution.hpp"
#include "teamred/policy.hpp"
#include "teamred/types.hpp"

namespace teamred {

enum class SignalKind { primitive, measurement, action };

// DM indices are 0-based in code and 1-based in names and reports.
struct SignalRef {
  SignalKind kind;
  std::size_t index;
  friend auto operator<=>(const SignalRef&, const SignalRef&) = default;
};

inline SignalRef primitive_ref(std::size_t i) { return {SignalKind::primitive, i}; }
inline SignalRef measurement_ref(std::size_t i) { return {SignalKind::measurement, i}; }
inline SignalRef action_ref(std::size_t i) { return {SignalKind::action, i}; }

struct PrimitiveVariable {
  std::string name;
  Distribution dist;
};

struct PrimitiveSample {
  std::vector<Vector> values;
  const Vector& operator[](std::size_t k) const { return values[k]; }
};

class PrimitiveSpace {
 public:
  std::size_t add(std::string name, Distribution dist);
  std::size_t size() const { return vars_.size(); }
  const PrimitiveVariable& operator[](std::size_t k) const { return vars_.at(k); }
  const std::vector<PrimitiveVariable>& variables() const { return vars_; }
  std::size_t index_of(const std::string& name) const;
  std::optional<std::size_t> find(const std::string& name) const;
  PrimitiveSample sample(CounterRng& rng) const;
  bool enumerable() const;  // every variable has a quadrature rule

 private:
  std::vector<PrimitiveVariable> vars_;
};

using MeasurementEval = std::function<Vector(std::span<const Vector>)>;

// y^i = eval(values of reads, in declared order).
struct MeasurementMap {
  std::size_t dm = 0;
  std::vector<SignalRef> reads;
  std::size_t dim = 0;
  MeasurementEval eval;
  nlohmann::json spec;  // builtin kind id for export
};

using CostEval =
    std::function<double(std::span<const Vector> prims, std::span<const Vector> actions)>;
using CostGradient = std::function<Vector(std::span<const Vector> prims,
                                          std::span<const Vector> actions, std::size_t dm)>;

// prims are passed in the order of `reads` (indices into the primitive space).
struct CostFunction {
  std::vector<std::size_t> reads;
  CostEval eval;
  CostGradient gradient;  // optional
  bool nonnegative = false;
  bool smooth = true;
  bool jointly_convex = false;
  nlohmann::json spec;
};

enum class StructureLabel { static_team, classical, partially_nested, nonclassical };
std::string to_string(StructureLabel label);

struct TeamProblem {
  std::string label;
  PrimitiveSpace primitives;
  std::vector<MeasurementMap> measurements;   // one per DM, index order
  std::vector<std::vector<SignalRef>> info;   // I^i
  std::vector<ActionSpace> action_spaces;
  CostFunction cost;

  std::size_t dms() const { return measurements.size(); }
  std::size_t action_dim(std::size_t i) const { return action_spaces.at(i).dim(); }
  std::size_t signal_dim(SignalRef s) const;
  std::size_t info_dim(std::size_t i) const;
  std::string signal_name(SignalRef s) const;
};

struct Path {
  std::vector<Vector> measurements;
  std::vector<Vector> actions;
  std::vector<Vector> info;  // realized I^i concatenations
  double cost = 0.0;
};

Path simulate_path(const TeamProblem& problem, const Policy& policy,
                   const PrimitiveSample& sample);

// Concatenates the realized values of `signals`.
Vector gather(std::span<const SignalRef> signals, const PrimitiveSample& sample,
              std::span<const Vector> measurements, std::span<const Vector> actions);

double evaluate_cost_at(const TeamProblem& problem, const PrimitiveSample& sample,
                        std::span<const Vector> actions);

struct StructureAnalysis {
  // DMs whose actions affect the own measurement y^i.
  std::vector<std::vector<std::size_t>> measurement_precedence;
  // DMs whose actions affect some signal in I^i; this is the ↓i used for labels.
  std::vector<std::vector<std::size_t>> precedence;
  StructureLabel label = StructureLabel::static_team;
};

StructureAnalysis analyze_information_structure(const TeamProblem& problem);
StructureLabel classify_information_structure(const TeamProblem& problem);
bool info_contains(const TeamProblem& problem, std::size_t outer, std::size_t inner);

std::vector<std::string> validate_problem(const TeamProblem& problem);

// Central-difference check of a declared analytic gradient; returns the
// largest relative error over `points` random evaluations.
double gradient_consistency(const TeamProblem& problem, std::size_t points,
                            std::uint64_t seed, double step = 1e-5);

}  // namespace teamred
