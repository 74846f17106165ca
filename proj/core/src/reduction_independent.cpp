#include "teamred/reduction_independent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "teamred/errors.hpp"

namespace teamred {
namespace {

const double kMaxLogFactor = std::log(1e300);

}  // namespace

ReducedProblem::ReducedProblem(TeamProblem base, ReferenceMeasureFamily refs,
                               std::vector<std::string> retained, ReducedCostEval cost)
    : base_(std::move(base)), refs_(std::move(refs)), retained_(std::move(retained)),
      cost_(std::move(cost)) {
  const std::size_t n = base_.dms();
  if (refs_.factors.size() != n)
    throw ConfigurationError("reference family needs one factor per DM");
  for (std::size_t i = 0; i < n; ++i) {
    if (refs_.factors[i].reference.dim() != base_.measurements[i].dim)
      throw ConfigurationError("reference measure of DM " + std::to_string(i + 1) +
                               " does not match the measurement dimension");
    if (!refs_.factors[i].log_factor)
      throw ConfigurationError("missing density factor for DM " + std::to_string(i + 1));
  }
  std::vector<std::size_t> base_index;
  for (const auto& name : retained_) {
    const auto k = base_.primitives.index_of(name);
    base_index.push_back(k);
    space_.add(name, base_.primitives[k].dist);
  }
  for (std::size_t i = 0; i < n; ++i)
    space_.add("ref:y" + std::to_string(i + 1), refs_.factors[i].reference);

  if (!cost_) {
    std::vector<std::size_t> slots;
    for (auto k : base_.cost.reads) {
      auto it = std::find(base_index.begin(), base_index.end(), k);
      if (it == base_index.end())
        throw ConfigurationError("cost reads primitive '" + base_.primitives[k].name +
                                 "' which the reduction eliminates; supply the cost in measurement coordinates");
      slots.push_back(static_cast<std::size_t>(it - base_index.begin()));
    }
    auto eval = base_.cost.eval;
    cost_ = [eval, slots](const PrimitiveSample& s, std::span<const Vector>, std::span<const Vector> u) {
      std::vector<Vector> prims;
      prims.reserve(slots.size());
      for (auto k : slots) prims.push_back(s.values[k]);
      return eval(prims, u);
    };
  }
}

double ReducedProblem::log_factor(const DensityContext& ctx) const {
  const double lf = refs_.factors.at(ctx.dm).log_factor(ctx);
  if (std::isnan(lf) || lf == -std::numeric_limits<double>::infinity())
    throw InvariantViolation("density factor of DM " + std::to_string(ctx.dm + 1) +
                             " is not positive");
  if (lf > kMaxLogFactor)
    throw WeightOverflow("density factor of DM " + std::to_string(ctx.dm + 1) +
                         " exceeds 1e300; choose a reference measure closer to the measurement law");
  return lf;
}

double ReducedProblem::cost(const PrimitiveSample& sample, std::span<const Vector> measurements,
                            std::span<const Vector> actions) const {
  return cost_(sample, measurements, actions);
}

namespace {

double accumulate_log_weight(const ReducedProblem& reduced, const PrimitiveSample& sample,
                             std::span<const Vector> y, std::span<const Vector> u) {
  double lw = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    lw += reduced.log_factor({sample, y.first(i + 1), u.first(i), i});
  }
  if (lw > kMaxLogWeight)
    throw WeightOverflow("log-weight " + std::to_string(lw) +
                         " exceeds 700; choose a reference measure closer to the measurement law");
  return lw;
}

}  // namespace

ReducedPath simulate_reduced_path(const ReducedProblem& reduced, const Policy& policy,
                                  const PrimitiveSample& sample) {
  const auto& base = reduced.base();
  const std::size_t n = base.dms();
  if (policy.size() != n) throw ConfigurationError("policy size does not match the DM count");
  ReducedPath path;
  path.measurements.resize(n);
  path.actions.resize(n);
  path.info.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    path.measurements[i] = sample.values[reduced.measurement_slot(i)];
    path.info[i] = gather(base.info[i], sample, path.measurements, path.actions);
    path.actions[i] = policy[i](path.info[i]);
    if (!base.action_spaces[i].contains(path.actions[i], 1e-12))
      throw DomainError(i, "action of DM " + std::to_string(i + 1) + " lies outside its action space");
  }
  path.log_weight = accumulate_log_weight(reduced, sample, path.measurements, path.actions);
  path.weight = std::exp(path.log_weight);
  path.base_cost = reduced.cost(sample, path.measurements, path.actions);
  path.tilted_cost = path.base_cost * path.weight;
  return path;
}

double weight(const ReducedProblem& reduced, const PrimitiveSample& sample, const ReducedPath& path) {
  return std::exp(accumulate_log_weight(reduced, sample, path.measurements, path.actions));
}

PathOutcome ReducedModel::run(const PrimitiveSample& sample, const Policy& policy) const {
  ReducedPath p = simulate_reduced_path(reduced_, policy, sample);
  PathOutcome out;
  out.cost = p.tilted_cost;
  out.weight = p.weight;
  out.measurements = std::move(p.measurements);
  out.actions = std::move(p.actions);
  out.info = std::move(p.info);
  return out;
}

double ReducedModel::cost_with_actions(const PrimitiveSample& sample, const PathOutcome& reference,
                                       std::span<const Vector> actions) const {
  const double lw = accumulate_log_weight(reduced_, sample, reference.measurements, actions);
  return reduced_.cost(sample, reference.measurements, actions) * std::exp(lw);
}

Estimate evaluate_cost_reduced(const ReducedProblem& reduced, const Policy& policy,
                               const MonteCarloPlan& plan) {
  return expected_cost(ReducedModel(reduced), policy, plan);
}

std::vector<Estimate> weight_flatness_residual(const ReducedProblem& reduced, const Policy& policy,
                                               std::size_t dm, const TestDirectionFamily& tests,
                                               const MonteCarloPlan& plan) {
  return directional_derivatives(ReducedModel(reduced), policy, dm, tests, plan, PathQuantity::weight);
}

Estimate factor_normalization(const ReducedProblem& reduced, const PrimitiveSample& sample,
                              std::span<const Vector> measurements, std::span<const Vector> actions,
                              std::size_t dm, const MonteCarloPlan& plan) {
  PrimitiveSpace q;
  q.add("y", reduced.refs().factors.at(dm).reference);
  return integrate(q, plan, 1, [&](const PrimitiveSample& s, std::size_t, std::span<double> out) {
    std::vector<Vector> y(measurements.begin(), measurements.begin() + static_cast<std::ptrdiff_t>(dm));
    y.push_back(s.values[0]);
    out[0] = std::exp(reduced.log_factor({sample, y, actions.first(dm), dm}));
  })[0];
}

ReferenceFactor identity_factor(Distribution law) {
  return {std::move(law), [](const DensityContext&) { return 0.0; }, "identity"};
}

ReferenceFactor additive_noise_factor(Distribution noise,
                                      std::function<Vector(const DensityContext&)> mean) {
  auto law = noise;
  return {std::move(noise),
          [law, mean](const DensityContext& ctx) {
            const Vector& y = ctx.measurements[ctx.dm];
            return law.log_density(y - mean(ctx)) - law.log_density(y);
          },
          "additive_noise"};
}

ReferenceFactor finite_channel_factor(std::vector<Vector> atoms,
                                      std::function<std::vector<double>(const DensityContext&)> pmf) {
  const auto k = atoms.size();
  std::vector<double> uniform(k, 1.0 / static_cast<double>(k));
  auto law = Distribution::finite(atoms, uniform);
  return {law,
          [atoms, pmf, k](const DensityContext& ctx) {
            const Vector& y = ctx.measurements[ctx.dm];
            const auto probs = pmf(ctx);
            for (std::size_t a = 0; a < atoms.size(); ++a)
              if (atoms[a] == y) return std::log(probs.at(a) * static_cast<double>(k));
            return -std::numeric_limits<double>::infinity();
          },
          "finite_channel"};
}

}  // namespace teamred
