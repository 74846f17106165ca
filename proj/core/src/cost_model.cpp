#include "teamred/cost_model.hpp"

#include <cmath>

#include "teamred/errors.hpp"

namespace teamred {

DynamicModel::DynamicModel(TeamProblem problem, std::string form)
    : problem_(std::move(problem)), form_(std::move(form)) {
  const auto a = analyze_information_structure(problem_);
  static_ = true;
  for (const auto& p : a.measurement_precedence)
    if (!p.empty()) static_ = false;
}

PathOutcome DynamicModel::run(const PrimitiveSample& sample, const Policy& policy) const {
  Path p = simulate_path(problem_, policy, sample);
  PathOutcome out;
  out.cost = p.cost;
  out.measurements = std::move(p.measurements);
  out.actions = std::move(p.actions);
  out.info = std::move(p.info);
  return out;
}

double DynamicModel::cost_with_actions(const PrimitiveSample& sample, const PathOutcome&,
                                       std::span<const Vector> actions) const {
  return evaluate_cost_at(problem_, sample, actions);
}

TestDirectionFamily TestDirectionFamily::constants(std::size_t action_dim) {
  return standard(0, action_dim, 0);
}

TestDirectionFamily TestDirectionFamily::standard(std::size_t info_dim, std::size_t action_dim,
                                                  int max_degree) {
  std::vector<TestDirection> dirs;
  const auto m = static_cast<Eigen::Index>(action_dim);
  const auto d = static_cast<Eigen::Index>(info_dim);
  for (Eigen::Index a = 0; a < m; ++a)
    dirs.push_back({"const[" + std::to_string(a) + "]",
                    [m, a](const Vector&) { return Vector::Unit(m, a); }});
  if (max_degree >= 1)
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index a = 0; a < m; ++a)
        dirs.push_back({"lin[" + std::to_string(j) + "][" + std::to_string(a) + "]",
                        [m, a, j](const Vector& x) { return Vector(x(j) * Vector::Unit(m, a)); }});
  if (max_degree >= 2)
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index l = j; l < d; ++l)
        for (Eigen::Index a = 0; a < m; ++a)
          dirs.push_back({"quad[" + std::to_string(j) + "," + std::to_string(l) + "][" +
                              std::to_string(a) + "]",
                          [m, a, j, l](const Vector& x) {
                            return Vector(x(j) * x(l) * Vector::Unit(m, a));
                          }});
  return TestDirectionFamily(std::move(dirs));
}

std::vector<Estimate> directional_derivatives(const CostModel& model, const Policy& policy,
                                              std::size_t dm, const TestDirectionFamily& tests,
                                              const MonteCarloPlan& plan, PathQuantity quantity) {
  const auto& problem = model.problem();
  if (dm >= problem.dms()) throw ConfigurationError("unknown DM index");
  if (tests.size() == 0) throw ConfigurationError("empty test direction family");
  const double h = plan.fd_step;
  const auto& box = problem.action_spaces[dm];
  const PolicyEntry base = policy[dm];

  std::vector<Policy> plus, minus;
  for (std::size_t k = 0; k < tests.size(); ++k) {
    auto dir = tests[k].fn;
    plus.push_back(policy.with_entry(
        dm, PolicyEntry::closure("plus", base.in_dim(), base.out_dim(),
                                 [base, dir, h](const Vector& x) { return Vector(base(x) + h * dir(x)); })));
    minus.push_back(policy.with_entry(
        dm, PolicyEntry::closure("minus", base.in_dim(), base.out_dim(),
                                 [base, dir, h](const Vector& x) { return Vector(base(x) - h * dir(x)); })));
  }
  auto pick = [quantity](const PathOutcome& p) {
    return quantity == PathQuantity::cost ? p.cost : p.weight;
  };
  auto kernel = [&](const PrimitiveSample& s, std::size_t, std::span<double> out) {
    const PathOutcome nominal = model.run(s, policy);
    const Vector& u = nominal.actions[dm];
    if (u.size() > 0 && h < 1e-13 * u.cwiseAbs().maxCoeff())
      throw NumericalError("fd_step underflows relative to the action scale");
    const double q0 = pick(nominal);
    for (std::size_t k = 0; k < tests.size(); ++k) {
      const Vector delta = tests[k].fn(nominal.info[dm]);
      if (delta.cwiseAbs().maxCoeff() == 0.0) {
        out[k] = 0.0;
        continue;
      }
      const bool up_ok = box.contains(u + h * delta);
      const bool down_ok = box.contains(u - h * delta);
      if (up_ok && down_ok)
        out[k] = (pick(model.run(s, plus[k])) - pick(model.run(s, minus[k]))) / (2.0 * h);
      else if (up_ok)
        out[k] = (pick(model.run(s, plus[k])) - q0) / h;
      else if (down_ok)
        out[k] = (q0 - pick(model.run(s, minus[k]))) / h;
      else
        throw DomainError(dm, "no admissible finite-difference stencil inside the action box");
    }
  };
  return integrate(model.sampling_space(), plan, tests.size(), kernel);
}

Estimate expected_cost(const CostModel& model, const Policy& policy, const MonteCarloPlan& plan) {
  return integrate(model.sampling_space(), plan, 1,
                   [&](const PrimitiveSample& s, std::size_t, std::span<double> out) {
                     out[0] = model.run(s, policy).cost;
                   })[0];
}

PairedCosts paired_costs(const CostModel& model, std::span<const Policy> policies,
                         const MonteCarloPlan& plan) {
  const std::size_t n = policies.size();
  auto est = integrate(model.sampling_space(), plan, 2 * n,
                       [&](const PrimitiveSample& s, std::size_t, std::span<double> out) {
                         double base = 0.0;
                         for (std::size_t k = 0; k < n; ++k) {
                           const double c = model.run(s, policies[k]).cost;
                           if (k == 0) base = c;
                           out[k] = c;
                           out[n + k] = c - base;
                         }
                       });
  PairedCosts r;
  r.costs.assign(est.begin(), est.begin() + static_cast<std::ptrdiff_t>(n));
  r.differences.assign(est.begin() + static_cast<std::ptrdiff_t>(n), est.end());
  return r;
}

}  // namespace teamred
