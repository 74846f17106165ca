#include "teamred/optimality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "teamred/errors.hpp"

namespace teamred {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> means(const std::vector<Estimate>& e) {
  std::vector<double> m;
  m.reserve(e.size());
  for (const auto& x : e) m.push_back(x.mean);
  return m;
}

nlohmann::json vec_json(const Vector& v) {
  auto j = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v(k));
  return j;
}

Vector random_normal(CounterRng& rng, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index k = 0; k < n; ++k) v(k) = rng.normal();
  return v;
}

struct ProbeOutcome {
  bool flagged = false;
  bool completed = false;
  Vector best_theta;
  double best_j = kInf;
};

// J along theta0 + 2^k d, k = 0..max_doubling.
ProbeOutcome probe_ray(const Vector& theta0, double j0, const Vector& d,
                       const CandidateEvaluator& evaluate, const ProbeSettings& probe) {
  ProbeOutcome out;
  std::vector<Candidate> cands;
  for (int k = 0; k <= probe.max_doubling; ++k) cands.emplace_back(Vector(theta0 + std::ldexp(1.0, k) * d));
  std::vector<double> js;
  try {
    js = means(evaluate(cands).costs);
  } catch (const Error&) {
    // Scales too large for the evaluator (weight overflow, domain); probe
    // each scale in turn and stop at the first failure.
    for (const auto& c : cands) {
      try {
        std::vector<Candidate> one{c};
        js.push_back(evaluate(one).costs[0].mean);
      } catch (const Error&) {
        break;
      }
    }
  }
  for (std::size_t k = 0; k < js.size(); ++k)
    if (js[k] < out.best_j) {
      out.best_j = js[k];
      out.best_theta = *cands[k];
    }
  if (static_cast<int>(js.size()) != probe.max_doubling + 1) return out;
  out.completed = true;
  bool flagged = true;
  for (int k = probe.max_doubling - probe.persistence + 1; k <= probe.max_doubling; ++k) {
    const double prev = j0 - js[static_cast<std::size_t>(k - 1)];
    const double cur = j0 - js[static_cast<std::size_t>(k)];
    if (!(prev > 0.0 && cur >= 2.0 * prev * (1.0 - 1e-9))) flagged = false;
  }
  out.flagged = flagged;
  return out;
}

}  // namespace

Estimate evaluate_cost(const TeamProblem& problem, const Policy& policy, const MonteCarloPlan& plan) {
  return expected_cost(DynamicModel(problem), policy, plan);
}

double default_stationarity_tol(const MonteCarloPlan& plan) { return plan.exact ? 1e-9 : 1e-3; }

StationarityReport stationarity_check(const CostModel& model, const Policy& policy,
                                      const MonteCarloPlan& plan, std::optional<double> tol,
                                      const std::vector<TestDirectionFamily>* tests) {
  const auto& problem = model.problem();
  StationarityReport report;
  report.tol = tol.value_or(default_stationarity_tol(plan));
  for (std::size_t i = 0; i < problem.dms(); ++i) {
    const TestDirectionFamily family =
        tests && i < tests->size() && (*tests)[i].size() > 0
            ? (*tests)[i]
            : TestDirectionFamily::standard(problem.info_dim(i), problem.action_dim(i));
    const auto est = directional_derivatives(model, policy, i, family, plan.with_stream(0x57A7 + i));
    DmStationarity dm;
    dm.dm = i;
    for (std::size_t k = 0; k < est.size(); ++k) {
      dm.residuals.push_back({family[k].label, est[k].mean, est[k].std_error});
      if (std::abs(est[k].mean) > report.tol + 3.0 * est[k].std_error) dm.pass = false;
    }
    report.pass = report.pass && dm.pass;
    report.dms.push_back(std::move(dm));
  }
  return report;
}

nlohmann::json StationarityReport::to_json() const {
  nlohmann::json j;
  j["tol"] = tol;
  j["pass"] = pass;
  j["dms"] = nlohmann::json::array();
  for (const auto& d : dms) {
    nlohmann::json dj;
    dj["dm"] = d.dm + 1;
    dj["pass"] = d.pass;
    dj["residuals"] = nlohmann::json::array();
    for (const auto& r : d.residuals)
      dj["residuals"].push_back({{"direction", r.label}, {"residual", r.residual}, {"se", r.std_error}});
    j["dms"].push_back(dj);
  }
  return j;
}

ParametricResult minimize_parametric(std::size_t dim, const Vector& theta0,
                                     const CandidateEvaluator& evaluate, std::uint64_t seed,
                                     const ProbeSettings& probe) {
  const auto p = static_cast<Eigen::Index>(dim);
  ParametricResult res;
  CounterRng rng(mix64(seed, 0xB357));
  const double s = 1.0;

  // Quadratic model from a finite-difference stencil (exact for quadratics).
  std::vector<Candidate> cands{std::nullopt, theta0};
  for (Eigen::Index k = 0; k < p; ++k) cands.emplace_back(Vector(theta0 + s * Vector::Unit(p, k)));
  for (Eigen::Index k = 0; k < p; ++k) cands.emplace_back(Vector(theta0 - s * Vector::Unit(p, k)));
  for (Eigen::Index k = 0; k < p; ++k)
    for (Eigen::Index l = k + 1; l < p; ++l)
      cands.emplace_back(Vector(theta0 + s * (Vector::Unit(p, k) + Vector::Unit(p, l))));
  std::vector<Vector> checks;
  for (int r = 0; r < 3; ++r) {
    checks.push_back(random_normal(rng, p));
    cands.emplace_back(Vector(theta0 + checks.back()));
  }
  const auto js = means(evaluate(cands).costs);
  res.j_incumbent = js[0];
  const double j0 = js[1];
  Vector g(p);
  Matrix H(p, p);
  std::size_t at = 2;
  for (Eigen::Index k = 0; k < p; ++k) {
    const double jp = js[at + static_cast<std::size_t>(k)];
    const double jm = js[at + static_cast<std::size_t>(p + k)];
    g(k) = (jp - jm) / (2.0 * s);
    H(k, k) = (jp - 2.0 * j0 + jm) / (s * s);
  }
  at += static_cast<std::size_t>(2 * p);
  for (Eigen::Index k = 0; k < p; ++k)
    for (Eigen::Index l = k + 1; l < p; ++l) {
      const double jkl = js[at++];
      const double v = (jkl - js[2 + static_cast<std::size_t>(k)] - js[2 + static_cast<std::size_t>(l)] + j0) / (s * s);
      H(k, l) = v;
      H(l, k) = v;
    }
  double spread = std::abs(j0);
  for (double x : js) spread = std::max(spread, std::abs(x));
  bool quadratic = true;
  for (std::size_t r = 0; r < checks.size(); ++r) {
    const Vector& d = checks[r];
    const double model = j0 + g.dot(d) + 0.5 * d.dot(H * d);
    if (std::abs(js[at + r] - model) > 1e-8 * (1.0 + spread)) quadratic = false;
  }
  res.quadratic = quadratic;

  Vector best = theta0;
  bool decided_unbounded = false;
  if (quadratic) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(H);
    const Vector& lam = es.eigenvalues();
    const Matrix& V = es.eigenvectors();
    const double eps = 1e-9 * std::max(1.0, lam.size() ? lam.cwiseAbs().maxCoeff() : 0.0);
    Vector g_null = Vector::Zero(p);
    bool negative = false;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (lam(j) < -eps) negative = true;
      if (std::abs(lam(j)) <= eps) g_null += V.col(j).dot(g) * V.col(j);
    }
    const bool linear_escape = g_null.norm() > 1e-9 * (1.0 + g.norm());
    if (negative || linear_escape) {
      std::vector<Vector> rays;
      for (Eigen::Index k = 0; k < p; ++k) {
        rays.push_back(Vector::Unit(p, k));
        rays.push_back(-Vector::Unit(p, k));
      }
      for (Eigen::Index j = 0; j < p; ++j)
        if (lam(j) < -eps) rays.push_back(V.col(j).dot(g) <= 0.0 ? Vector(V.col(j)) : Vector(-V.col(j)));
      if (linear_escape) rays.push_back(Vector(-g_null / g_null.norm()));
      double best_model = kInf;
      Vector ray;
      for (const auto& d : rays) {
        const double curv = d.dot(H * d);
        const double slope = g.dot(d);
        const bool escapes = curv < -eps || (std::abs(curv) <= eps && slope < -1e-12);
        if (!escapes) continue;
        const double m = slope + 0.5 * curv;
        if (std::isinf(best_model) || m < best_model - 1e-12 * (1.0 + std::abs(best_model))) {
          best_model = m;
          ray = d;
        }
      }
      const auto pr = probe_ray(theta0, j0, ray, evaluate, probe);
      res.method = "normal-equations";
      if (pr.flagged) {
        res.unbounded_below = true;
        res.ray = ray;
        res.theta = theta0 + ray;
        res.improvement = kInf;
        res.j_best = -kInf;
        return res;
      }
      decided_unbounded = true;
      if (pr.best_theta.size() == p) best = pr.best_theta;
    } else {
      Vector step = Vector::Zero(p);
      for (Eigen::Index j = 0; j < p; ++j)
        if (std::abs(lam(j)) > eps) step += (V.col(j).dot(g) / lam(j)) * V.col(j);
      best = theta0 - step;
      res.method = "normal-equations";
    }
  }
  if (!quadratic || (decided_unbounded && best == theta0)) {
    // Pattern search from theta0 and two random restarts.
    res.method = "coordinate-descent";
    std::vector<Vector> starts{theta0, theta0 + random_normal(rng, p), theta0 + random_normal(rng, p)};
    double best_j = kInf;
    for (const auto& start : starts) {
      Vector theta = start;
      std::vector<Candidate> first{theta};
      double jt = evaluate(first).costs[0].mean;
      double step = 1.0;
      for (int iter = 0; iter < 200 && step >= 1e-3; ++iter) {
        std::vector<Candidate> nb;
        for (Eigen::Index k = 0; k < p; ++k) {
          nb.emplace_back(Vector(theta + step * Vector::Unit(p, k)));
          nb.emplace_back(Vector(theta - step * Vector::Unit(p, k)));
        }
        const auto nj = means(evaluate(nb).costs);
        const auto it = std::min_element(nj.begin(), nj.end());
        if (*it < jt - 1e-12 * (1.0 + std::abs(jt))) {
          theta = *nb[static_cast<std::size_t>(it - nj.begin())];
          jt = *it;
        } else {
          step *= 0.5;
        }
      }
      if (jt < best_j) {
        best_j = jt;
        best = theta;
      }
    }
    if (best != theta0 && best_j < j0) {
      const Vector d = (best - theta0).normalized();
      const auto pr = probe_ray(theta0, j0, d, evaluate, probe);
      if (pr.flagged) {
        res.unbounded_below = true;
        res.ray = d;
        res.theta = theta0 + d;
        res.improvement = kInf;
        res.j_best = -kInf;
        return res;
      }
    }
  }

  std::vector<Candidate> final_pair{std::nullopt, best};
  const auto fin = evaluate(final_pair);
  res.j_incumbent = fin.costs[0].mean;
  res.theta = best;
  res.j_best = fin.costs[1].mean;
  res.improvement = -fin.differences[1].mean;
  res.std_error = fin.differences[1].std_error;
  return res;
}

PolicyEntry affine_from_theta(const Vector& theta, std::size_t in_dim, std::size_t out_dim,
                              const ActionSpace& box) {
  const auto m = static_cast<Eigen::Index>(out_dim);
  const auto d = static_cast<Eigen::Index>(in_dim);
  if (theta.size() != m * (1 + d)) throw ConfigurationError("affine class: parameter length mismatch");
  Vector b = theta.head(m);
  Matrix k = Eigen::Map<const Matrix>(theta.data() + m, m, d);
  return PolicyEntry::affine(std::move(k), std::move(b)).clamped(box);
}

Vector theta_from_affine(const AffineMap& map) {
  const auto m = map.bias.size();
  const auto d = map.gain.cols();
  Vector theta(m * (1 + d));
  theta.head(m) = map.bias;
  theta.tail(m * d) = Eigen::Map<const Vector>(map.gain.data(), m * d);
  return theta;
}

namespace {

BestResponseResult affine_best_response(const CostModel& model, const Policy& policy, std::size_t dm,
                                        const MonteCarloPlan& plan, const BestResponseOptions& options) {
  const auto& problem = model.problem();
  const std::size_t d = problem.info_dim(dm);
  const std::size_t m = problem.action_dim(dm);
  const auto& box = problem.action_spaces[dm];
  if (policy[dm].in_dim() != d) throw ConfigurationError("best response: policy features do not match I^i");
  Vector theta0 = Vector::Zero(static_cast<Eigen::Index>(m * (1 + d)));
  if (auto a = affine_probe(policy[dm]); a && !policy[dm].is_clamped()) theta0 = theta_from_affine(*a);
  const auto stream_plan = plan.with_stream(0xB0 + dm);
  CandidateEvaluator evaluate = [&](std::span<const Candidate> cands) {
    std::vector<Policy> ps;
    ps.reserve(cands.size());
    for (const auto& c : cands)
      ps.push_back(c ? policy.with_entry(dm, affine_from_theta(*c, d, m, box)) : policy);
    return paired_costs(model, ps, stream_plan);
  };
  const auto r = minimize_parametric(m * (1 + d), theta0, evaluate, mix64(plan.seed, dm), options.probe);
  BestResponseResult out;
  out.dm = dm;
  out.j_incumbent = r.j_incumbent;
  out.unbounded_below = r.unbounded_below;
  out.ray = r.ray;
  out.method = r.method;
  if (r.unbounded_below || r.improvement > 0.0) {
    out.improved = policy.with_entry(dm, affine_from_theta(r.theta, d, m, box));
    out.improvement = r.improvement;
    out.j_best = r.j_best;
  } else {
    out.improved = policy;
    out.improvement = 0.0;
    out.j_best = r.j_incumbent;
    out.method += " (incumbent kept)";
  }
  out.std_error = r.std_error;
  return out;
}

BestResponseResult tabular_best_response(const CostModel& model, const Policy& policy, std::size_t dm,
                                         const MonteCarloPlan& plan, const BestResponseOptions& options) {
  const auto& problem = model.problem();
  const auto& grid = options.action_grid;
  if (grid.empty()) throw ConfigurationError("tabular best response needs an action grid");
  const std::size_t d = problem.info_dim(dm);
  const std::size_t m = problem.action_dim(dm);
  for (const auto& g : grid)
    if (static_cast<std::size_t>(g.size()) != m) throw ConfigurationError("action grid dimension mismatch");
  std::vector<Policy> fixed;
  for (const auto& g : grid) fixed.push_back(policy.with_entry(dm, PolicyEntry::constant(d, g)));

  std::map<std::vector<double>, std::vector<double>> sums;
  auto visit = [&](const PrimitiveSample& s, double w) {
    const auto nominal = model.run(s, policy);
    const Vector& x = nominal.info[dm];
    std::vector<double> key(x.data(), x.data() + x.size());
    auto& row = sums[key];
    row.resize(grid.size(), 0.0);
    for (std::size_t k = 0; k < grid.size(); ++k) row[k] += w * model.run(s, fixed[k]).cost;
  };
  const auto stream_plan = plan.with_stream(0xB0 + dm);
  if (plan.exact) {
    for (const auto& [s, w] : enumerate_space(model.sampling_space(), plan.quadrature_order)) visit(s, w);
  } else {
    const std::uint64_t key = stream_plan.common_random_numbers ? stream_plan.seed
                                                                : mix64(stream_plan.seed, stream_plan.stream);
    for (std::size_t b = 0; b * kBlockSize < plan.samples; ++b) {
      CounterRng rng(mix64(key, b));
      const std::size_t end = std::min(plan.samples, (b + 1) * kBlockSize);
      for (std::size_t i = b * kBlockSize; i < end; ++i) visit(model.sampling_space().sample(rng), 1.0);
    }
  }
  std::map<std::vector<double>, Vector> table;
  for (const auto& [key, row] : sums) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k] < row[best] - 1e-12 * (1.0 + std::abs(row[best]))) best = k;
    table[key] = grid[best];
  }
  if (const auto* old = policy[dm].as_tabular())
    for (const auto& [key, val] : old->table) table.emplace(key, val);
  Policy improved = policy.with_entry(dm, PolicyEntry::tabular(d, m, std::move(table)));
  std::vector<Policy> pair{policy, improved};
  const auto pc = paired_costs(model, pair, stream_plan);
  BestResponseResult out;
  out.dm = dm;
  out.method = "tabular-grid";
  out.j_incumbent = pc.costs[0].mean;
  out.std_error = pc.differences[1].std_error;
  const double gain = -pc.differences[1].mean;
  if (gain > 0.0) {
    out.improved = std::move(improved);
    out.improvement = gain;
    out.j_best = pc.costs[1].mean;
  } else {
    out.improved = policy;
    out.improvement = 0.0;
    out.j_best = out.j_incumbent;
  }
  return out;
}

}  // namespace

BestResponseResult best_response(const CostModel& model, const Policy& policy, std::size_t dm,
                                 const MonteCarloPlan& plan, const BestResponseOptions& options) {
  if (dm >= model.problem().dms()) throw ConfigurationError("best response: unknown DM");
  if (options.cls == BestResponseClass::tabular) return tabular_best_response(model, policy, dm, plan, options);
  return affine_best_response(model, policy, dm, plan, options);
}

nlohmann::json BestResponseResult::to_json() const {
  nlohmann::json j;
  j["dm"] = dm + 1;
  j["method"] = method;
  j["j_incumbent"] = j_incumbent;
  j["unbounded_below"] = unbounded_below;
  if (unbounded_below) {
    j["improvement"] = "inf";
    j["ray"] = vec_json(ray);
  } else {
    j["improvement"] = improvement;
    j["j_best"] = j_best;
  }
  j["se"] = std_error;
  return j;
}

double pbp_tolerance(double j) { return 1e-3 * (1.0 + std::abs(j)); }

PbpReport pbp_check(const CostModel& model, const Policy& policy, const MonteCarloPlan& plan,
                    const std::vector<BestResponseOptions>& options) {
  PbpReport report;
  report.j = expected_cost(model, policy, plan).mean;
  report.tol = pbp_tolerance(report.j);
  const std::size_t n = model.problem().dms();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& opt = options.empty() ? BestResponseOptions{} : options.size() == 1 ? options[0] : options.at(i);
    auto r = best_response(model, policy, i, plan, opt);
    if (r.unbounded_below || r.improvement > report.tol + 3.0 * r.std_error) report.pass = false;
    report.responses.push_back(std::move(r));
  }
  return report;
}

nlohmann::json PbpReport::to_json() const {
  nlohmann::json j;
  j["j"] = this->j;
  j["tol"] = tol;
  j["pass"] = pass;
  j["responses"] = nlohmann::json::array();
  for (const auto& r : responses) j["responses"].push_back(r.to_json());
  return j;
}

std::vector<double> alpha_grid(std::size_t steps) {
  std::vector<double> a;
  for (std::size_t k = 0; k <= steps; ++k) a.push_back(static_cast<double>(k) / static_cast<double>(steps));
  return a;
}

ConvexityReport convexity_in_policies_check(const CostModel& model, const Policy& gamma,
                                            const Policy& gamma_prime, std::span<const double> alphas,
                                            const MonteCarloPlan& plan) {
  const auto& problem = model.problem();
  const std::size_t n = problem.dms();
  if (gamma.size() != n || gamma_prime.size() != n)
    throw ConfigurationError("convexity check: policy sizes differ");
  ConvexityReport report;
  const std::string form = model.form();
  report.own_path_mixing = model.static_measurements() || form.find("CS") != std::string::npos;

  std::vector<Policy> mixed;
  if (!report.own_path_mixing) {
    for (double a : alphas) {
      std::vector<PolicyEntry> entries;
      for (std::size_t i = 0; i < n; ++i) {
        const PolicyEntry g = gamma[i], gp = gamma_prime[i];
        entries.push_back(PolicyEntry::closure("mixture", g.in_dim(), g.out_dim(),
                                               [g, gp, a](const Vector& x) { return Vector(a * g(x) + (1.0 - a) * gp(x)); }));
      }
      mixed.emplace_back(std::move(entries));
    }
  }
  const std::size_t k = alphas.size();
  auto est = integrate(model.sampling_space(), plan.with_stream(0xC0F), k + 1,
                       [&](const PrimitiveSample& s, std::size_t, std::span<double> out) {
                         const auto p1 = model.run(s, gamma);
                         const auto p2 = model.run(s, gamma_prime);
                         for (std::size_t j = 0; j < k; ++j) {
                           const double a = alphas[j];
                           double cm;
                           if (report.own_path_mixing) {
                             std::vector<Vector> u(n);
                             for (std::size_t i = 0; i < n; ++i) u[i] = a * p1.actions[i] + (1.0 - a) * p2.actions[i];
                             cm = model.cost_with_actions(s, p1, u);
                           } else {
                             cm = model.run(s, mixed[j]).cost;
                           }
                           out[j] = cm - a * p1.cost - (1.0 - a) * p2.cost;
                         }
                         out[k] = std::abs(p1.cost) + std::abs(p2.cost);
                       });
  const double scale = est[k].mean;
  report.max_violation = -kInf;
  for (std::size_t j = 0; j < k; ++j) {
    report.points.push_back({alphas[j], est[j].mean, est[j].std_error});
    if (est[j].mean > report.max_violation) {
      report.max_violation = est[j].mean;
      report.max_violation_alpha = alphas[j];
      report.max_violation_se = est[j].std_error;
    }
    if (est[j].mean > 3.0 * est[j].std_error + 1e-10 * (1.0 + scale)) report.witness = true;
  }
  return report;
}

nlohmann::json ConvexityReport::to_json() const {
  nlohmann::json j;
  j["max_violation"] = max_violation;
  j["alpha"] = max_violation_alpha;
  j["se"] = max_violation_se;
  j["own_path_mixing"] = own_path_mixing;
  j["witness"] = witness;
  j["points"] = nlohmann::json::array();
  for (const auto& p : points) j["points"].push_back({{"alpha", p.alpha}, {"violation", p.violation}, {"se", p.std_error}});
  return j;
}

QuadraticProfile frozen_cost_profile(const CostModel& model, const Policy& policy, std::size_t dm,
                                     const TestDirection& direction, std::span<const double> ts,
                                     const MonteCarloPlan& plan) {
  if (ts.size() < 3) throw ConfigurationError("profile needs at least three abscissae");
  const PolicyEntry base = policy[dm];
  std::vector<Policy> ps;
  for (double t : ts) {
    auto dir = direction.fn;
    ps.push_back(policy.with_entry(dm, PolicyEntry::closure("profile", base.in_dim(), base.out_dim(),
                                                            [base, dir, t](const Vector& x) { return Vector(base(x) + t * dir(x)); })));
  }
  const auto pc = paired_costs(model, ps, plan.with_stream(0xF1));
  QuadraticProfile prof;
  Matrix A(static_cast<Eigen::Index>(ts.size()), 3);
  Vector y(static_cast<Eigen::Index>(ts.size()));
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    A(r, 0) = 1.0;
    A(r, 1) = ts[k];
    A(r, 2) = ts[k] * ts[k];
    y(r) = pc.costs[k].mean;
    prof.ts.push_back(ts[k]);
    prof.js.push_back(pc.costs[k].mean);
  }
  const Vector c = A.colPivHouseholderQr().solve(y);
  prof.c0 = c(0);
  prof.c1 = c(1);
  prof.c2 = c(2);
  prof.max_fit_error = (A * c - y).cwiseAbs().maxCoeff();
  return prof;
}

ChordResult tilted_chord_test(const CostModel& model, const Policy& policy, std::size_t points,
                              std::uint64_t seed) {
  const auto& problem = model.problem();
  const std::size_t n = problem.dms();
  CounterRng rng(mix64(seed, 0xC40D));
  ChordResult r;
  r.points = points;
  for (std::size_t p = 0; p < points; ++p) {
    const PrimitiveSample s = model.sampling_space().sample(rng);
    std::vector<Vector> u(n), v(n), mix(n);
    const double a = rng.uniform();
    try {
      const auto ref = model.run(s, policy);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& box = problem.action_spaces[i];
        u[i] = box.project(ref.actions[i] + random_normal(rng, ref.actions[i].size()));
        v[i] = box.project(ref.actions[i] + random_normal(rng, ref.actions[i].size()));
        mix[i] = a * u[i] + (1.0 - a) * v[i];
      }
      const double cu = model.cost_with_actions(s, ref, u);
      const double cv = model.cost_with_actions(s, ref, v);
      const double cm = model.cost_with_actions(s, ref, mix);
      const double excess = cm - (a * cu + (1.0 - a) * cv);
      if (excess > 1e-9 * (1.0 + std::abs(cu) + std::abs(cv))) {
        ++r.violations;
        r.worst = std::max(r.worst, excess);
      }
    } catch (const Error&) {
      ++r.violations;
    }
  }
  return r;
}

Certificate certify_global_optimality(const ReducedProblem& reduced, const Policy& policy,
                                      const MonteCarloPlan& plan, std::size_t chord_points) {
  const ReducedModel model(reduced);
  const auto& problem = reduced.base();
  const std::size_t n = problem.dms();
  Certificate cert;
  const double tol = default_stationarity_tol(plan);

  const auto st = stationarity_check(model, policy, plan);
  cert.stationary = st.pass;
  cert.evidence["stationarity"] = st.to_json();

  cert.flat = true;
  auto flat_json = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const auto fam = TestDirectionFamily::standard(problem.info_dim(i), problem.action_dim(i));
    const auto res = weight_flatness_residual(reduced, policy, i, fam, plan);
    double worst = 0.0;
    for (const auto& e : res) {
      worst = std::max(worst, std::abs(e.mean));
      if (std::abs(e.mean) > tol + 3.0 * e.std_error) cert.flat = false;
    }
    flat_json.push_back({{"dm", i + 1}, {"max_abs_residual", worst}});
  }
  cert.evidence["flatness"] = flat_json;

  const auto chord = tilted_chord_test(model, policy, chord_points, plan.seed);
  cert.chord_points = chord.points;
  cert.chord_violations = chord.violations;
  cert.worst_chord_violation = chord.worst;
  cert.chord_convex = chord.violations == 0;
  cert.evidence["chord"] = {{"points", chord.points}, {"violations", chord.violations}, {"worst", chord.worst}};

  // Pairings E[∂_{u^i} c̃ · (γ^i - γ*^i)] for random affine comparison policies.
  cert.pairings_finite = true;
  CounterRng rng(mix64(plan.seed, 0x5A1));
  auto pair_json = nlohmann::json::array();
  const double h = plan.fd_step;
  for (int r = 0; r < 5; ++r) {
    std::vector<PolicyEntry> entries;
    for (std::size_t i = 0; i < n; ++i) {
      const auto d = static_cast<Eigen::Index>(problem.info_dim(i));
      const auto m = static_cast<Eigen::Index>(problem.action_dim(i));
      Matrix k(m, d);
      for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < d; ++b) k(a, b) = rng.normal();
      entries.push_back(PolicyEntry::affine(k, random_normal(rng, m)).clamped(problem.action_spaces[i]));
    }
    const Policy other(std::move(entries));
    try {
      auto est = integrate(model.sampling_space(), plan.with_stream(0x5A1 + static_cast<std::uint64_t>(r)), n,
                           [&](const PrimitiveSample& s, std::size_t, std::span<double> out) {
                             const auto ref = model.run(s, policy);
                             for (std::size_t i = 0; i < n; ++i) {
                               const Vector delta = other[i](ref.info[i]) - ref.actions[i];
                               const auto& box = problem.action_spaces[i];
                               auto up = ref.actions, dn = ref.actions;
                               up[i] += h * delta;
                               dn[i] -= h * delta;
                               const bool up_ok = box.contains(up[i]), dn_ok = box.contains(dn[i]);
                               const double c0 = model.cost_with_actions(s, ref, ref.actions);
                               const double cu = up_ok ? model.cost_with_actions(s, ref, up) : c0;
                               const double cd = dn_ok ? model.cost_with_actions(s, ref, dn) : c0;
                               const double span_h = (up_ok ? h : 0.0) + (dn_ok ? h : 0.0);
                               out[i] = span_h > 0.0 ? (cu - cd) / span_h : 0.0;
                             }
                           });
      auto pj = nlohmann::json::array();
      for (const auto& e : est) {
        if (!std::isfinite(e.mean)) cert.pairings_finite = false;
        pj.push_back(e.mean);
      }
      pair_json.push_back(pj);
    } catch (const Error& e) {
      cert.pairings_finite = false;
      pair_json.push_back(std::string("failed: ") + e.what());
    }
  }
  cert.evidence["pairings"] = pair_json;
  cert.certified = cert.stationary && cert.flat && cert.chord_convex && cert.pairings_finite;
  cert.evidence["verdict"] = cert.verdict();
  return cert;
}

}  // namespace teamred
