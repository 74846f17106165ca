#include "teamred/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "teamred/errors.hpp"
#include "teamred/random.hpp"

namespace teamred {
namespace {

using Runner = std::function<CheckResult(const MonteCarloPlan&)>;

struct Entry {
  ExpectedVerdict verdict;
  Runner run;
};

Vector v1(double x) { return Vector::Constant(1, x); }

Matrix row(std::initializer_list<double> xs) {
  Matrix m(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) m(0, k++) = x;
  return m;
}

MonteCarloPlan exact_from(const MonteCarloPlan& plan, std::size_t order = 10) {
  auto p = MonteCarloPlan::exact_plan(order);
  p.seed = plan.seed;
  p.fd_step = plan.fd_step;
  return p;
}

CheckResult make_result(const ExpectedVerdict& v, std::string verdict) {
  CheckResult r;
  r.spec = v;
  r.verdict = std::move(verdict);
  r.matched = r.verdict == v.expected;
  return r;
}

std::string dm_name(std::size_t dm) { return std::to_string(dm + 1); }

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

ScenarioBundle assemble(std::string name, nlohmann::json params, std::vector<Entry> entries) {
  ScenarioBundle b;
  b.name = std::move(name);
  b.params = std::move(params);
  auto table = std::make_shared<std::vector<Entry>>(std::move(entries));
  for (const auto& e : *table) b.expected.push_back(e.verdict);
  b.evaluate = [table](const ExpectedVerdict& v, const MonteCarloPlan& plan) {
    for (const auto& e : *table)
      if (e.verdict.id == v.id && e.verdict.form == v.form && e.verdict.policy == v.policy) {
        auto r = e.run(plan);
        r.spec = e.verdict;
        r.matched = r.verdict == e.verdict.expected;
        return r;
      }
    throw ConfigurationError("no check '" + v.id + "' in form " + v.form + " for policy " + v.policy);
  };
  return b;
}

double param(const nlohmann::json& params, const char* key, double fallback) {
  if (!params.is_object() || !params.contains(key)) return fallback;
  if (!params.at(key).is_number()) throw ConfigurationError(std::string("parameter '") + key + "' must be a number");
  return params.at(key).get<double>();
}

void reject_unknown(const nlohmann::json& params, std::initializer_list<const char*> known) {
  if (params.is_null()) return;
  if (!params.is_object()) throw ConfigurationError("scenario parameters must be a JSON object");
  for (const auto& [k, _] : params.items())
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
      throw ConfigurationError("unknown scenario parameter '" + k + "'");
}

// ---------------------------------------------------------------- runners

using ModelPtr = std::shared_ptr<const CostModel>;

Runner pbp_runner(ModelPtr model, Policy policy, std::vector<BestResponseOptions> options = {{}}) {
  return [=](const MonteCarloPlan& plan) {
    const auto rep = pbp_check(*model, policy, exact_from(plan), options);
    CheckResult r = make_result({}, rep.pass ? "pass" : "fail");
    r.estimate = rep.j;
    r.std_error = 0.0;
    r.details = rep.to_json();
    for (const auto& br : rep.responses)
      r.rows.push_back({"pbp", dm_name(br.dm), "best_response", br.unbounded_below ? INFINITY : br.improvement,
                        br.std_error});
    return r;
  };
}

Runner best_response_runner(ModelPtr model, Policy policy, std::size_t dm) {
  return [=](const MonteCarloPlan& plan) {
    const auto br = best_response(*model, policy, dm, exact_from(plan));
    const double tol = pbp_tolerance(br.j_incumbent);
    std::string verdict = br.unbounded_below ? "unbounded" : (br.improvement > tol + 3 * br.std_error ? "fail" : "pass");
    CheckResult r = make_result({}, verdict);
    r.estimate = br.j_incumbent;
    r.details = br.to_json();
    r.rows.push_back({"best_response", dm_name(dm), "best_response", br.unbounded_below ? INFINITY : br.improvement,
                      br.std_error});
    return r;
  };
}

Runner stationarity_runner(ModelPtr model, Policy policy) {
  return [=](const MonteCarloPlan& plan) {
    const auto rep = stationarity_check(*model, policy, exact_from(plan));
    CheckResult r = make_result({}, rep.pass ? "pass" : "fail");
    r.details = rep.to_json();
    for (const auto& d : rep.dms)
      for (const auto& res : d.residuals) r.rows.push_back({"stationarity", dm_name(d.dm), res.label, res.residual, res.std_error});
    return r;
  };
}

// Constant-direction residual of one DM against an analytic value.
Runner residual_runner(ModelPtr model, Policy policy, std::size_t dm, double target, double tol) {
  return [=](const MonteCarloPlan& plan) {
    const auto tests = TestDirectionFamily::constants(model->problem().action_dim(dm));
    const auto est = directional_derivatives(*model, policy, dm, tests, exact_from(plan));
    const double value = est.at(0).mean;
    CheckResult r = make_result({}, std::abs(value - target) <= tol ? "pass" : "fail");
    r.estimate = value;
    r.std_error = est[0].std_error;
    r.details = {{"target", target}, {"tolerance", tol}, {"direction", tests[0].label}};
    r.rows.push_back({"stationarity_residual", dm_name(dm), tests[0].label, value, est[0].std_error});
    return r;
  };
}

TestDirection constant_direction() {
  return {"const[0]", [](const Vector&) { return v1(1.0); }};
}

Runner curvature_runner(ModelPtr model, Policy policy, std::size_t dm, double target, double tol) {
  return [=](const MonteCarloPlan& plan) {
    const std::vector<double> ts{-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
    const auto prof = frozen_cost_profile(*model, policy, dm, constant_direction(), ts, exact_from(plan));
    CheckResult r = make_result({}, std::abs(prof.c2 - target) <= tol ? "pass" : "fail");
    r.estimate = prof.c2;
    r.std_error = 0.0;
    r.details = {{"target", target}, {"tolerance", tol}, {"c0", prof.c0}, {"c1", prof.c1}, {"c2", prof.c2},
                 {"max_fit_error", prof.max_fit_error}};
    r.rows.push_back({"frozen_curvature", dm_name(dm), "const[0]", prof.c2, 0.0});
    return r;
  };
}

// J(u^dm = t) along constant deviations against closed-form values.
Runner profile_runner(ModelPtr model, Policy policy, std::size_t dm, std::vector<double> ts,
                      std::function<double(double)> truth, double tol) {
  return [=](const MonteCarloPlan& plan) {
    const std::size_t in = model->problem().info_dim(dm);
    double worst = 0.0;
    auto values = nlohmann::json::array();
    for (double t : ts) {
      const auto p = policy.with_entry(dm, PolicyEntry::constant(in, v1(t)));
      const double j = expected_cost(*model, p, exact_from(plan)).mean;
      worst = std::max(worst, std::abs(j - truth(t)));
      values.push_back({{"t", t}, {"J", j}, {"analytic", truth(t)}});
    }
    CheckResult r = make_result({}, worst <= tol ? "pass" : "fail");
    r.estimate = worst;
    r.details = {{"values", values}, {"tolerance", tol}};
    return r;
  };
}

// Dynamic expected cost against the policy-independent reduction.
Runner invariance_runner(ModelPtr dynamic, std::shared_ptr<const ReducedProblem> reduced, std::vector<Policy> policies,
                         bool exact) {
  return [=](const MonteCarloPlan& plan) {
    const MonteCarloPlan p = exact ? exact_from(plan) : plan;
    bool ok = true;
    double worst = 0.0;
    auto rows = nlohmann::json::array();
    CheckResult r;
    for (std::size_t k = 0; k < policies.size(); ++k) {
      const auto jd = expected_cost(*dynamic, policies[k], p);
      const auto jr = evaluate_cost_reduced(*reduced, policies[k], p.with_stream(0x1D + k));
      const double diff = std::abs(jd.mean - jr.mean);
      const double se = std::hypot(jd.std_error, jr.std_error);
      const double allowed = exact ? 1e-12 : 3.0 * se;
      ok = ok && diff <= allowed;
      worst = std::max(worst, diff);
      rows.push_back({{"policy", k}, {"dynamic", jd.mean}, {"reduced", jr.mean}, {"se", se}, {"allowed", allowed}});
      r.rows.push_back({"cost_invariance", "all", "policy" + std::to_string(k), jd.mean - jr.mean, se});
    }
    auto out = make_result({}, ok ? "pass" : "fail");
    out.rows = std::move(r.rows);
    out.estimate = worst;
    out.details = {{"policies", rows}, {"method", exact ? "exact" : "monte-carlo"}};
    return out;
  };
}

Runner convexity_runner(ModelPtr model, Policy gamma, Policy gamma_prime, std::optional<double> min_violation) {
  return [=](const MonteCarloPlan& plan) {
    const auto grid = alpha_grid(10);
    const auto rep = convexity_in_policies_check(*model, gamma, gamma_prime, grid, exact_from(plan));
    bool violated = rep.witness && (!min_violation || rep.max_violation > *min_violation);
    CheckResult r = make_result({}, violated ? "fail" : "pass");
    r.estimate = rep.max_violation;
    r.std_error = rep.max_violation_se;
    r.details = rep.to_json();
    for (const auto& pt : rep.points)
      r.rows.push_back({"convexity", "1", "alpha=" + fmt(pt.alpha), pt.violation, pt.std_error});
    return r;
  };
}

Runner condition_c_runner(std::shared_ptr<const TeamProblem> problem, std::shared_ptr<const InvertibleObservation> inv,
                          Policy gamma_d) {
  return [=](const MonteCarloPlan& plan) {
    auto p = plan;
    p.samples = std::min<std::size_t>(plan.samples, 256);
    const auto res = check_condition_C(*problem, *inv, gamma_d, p);
    CheckResult r = make_result({}, res.holds ? "pass" : "fail");
    r.estimate = res.max_second_difference;
    r.details = {{"max_second_difference", res.max_second_difference}, {"scale", res.scale}};
    return r;
  };
}

ExpectedVerdict ev(std::string id, std::string form, std::string policy, std::string expected, std::string cite) {
  return {std::move(id), std::move(form), std::move(policy), std::move(expected), std::move(cite)};
}

std::vector<Policy> random_affine_policies(const TeamProblem& p, std::size_t count, std::uint64_t seed, double scale) {
  std::vector<Policy> out;
  CounterRng rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<PolicyEntry> es;
    for (std::size_t i = 0; i < p.dms(); ++i) {
      const auto m = static_cast<Eigen::Index>(p.action_dim(i));
      const auto d = static_cast<Eigen::Index>(p.info_dim(i));
      Matrix K(m, d);
      Vector b(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        b(a) = scale * (2 * rng.uniform() - 1);
        for (Eigen::Index c = 0; c < d; ++c) K(a, c) = scale * (2 * rng.uniform() - 1);
      }
      auto e = PolicyEntry::affine(K, b);
      if (p.action_spaces[i].bounded() || p.action_spaces[i].lower.minCoeff() > -INFINITY)
        e = e.clamped(p.action_spaces[i]);
      es.push_back(std::move(e));
    }
    out.emplace_back(std::move(es));
  }
  return out;
}

Policy zero_affine(const TeamProblem& p, std::size_t dm_identity_col = SIZE_MAX) {
  std::vector<PolicyEntry> es;
  for (std::size_t i = 0; i < p.dms(); ++i) {
    Matrix K = Matrix::Zero(static_cast<Eigen::Index>(p.action_dim(i)), static_cast<Eigen::Index>(p.info_dim(i)));
    (void)dm_identity_col;
    es.push_back(PolicyEntry::affine(K, Vector::Zero(K.rows())));
  }
  return Policy(std::move(es));
}

// (0, (0, I)): DM 1 plays 0, DM 2 plays its own measurement ŷ₂ (second info slot).
Policy zero_identity(const TeamProblem& p) {
  Policy z = zero_affine(p);
  Matrix K = Matrix::Zero(1, static_cast<Eigen::Index>(p.info_dim(1)));
  K(0, 1) = 1.0;
  return z.with_entry(1, PolicyEntry::affine(K, Vector::Zero(1)));
}

// ------------------------------------------------- two-DM additive examples

struct TwoDm {
  TeamProblem problem;
  InvertibleObservation inv;
};

// y¹ = ω₁, ŷ₂ = s + u¹ where s is `static_prim`; I¹ = {y¹}, I² = {y¹, ŷ₂}.
TwoDm additive_two_dm(const std::string& label, std::vector<PrimitiveVariable> prims, std::size_t y1_prim,
                      std::size_t static_prim, ActionSpace box1) {
  TwoDm out;
  auto& p = out.problem;
  p.label = label;
  for (auto& v : prims) p.primitives.add(v.name, v.dist);
  MeasurementMap m1;
  m1.dm = 0;
  m1.reads = {primitive_ref(y1_prim)};
  m1.dim = 1;
  m1.eval = [](std::span<const Vector> v) { return v[0]; };
  m1.spec = {{"kind", "primitive"}, {"primitive", p.primitives[y1_prim].name}};
  MeasurementMap m2;
  m2.dm = 1;
  m2.reads = {primitive_ref(static_prim), action_ref(0)};
  m2.dim = 1;
  m2.eval = [](std::span<const Vector> v) { return Vector(v[0] + v[1]); };
  m2.spec = {{"kind", "additive"}, {"static", p.primitives[static_prim].name}, {"upstream", {1}}};
  p.measurements = {m1, m2};
  p.info = {{measurement_ref(0)}, {measurement_ref(0), measurement_ref(1)}};
  p.action_spaces = {box1, ActionSpace::unbounded(1)};
  out.inv.dms.push_back(InvertibleObservation::identity(p, 0));
  out.inv.dms.push_back(InvertibleObservation::additive(
      1, {static_prim}, 1, [](std::span<const Vector> v) { return v[0]; }, {0}, {Matrix::Identity(1, 1)}));
  return out;
}

struct FormSet {
  std::shared_ptr<const TeamProblem> d, s, dcs, cs;
  ModelPtr md, ms, mdcs, mcs;
};

FormSet forms_of(const TeamProblem& d, const InvertibleObservation& inv) {
  FormSet f;
  f.d = std::make_shared<TeamProblem>(d);
  f.s = std::make_shared<TeamProblem>(make_form(d, inv, {Form::S, {}}));
  f.dcs = std::make_shared<TeamProblem>(make_form(d, inv, {Form::DCS, {}}));
  f.cs = std::make_shared<TeamProblem>(make_form(d, inv, {Form::CS, {}}));
  f.md = std::make_shared<DynamicModel>(*f.d, "D");
  f.ms = std::make_shared<DynamicModel>(*f.s, "S");
  f.mdcs = std::make_shared<DynamicModel>(*f.dcs, "D-CS");
  f.mcs = std::make_shared<DynamicModel>(*f.cs, "CS");
  return f;
}

ReferenceMeasureFamily additive_refs() {
  ReferenceMeasureFamily refs;
  refs.factors.push_back(identity_factor(Distribution::standard_normal(1)));
  refs.factors.push_back(
      additive_noise_factor(Distribution::standard_normal(1), [](const DensityContext& c) { return c.actions[0]; }));
  return refs;
}

const char* kEx1 = "Example 1: S-form (0,(0,I)) is pbp optimal; D-form counterpart is unbounded below yet stationary";
const char* kEx2 = "Example 2: D-form (0,(0,I)) is pbp optimal; S-form counterpart has concave frozen cost (alpha-1)(u1)^2";
const char* kEx3 = "Example 3: D-form (0,(0,I)) is stationary; S-form derivative in u1 is always 1";
const char* kEx4 = "Example 4: D form with fourth-root DM 2 is not convex in policies; CS form is";
const char* kCsEmbed = "control-sharing embedding of pbp policies";

ScenarioBundle build_example1(const nlohmann::json& params) {
  reject_unknown(params, {"alpha"});
  const double alpha = param(params, "alpha", 0.5);
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("example1 requires alpha in (0, 1)");
  auto two = additive_two_dm("example1", {{"omega1", Distribution::standard_normal(1)}, {"omega2", Distribution::standard_normal(1)}},
                             0, 1, ActionSpace::unbounded(1));
  auto& p = two.problem;
  p.cost.reads = {1};
  p.cost.eval = [alpha](std::span<const Vector> w, std::span<const Vector> u) {
    const double e = u[0](0) - u[1](0) + w[0](0);
    return e * e - alpha * u[0](0) * u[0](0);
  };
  p.cost.gradient = [alpha](std::span<const Vector> w, std::span<const Vector> u, std::size_t dm) {
    const double e = u[0](0) - u[1](0) + w[0](0);
    return dm == 0 ? v1(2 * e - 2 * alpha * u[0](0)) : v1(-2 * e);
  };
  p.cost.spec = {{"kind", "example1"}, {"alpha", alpha}};
  const auto f = forms_of(p, two.inv);

  const Policy gamma_s = zero_identity(*f.s);
  const Policy gamma_d = simplify_affine(transport_policy_S_to_D(*f.d, two.inv, gamma_s));
  // D-CS: u² = ŷ₂ − u¹, read from the shared action slot.
  const Policy gamma_cs = zero_affine(*f.dcs).with_entry(1, PolicyEntry::affine(row({0.0, 1.0, -1.0}), v1(0.0)));
  // The same actions written without the shared slot: u² = ŷ₂ − γ¹(y¹).
  const auto g1 = gamma_cs[0];
  const auto g2 = gamma_cs[1];
  const Policy gamma_cs_restricted = simplify_affine(Policy({g1, PolicyEntry::closure("restricted", 2, 1, [g1, g2](const Vector& x) {
                                                              Vector z(3);
                                                              z << x(0), x(1), g1(x.head(1))(0);
                                                              return g2(z);
                                                            })}));

  ReducedProblem reduced(p, additive_refs(), {}, [alpha](const PrimitiveSample&, std::span<const Vector> y, std::span<const Vector> u) {
    const double e = y[1](0) - u[1](0);
    return e * e - alpha * u[0](0) * u[0](0);
  });
  auto red = std::make_shared<const ReducedProblem>(reduced);
  auto policies = random_affine_policies(p, 2, 0xE1, 0.3);
  policies.insert(policies.begin(), gamma_d);

  std::vector<Entry> es;
  es.push_back({ev("pbp", "S", "gamma_star", "pass", kEx1), pbp_runner(f.ms, gamma_s)});
  es.push_back({ev("best_response_dm1", "D", "gamma_star_transported", "unbounded", kEx1),
                best_response_runner(f.md, gamma_d, 0)});
  es.push_back({ev("pbp", "D", "gamma_star_transported", "fail", kEx1), pbp_runner(f.md, gamma_d)});
  es.push_back({ev("stationarity", "D", "gamma_star_transported", "pass", kEx1), stationarity_runner(f.md, gamma_d)});
  es.push_back({ev("unbounded_profile_dm1", "D", "gamma_star_transported", "pass", kEx1),
                profile_runner(f.md, gamma_d, 0, {1.0, 2.0, 4.0}, [alpha](double t) { return -alpha * t * t; }, 1e-9)});
  es.push_back({ev("condition_c", "D", "gamma_star_transported", "pass", "Condition (C): affine composition"),
                condition_c_runner(f.d, std::make_shared<InvertibleObservation>(two.inv), gamma_d)});
  es.push_back({ev("pbp", "D-CS", "gamma_cs", "pass", kCsEmbed), pbp_runner(f.mdcs, gamma_cs)});
  es.push_back({ev("pbp", "D", "gamma_cs_restricted", "fail", kCsEmbed), pbp_runner(f.md, gamma_cs_restricted)});
  es.push_back({ev("cost_invariance", "PI", "gamma_star_and_random", "pass", "cost invariance under the policy-independent reduction"),
                invariance_runner(f.md, red, policies, false)});

  auto b = assemble("example1", {{"alpha", alpha}, {"omega1", "N(0,1)"}, {"omega2", "N(0,1)"}}, std::move(es));
  b.problem = p;
  b.inverse = two.inv;
  b.reduced = reduced;
  b.policies = {{"gamma_star", gamma_s}, {"gamma_star_transported", gamma_d}, {"gamma_cs", gamma_cs},
                {"gamma_cs_restricted", gamma_cs_restricted}};
  return b;
}

ScenarioBundle build_example2(const nlohmann::json& params) {
  reject_unknown(params, {"alpha", "beta", "variant"});
  const double alpha = param(params, "alpha", 0.5);
  const double beta = param(params, "beta", 2.0);
  std::string variant = "independent";
  if (params.is_object() && params.contains("variant")) variant = params.at("variant").get<std::string>();
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("example2 requires alpha in (0, 1)");
  if (!(beta > 1.0)) throw ParameterError("example2 requires beta > 1");
  if (variant != "independent" && variant != "y1") throw ParameterError("example2 variant must be 'independent' or 'y1'");
  const bool shared = variant == "y1";
  std::vector<PrimitiveVariable> prims{{"omega1", Distribution::standard_normal(1)}};
  if (!shared) prims.push_back({"omega2", Distribution::standard_normal(1)});
  const std::size_t w2 = shared ? 0 : 1;
  auto two = additive_two_dm("example2", prims, 0, w2, ActionSpace::unbounded(1));
  auto& p = two.problem;
  p.cost.reads = {w2};
  p.cost.eval = [alpha, beta](std::span<const Vector> w, std::span<const Vector> u) {
    const double a = u[0](0), b = u[1](0), o = w[0](0);
    return alpha * a * a + beta * (b - o) * (b - o) - (a - b + o) * (a - b + o);
  };
  p.cost.gradient = [alpha, beta](std::span<const Vector> w, std::span<const Vector> u, std::size_t dm) {
    const double a = u[0](0), b = u[1](0), o = w[0](0);
    const double e = a - b + o;
    return dm == 0 ? v1(2 * alpha * a - 2 * e) : v1(2 * beta * (b - o) + 2 * e);
  };
  p.cost.spec = {{"kind", "example2"}, {"alpha", alpha}, {"beta", beta}, {"variant", variant}};
  const auto f = forms_of(p, two.inv);

  const Policy gamma_d = zero_identity(*f.d);
  const Policy gamma_s = simplify_affine(transport_policy_D_to_S(*f.d, two.inv, gamma_d));
  // Lifted into D-CS: same map, zero weight on the shared u¹.
  const Policy gamma_lift = zero_affine(*f.dcs).with_entry(1, PolicyEntry::affine(row({0.0, 1.0, 0.0}), v1(0.0)));

  std::vector<Entry> es;
  es.push_back({ev("pbp", "D", "gamma_star", "pass", kEx2), pbp_runner(f.md, gamma_d)});
  es.push_back({ev("pbp", "S", "gamma_star_transported", "fail", kEx2), pbp_runner(f.ms, gamma_s)});
  es.push_back({ev("best_response_dm1", "S", "gamma_star_transported", "unbounded", kEx2),
                best_response_runner(f.ms, gamma_s, 0)});
  es.push_back({ev("frozen_curvature_dm1", "D", "gamma_star", "pass", "Example 2: (alpha+beta)(u1)^2"),
                curvature_runner(f.md, gamma_d, 0, alpha + beta, 1e-6)});
  es.push_back({ev("frozen_curvature_dm2", "D", "gamma_star", "pass", "Example 2: (beta-1)(u2-omega2)^2"),
                curvature_runner(f.md, gamma_d, 1, beta - 1.0, 1e-6)});
  es.push_back({ev("frozen_curvature_dm1", "S", "gamma_star_transported", "pass", "Example 2: (alpha-1)(u1)^2"),
                curvature_runner(f.ms, gamma_s, 0, alpha - 1.0, 1e-6)});
  es.push_back({ev("pbp", "D-CS", "gamma_star_lifted", "pass", kCsEmbed), pbp_runner(f.mdcs, gamma_lift)});

  std::optional<ReducedProblem> reduced;
  if (!shared) {
    reduced.emplace(p, additive_refs(), std::vector<std::string>{},
                    [alpha, beta](const PrimitiveSample&, std::span<const Vector> y, std::span<const Vector> u) {
                      const double a = u[0](0), b = u[1](0), o = y[1](0) - a;
                      return alpha * a * a + beta * (b - o) * (b - o) - (a - b + o) * (a - b + o);
                    });
    auto policies = random_affine_policies(p, 2, 0xE2, 0.3);
    policies.insert(policies.begin(), gamma_d);
    es.push_back({ev("cost_invariance", "PI", "gamma_star_and_random", "pass", "cost invariance under the policy-independent reduction"),
                  invariance_runner(f.md, std::make_shared<const ReducedProblem>(*reduced), policies, false)});
  }

  auto b = assemble("example2", {{"alpha", alpha}, {"beta", beta}, {"variant", variant}, {"omega", "N(0,1)"}}, std::move(es));
  b.problem = p;
  b.inverse = two.inv;
  b.reduced = reduced;
  b.policies = {{"gamma_star", gamma_d}, {"gamma_star_transported", gamma_s}, {"gamma_star_lifted", gamma_lift}};
  return b;
}

ScenarioBundle build_example3(const nlohmann::json& params) {
  reject_unknown(params, {});
  TeamProblem p;
  p.label = "example3";
  p.primitives.add("omega1", Distribution::standard_normal(1));
  p.primitives.add("omega2", Distribution::standard_normal(1));
  MeasurementMap m1{0, {primitive_ref(0)}, 1, [](std::span<const Vector> v) { return v[0]; },
                    {{"kind", "primitive"}, {"primitive", "omega1"}}};
  MeasurementMap m2{1, {primitive_ref(1), action_ref(0)}, 1,
                    [](std::span<const Vector> v) { return Vector(v[0].array() + std::sqrt(std::max(v[1](0), 0.0))); },
                    {{"kind", "sqrt-additive"}, {"static", "omega2"}, {"upstream", {1}}}};
  p.measurements = {m1, m2};
  p.info = {{measurement_ref(0)}, {measurement_ref(0), measurement_ref(1)}};
  p.action_spaces = {ActionSpace::nonnegative(1), ActionSpace::unbounded(1)};
  p.cost.reads = {1};
  p.cost.eval = [](std::span<const Vector> w, std::span<const Vector> u) {
    const double e = std::sqrt(std::max(u[0](0), 0.0)) - u[1](0) + w[0](0);
    return e * e;
  };
  p.cost.smooth = false;
  p.cost.nonnegative = true;
  p.cost.spec = {{"kind", "example3"}};

  InvertibleObservation inv;
  inv.dms.push_back(InvertibleObservation::identity(p, 0));
  ObservationDecomposition d;
  d.dm = 1;
  d.static_reads = {1};
  d.dim = 1;
  d.h = [](std::span<const Vector> v) { return v[0]; };
  d.upstream = {0};
  d.g = [](const Vector& h, std::span<const Vector> u) { return Vector(h.array() + std::sqrt(std::max(u[0](0), 0.0))); };
  d.g_inv = [](const Vector& y, std::span<const Vector> u) { return Vector(y.array() - std::sqrt(std::max(u[0](0), 0.0))); };
  d.affine_in_actions = false;
  d.kind = "sqrt";
  inv.dms.push_back(d);
  const auto f = forms_of(p, inv);

  const Policy gamma_d = zero_identity(*f.d);
  const Policy gamma_s = simplify_affine(transport_policy_D_to_S(*f.d, inv, gamma_d));

  ReferenceMeasureFamily refs;
  refs.factors.push_back(identity_factor(Distribution::standard_normal(1)));
  refs.factors.push_back(additive_noise_factor(Distribution::standard_normal(1), [](const DensityContext& c) {
    return v1(std::sqrt(std::max(c.actions[0](0), 0.0)));
  }));
  ReducedProblem reduced(p, refs, {}, [](const PrimitiveSample&, std::span<const Vector> y, std::span<const Vector> u) {
    const double e = y[1](0) - u[1](0);
    return e * e;
  });
  auto policies = random_affine_policies(p, 2, 0xE3, 0.3);
  policies.insert(policies.begin(), gamma_d);

  std::vector<Entry> es;
  es.push_back({ev("stationarity", "S", "gamma_star_transported", "fail", kEx3), stationarity_runner(f.ms, gamma_s)});
  es.push_back({ev("stationarity_residual_dm1", "S", "gamma_star_transported", "pass", "Example 3: derivative is always 1"),
                residual_runner(f.ms, gamma_s, 0, 1.0, 1e-6)});
  es.push_back({ev("stationarity", "D", "gamma_star", "pass", kEx3), stationarity_runner(f.md, gamma_d)});
  es.push_back({ev("pbp", "S", "gamma_star_transported", "pass", "Example 3: S-form policy is pbp optimal"),
                pbp_runner(f.ms, gamma_s)});
  es.push_back({ev("condition_c", "D", "gamma_star", "fail", "Condition (C) fails for square-root mixing"),
                condition_c_runner(f.d, std::make_shared<InvertibleObservation>(inv), gamma_d)});
  es.push_back({ev("cost_invariance", "PI", "gamma_star_and_random", "pass", "cost invariance under the policy-independent reduction"),
                invariance_runner(f.md, std::make_shared<const ReducedProblem>(reduced), policies, false)});

  auto b = assemble("example3", {{"omega1", "N(0,1)"}, {"omega2", "N(0,1)"}, {"U1", "[0, inf)"}}, std::move(es));
  b.problem = p;
  b.inverse = inv;
  b.reduced = reduced;
  b.policies = {{"gamma_star", gamma_d}, {"gamma_star_transported", gamma_s}};
  return b;
}

double fourth_root(double y) { return std::sqrt(std::sqrt(std::max(y, 0.0))); }

ScenarioBundle build_example4(const nlohmann::json& params) {
  reject_unknown(params, {"c1", "c2", "width"});
  const double c1 = param(params, "c1", 0.0);
  const double c2 = param(params, "c2", 0.1);
  const double width = param(params, "width", 0.01);
  if (c1 < 0 || c2 < 0) throw ParameterError("example4 requires nonnegative DM 1 constants (U1 = [0, inf))");
  if (!(width > 0)) throw ParameterError("example4 requires a positive support width for the static part");
  auto two = additive_two_dm("example4",
                             {{"omega0", Distribution::standard_normal(1)},
                              {"omega1", Distribution::standard_normal(1)},
                              {"yhat_s2", Distribution::uniform(v1(0.0), v1(width))}},
                             1, 2, ActionSpace::nonnegative(1));
  auto& p = two.problem;
  p.cost.reads = {0};
  p.cost.eval = [](std::span<const Vector> w, std::span<const Vector> u) {
    const double a = u[0](0) + w[0](0);
    return a * a + u[1](0) * u[1](0);
  };
  p.cost.gradient = [](std::span<const Vector> w, std::span<const Vector> u, std::size_t dm) {
    return dm == 0 ? v1(2 * (u[0](0) + w[0](0))) : v1(2 * u[1](0));
  };
  p.cost.nonnegative = true;
  p.cost.jointly_convex = true;
  p.cost.spec = {{"kind", "example4"}};
  const auto f = forms_of(p, two.inv);

  auto root_d = PolicyEntry::closure("fourth_root(yhat2)", 2, 1, [](const Vector& x) { return v1(fourth_root(x(1))); });
  auto root_cs = PolicyEntry::closure("fourth_root(yhat_s2 + u1)", 3, 1,
                                      [](const Vector& x) { return v1(fourth_root(x(1) + x(2))); });
  const Policy gd({PolicyEntry::constant(1, v1(c1)), root_d});
  const Policy gd2({PolicyEntry::constant(1, v1(c2)), root_d});
  const Policy gcs({PolicyEntry::constant(1, v1(c1)), root_cs});
  const Policy gcs2({PolicyEntry::constant(1, v1(c2)), root_cs});

  std::vector<Entry> es;
  es.push_back({ev("convexity", "D", "gamma,gamma_prime", "fail", kEx4), convexity_runner(f.md, gd, gd2, 0.01)});
  es.push_back({ev("convexity", "CS", "gamma,gamma_prime", "pass", kEx4), convexity_runner(f.mcs, gcs, gcs2, std::nullopt)});
  auto cs = f.cs;
  es.push_back({ev("cs_information", "CS", "-", "pass", "Example 4: I2 = {y1, u1, yhat_s2}"), [cs](const MonteCarloPlan&) {
                  std::vector<std::string> names;
                  for (const auto& s : cs->info[1]) names.push_back(cs->signal_name(s));
                  const bool ok = cs->info[1].size() == 3 && cs->info[1][0] == measurement_ref(0) &&
                                  cs->info[1][1] == measurement_ref(1) && cs->info[1][2] == action_ref(0) &&
                                  cs->measurements[1].reads == std::vector<SignalRef>{primitive_ref(2)};
                  auto r = make_result({}, ok ? "pass" : "fail");
                  r.details = {{"I2", names}};
                  return r;
                }});

  auto b = assemble("example4",
                    {{"c1", c1}, {"c2", c2}, {"alpha_grid", "0:0.1:1"}, {"yhat_s2", "U(0," + fmt(width) + ")"},
                     {"omega0", "N(0,1)"}, {"U1", "[0, inf)"}},
                    std::move(es));
  b.problem = p;
  b.inverse = two.inv;
  b.policies = {{"gamma", gd}, {"gamma_prime", gd2}, {"gamma_cs", gcs}, {"gamma_prime_cs", gcs2}};
  return b;
}

// ---------------------------------------------------------------- LQG

LqgTeam example5_team(double s) {
  LqgTeam t;
  t.sigma_zeta = Matrix::Identity(2, 2);
  t.H = {row({1.0, 0.0}), row({0.0, 1.0})};
  t.B[{1, 0}] = Matrix::Constant(1, 1, 0.5);
  t.action_dims = {1, 1};
  t.Q = Matrix::Identity(2, 2);
  t.R = Matrix::Identity(2, 2);
  Matrix S(2, 2);
  S << 1.0, 0.0, 0.5, 1.0;
  t.S = s * S;
  return t;
}

ScenarioBundle build_example5(const nlohmann::json& params) {
  reject_unknown(params, {"s"});
  const double s = param(params, "s", 0.0);
  auto team = std::make_shared<LqgTeam>(example5_team(s));
  const auto solve = solve_static_gains(*team);
  const auto gains = transport_gains_G_to_K(*team, solve.gains);
  const TeamProblem d = lqg_problem(*team, "example5_lqg");
  const auto inv = lqg_inverse(*team);
  const auto f = forms_of(d, inv);
  const Policy gamma_s = lqg_policy(*team, gains, LqgForm::S);
  const Policy gamma_d = lqg_policy(*team, gains, LqgForm::D);
  const char* cite = "Example 5: unique linear optimum and K recursion";

  std::vector<Entry> es;
  es.push_back({ev("static_gains", "S", "G_star", "pass", cite), [team, solve, s](const MonteCarloPlan&) {
                  const auto iter = solve_static_gains_iterative(*team);
                  double gmax = 0.0, diff = 0.0;
                  for (std::size_t i = 0; i < solve.gains.G.size(); ++i) {
                    gmax = std::max(gmax, solve.gains.G[i].cwiseAbs().maxCoeff());
                    diff = std::max(diff, (solve.gains.G[i] - iter.G[i]).cwiseAbs().maxCoeff());
                  }
                  const bool ok = solve.relative_residual <= 1e-10 && diff <= 1e-8 && (s != 0.0 || gmax <= 1e-12);
                  auto r = make_result({}, ok ? "pass" : "fail");
                  r.estimate = gmax;
                  r.details = {{"relative_residual", solve.relative_residual}, {"iterative_gap", diff},
                               {"gains", solve.gains.to_json(*team)}};
                  return r;
                }});
  es.push_back({ev("exact_cost_transport", "D", "K_star", "pass", cite), [team, gains](const MonteCarloPlan&) {
                  const double js = exact_cost(*team, gains, LqgForm::S);
                  const double jd = exact_cost(*team, gains, LqgForm::D);
                  auto r = make_result({}, std::abs(js - jd) <= 1e-10 ? "pass" : "fail");
                  r.estimate = jd;
                  r.details = {{"J_S", js}, {"J_D", jd}, {"gains", gains.to_json(*team)}};
                  return r;
                }});
  auto pd = f.d, ps = f.s;
  es.push_back({ev("pathwise_transport", "D", "K_star", "pass", cite), [pd, ps, gamma_s, gamma_d](const MonteCarloPlan& plan) {
                  CounterRng rng(mix64(plan.seed, 0x5A7));
                  double sup = 0.0;
                  const std::size_t n = std::min<std::size_t>(plan.samples, 10000);
                  for (std::size_t k = 0; k < n; ++k) {
                    const auto smp = pd->primitives.sample(rng);
                    const auto a = simulate_path(*pd, gamma_d, smp);
                    const auto b = simulate_path(*ps, gamma_s, smp);
                    for (std::size_t i = 0; i < a.actions.size(); ++i)
                      sup = std::max(sup, (a.actions[i] - b.actions[i]).cwiseAbs().maxCoeff());
                  }
                  auto r = make_result({}, sup <= 1e-9 ? "pass" : "fail");
                  r.estimate = sup;
                  r.details = {{"samples", n}};
                  return r;
                }});
  es.push_back({ev("stationarity", "S", "G_star", "pass", cite), stationarity_runner(f.ms, gamma_s)});
  es.push_back({ev("pbp", "D", "K_star", "pass", "transported affine gains are pbp optimal in the dynamic form"),
                pbp_runner(f.md, gamma_d)});

  auto b = assemble("example5_lqg", {{"s", s}, {"Sigma_zeta", "I2"}, {"B21", 0.5}, {"Q", "I2"}, {"R", "I2"}}, std::move(es));
  b.problem = d;
  b.inverse = inv;
  b.lqg = *team;
  b.policies = {{"G_star", gamma_s}, {"K_star", gamma_d}};
  return b;
}

// ---------------------------------------------------------------- finite toy

int wrap3(double x) {
  const long k = std::lround(x);
  return static_cast<int>(((k + 1) % 3 + 3) % 3) - 1;
}

struct FiniteToy {
  TeamProblem problem;
  ReducedProblem reduced;
};

double toy_cost(double w1, double w2, double u1, double u2) {
  const double e = u2 - w2 - 0.5 * w1;
  return e * e + 0.3 * (u1 - w1) * (u1 - w1) + 0.2 * u1 * u2;
}

FiniteToy finite_toy_problem() {
  TeamProblem p;
  p.label = "finite_toy";
  const std::vector<double> p1{0.2, 0.5, 0.3}, p2{0.3, 0.3, 0.4};
  p.primitives.add("omega1", Distribution::finite_scalar({-1, 0, 1}, p1));
  p.primitives.add("omega2", Distribution::finite_scalar({-1, 0, 1}, p2));
  MeasurementMap m1{0, {primitive_ref(0)}, 1, [](std::span<const Vector> v) { return v[0]; },
                    {{"kind", "primitive"}, {"primitive", "omega1"}}};
  MeasurementMap m2{1, {primitive_ref(1), action_ref(0)}, 1,
                    [](std::span<const Vector> v) { return v1(wrap3(v[0](0) + v[1](0))); },
                    {{"kind", "cyclic-sum"}, {"static", "omega2"}, {"upstream", {1}}, {"modulus", 3}}};
  p.measurements = {m1, m2};
  p.info = {{measurement_ref(0)}, {measurement_ref(0), measurement_ref(1)}};
  ActionSpace box{v1(-1.0), v1(1.0)};
  p.action_spaces = {box, box};
  p.cost.reads = {0, 1};
  p.cost.eval = [](std::span<const Vector> w, std::span<const Vector> u) {
    return toy_cost(w[0](0), w[1](0), u[0](0), u[1](0));
  };
  p.cost.spec = {{"kind", "finite-toy-quadratic"}};

  ReferenceMeasureFamily refs;
  refs.factors.push_back(identity_factor(p.primitives[0].dist));
  std::vector<Vector> atoms{v1(-1), v1(0), v1(1)};
  refs.factors.push_back(finite_channel_factor(atoms, [p2](const DensityContext& c) {
    std::vector<double> pmf(3);
    for (int a = -1; a <= 1; ++a) pmf[static_cast<std::size_t>(a + 1)] = p2[static_cast<std::size_t>(wrap3(a - std::lround(c.actions[0](0))) + 1)];
    return pmf;
  }));
  ReducedProblem red(p, refs, {}, [](const PrimitiveSample&, std::span<const Vector> y, std::span<const Vector> u) {
    const double w2 = wrap3(y[1](0) - std::lround(u[0](0)));
    return toy_cost(y[0](0), w2, u[0](0), u[1](0));
  });
  return {p, red};
}


Policy tabular_policy(const std::vector<int>& a1, const std::vector<int>& a2) {
  std::map<std::vector<double>, Vector> t1, t2;
  for (int y = -1; y <= 1; ++y) t1[{double(y)}] = v1(a1[static_cast<std::size_t>(y + 1)]);
  for (int y1 = -1; y1 <= 1; ++y1)
    for (int y2 = -1; y2 <= 1; ++y2)
      t2[{double(y1), double(y2)}] = v1(a2[static_cast<std::size_t>(3 * (y1 + 1) + (y2 + 1))]);
  return Policy({PolicyEntry::tabular(1, 1, t1), PolicyEntry::tabular(2, 1, t2)});
}

// Exhaustive search: every γ¹, then the per-atom best γ².
Policy finite_toy_optimum(const TeamProblem& p) {
  const auto& f1 = p.primitives[0].dist.as_finite();
  const auto& f2 = p.primitives[1].dist.as_finite();
  double best = INFINITY;
  Policy arg;
  for (int code = 0; code < 27; ++code) {
    std::vector<int> a1{code % 3 - 1, (code / 3) % 3 - 1, code / 9 - 1};
    std::vector<int> a2(9, 0);
    double total = 0.0;
    for (int y1 = -1; y1 <= 1; ++y1)
      for (int y2 = -1; y2 <= 1; ++y2) {
        double bestc = INFINITY;
        int bestu = -1;
        for (int u2 = -1; u2 <= 1; ++u2) {
          double c = 0.0;
          for (std::size_t k = 0; k < 3; ++k) {
            const double w2 = f2.atoms[k](0);
            const int u1 = a1[static_cast<std::size_t>(y1 + 1)];
            if (wrap3(w2 + u1) != y2) continue;
            c += f1.probs[static_cast<std::size_t>(y1 + 1)] * f2.probs[k] * toy_cost(y1, w2, u1, u2);
          }
          if (c < bestc - 1e-15) {
            bestc = c;
            bestu = u2;
          }
        }
        a2[static_cast<std::size_t>(3 * (y1 + 1) + (y2 + 1))] = bestu;
        total += bestc;
      }
    if (total < best - 1e-15) {
      best = total;
      arg = tabular_policy(a1, a2);
    }
  }
  return arg;
}

std::vector<Policy> random_tabular_policies(std::size_t count, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Policy> out;
  auto pick = [&] { return static_cast<int>(rng() % 3) - 1; };
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<int> a1(3), a2(9);
    for (auto& a : a1) a = pick();
    for (auto& a : a2) a = pick();
    out.push_back(tabular_policy(a1, a2));
  }
  return out;
}

ScenarioBundle build_finite_toy(const nlohmann::json& params) {
  reject_unknown(params, {});
  auto toy = finite_toy_problem();
  const auto& p = toy.problem;
  auto md = std::make_shared<DynamicModel>(p, "D");
  auto red = std::make_shared<const ReducedProblem>(toy.reduced);
  auto mpi = std::make_shared<ReducedModel>(toy.reduced);
  const Policy opt = finite_toy_optimum(p);
  BestResponseOptions tab;
  tab.cls = BestResponseClass::tabular;
  tab.action_grid = {v1(-1), v1(0), v1(1)};

  std::vector<Entry> es;
  es.push_back({ev("cost_invariance", "PI", "random_tabular_x10", "pass", "cost invariance under the policy-independent reduction (exact enumeration)"),
                invariance_runner(md, red, random_tabular_policies(10, 0x70F), true)});
  es.push_back({ev("pbp", "D", "global_optimum", "pass", "an exact global optimum is pbp optimal"), pbp_runner(md, opt, {tab})});
  es.push_back({ev("pbp", "PI", "global_optimum", "pass", "pbp verdicts agree under the reduction"),
                pbp_runner(mpi, opt, {tab})});
  auto pp = std::make_shared<TeamProblem>(p);
  es.push_back({ev("classification", "D", "-", "pass", "partially nested: I1 within I2, y2 affected by u1"),
                [pp](const MonteCarloPlan&) {
                  const auto a = analyze_information_structure(*pp);
                  auto r = make_result({}, a.label == StructureLabel::partially_nested ? "pass" : "fail");
                  r.details = {{"label", to_string(a.label)}};
                  return r;
                }});

  auto b = assemble("finite_toy", {{"omega1", "finite{-1,0,1}:(0.2,0.5,0.3)"}, {"omega2", "finite{-1,0,1}:(0.3,0.3,0.4)"}},
                    std::move(es));
  b.problem = p;
  b.reduced = toy.reduced;
  b.policies = {{"global_optimum", opt}};
  return b;
}

// ---------------------------------------------------------------- multistage

constexpr std::size_t kMultiSamples = 20000;

MonteCarloPlan multi_plan(const MonteCarloPlan& plan) {
  auto p = plan;
  p.exact = false;
  p.samples = std::min(plan.samples, kMultiSamples);
  return p;
}

using MultiPtr = std::shared_ptr<const MultiStageModel>;

Runner multi_pbp_runner(MultiPtr model, MultiPolicy policy, bool agwise, std::optional<MonteCarloPlan> fixed) {
  return [=](const MonteCarloPlan& plan) {
    const auto p = fixed ? *fixed : multi_plan(plan);
    const auto rep = agwise ? agwise_pbp_check(*model, policy, p) : dmwise_pbp_check(*model, policy, p);
    auto r = make_result({}, rep.pass ? "pass" : "fail");
    r.estimate = rep.j;
    r.details = rep.to_json();
    r.details["samples"] = p.exact ? 0 : p.samples;
    r.details["method"] = p.exact ? "exact" : "monte-carlo";
    for (const auto& x : rep.responses)
      r.rows.push_back({rep.kind + "_pbp", dm_name(x.agent), x.stage ? "stage" + std::to_string(*x.stage) : "all-stages",
                        x.unbounded_below ? INFINITY : x.improvement, x.std_error});
    return r;
  };
}

Runner multi_invariance_runner(MultiPtr direct, MultiPtr reduced, std::vector<MultiPolicy> policies,
                               std::optional<MonteCarloPlan> direct_plan) {
  return [=](const MonteCarloPlan& plan) {
    const auto p = multi_plan(plan);
    bool ok = true;
    auto rows = nlohmann::json::array();
    CheckResult out;
    double worst = 0.0;
    for (std::size_t k = 0; k < policies.size(); ++k) {
      const auto jd = multistage_cost(*direct, policies[k], direct_plan ? *direct_plan : p.with_stream(0x31));
      const auto jr = multistage_cost(*reduced, policies[k], p.with_stream(0x32));
      const double se = std::hypot(jd.std_error, jr.std_error);
      const double diff = std::abs(jd.mean - jr.mean);
      ok = ok && diff <= 3.0 * se;
      worst = std::max(worst, diff);
      rows.push_back({{"policy", k}, {"dynamic", jd.mean}, {"reduced", jr.mean}, {"se", se}});
      out.rows.push_back({"cost_invariance", "all", "policy" + std::to_string(k), jd.mean - jr.mean, se});
    }
    auto r = make_result({}, ok ? "pass" : "fail");
    r.rows = std::move(out.rows);
    r.estimate = worst;
    r.details = {{"policies", rows}, {"samples", p.samples}};
    return r;
  };
}

Runner weight_normalization_runner(MultiPtr reduced, MultiPolicy policy) {
  return [=](const MonteCarloPlan& plan) {
    const auto p = multi_plan(plan);
    const auto est = integrate(reduced->sampling_space(), p.with_stream(0x33), 1,
                               [&](const PrimitiveSample& s, std::size_t, std::span<double> o) {
                                 o[0] = reduced->run(s, policy).weight;
                               })[0];
    auto r = make_result({}, std::abs(est.mean - 1.0) <= 3.0 * est.std_error + 1e-12 ? "pass" : "fail");
    r.estimate = est.mean;
    r.std_error = est.std_error;
    r.rows.push_back({"weight_normalization", "all", "E_Q[weight]", est.mean - 1.0, est.std_error});
    return r;
  };
}

Runner nested_runner(std::shared_ptr<const MultiStageTeam> team) {
  return [=](const MonteCarloPlan&) {
    auto r = make_result({}, check_agwise_nested(*team) ? "pass" : "fail");
    return r;
  };
}

Runner certify_runner(MultiPtr reduced, MultiPolicy policy) {
  return [=](const MonteCarloPlan& plan) {
    const auto cert = certify_agwise_global(*reduced, policy, multi_plan(plan));
    auto r = make_result({}, cert.verdict());
    r.details = cert.evidence;
    return r;
  };
}

std::vector<std::vector<std::vector<StageSignal>>> recall_info(std::size_t T, std::size_t N) {
  std::vector<std::vector<std::vector<StageSignal>>> info(T, std::vector<std::vector<StageSignal>>(N));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = 0; k <= t; ++k) info[t][i].push_back({StageSignal::Kind::observation, k, i});
  return info;
}

struct Example6Params {
  double coupling = 0.0;
  double p0 = 0.1;   // Var s_0
  double a = 0.5;    // s' = a s + w
  double q = 0.05;   // Var w
};

MultiStageTeam example6_team(const Example6Params& ps) {
  MultiStageTeam t;
  t.label = "example6_ms";
  t.T = 2;
  t.N = 2;
  Matrix c0 = Matrix::Zero(2, 2);
  c0(0, 0) = ps.p0;
  t.x0 = Distribution::gaussian(Vector::Zero(2), c0);
  for (std::size_t k = 0; k < t.T; ++k) {
    t.w.push_back(Distribution::gaussian(Vector::Zero(1), Matrix::Constant(1, 1, ps.q)));
    t.v.push_back({Distribution::standard_normal(1), Distribution::standard_normal(1)});
  }
  t.obs_dims = {1, 1};
  t.action_spaces = {ActionSpace::unbounded(1), ActionSpace::unbounded(1)};
  const double a = ps.a, c = ps.coupling;
  t.dynamics = [a](std::size_t step, const Vector&, std::span<const Vector> xs, const ActionHistory& us, const Vector& w) {
    const Vector& x = xs.back();
    Vector n(2);
    n << a * x(0) + w(0), x(1) + us[step][0](0) + us[step][1](0);
    return n;
  };
  t.observation = [c](std::size_t, std::size_t, std::span<const Vector> xs, const ActionHistory&, const Vector& v) {
    return v1(xs.back()(0) + c * xs.back()(1) + v(0));
  };
  t.stage_cost = [](std::size_t, const Vector&, const Vector& x, std::span<const Vector> u) {
    double s = 0.0;
    for (const auto& ui : u) s += (ui(0) - x(0)) * (ui(0) - x(0));
    return s;
  };
  t.terminal_cost = [](const Vector&) { return 0.0; };
  t.info = recall_info(t.T, t.N);
  return t;
}

// E[s_t | y^i_{0:t}] for the uncoupled observations y = s + v.
MultiPolicy example6_reference(const MultiStageTeam& team, const Example6Params& ps) {
  const auto T = static_cast<Eigen::Index>(team.T);
  Matrix S(T, T);
  std::vector<double> var{ps.p0};
  for (Eigen::Index t = 1; t < T; ++t) var.push_back(ps.a * ps.a * var.back() + ps.q);
  for (Eigen::Index r = 0; r < T; ++r)
    for (Eigen::Index c = 0; c < T; ++c) S(r, c) = std::pow(ps.a, std::abs(r - c)) * var[static_cast<std::size_t>(std::min(r, c))];
  MultiPolicy p;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Matrix Syy = S.topLeftCorner(t + 1, t + 1) + Matrix::Identity(t + 1, t + 1);
    const Matrix gain = S.block(t, 0, 1, t + 1) * Syy.inverse();
    std::vector<PolicyEntry> row;
    for (std::size_t i = 0; i < team.N; ++i) row.push_back(PolicyEntry::affine(gain, Vector::Zero(1)));
    p.entries.push_back(std::move(row));
  }
  return p;
}

}  // namespace

StageDensityFamily example6_densities(const MultiStageTeam& team, double coupling) {
  return gaussian_additive_densities(team, [coupling](std::size_t, std::size_t, std::span<const Vector> xs, const ActionHistory&) {
    return v1(xs.back()(0) + coupling * xs.back()(1));
  });
}

namespace {

const char* kEx6 = "Example 6: independent-data reduction for Gaussian-additive observations";
const char* kEx7 = "Example 7: agent-wise nested independent reduction under private recall";
const char* kPreserved = "AG-wise and DM-wise verdicts are preserved by the reduction";
const char* kConvexLift = "DM-wise pbp plus convex tilted cost gives AG-wise pbp";

ScenarioBundle build_example6(const nlohmann::json& params) {
  reject_unknown(params, {"coupling"});
  Example6Params ps;
  ps.coupling = param(params, "coupling", 0.0);
  auto team = std::make_shared<const MultiStageTeam>(example6_team(ps));
  const auto ref = example6_reference(*team, ps);
  const auto zero = MultiPolicy::zero(*team);
  MultiPolicy alt = ref;
  for (std::size_t t = 0; t < team->T; ++t)
    for (std::size_t i = 0; i < team->N; ++i) {
      const auto* a = ref.at(t, i).as_affine();
      alt = alt.with_entry(t, i, PolicyEntry::affine(0.5 * a->gain, v1(0.1 * static_cast<double>(i + 1))));
    }
  MultiPtr direct = std::make_shared<DirectMultiStage>(*team);
  MultiPtr reduced = std::make_shared<ReducedMultiStage>(*team, example6_densities(*team, ps.coupling));
  // Quadratic cost and linear policies: a 3-point Gauss-Hermite rule is exact in the dynamic form.
  auto exact3 = MonteCarloPlan::exact_plan(3);

  std::vector<Entry> es;
  es.push_back({ev("nested", "dynamic", "-", "pass", "private recall is nested"), nested_runner(team)});
  es.push_back({ev("cost_invariance", "independent-data", "reference,zero,alt", "pass", kEx6),
                multi_invariance_runner(direct, reduced, {ref, zero, alt}, ps.coupling == 0.0 ? std::optional(exact3) : std::nullopt)});
  es.push_back({ev("weight_normalization", "independent-data", "reference", "pass", kEx6), weight_normalization_runner(reduced, ref)});
  if (ps.coupling == 0.0) {
    es.push_back({ev("dmwise_pbp", "dynamic", "reference", "pass", kPreserved), multi_pbp_runner(direct, ref, false, exact3)});
    es.push_back({ev("agwise_pbp", "dynamic", "reference", "pass", kPreserved), multi_pbp_runner(direct, ref, true, exact3)});
    es.push_back({ev("dmwise_pbp", "independent-data", "reference", "pass", kPreserved), multi_pbp_runner(reduced, ref, false, {})});
    es.push_back({ev("agwise_pbp", "independent-data", "reference", "pass", kPreserved), multi_pbp_runner(reduced, ref, true, {})});
    es.push_back({ev("certify_agwise", "independent-data", "reference", "certified", kConvexLift), certify_runner(reduced, ref)});
  }
  auto b = assemble("example6_ms",
                    {{"coupling", ps.coupling}, {"T", 2}, {"N", 2}, {"Var_s0", ps.p0}, {"a", ps.a}, {"Var_w", ps.q}, {"v", "N(0,1)"}},
                    std::move(es));
  b.multistage = *team;
  b.multi_policies = {{"reference", ref}, {"zero", zero}, {"alt", alt}};
  return b;
}

struct Example7Params {
  double a = 0.8;
  double b = 0.5;
  double ref_var = 4.0;
};

MultiStageTeam example7_team(const Example7Params& ps) {
  MultiStageTeam t;
  t.label = "example7_ms";
  t.T = 2;
  t.N = 2;
  t.x0 = Distribution::standard_normal(2);
  t.omega0 = Distribution::standard_normal(1);
  for (std::size_t k = 0; k < t.T; ++k) {
    t.w.push_back(Distribution::standard_normal(2));
    t.v.push_back({Distribution::standard_normal(1), Distribution::standard_normal(1)});
  }
  t.obs_dims = {1, 1};
  t.action_spaces = {ActionSpace::unbounded(1), ActionSpace::unbounded(1)};
  const double a = ps.a, bb = ps.b;
  t.dynamics = [a, bb](std::size_t step, const Vector& w0, std::span<const Vector> xs, const ActionHistory& us,
                       const Vector& w) {
    Vector n(2);
    for (Eigen::Index i = 0; i < 2; ++i)
      n(i) = a * xs.back()(i) + us[step][static_cast<std::size_t>(i)](0) + bb * w0(0) + w(i);
    return n;
  };
  t.observation = [](std::size_t, std::size_t i, std::span<const Vector> xs, const ActionHistory&, const Vector& v) {
    return v1(xs.back()(static_cast<Eigen::Index>(i)) + v(0));
  };
  t.stage_cost = [](std::size_t, const Vector&, const Vector& x, std::span<const Vector> u) {
    return x.squaredNorm() + u[0].squaredNorm() + u[1].squaredNorm();
  };
  t.terminal_cost = [](const Vector& x) { return x.squaredNorm(); };
  t.info = recall_info(t.T, t.N);
  return t;
}

StateReferenceFamily example7_references(const MultiStageTeam& team, const Example7Params& ps) {
  const double a = ps.a, b = ps.b;
  const auto ref = Distribution::gaussian(Vector::Zero(1), Matrix::Constant(1, 1, ps.ref_var));
  return gaussian_state_references(
      team, {{0, 1}, {1, 1}},
      [a, b](std::size_t t, std::size_t i, const Vector& w0, std::span<const Vector> xs, const ActionHistory& us) {
        return v1(a * xs.back()(static_cast<Eigen::Index>(i)) + us[t][i](0) + b * w0(0));
      },
      {ref, ref});
}

ScenarioBundle build_example7(const nlohmann::json& params) {
  reject_unknown(params, {"a", "b", "ref_var"});
  Example7Params ps;
  ps.a = param(params, "a", ps.a);
  ps.b = param(params, "b", ps.b);
  ps.ref_var = param(params, "ref_var", ps.ref_var);
  if (!(ps.ref_var > 0.5)) throw ParameterError("example7 requires ref_var > 0.5 so the tilted cost has finite variance");
  auto team = std::make_shared<const MultiStageTeam>(example7_team(ps));
  const auto zero = MultiPolicy::zero(*team);
  MultiPolicy alt = zero;
  for (std::size_t t = 0; t < team->T; ++t)
    for (std::size_t i = 0; i < team->N; ++i) {
      Matrix K = Matrix::Zero(1, static_cast<Eigen::Index>(team->info_dim(t, i)));
      K(0, K.cols() - 1) = -0.3;
      alt = alt.with_entry(t, i, PolicyEntry::affine(K, v1(0.0)));
    }
  MultiPtr direct = std::make_shared<DirectMultiStage>(*team);
  MultiPtr reduced = std::make_shared<ReducedMultiStage>(*team, std::nullopt, example7_references(*team, ps));

  std::vector<Entry> es;
  es.push_back({ev("nested", "dynamic", "-", "pass", "Example 7: sigma(y_t) within sigma(y_t+1)"), nested_runner(team)});
  es.push_back({ev("cost_invariance", "agent-nested", "zero,alt", "pass", kEx7),
                multi_invariance_runner(direct, reduced, {zero, alt}, std::nullopt)});
  es.push_back({ev("dmwise_pbp", "dynamic", "zero", "fail", kPreserved), multi_pbp_runner(direct, zero, false, {})});
  es.push_back({ev("agwise_pbp", "dynamic", "zero", "fail", kPreserved), multi_pbp_runner(direct, zero, true, {})});
  auto b = assemble("example7_ms",
                    {{"a", ps.a}, {"b", ps.b}, {"ref_var", ps.ref_var}, {"T", 2}, {"N", 2}, {"x0", "N(0,I2)"},
                     {"omega0", "N(0,1)"}, {"w", "N(0,I2)"}, {"v", "N(0,1)"}},
                    std::move(es));
  b.multistage = *team;
  b.multi_policies = {{"zero", zero}, {"alt", alt}};
  return b;
}

using Builder = ScenarioBundle (*)(const nlohmann::json&);

const std::vector<std::pair<ScenarioInfo, Builder>>& registry() {
  static const std::vector<std::pair<ScenarioInfo, Builder>> r{
      {{"example1", "signed quadratic; S-form pbp, D-form unbounded below", {{"alpha", 0.5}}}, build_example1},
      {{"example2", "D-form pbp, S-form concave frozen cost", {{"alpha", 0.5}, {"beta", 2.0}, {"variant", "independent"}}},
       build_example2},
      {{"example3", "square-root mixing; S-form not stationary", nlohmann::json::object()}, build_example3},
      {{"example4", "fourth-root DM 2; convexity in policies by form", {{"c1", 0.0}, {"c2", 0.1}, {"width", 0.01}}},
       build_example4},
      {{"example5_lqg", "partially nested LQG; static gains and K recursion", {{"s", 0.0}}}, build_example5},
      {{"example6_ms", "two-stage Gaussian-additive team; independent-data reduction", {{"coupling", 0.0}}}, build_example6},
      {{"example7_ms", "private-recall agents with common noise; agent-wise nested reduction",
        {{"a", 0.8}, {"b", 0.5}, {"ref_var", 4.0}}},
       build_example7},
      {{"finite_toy", "two DMs on three-point spaces; exact enumeration", nlohmann::json::object()}, build_finite_toy},
  };
  return r;
}

nlohmann::json row_json(const ResidualRow& r) {
  nlohmann::json j{{"check", r.check}, {"dm", r.dm}, {"direction", r.direction}, {"se", r.se}};
  if (std::isinf(r.residual))
    j["residual"] = "inf";
  else
    j["residual"] = r.residual;
  return j;
}

nlohmann::json multistage_to_json(const MultiStageTeam& t) {
  nlohmann::json j{{"label", t.label}, {"T", t.T}, {"N", t.N}, {"x0", t.x0.to_json()}, {"obs_dims", t.obs_dims}};
  j["w"] = nlohmann::json::array();
  for (const auto& d : t.w) j["w"].push_back(d.to_json());
  j["v"] = nlohmann::json::array();
  for (const auto& r : t.v) {
    auto row = nlohmann::json::array();
    for (const auto& d : r) row.push_back(d.to_json());
    j["v"].push_back(row);
  }
  if (t.omega0) j["omega0"] = t.omega0->to_json();
  j["info"] = nlohmann::json::array();
  for (std::size_t s = 0; s < t.T; ++s) {
    auto row = nlohmann::json::array();
    for (std::size_t i = 0; i < t.N; ++i) {
      auto sig = nlohmann::json::array();
      for (const auto& x : t.info[s][i])
        sig.push_back((x.kind == StageSignal::Kind::observation ? "y" : "u") + std::to_string(x.t) + "_" +
                      std::to_string(x.agent + 1));
      row.push_back(sig);
    }
    j["info"].push_back(row);
  }
  return j;
}

nlohmann::json multipolicy_to_json(const MultiPolicy& p) {
  auto j = nlohmann::json::array();
  for (const auto& row : p.entries) j.push_back(policy_to_json(Policy(row)));
  return j;
}

}  // namespace

nlohmann::json CheckResult::to_json() const {
  nlohmann::json j{{"id", spec.id},           {"form", spec.form},         {"policy", spec.policy},
                   {"expected", spec.expected}, {"verdict", verdict},      {"matched", matched},
                   {"citation", spec.citation}};
  if (estimate) j["estimate"] = std::isinf(*estimate) ? nlohmann::json("inf") : nlohmann::json(*estimate);
  if (std_error) j["std_error"] = *std_error;
  if (!rows.empty()) {
    j["residuals"] = nlohmann::json::array();
    for (const auto& r : rows) j["residuals"].push_back(row_json(r));
  }
  if (!details.empty()) j["details"] = details;
  return j;
}

const std::vector<ScenarioInfo>& scenario_catalogue() {
  static const std::vector<ScenarioInfo> c = [] {
    std::vector<ScenarioInfo> out;
    for (const auto& [info, _] : registry()) out.push_back(info);
    return out;
  }();
  return c;
}

ScenarioBundle build_scenario(const std::string& name, const nlohmann::json& params) {
  for (const auto& [info, build] : registry())
    if (info.name == name) return build(params.is_null() ? nlohmann::json::object() : params);
  throw ConfigurationError("unknown scenario '" + name + "'");
}

bool ScenarioReport::all_matched() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.matched; });
}

nlohmann::json ScenarioReport::to_json() const {
  nlohmann::json j{{"scenario", name}, {"params", params}, {"matched", all_matched()}};
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) j["checks"].push_back(c.to_json());
  return j;
}

ScenarioReport run_scenario(const ScenarioBundle& bundle, const MonteCarloPlan& plan) {
  plan.validate();
  ScenarioReport rep;
  rep.name = bundle.name;
  rep.params = bundle.params;
  for (const auto& v : bundle.expected) {
    try {
      rep.checks.push_back(bundle.evaluate(v, plan));
    } catch (const Error& e) {
      CheckResult r;
      r.spec = v;
      r.verdict = "error";
      r.details = {{"error", e.what()}};
      rep.checks.push_back(std::move(r));
    }
  }
  return rep;
}

nlohmann::json problem_to_json(const TeamProblem& p) {
  nlohmann::json j{{"N", p.dms()}, {"label", p.label}};
  j["primitives"] = nlohmann::json::array();
  for (const auto& v : p.primitives.variables()) {
    auto d = v.dist.to_json();
    j["primitives"].push_back({{"name", v.name}, {"dist", d["dist"]}, {"params", d["params"]}, {"dim", d["dim"]}});
  }
  j["measurements"] = nlohmann::json::array();
  for (const auto& m : p.measurements) {
    auto reads = nlohmann::json::array();
    for (const auto& r : m.reads) reads.push_back(p.signal_name(r));
    j["measurements"].push_back({{"dm", m.dm + 1}, {"reads", reads}, {"dim", m.dim}, {"kind", m.spec}});
  }
  auto I = nlohmann::json::array();
  for (const auto& row : p.info) {
    auto names = nlohmann::json::array();
    for (const auto& s : row) names.push_back(p.signal_name(s));
    I.push_back(names);
  }
  j["info"] = {{"I", I}};
  j["cost"] = p.cost.spec;
  j["action_spaces"] = nlohmann::json::array();
  for (const auto& a : p.action_spaces) {
    auto bound = [](const Vector& v) {
      auto out = nlohmann::json::array();
      for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(std::isfinite(v(k)) ? nlohmann::json(v(k)) : nlohmann::json());
      return out;
    };
    j["action_spaces"].push_back({{"lower", bound(a.lower)}, {"upper", bound(a.upper)}});
  }
  return j;
}

nlohmann::json export_scenario(const ScenarioBundle& b) {
  nlohmann::json j{{"schema", 1}, {"scenario", b.name}, {"params", b.params}};
  if (b.problem) j["problem"] = problem_to_json(*b.problem);
  if (b.reduced) {
    auto refs = nlohmann::json::array();
    for (std::size_t i = 0; i < b.reduced->refs().factors.size(); ++i)
      refs.push_back({{"dm", i + 1}, {"Q", b.reduced->refs().factors[i].reference.to_json()},
                      {"f", b.reduced->refs().factors[i].kind}});
    j["refs"] = refs;
  }
  if (b.lqg) j["lqg"] = b.lqg->to_json();
  if (b.multistage) j["multistage"] = multistage_to_json(*b.multistage);
  j["policies"] = nlohmann::json::object();
  for (const auto& [k, p] : b.policies) j["policies"][k] = policy_to_json(p);
  for (const auto& [k, p] : b.multi_policies) j["policies"][k] = multipolicy_to_json(p);
  j["expected"] = nlohmann::json::array();
  for (const auto& e : b.expected)
    j["expected"].push_back({{"id", e.id}, {"form", e.form}, {"policy", e.policy}, {"expected", e.expected},
                             {"citation", e.citation}});
  return j;
}

std::vector<std::string> validate_scenario_json(const nlohmann::json& j) {
  std::vector<std::string> errs;
  if (!j.is_object() || !j.contains("scenario")) return {"missing 'scenario'"};
  if (j.value("schema", 0) != 1) errs.emplace_back("unsupported schema (expected 1)");
  const auto name = j.at("scenario").get<std::string>();
  // The exported params also echo fixed distributions; keep the tunable ones.
  nlohmann::json params = nlohmann::json::object();
  for (const auto& info : scenario_catalogue())
    if (info.name == name && j.contains("params") && j["params"].is_object())
      for (const auto& [k, v] : j["params"].items())
        if (info.defaults.contains(k)) params[k] = v;
  const auto bundle = build_scenario(name, params);
  const auto fresh = export_scenario(bundle);
  for (const char* key : {"problem", "refs", "lqg", "multistage", "policies", "expected"}) {
    const bool a = j.contains(key), b = fresh.contains(key);
    if (a != b)
      errs.push_back(std::string("field '") + key + (a ? "' is not produced by the builtin scenario" : "' is missing"));
    else if (a && j.at(key) != fresh.at(key))
      errs.push_back(std::string("field '") + key + "' differs from the builtin scenario");
  }
  return errs;
}

MultiStageConfig multistage_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("scenario")) throw ConfigurationError("multistage config needs 'scenario'");
  const auto name = j.at("scenario").get<std::string>();
  if (name != "example6_ms" && name != "example7_ms")
    throw ConfigurationError("multistage config: builtin families are example6_ms and example7_ms");
  MultiStageConfig cfg{build_scenario(name, j.value("params", nlohmann::json::object())), {}};
  const auto pol = j.value("policy", std::string(name == "example6_ms" ? "reference" : "zero"));
  const auto it = cfg.bundle.multi_policies.find(pol);
  if (it == cfg.bundle.multi_policies.end()) throw ConfigurationError("multistage config: unknown policy '" + pol + "'");
  cfg.policy = it->second;
  return cfg;
}

std::unique_ptr<MultiStageModel> reduced_multistage(const ScenarioBundle& b) {
  if (!b.multistage) throw ConfigurationError("scenario '" + b.name + "' is not multistage");
  if (b.name == "example6_ms")
    return std::make_unique<ReducedMultiStage>(*b.multistage, example6_densities(*b.multistage, b.params.value("coupling", 0.0)));
  Example7Params ps;
  ps.a = b.params.value("a", ps.a);
  ps.b = b.params.value("b", ps.b);
  ps.ref_var = b.params.value("ref_var", ps.ref_var);
  return std::make_unique<ReducedMultiStage>(*b.multistage, std::nullopt, example7_references(*b.multistage, ps));
}

}  // namespace teamred
