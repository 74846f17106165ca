// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "teamred/errors.hpp"
#include "teamred/lqg.hpp"
#include "teamred/multistage.hpp"
#include "teamred/optimality.hpp"
#include "teamred/scenarios.hpp"
#include "test_support.hpp"

#ifndef TEAMRED_CLI_PATH
#error "TEAMRED_CLI_PATH must name the CLI binary"
#endif

namespace tr = teamred;
using tr::testing::row;
using tr::testing::v1;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("failed: " + what);
    }
  }
};

tr::CheckResult run_check(const tr::ScenarioBundle& b, const std::string& id, const std::string& form,
                          const std::string& policy, const tr::MonteCarloPlan& plan) {
  for (const auto& e : b.expected)
    if (e.id == id && e.form == form && e.policy == policy) return b.evaluate(e, plan);
  throw tr::ConfigurationError(b.name + " declares no check " + id + "/" + form + "/" + policy);
}

bool verdict_is(const tr::ScenarioBundle& b, const std::string& id, const std::string& form,
                const std::string& policy, const std::string& want, const tr::MonteCarloPlan& plan) {
  return run_check(b, id, form, policy, plan).verdict == want;
}

tr::DynamicModel form_model(const tr::ScenarioBundle& b, tr::Form form) {
  return tr::DynamicModel(tr::make_form(*b.problem, *b.inverse, {form, {}}), tr::to_string(form));
}

double profile_c2(const tr::ScenarioBundle& b, tr::Form form, const std::string& policy, std::size_t dm) {
  const auto dirs = tr::TestDirectionFamily::constants(1);
  const std::vector<double> ts{-2.0, -1.0, 1.0, 2.0};
  return tr::frozen_cost_profile(form_model(b, form), b.policies.at(policy), dm, dirs[0], ts,
                                 tr::MonteCarloPlan::exact_plan(12))
      .c2;
}

const tr::MonteCarloPlan kPlan{20000, 42};

Outcome criterion1() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto toy = tr::build_scenario("finite_toy");
  tr::CounterRng rng(tr::mix64(42, 0x7011));
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    std::map<std::vector<double>, tr::Vector> t1, t2;
    for (int a = -1; a <= 1; ++a) {
      t1[{double(a)}] = v1(static_cast<double>(rng() % 3) - 1.0);
      for (int c = -1; c <= 1; ++c) t2[{double(a), double(c)}] = v1(static_cast<double>(rng() % 3) - 1.0);
    }
    const tr::Policy p({tr::PolicyEntry::tabular(1, 1, t1), tr::PolicyEntry::tabular(2, 1, t2)});
    const double jd = tr::evaluate_cost(*toy.problem, p, tr::MonteCarloPlan::exact_plan()).mean;
    const double jr = tr::evaluate_cost_reduced(*toy.reduced, p, tr::MonteCarloPlan::exact_plan()).mean;
    worst = std::max(worst, std::abs(jd - jr));
  }
  o.require(worst <= 1e-12, "finite_toy exact invariance");
  o.notes.push_back("finite_toy max |J_D - J_PI| = " + std::to_string(worst));
  const tr::MonteCarloPlan big{100000, 42};
  for (const char* name : {"example1", "example2"})
    o.require(verdict_is(tr::build_scenario(name), "cost_invariance", "PI", "gamma_star_and_random", "pass", big),
              std::string(name) + " invariance within 3 SE");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(secs < 10.0, "runtime under 10 s");
  o.notes.push_back("runtime " + std::to_string(secs) + " s");
  return o;
}

Outcome criterion2() {
  Outcome o;
  const auto b = tr::build_scenario("example1");
  o.require(verdict_is(b, "pbp", "S", "gamma_star", "pass", kPlan), "S-form pbp");
  const auto br = tr::best_response(form_model(b, tr::Form::D), b.policies.at("gamma_star_transported"), 0, kPlan);
  o.require(br.unbounded_below, "D-form DM 1 best response unbounded below");
  const auto dirs = tr::TestDirectionFamily::constants(1);
  const std::vector<double> ts{1.0, 2.0, 4.0};
  const auto prof = tr::frozen_cost_profile(form_model(b, tr::Form::D), b.policies.at("gamma_star_transported"), 0,
                                            dirs[0], ts, tr::MonteCarloPlan::exact_plan(12));
  for (std::size_t k = 0; k < ts.size(); ++k)
    o.require(std::abs(prof.js[k] + 0.5 * ts[k] * ts[k]) <= 1e-9, "J(u1 = " + std::to_string(ts[k]) + ") = -alpha t^2");
  o.require(verdict_is(b, "stationarity", "D", "gamma_star_transported", "pass", kPlan), "D-form stationarity");
  return o;
}

Outcome criterion3() {
  Outcome o;
  const auto b = tr::build_scenario("example2", {{"alpha", 0.5}, {"beta", 2.0}});
  o.require(verdict_is(b, "pbp", "D", "gamma_star", "pass", kPlan), "D-form pbp");
  const auto rep = tr::pbp_check(form_model(b, tr::Form::S), b.policies.at("gamma_star_transported"), kPlan);
  const auto& r1 = rep.responses.at(0);
  o.require(!rep.pass && (r1.unbounded_below || r1.improvement > rep.tol), "S-form pbp fails at DM 1");
  const double c1 = profile_c2(b, tr::Form::D, "gamma_star", 0);
  const double c2 = profile_c2(b, tr::Form::D, "gamma_star", 1);
  const double c3 = profile_c2(b, tr::Form::S, "gamma_star_transported", 0);
  o.require(std::abs(c1 - 2.5) <= 1e-6, "curvature alpha+beta");
  o.require(std::abs(c2 - 1.0) <= 1e-6, "curvature beta-1");
  o.require(std::abs(c3 + 0.5) <= 1e-6, "curvature alpha-1");
  std::ostringstream s;
  s << "curvatures " << c1 << ", " << c2 << ", " << c3;
  o.notes.push_back(s.str());
  return o;
}

Outcome criterion4() {
  Outcome o;
  const auto b = tr::build_scenario("example3");
  const auto est = tr::directional_derivatives(form_model(b, tr::Form::S), b.policies.at("gamma_star_transported"), 0,
                                               tr::TestDirectionFamily::constants(1), tr::MonteCarloPlan::exact_plan());
  o.require(std::abs(est.at(0).mean - 1.0) <= 1e-6, "S-form residual equals 1");
  o.notes.push_back("S-form residual " + std::to_string(est.at(0).mean));
  o.require(verdict_is(b, "stationarity", "D", "gamma_star", "pass", kPlan), "D-form stationarity");
  return o;
}

Outcome criterion5() {
  Outcome o;
  const auto b = tr::build_scenario("example4");
  const auto alphas = tr::alpha_grid();
  const auto d = tr::convexity_in_policies_check(form_model(b, tr::Form::D), b.policies.at("gamma"),
                                                 b.policies.at("gamma_prime"), alphas, kPlan);
  o.require(d.max_violation > 0.01 && d.witness, "D-form chord violation above 0.01");
  std::ostringstream s;
  s << "D violation " << d.max_violation << " at alpha " << d.max_violation_alpha << " (c1 = 0, c2 = 0.1)";
  o.notes.push_back(s.str());
  const auto cs = tr::convexity_in_policies_check(form_model(b, tr::Form::CS), b.policies.at("gamma_cs"),
                                                  b.policies.at("gamma_prime_cs"), alphas, kPlan);
  bool clean = true;
  for (const auto& p : cs.points) clean = clean && p.violation <= 3.0 * p.std_error + 1e-12;
  o.require(clean && !cs.witness, "CS form has no violation beyond 3 SE");
  return o;
}

Outcome criterion6() {
  Outcome o;
  // Static scalar pair: H1 = H2 = 1, Sigma = 1, R = I, S = (1, 1)'.
  tr::LqgTeam t;
  t.sigma_zeta = tr::Matrix::Identity(1, 1);
  t.H = {tr::Matrix::Ones(1, 1), tr::Matrix::Ones(1, 1)};
  t.action_dims = {1, 1};
  t.Q = tr::Matrix::Identity(1, 1);
  t.R = tr::Matrix::Identity(2, 2);
  t.S = tr::Matrix::Ones(2, 1);
  auto g = tr::solve_static_gains(t).gains;
  const double s0 = g.G[0](0, 0), s1 = g.G[1](0, 0);
  auto J = [&](double a, double bb) {
    g.G[0](0, 0) = a;
    g.G[1](0, 0) = bb;
    return tr::exact_cost(t, g, tr::LqgForm::S);
  };
  double c0 = 0.0, c1 = 0.0, h = 0.5;
  for (int level = 0; level < 12; ++level, h /= 10.0) {
    double best = INFINITY, b0 = c0, b1 = c1;
    for (int i = -20; i <= 20; ++i)
      for (int j = -20; j <= 20; ++j)
        if (const double v = J(c0 + i * h, c1 + j * h); v < best) best = v, b0 = c0 + i * h, b1 = c1 + j * h;
    c0 = b0, c1 = b1;
  }
  o.require(std::abs(s0 - c0) <= 1e-6 && std::abs(s1 - c1) <= 1e-6, "linear solve matches nested grid");

  // The same pair with a mixing term B21 = 5 for the transport steps.
  tr::LqgTeam m;
  m.sigma_zeta = tr::Matrix::Identity(2, 2);
  m.H = {row({1, 0}), row({0, 1})};
  m.B[{1, 0}] = tr::Matrix::Constant(1, 1, 5.0);
  m.action_dims = {1, 1};
  m.Q = tr::Matrix::Identity(2, 2);
  m.R = tr::Matrix::Identity(2, 2);
  m.S = tr::Matrix::Identity(2, 2);
  const auto gains = tr::transport_gains_G_to_K(m, tr::solve_static_gains(m).gains);
  const auto d = tr::lqg_problem(m);
  const auto sform = tr::make_form(d, tr::lqg_inverse(m), {tr::Form::S, {}});
  const auto pd = tr::lqg_policy(m, gains, tr::LqgForm::D);
  const auto ps = tr::lqg_policy(m, gains, tr::LqgForm::S);
  tr::CounterRng rng(tr::mix64(42, 0x6));
  double sup = 0.0;
  for (int n = 0; n < 10000; ++n) {
    const auto smp = d.primitives.sample(rng);
    const auto a = tr::simulate_path(d, pd, smp);
    const auto bpath = tr::simulate_path(sform, ps, smp);
    for (std::size_t i = 0; i < 2; ++i) sup = std::max(sup, (a.actions[i] - bpath.actions[i]).cwiseAbs().maxCoeff());
  }
  o.require(sup <= 1e-9, "pathwise action identity");
  const double gap = std::abs(tr::exact_cost(m, gains, tr::LqgForm::S) - tr::exact_cost(m, gains, tr::LqgForm::D));
  o.require(gap <= 1e-10, "exact cost of (G, K) agrees");
  const auto st = tr::stationarity_check(tr::DynamicModel(sform, "S"), ps, tr::MonteCarloPlan::exact_plan());
  double worst = 0.0;
  for (const auto& dm : st.dms)
    for (const auto& r : dm.residuals) worst = std::max(worst, std::abs(r.residual));
  o.require(worst <= 1e-8, "S-form stationarity residuals");
  o.require(tr::pbp_check(tr::DynamicModel(d, "D"), pd, kPlan).pass, "D-form affine pbp");
  std::ostringstream s;
  s << "sup action gap " << sup << ", cost gap " << gap << ", max residual " << worst;
  o.notes.push_back(s.str());
  return o;
}

Outcome criterion7() {
  Outcome o;
  o.require(verdict_is(tr::build_scenario("example2"), "pbp", "D-CS", "gamma_star_lifted", "pass", kPlan),
            "lifted Example 2 policy is pbp in D-CS");
  o.require(verdict_is(tr::build_scenario("example1"), "pbp", "D", "gamma_cs_restricted", "fail", kPlan),
            "restricted Example 1 CS policy fails pbp");
  return o;
}

Outcome criterion8() {
  Outcome o;
  const auto gap = tr::testing::example6_weight_gap(0.7, 200, 42);
  o.require(gap.max_rel_ratio_gap <= 1e-10, "weight equals joint Gaussian density ratio");
  o.notes.push_back("max relative weight gap " + std::to_string(gap.max_rel_ratio_gap));

  // AG-wise pass implies DM-wise pass wherever both were evaluated.
  for (const char* name : {"example6_ms", "example7_ms"}) {
    const auto rep = tr::run_scenario(tr::build_scenario(name), kPlan);
    for (const auto& ag : rep.checks) {
      if (ag.spec.id != "agwise_pbp" || ag.verdict != "pass") continue;
      for (const auto& dm : rep.checks)
        if (dm.spec.id == "dmwise_pbp" && dm.spec.form == ag.spec.form && dm.spec.policy == ag.spec.policy)
          o.require(dm.verdict == "pass", std::string(name) + " AG pass implies DM pass (" + ag.spec.form + ")");
    }
    if (std::string(name) == "example6_ms")
      for (const auto& c : rep.checks)
        if (c.spec.id == "certify_agwise") o.require(c.verdict == "certified", "Example 6 certified");
  }

  const std::vector<double> grid{-1.0, 0.0, 1.0};
  const auto trap = tr::find_coordinate_trap(grid, grid);
  o.require(trap.has_value(), "coordinate trap found");
  if (trap) {
    const auto team = tr::coordinate_trap_team(*trap);
    const tr::DirectMultiStage model(team);
    tr::MultiBestResponseOptions opt;
    opt.cls = tr::MultiClass::grid;
    for (double x : grid) opt.action_grid.push_back(v1(x));
    const auto exact = tr::MonteCarloPlan::exact_plan(1);
    const auto pol = tr::constant_policy(team, {{v1(trap->u0)}, {v1(trap->u1)}});
    o.require(tr::dmwise_pbp_check(model, pol, exact, opt).pass, "trap passes DM-wise");
    o.require(!tr::agwise_pbp_check(model, pol, exact, opt).pass, "trap fails AG-wise");
    o.require(tr::certify_agwise_global(model, pol, exact, opt).verdict() == "inconclusive", "trap inconclusive");
    for (double x : grid)
      for (double y : grid) {
        const auto p = tr::constant_policy(team, {{v1(x)}, {v1(y)}});
        if (tr::agwise_pbp_check(model, p, exact, opt).pass)
          o.require(tr::dmwise_pbp_check(model, p, exact, opt).pass, "trap grid AG pass implies DM pass");
      }
    o.notes.push_back("trap " + trap->to_json().dump());
  }
  return o;
}

nlohmann::json read_report(const std::filesystem::path& p) {
  std::ifstream in(p);
  auto j = nlohmann::json::parse(in);
  j.erase("timestamp");
  return j;
}

// Largest numeric difference between two JSON documents of the same shape; inf if shapes differ.
double max_numeric_gap(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return std::abs(a.get<double>() - b.get<double>());
  if (a.type() != b.type() || a.size() != b.size()) return INFINITY;
  if (a.is_object()) {
    double g = 0.0;
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key())) return INFINITY;
      g = std::max(g, max_numeric_gap(*it, b.at(it.key())));
    }
    return g;
  }
  if (a.is_array()) {
    double g = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) g = std::max(g, max_numeric_gap(a[k], b[k]));
    return g;
  }
  return a == b ? 0.0 : INFINITY;
}

Outcome criterion9() {
  Outcome o;
  const auto dir = std::filesystem::temp_directory_path() / ("teamred_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  auto run = [&](const std::string& env, const std::string& out) {
    const std::string cmd = env + " '" + std::string(TEAMRED_CLI_PATH) + "' verify --all --seed 42 --out '" +
                            (dir / out).string() + "' > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  const int r1 = run("", "a.json");
  const int r2 = run("", "b.json");
  const int r3 = run("TEAMRED_THREADS=3", "c.json");
  o.require(r1 == 0 && r2 == 0 && r3 == 0, "verify --all exits 0");
  if (o.pass) {
    const auto a = read_report(dir / "a.json"), b = read_report(dir / "b.json"), c = read_report(dir / "c.json");
    o.require(a.dump(2) == b.dump(2), "repeat run is byte-identical");
    const double g = max_numeric_gap(a, c);
    o.require(g <= 1e-12, "thread count changes no value beyond 1e-12");
    std::ostringstream s;
    s << "max gap across thread counts " << g;
    o.notes.push_back(s.str());
  }
  std::filesystem::remove_all(dir);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"cost invariance under the policy-independent reduction", criterion1},
      {"Example 1 verdict pattern", criterion2},
      {"Example 2 verdict pattern and curvatures", criterion3},
      {"Example 3 stationarity residual", criterion4},
      {"Example 4 convexity in policies", criterion5},
      {"LQG pipeline", criterion6},
      {"control-sharing embedding", criterion7},
      {"multistage weights, AG/DM implication, trap and certificates", criterion8},
      {"reproducibility of verify --all", criterion9},
  };
  bool all = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("error: ") + e.what());
    }
    all = all && o.pass;
    std::cout << "criterion " << k + 1 << ": " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[k].first << "\n";
    for (const auto& n : o.notes) std::cout << "    " << n << "\n";
    std::cout.flush();
  }
  return all ? 0 : 1;
}
