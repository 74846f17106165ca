#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "teamred/errors.hpp"
#include "teamred/lqg.hpp"
#include "teamred/multistage.hpp"
#include "teamred/optimality.hpp"
#include "teamred/policy.hpp"
#include "teamred/reduction_dependent.hpp"
#include "teamred/reduction_independent.hpp"
#include "teamred/scenarios.hpp"

namespace {

using nlohmann::json;
using namespace teamred;

constexpr int kOk = 0;
constexpr int kMismatch = 1;
constexpr int kConfig = 2;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigurationError("'" + path + "': " + e.what());
  }
}

json parse_params(const std::string& text) {
  if (text.empty()) return json::object();
  try {
    auto j = json::parse(text);
    if (!j.is_object()) throw ConfigurationError("--params must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigurationError(std::string("--params: ") + e.what());
  }
}

void emit(const json& report, const std::string& out) {
  const auto text = report.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(out);
  if (!f) throw ConfigurationError("cannot write '" + out + "'");
  f << text;
}

json report_header(const std::string& command, const MonteCarloPlan& plan, const std::string& scenario) {
  return json{{"schema", 1}, {"command", command}, {"seed", plan.seed}, {"samples", plan.samples},
              {"scenario", scenario}};
}

struct PlanArgs {
  std::size_t samples = 20000;
  std::uint64_t seed = 42;

  MonteCarloPlan plan() const {
    MonteCarloPlan p;
    p.samples = samples;
    p.seed = seed;
    p.validate();
    return p;
  }
};

void add_plan_flags(CLI::App* cmd, PlanArgs& args) {
  cmd->add_option("--samples", args.samples, "Monte Carlo samples")->capture_default_str();
  cmd->add_option("--seed", args.seed, "Base seed")->capture_default_str();
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  PlanArgs plan;
  std::string scenario;
  bool all = false;
  std::string params;
  std::string out;
  std::string csv;
};

void write_csv(const std::vector<ScenarioReport>& reports, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigurationError("cannot write '" + path + "'");
  f << "scenario,check,dm,direction,residual,se\n";
  f.precision(17);
  for (const auto& rep : reports)
    for (const auto& c : rep.checks)
      for (const auto& r : c.rows)
        f << rep.name << ',' << r.check << ',' << r.dm << ',' << r.direction << ',' << r.residual << ',' << r.se
          << '\n';
}

int run_verify(const VerifyArgs& a) {
  const auto plan = a.plan.plan();
  if (a.all == !a.scenario.empty()) throw ConfigurationError("verify needs exactly one of --scenario or --all");
  std::vector<ScenarioReport> reports;
  if (a.all) {
    for (const auto& info : scenario_catalogue()) reports.push_back(run_scenario(build_scenario(info.name), plan));
  } else {
    reports.push_back(run_scenario(build_scenario(a.scenario, parse_params(a.params)), plan));
  }

  auto report = report_header("verify", plan, a.all ? "all" : a.scenario);
  report["scenarios"] = json::array();
  report["checks"] = json::array();
  bool matched = true;
  for (const auto& rep : reports) {
    report["scenarios"].push_back({{"name", rep.name}, {"params", rep.params}, {"matched", rep.all_matched()}});
    for (const auto& c : rep.checks) {
      auto j = c.to_json();
      j["scenario"] = rep.name;
      report["checks"].push_back(std::move(j));
    }
    matched = matched && rep.all_matched();
  }
  report["matched"] = matched;
  report["timestamp"] = utc_timestamp();
  emit(report, a.out);
  if (!a.csv.empty()) write_csv(reports, a.csv);

  for (const auto& rep : reports)
    for (const auto& c : rep.checks)
      if (!c.matched)
        std::cerr << "mismatch: " << rep.name << " " << c.spec.id << " [" << c.spec.form << "] expected "
                  << c.spec.expected << ", got " << c.verdict << "\n";
  return matched ? kOk : kMismatch;
}

// ---------------------------------------------------------------- reduce

struct ReduceArgs {
  PlanArgs plan;
  std::string scenario;
  std::string params;
  std::string form = "s";
  std::string policy;
  std::string out;
};

int run_reduce(const ReduceArgs& a) {
  const auto plan = a.plan.plan();
  const auto bundle = build_scenario(a.scenario, parse_params(a.params));
  if (!bundle.problem) throw ConfigurationError("scenario '" + a.scenario + "' has no single-stage problem");
  const TeamProblem& d = *bundle.problem;
  std::optional<Policy> policy;
  if (!a.policy.empty()) policy = policy_from_json(read_json_file(a.policy));

  auto report = report_header("reduce", plan, a.scenario);
  report["form"] = a.form;
  if (a.form == "pi") {
    if (!bundle.reduced) throw UnsupportedForm("scenario '" + a.scenario + "' declares no reference measures");
    const auto exported = export_scenario(bundle);
    report["problem"] = problem_to_json(d);
    report["refs"] = exported.at("refs");
    report["retained"] = bundle.reduced->retained();
    if (policy) {
      // The policy is unchanged; the tilted cost must agree with the original.
      const auto jd = evaluate_cost(d, *policy, plan.with_stream(1));
      const auto jr = evaluate_cost_reduced(*bundle.reduced, *policy, plan.with_stream(2));
      report["policy"] = policy_to_json(*policy);
      report["cost"] = {{"dynamic", jd.mean}, {"dynamic_se", jd.std_error},
                        {"reduced", jr.mean}, {"reduced_se", jr.std_error}};
    }
  } else {
    if (!bundle.inverse) throw UnsupportedForm("scenario '" + a.scenario + "' declares no invertible observation");
    const Form form = form_from_string(a.form == "pd" ? "s" : a.form);
    const auto made = make_form(d, *bundle.inverse, {form, std::nullopt});
    report["problem"] = problem_to_json(made);
    if (policy) {
      Policy out = *policy;
      if (form == Form::S) out = transport_policy_D_to_S(d, *bundle.inverse, *policy);
      if (form == Form::CS)
        out = transport_policy_D_to_S(make_form(d, *bundle.inverse, {Form::DCS, std::nullopt}), *bundle.inverse, *policy);
      report["policy"] = policy_to_json(simplify_affine(out));
    }
  }
  report["timestamp"] = utc_timestamp();
  emit(report, a.out);
  return kOk;
}

// ---------------------------------------------------------------- lqg

struct LqgArgs {
  std::string config;
  std::string out;
};

int run_lqg(const LqgArgs& a) {
  auto cfg = read_json_file(a.config);
  const auto team = LqgTeam::from_json(cfg.contains("lqg") ? cfg.at("lqg") : cfg);
  team.validate();
  const auto solved = solve_static_gains(team);
  auto gains = transport_gains_G_to_K(team, solved.gains);
  const auto iterative = solve_static_gains_iterative(team);
  double gap = 0.0;
  for (std::size_t i = 0; i < team.dms(); ++i)
    gap = std::max(gap, (iterative.G[i] - solved.gains.G[i]).cwiseAbs().maxCoeff());
  const double js = exact_cost(team, gains, LqgForm::S);
  const double jd = exact_cost(team, gains, LqgForm::D);

  json report{{"schema", 1}, {"command", "lqg"}, {"config", a.config}};
  report["team"] = team.to_json();
  report["gains"] = gains.to_json(team);
  report["relative_residual"] = solved.relative_residual;
  report["iterative_gap"] = gap;
  report["cost"] = {{"static", js}, {"dynamic", jd}, {"difference", js - jd}};
  report["timestamp"] = utc_timestamp();
  emit(report, a.out);
  return solved.relative_residual <= 1e-8 ? kOk : kMismatch;
}

// ---------------------------------------------------------------- multistage

struct MultiArgs {
  PlanArgs plan;
  std::string config;
  std::string check = "agpbp";
  std::string out;
};

// Expected verdict for (id, form, policy) declared by the scenario, if any.
std::optional<std::string> declared(const ScenarioBundle& b, const std::string& id, const std::string& form,
                                    const std::string& policy) {
  for (const auto& e : b.expected)
    if (e.id == id && e.form == form && e.policy == policy) return e.expected;
  return std::nullopt;
}

int run_multistage(const MultiArgs& a) {
  const auto plan = a.plan.plan();
  const auto cfg_json = read_json_file(a.config);
  const auto cfg = multistage_from_json(cfg_json);
  const auto& bundle = cfg.bundle;
  const std::string policy_name =
      cfg_json.value("policy", std::string(bundle.name == "example6_ms" ? "reference" : "zero"));
  DirectMultiStage direct(*bundle.multistage);
  const auto reduced = reduced_multistage(bundle);

  auto report = report_header("multistage", plan, bundle.name);
  report["params"] = bundle.params;
  report["policy"] = policy_name;
  report["check"] = a.check;
  report["checks"] = json::array();
  bool matched = true;
  auto record = [&](const std::string& id, const std::string& form, const std::string& verdict, json details) {
    json c{{"id", id}, {"form", form}, {"verdict", verdict}, {"details", std::move(details)}};
    if (const auto exp = declared(bundle, id, form, policy_name)) {
      c["expected"] = *exp;
      c["matched"] = *exp == verdict;
      matched = matched && *exp == verdict;
    }
    report["checks"].push_back(std::move(c));
  };

  const std::vector<std::pair<const MultiStageModel*, std::string>> models{{&direct, "dynamic"},
                                                                           {reduced.get(), reduced->form()}};
  if (a.check == "agpbp" || a.check == "dmpbp") {
    const bool ag = a.check == "agpbp";
    for (const auto& [model, form] : models) {
      const auto rep = ag ? agwise_pbp_check(*model, cfg.policy, plan) : dmwise_pbp_check(*model, cfg.policy, plan);
      record(ag ? "agwise_pbp" : "dmwise_pbp", form, rep.pass ? "pass" : "fail", rep.to_json());
    }
  } else if (a.check == "weights") {
    const auto est = integrate(reduced->sampling_space(), plan.with_stream(0x33), 1,
                               [&](const PrimitiveSample& s, std::size_t, std::span<double> o) {
                                 o[0] = reduced->run(s, cfg.policy).weight;
                               })[0];
    const bool ok = std::abs(est.mean - 1.0) <= 3.0 * est.std_error + 1e-12;
    record("weight_normalization", reduced->form(), ok ? "pass" : "fail",
           {{"mean", est.mean}, {"std_error", est.std_error}});
    const auto jd = multistage_cost(direct, cfg.policy, plan.with_stream(0x31));
    const auto jr = multistage_cost(*reduced, cfg.policy, plan.with_stream(0x32));
    const double se = std::hypot(jd.std_error, jr.std_error);
    record("cost_agreement", reduced->form(), std::abs(jd.mean - jr.mean) <= 3.0 * se ? "pass" : "fail",
           {{"dynamic", jd.mean}, {"reduced", jr.mean}, {"se", se}});
  } else if (a.check == "nested") {
    record("nested", "dynamic", check_agwise_nested(*bundle.multistage) ? "pass" : "fail", json::object());
  } else {
    throw ConfigurationError("unknown --check '" + a.check + "' (expected agpbp, dmpbp, weights or nested)");
  }
  report["matched"] = matched;
  report["timestamp"] = utc_timestamp();
  emit(report, a.out);
  return matched ? kOk : kMismatch;
}

// ---------------------------------------------------------------- list / export / validate

int run_list() {
  for (const auto& info : scenario_catalogue())
    std::cout << info.name << "  " << info.defaults.dump() << "\n    " << info.summary << "\n";
  return kOk;
}

struct ExportArgs {
  std::string scenario;
  std::string params;
  std::string out;
};

int run_export(const ExportArgs& a) {
  emit(export_scenario(build_scenario(a.scenario, parse_params(a.params))), a.out);
  return kOk;
}

int run_validate(const std::string& config) {
  const auto errs = validate_scenario_json(read_json_file(config));
  for (const auto& e : errs) std::cerr << config << ": " << e << "\n";
  if (errs.empty()) std::cout << config << ": ok\n";
  return errs.empty() ? kOk : kMismatch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Static and dynamic reductions of stochastic teams"};
  app.require_subcommand(1);

  app.add_subcommand("list", "List builtin scenarios and their default parameters");

  VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Run scenario checks against their expected verdicts");
  add_plan_flags(v, verify.plan);
  v->add_option("--scenario", verify.scenario, "Scenario name");
  v->add_flag("--all", verify.all, "Run every builtin scenario");
  v->add_option("--params", verify.params, "Scenario parameters as a JSON object");
  v->add_option("--out", verify.out, "Report path (default stdout)");
  v->add_option("--csv", verify.csv, "Residual table path");

  ReduceArgs reduce;
  auto* r = app.add_subcommand("reduce", "Emit a reduced or reformulated problem and transport a policy");
  add_plan_flags(r, reduce.plan);
  r->add_option("--scenario", reduce.scenario, "Scenario name")->required();
  r->add_option("--params", reduce.params, "Scenario parameters as a JSON object");
  r->add_option("--form", reduce.form, "pi, pd, d, s, dcs or cs")
      ->check(CLI::IsMember({"pi", "pd", "d", "s", "dcs", "cs"}))
      ->capture_default_str();
  r->add_option("--policy", reduce.policy, "Policy JSON file");
  r->add_option("--out", reduce.out, "Output path (default stdout)");

  LqgArgs lqg;
  auto* l = app.add_subcommand("lqg", "Solve static gains and transport them to the dynamic form");
  l->add_option("--config", lqg.config, "LQG team JSON")->required();
  l->add_option("--out", lqg.out, "Output path (default stdout)");

  MultiArgs multi;
  auto* m = app.add_subcommand("multistage", "Run a check on a multistage family");
  add_plan_flags(m, multi.plan);
  m->add_option("--config", multi.config, "Multistage config JSON")->required();
  m->add_option("--check", multi.check, "agpbp, dmpbp, weights or nested")
      ->check(CLI::IsMember({"agpbp", "dmpbp", "weights", "nested"}))
      ->capture_default_str();
  m->add_option("--out", multi.out, "Output path (default stdout)");

  ExportArgs exp;
  auto* e = app.add_subcommand("export", "Write a scenario bundle as JSON");
  e->add_option("--scenario", exp.scenario, "Scenario name")->required();
  e->add_option("--params", exp.params, "Scenario parameters as a JSON object");
  e->add_option("--out", exp.out, "Output path (default stdout)");

  std::string validate_path;
  auto* val = app.add_subcommand("validate", "Check a scenario JSON against the builtin bundle");
  val->add_option("--config", validate_path, "Scenario JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n\n" << app.help();
    return kConfig;
  }

  try {
    if (app.got_subcommand("list")) return run_list();
    if (app.got_subcommand(v)) return run_verify(verify);
    if (app.got_subcommand(r)) return run_reduce(reduce);
    if (app.got_subcommand(l)) return run_lqg(lqg);
    if (app.got_subcommand(m)) return run_multistage(multi);
    if (app.got_subcommand(e)) return run_export(exp);
    if (app.got_subcommand(val)) return run_validate(validate_path);
  } catch (const ConfigurationError& err) {
    std::cerr << "configuration error: " << err.what() << "\n";
    return kConfig;
  } catch (const ParameterError& err) {
    std::cerr << "parameter error: " << err.what() << "\n";
    return kConfig;
  } catch (const UnsupportedForm& err) {
    std::cerr << "unsupported form: " << err.what() << "\n";
    return kConfig;
  } catch (const json::exception& err) {
    std::cerr << "configuration error: " << err.what() << "\n";
    return kConfig;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kMismatch;
  }
  return kConfig;
}
