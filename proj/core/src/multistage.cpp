#include "teamred/multistage.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "teamred/errors.hpp"
#include "teamred/random.hpp"
#include "teamred/reduction_independent.hpp"

namespace teamred {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string stage_name(const char* base, std::size_t t) { return std::string(base) + std::to_string(t); }
std::string stage_name(const char* base, std::size_t t, std::size_t i) {
  return std::string(base) + std::to_string(t) + "_" + std::to_string(i + 1);
}

Vector signal_value(const StageSignal& s, const std::vector<std::vector<Vector>>& y, const ActionHistory& u) {
  return s.kind == StageSignal::Kind::observation ? y.at(s.t).at(s.agent) : u.at(s.t).at(s.agent);
}

// Where each input of a rollout comes from.
struct Sources {
  Vector x0;
  Vector omega0;
  std::function<Vector(std::size_t)> w;
  std::function<Vector(std::size_t, std::size_t)> v;
  const StageDensityFamily* meas = nullptr;
  std::function<Vector(std::size_t, std::size_t)> yref;
  const StateReferenceFamily* state = nullptr;
  std::function<Vector(std::size_t, std::size_t)> xref;
};

double checked_log_factor(const StageFactor& f, const StageContext& ctx) {
  const double lf = f.log_factor(ctx);
  if (std::isnan(lf) || lf == -kInf)
    throw InvariantViolation("density factor is not positive at stage " + std::to_string(ctx.t) + ", agent " +
                             std::to_string(ctx.agent + 1));
  return lf;
}

Trajectory simulate(const MultiStageTeam& team, const MultiPolicy& policy, const ActionOverride* ov,
                    const Sources& src) {
  if (policy.entries.size() != team.T) throw ConfigurationError("multistage policy: one row per stage required");
  Trajectory tr;
  tr.omega0 = src.omega0;
  tr.x.push_back(src.x0);
  for (std::size_t t = 0; t < team.T; ++t) {
    const std::span<const Vector> xs(tr.x.data(), t + 1);
    std::vector<Vector> yt(team.N);
    for (std::size_t i = 0; i < team.N; ++i) {
      if (src.meas) {
        yt[i] = src.yref(t, i);
        const StageContext ctx{t, i, yt[i], tr.omega0, xs, std::span<const std::vector<Vector>>(tr.y.data(), t), tr.u};
        tr.log_weight += checked_log_factor(src.meas->factors[t][i], ctx);
      } else {
        yt[i] = team.observation(t, i, xs, tr.u, src.v(t, i));
      }
      if (static_cast<std::size_t>(yt[i].size()) != team.obs_dims[i])
        throw ConfigurationError("observation dimension mismatch at stage " + std::to_string(t));
    }
    tr.y.push_back(std::move(yt));
    std::vector<Vector> ut(team.N);
    std::vector<Vector> it(team.N);
    for (std::size_t i = 0; i < team.N; ++i) {
      Vector info(static_cast<Eigen::Index>(team.info_dim(t, i)));
      Eigen::Index at = 0;
      for (const auto& s : team.info[t][i]) {
        if (s.kind == StageSignal::Kind::action && s.t == t)
          throw ConfigurationError("information at stage t cannot contain stage-t actions");
        const Vector val = s.kind == StageSignal::Kind::observation && s.t == t ? tr.y[t][s.agent]
                                                                                : signal_value(s, tr.y, tr.u);
        info.segment(at, val.size()) = val;
        at += val.size();
      }
      ut[i] = ov && ov->agent == i ? ov->actions.at(t) : policy.at(t, i)(info);
      if (!team.action_spaces[i].contains(ut[i], 1e-12))
        throw DomainError(i, "action of agent " + std::to_string(i + 1) + " at stage " + std::to_string(t) +
                                 " lies outside its action space");
      it[i] = std::move(info);
    }
    tr.u.push_back(std::move(ut));
    tr.info.push_back(std::move(it));
    tr.stage_costs.push_back(team.stage_cost(t, tr.omega0, tr.x[t], tr.u[t]));
    if (src.state) {
      const auto& blocks = src.state->blocks;
      Eigen::Index dim = 0;
      for (const auto& b : blocks) dim = std::max<Eigen::Index>(dim, static_cast<Eigen::Index>(b.first + b.second));
      Vector next(dim);
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        const Vector xi = src.xref(t, i);
        next.segment(static_cast<Eigen::Index>(blocks[i].first), static_cast<Eigen::Index>(blocks[i].second)) = xi;
        const StageContext ctx{t, i, xi, tr.omega0, std::span<const Vector>(tr.x.data(), t + 1),
                               std::span<const std::vector<Vector>>(tr.y.data(), t + 1), tr.u};
        tr.log_weight += checked_log_factor(src.state->factors[t][i], ctx);
      }
      tr.x.push_back(std::move(next));
    } else {
      tr.x.push_back(team.dynamics(t, tr.omega0, std::span<const Vector>(tr.x.data(), t + 1), tr.u, src.w(t)));
    }
  }
  tr.stage_costs.push_back(team.terminal_cost ? team.terminal_cost(tr.x.back()) : 0.0);
  double total = 0.0;
  for (double c : tr.stage_costs) total += c;
  if (tr.log_weight > kMaxLogWeight) throw WeightOverflow("multistage weight overflows (log weight > 700)");
  tr.weight = std::exp(tr.log_weight);
  tr.cost = total * tr.weight;
  return tr;
}

}  // namespace

std::size_t MultiStageTeam::info_dim(std::size_t t, std::size_t i) const {
  std::size_t d = 0;
  for (const auto& s : info.at(t).at(i))
    d += s.kind == StageSignal::Kind::observation ? obs_dims.at(s.agent) : action_dim(s.agent);
  return d;
}

std::vector<std::string> MultiStageTeam::validate() const {
  std::vector<std::string> errs;
  if (T == 0 || N == 0) errs.emplace_back("horizon and agent count must be positive");
  if (w.size() != T) errs.emplace_back("one dynamics noise law per stage required");
  if (v.size() != T) errs.emplace_back("one row of observation noise laws per stage required");
  for (const auto& row : v)
    if (row.size() != N) errs.emplace_back("one observation noise law per agent required");
  if (obs_dims.size() != N || action_spaces.size() != N) errs.emplace_back("per-agent dimensions missing");
  if (!dynamics || !observation || !stage_cost) errs.emplace_back("dynamics, observation and stage cost required");
  if (info.size() != T) errs.emplace_back("information sets: one row per stage required");
  for (std::size_t t = 0; t < info.size(); ++t) {
    if (info[t].size() != N) errs.emplace_back("information sets: one entry per agent required");
    for (const auto& row : info[t])
      for (const auto& s : row) {
        if (s.agent >= N) errs.emplace_back("information sets: unknown agent");
        const bool causal = s.kind == StageSignal::Kind::observation ? s.t <= t : s.t < t;
        if (!causal) errs.emplace_back("information sets: signal from the future at stage " + std::to_string(t));
      }
  }
  return errs;
}

MultiPolicy MultiPolicy::with_entry(std::size_t t, std::size_t i, PolicyEntry e) const {
  MultiPolicy p = *this;
  p.entries.at(t).at(i) = std::move(e);
  return p;
}

MultiPolicy MultiPolicy::zero(const MultiStageTeam& team) {
  MultiPolicy p;
  for (std::size_t t = 0; t < team.T; ++t) {
    std::vector<PolicyEntry> row;
    for (std::size_t i = 0; i < team.N; ++i) row.push_back(PolicyEntry::zero(team.info_dim(t, i), team.action_dim(i)));
    p.entries.push_back(std::move(row));
  }
  return p;
}

DirectMultiStage::DirectMultiStage(MultiStageTeam team) : team_(std::move(team)) {
  if (auto errs = team_.validate(); !errs.empty()) throw ConfigurationError("multistage team: " + errs.front());
  space_.add("x0", team_.x0);
  for (std::size_t t = 0; t < team_.T; ++t) space_.add(stage_name("w", t), team_.w[t]);
  for (std::size_t t = 0; t < team_.T; ++t)
    for (std::size_t i = 0; i < team_.N; ++i) space_.add(stage_name("v", t, i), team_.v[t][i]);
  if (team_.omega0) space_.add("omega0", *team_.omega0);
}

Trajectory DirectMultiStage::run(const PrimitiveSample& s, const MultiPolicy& policy,
                                 const ActionOverride* ov) const {
  const std::size_t T = team_.T, N = team_.N;
  Sources src;
  src.x0 = s[0];
  src.omega0 = team_.omega0 ? s[1 + T + T * N] : Vector();
  src.w = [&](std::size_t t) { return s[1 + t]; };
  src.v = [&](std::size_t t, std::size_t i) { return s[1 + T + t * N + i]; };
  return simulate(team_, policy, ov, src);
}

Trajectory rollout(const MultiStageTeam& team, const MultiPolicy& policy, const PrimitiveSample& sample) {
  return DirectMultiStage(team).run(sample, policy);
}

StageDensityFamily gaussian_additive_densities(const MultiStageTeam& team, StageMean hhat) {
  StageDensityFamily fam;
  for (std::size_t t = 0; t < team.T; ++t) {
    std::vector<StageFactor> row;
    for (std::size_t i = 0; i < team.N; ++i) {
      const Distribution& noise = team.v[t][i];
      if (!noise.is_gaussian() || noise.as_gaussian().mean.cwiseAbs().maxCoeff() != 0.0)
        throw ConfigurationError("Gaussian-additive densities need zero-mean Gaussian observation noise");
      row.push_back({noise, [noise, hhat](const StageContext& c) {
                       return noise.log_density(c.value - hhat(c.t, c.agent, c.x, c.u)) - noise.log_density(c.value);
                     }});
    }
    fam.factors.push_back(std::move(row));
  }
  return fam;
}

StageDensityFamily identity_densities(const MultiStageTeam& team) {
  StageDensityFamily fam;
  for (std::size_t t = 0; t < team.T; ++t) {
    std::vector<StageFactor> row;
    for (std::size_t i = 0; i < team.N; ++i) row.push_back({team.v[t][i], [](const StageContext&) { return 0.0; }});
    fam.factors.push_back(std::move(row));
  }
  return fam;
}

StateReferenceFamily gaussian_state_references(const MultiStageTeam& team,
                                               std::vector<std::pair<std::size_t, std::size_t>> blocks,
                                               StateMean fhat, std::vector<Distribution> references) {
  if (blocks.size() != team.N || references.size() != team.N)
    throw ConfigurationError("state references: one block and one reference per agent");
  StateReferenceFamily fam;
  fam.blocks = blocks;
  for (std::size_t t = 0; t < team.T; ++t) {
    if (!team.w[t].is_gaussian()) throw ConfigurationError("state references need Gaussian dynamics noise");
    const auto& g = team.w[t].as_gaussian();
    std::vector<StageFactor> row;
    for (std::size_t i = 0; i < team.N; ++i) {
      const auto off = static_cast<Eigen::Index>(blocks[i].first);
      const auto len = static_cast<Eigen::Index>(blocks[i].second);
      for (std::size_t k = 0; k < team.N; ++k)
        if (k != i) {
          const auto o2 = static_cast<Eigen::Index>(blocks[k].first);
          const auto l2 = static_cast<Eigen::Index>(blocks[k].second);
          if (g.cov.block(off, o2, len, l2).cwiseAbs().maxCoeff() != 0.0)
            throw ConfigurationError("state references need dynamics noise independent across agents");
        }
      const Distribution noise = Distribution::gaussian(g.mean.segment(off, len), g.cov.block(off, off, len, len));
      const Distribution ref = references[i];
      row.push_back({ref, [noise, ref, fhat](const StageContext& c) {
                       return noise.log_density(c.value - fhat(c.t, c.agent, c.omega0, c.x, c.u)) -
                              ref.log_density(c.value);
                     }});
    }
    fam.factors.push_back(std::move(row));
  }
  return fam;
}

ReducedMultiStage::ReducedMultiStage(MultiStageTeam team, std::optional<StageDensityFamily> measurement_refs,
                                     std::optional<StateReferenceFamily> state_refs)
    : team_(std::move(team)), meas_(std::move(measurement_refs)), state_(std::move(state_refs)) {
  if (auto errs = team_.validate(); !errs.empty()) throw ConfigurationError("multistage team: " + errs.front());
  if (!meas_ && !state_) throw ConfigurationError("reduced multistage model needs at least one reference family");
  const std::size_t T = team_.T, N = team_.N;
  if (meas_ && (meas_->factors.size() != T || meas_->factors[0].size() != N))
    throw ConfigurationError("measurement references: one factor per stage and agent");
  if (state_ && (state_->factors.size() != T || state_->blocks.size() != N))
    throw ConfigurationError("state references: one factor per stage and agent");
  x0_ = space_.add("x0", team_.x0);
  w_.assign(T, std::nullopt);
  v_.assign(T, std::vector<std::optional<std::size_t>>(N));
  yref_ = v_;
  xref_ = v_;
  for (std::size_t t = 0; t < T; ++t)
    if (!state_) w_[t] = space_.add(stage_name("w", t), team_.w[t]);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < N; ++i) {
      if (meas_)
        yref_[t][i] = space_.add(stage_name("ref:y", t, i), meas_->factors[t][i].reference);
      else
        v_[t][i] = space_.add(stage_name("v", t, i), team_.v[t][i]);
      if (state_) xref_[t][i] = space_.add(stage_name("ref:x", t + 1, i), state_->factors[t][i].reference);
    }
  if (team_.omega0) omega_ = space_.add("omega0", *team_.omega0);
}

std::string ReducedMultiStage::form() const {
  if (meas_ && state_) return "independent-data+agent-nested";
  return meas_ ? "independent-data" : "agent-nested";
}

Trajectory ReducedMultiStage::run(const PrimitiveSample& s, const MultiPolicy& policy,
                                  const ActionOverride* ov) const {
  Sources src;
  src.x0 = s[*x0_];
  src.omega0 = omega_ ? s[*omega_] : Vector();
  src.w = [&](std::size_t t) { return s[*w_[t]]; };
  src.v = [&](std::size_t t, std::size_t i) { return s[*v_[t][i]]; };
  if (meas_) {
    src.meas = &*meas_;
    src.yref = [&](std::size_t t, std::size_t i) { return s[*yref_[t][i]]; };
  }
  if (state_) {
    src.state = &*state_;
    src.xref = [&](std::size_t t, std::size_t i) { return s[*xref_[t][i]]; };
  }
  return simulate(team_, policy, ov, src);
}

double independent_data_weight(const MultiStageTeam& team, const StageDensityFamily& densities,
                               const Trajectory& tr) {
  double lw = 0.0;
  for (std::size_t t = 0; t < team.T; ++t)
    for (std::size_t i = 0; i < team.N; ++i) {
      const StageContext ctx{t,
                             i,
                             tr.y[t][i],
                             tr.omega0,
                             std::span<const Vector>(tr.x.data(), t + 1),
                             std::span<const std::vector<Vector>>(tr.y.data(), t),
                             tr.u};
      lw += checked_log_factor(densities.factors[t][i], ctx);
    }
  if (lw > kMaxLogWeight) throw WeightOverflow("independent-data weight overflows");
  return std::exp(lw);
}

bool check_agwise_nested(const MultiStageTeam& team) {
  for (std::size_t i = 0; i < team.N; ++i)
    for (std::size_t t = 0; t + 1 < team.T; ++t)
      for (const auto& s : team.info[t][i])
        if (std::find(team.info[t + 1][i].begin(), team.info[t + 1][i].end(), s) == team.info[t + 1][i].end())
          return false;
  return true;
}

Estimate multistage_cost(const MultiStageModel& model, const MultiPolicy& policy, const MonteCarloPlan& plan) {
  return integrate(model.sampling_space(), plan, 1,
                   [&](const PrimitiveSample& s, std::size_t, std::span<double> out) {
                     out[0] = model.run(s, policy).cost;
                   })[0];
}

PairedCosts multistage_paired_costs(const MultiStageModel& model, std::span<const MultiPolicy> policies,
                                    const MonteCarloPlan& plan) {
  const std::size_t k = policies.size();
  auto est = integrate(model.sampling_space(), plan, 2 * k,
                       [&](const PrimitiveSample& s, std::size_t, std::span<double> out) {
                         const double c0 = model.run(s, policies[0]).cost;
                         out[0] = c0;
                         out[k] = 0.0;
                         for (std::size_t j = 1; j < k; ++j) {
                           const double c = model.run(s, policies[j]).cost;
                           out[j] = c;
                           out[k + j] = c - c0;
                         }
                       });
  PairedCosts pc;
  pc.costs.assign(est.begin(), est.begin() + static_cast<std::ptrdiff_t>(k));
  pc.differences.assign(est.begin() + static_cast<std::ptrdiff_t>(k), est.end());
  return pc;
}

nlohmann::json MultiResponse::to_json() const {
  nlohmann::json j{{"agent", agent + 1}, {"method", method}, {"se", std_error}, {"unbounded_below", unbounded_below}};
  if (stage) j["stage"] = *stage;
  if (unbounded_below)
    j["improvement"] = "inf";
  else
    j["improvement"] = improvement;
  return j;
}

nlohmann::json MultiPbpReport::to_json() const {
  nlohmann::json j{{"kind", kind}, {"j", this->j}, {"tol", tol}, {"pass", pass}};
  j["responses"] = nlohmann::json::array();
  for (const auto& r : responses) j["responses"].push_back(r.to_json());
  return j;
}

namespace {

// Sample budget of the deviation search; the held-out score uses the full plan.
constexpr std::size_t kSearchSamples = 4000;

struct StageSlot {
  std::size_t t;
  std::size_t in_dim;
  std::size_t out_dim;
};

// Affine deviation over the given stages of one agent; theta is the
// concatenation of per-stage [b; vec(K)].
MultiResponse affine_deviation(const MultiStageModel& model, const MultiPolicy& policy, std::size_t agent,
                               const std::vector<StageSlot>& slots, const MonteCarloPlan& plan,
                               const MultiBestResponseOptions& options, std::uint64_t salt) {
  const auto& team = model.team();
  const auto& box = team.action_spaces[agent];
  std::vector<Eigen::Index> off{0};
  for (const auto& s : slots) off.push_back(off.back() + static_cast<Eigen::Index>(s.out_dim * (1 + s.in_dim)));
  Vector theta0 = Vector::Zero(off.back());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& e = policy.at(slots[k].t, agent);
    if (auto a = affine_probe(e); a && !e.is_clamped()) theta0.segment(off[k], off[k + 1] - off[k]) = theta_from_affine(*a);
  }
  auto build = [&](const Vector& theta) {
    MultiPolicy p = policy;
    for (std::size_t k = 0; k < slots.size(); ++k)
      p = p.with_entry(slots[k].t, agent,
                       affine_from_theta(theta.segment(off[k], off[k + 1] - off[k]), slots[k].in_dim,
                                         slots[k].out_dim, box));
    return p;
  };
  auto search_plan = plan.with_stream(salt);
  if (!plan.exact) search_plan.samples = std::min(plan.samples, kSearchSamples);
  CandidateEvaluator evaluate = [&](std::span<const Candidate> cands) {
    std::vector<MultiPolicy> ps;
    for (const auto& c : cands) ps.push_back(c ? build(*c) : policy);
    return multistage_paired_costs(model, ps, search_plan);
  };
  const auto r = minimize_parametric(static_cast<std::size_t>(off.back()), theta0, evaluate, mix64(plan.seed, salt),
                                     options.probe);
  MultiResponse out;
  out.agent = agent;
  out.method = r.method;
  out.unbounded_below = r.unbounded_below;
  if (r.unbounded_below) {
    out.improvement = kInf;
    return out;
  }
  // The search overfits its own samples; score the chosen deviation on a fresh stream.
  const std::vector<MultiPolicy> pair{policy, build(r.theta)};
  auto held_plan = plan;
  held_plan.seed = mix64(plan.seed, salt ^ 0x40E5);
  const auto held = multistage_paired_costs(model, pair, held_plan);
  out.improvement = std::max(-held.differences[1].mean, 0.0);
  out.std_error = held.differences[1].std_error;
  return out;
}

MultiResponse grid_deviation(const MultiStageModel& model, const MultiPolicy& policy, std::size_t agent,
                             const std::vector<StageSlot>& slots, const MonteCarloPlan& plan,
                             const MultiBestResponseOptions& options, std::uint64_t salt) {
  const auto& grid = options.action_grid;
  if (grid.empty()) throw ConfigurationError("grid class needs an action grid");
  std::size_t combos = 1;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    combos *= grid.size();
    if (combos > 100000) throw ConfigurationError("grid class: too many joint deviations (more than 1e5)");
  }
  const auto stream_plan = plan.with_stream(salt);
  MultiResponse out;
  out.agent = agent;
  out.method = "grid";
  out.improvement = -kInf;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < combos; start += kChunk) {
    std::vector<MultiPolicy> ps{policy};
    for (std::size_t c = start; c < std::min(combos, start + kChunk); ++c) {
      MultiPolicy p = policy;
      std::size_t code = c;
      for (const auto& s : slots) {
        p = p.with_entry(s.t, agent, PolicyEntry::constant(s.in_dim, grid[code % grid.size()]));
        code /= grid.size();
      }
      ps.push_back(std::move(p));
    }
    const auto pc = multistage_paired_costs(model, ps, stream_plan);
    for (std::size_t k = 1; k < ps.size(); ++k) {
      const double gain = -pc.differences[k].mean;
      if (std::isinf(out.improvement) || gain > out.improvement + 1e-12 * (1.0 + std::abs(out.improvement))) {
        out.improvement = gain;
        out.std_error = pc.differences[k].std_error;
      }
    }
  }
  return out;
}

MultiResponse deviation(const MultiStageModel& model, const MultiPolicy& policy, std::size_t agent,
                        const std::vector<StageSlot>& slots, const MonteCarloPlan& plan,
                        const MultiBestResponseOptions& options, std::uint64_t salt) {
  return options.cls == MultiClass::grid ? grid_deviation(model, policy, agent, slots, plan, options, salt)
                                         : affine_deviation(model, policy, agent, slots, plan, options, salt);
}

StageSlot slot(const MultiStageTeam& team, std::size_t t, std::size_t i) {
  return {t, team.info_dim(t, i), team.action_dim(i)};
}

}  // namespace

MultiPbpReport dmwise_pbp_check(const MultiStageModel& model, const MultiPolicy& policy, const MonteCarloPlan& plan,
                                const MultiBestResponseOptions& options) {
  const auto& team = model.team();
  MultiPbpReport rep;
  rep.kind = "dmwise";
  rep.j = multistage_cost(model, policy, plan).mean;
  rep.tol = pbp_tolerance(rep.j);
  for (std::size_t i = 0; i < team.N; ++i)
    for (std::size_t t = 0; t < team.T; ++t) {
      auto r = deviation(model, policy, i, {slot(team, t, i)}, plan, options, 0xD0 + 64 * i + t);
      r.stage = t;
      if (r.unbounded_below || r.improvement > rep.tol + 3.0 * r.std_error) rep.pass = false;
      rep.responses.push_back(std::move(r));
    }
  return rep;
}

MultiPbpReport agwise_pbp_check(const MultiStageModel& model, const MultiPolicy& policy, const MonteCarloPlan& plan,
                                const MultiBestResponseOptions& options) {
  const auto& team = model.team();
  MultiPbpReport rep;
  rep.kind = "agwise";
  rep.j = multistage_cost(model, policy, plan).mean;
  rep.tol = pbp_tolerance(rep.j);
  for (std::size_t i = 0; i < team.N; ++i) {
    std::vector<StageSlot> slots;
    for (std::size_t t = 0; t < team.T; ++t) slots.push_back(slot(team, t, i));
    auto r = deviation(model, policy, i, slots, plan, options, 0xA0 + i);
    if (r.unbounded_below || r.improvement > rep.tol + 3.0 * r.std_error) rep.pass = false;
    rep.responses.push_back(std::move(r));
  }
  return rep;
}

MultiCertificate certify_agwise_global(const MultiStageModel& reduced, const MultiPolicy& policy,
                                       const MonteCarloPlan& plan, const MultiBestResponseOptions& options,
                                       std::size_t chord_points) {
  const auto& team = reduced.team();
  MultiCertificate cert;
  const auto dm = dmwise_pbp_check(reduced, policy, plan, options);
  cert.dmwise_pass = dm.pass;
  cert.evidence["dmwise"] = dm.to_json();

  auto perturbed = [&](CounterRng& rng, const std::vector<Vector>& base, std::size_t i) {
    std::vector<Vector> out;
    for (const auto& b : base) {
      Vector d(b.size());
      for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = rng.normal();
      out.push_back(team.action_spaces[i].project(b + d));
    }
    return out;
  };
  CounterRng rng(mix64(plan.seed, 0xC4C4));
  cert.chord_points = chord_points;
  double worst = 0.0;
  for (std::size_t p = 0; p < chord_points; ++p) {
    const auto s = reduced.sampling_space().sample(rng);
    const std::size_t i = p % team.N;
    try {
      const auto ref = reduced.run(s, policy);
      std::vector<Vector> base;
      for (std::size_t t = 0; t < team.T; ++t) base.push_back(ref.u[t][i]);
      const auto u = perturbed(rng, base, i);
      const auto v = perturbed(rng, base, i);
      const double a = rng.uniform();
      std::vector<Vector> m;
      for (std::size_t t = 0; t < team.T; ++t) m.push_back(a * u[t] + (1.0 - a) * v[t]);
      const ActionOverride ou{i, u}, ovv{i, v}, om{i, m};
      const double cu = reduced.run(s, policy, &ou).cost;
      const double cv = reduced.run(s, policy, &ovv).cost;
      const double cm = reduced.run(s, policy, &om).cost;
      const double excess = cm - (a * cu + (1.0 - a) * cv);
      if (excess > 1e-9 * (1.0 + std::abs(cu) + std::abs(cv))) {
        ++cert.chord_violations;
        worst = std::max(worst, excess);
      }
    } catch (const Error&) {
      ++cert.chord_violations;
    }
  }
  cert.chord_convex = cert.chord_violations == 0;
  cert.evidence["chord"] = {{"points", chord_points}, {"violations", cert.chord_violations}, {"worst", worst}};

  cert.pairings_finite = true;
  auto pairs = nlohmann::json::array();
  const double h = plan.fd_step;
  for (int r = 0; r < 5; ++r) {
    MultiPolicy other = policy;
    for (std::size_t t = 0; t < team.T; ++t)
      for (std::size_t i = 0; i < team.N; ++i) {
        const auto d = static_cast<Eigen::Index>(team.info_dim(t, i));
        const auto m = static_cast<Eigen::Index>(team.action_dim(i));
        Matrix k(m, d);
        Vector b(m);
        for (Eigen::Index x = 0; x < m; ++x) {
          b(x) = rng.normal();
          for (Eigen::Index y = 0; y < d; ++y) k(x, y) = rng.normal();
        }
        other = other.with_entry(t, i, PolicyEntry::affine(k, b).clamped(team.action_spaces[i]));
      }
    try {
      auto est = integrate(reduced.sampling_space(), plan.with_stream(0x9A1 + static_cast<std::uint64_t>(r)), team.N,
                           [&](const PrimitiveSample& s, std::size_t, std::span<double> out) {
                             const auto ref = reduced.run(s, policy);
                             for (std::size_t i = 0; i < team.N; ++i) {
                               const auto& box = team.action_spaces[i];
                               std::vector<Vector> up, dn;
                               bool up_ok = true, dn_ok = true;
                               for (std::size_t t = 0; t < team.T; ++t) {
                                 const Vector delta = other.at(t, i)(ref.info[t][i]) - ref.u[t][i];
                                 up.push_back(ref.u[t][i] + h * delta);
                                 dn.push_back(ref.u[t][i] - h * delta);
                                 up_ok = up_ok && box.contains(up.back());
                                 dn_ok = dn_ok && box.contains(dn.back());
                               }
                               const ActionOverride ou{i, up}, od{i, dn};
                               const double cu = up_ok ? reduced.run(s, policy, &ou).cost : ref.cost;
                               const double cd = dn_ok ? reduced.run(s, policy, &od).cost : ref.cost;
                               const double span_h = (up_ok ? h : 0.0) + (dn_ok ? h : 0.0);
                               out[i] = span_h > 0.0 ? (cu - cd) / span_h : 0.0;
                             }
                           });
      auto pj = nlohmann::json::array();
      for (const auto& e : est) {
        if (!std::isfinite(e.mean)) cert.pairings_finite = false;
        pj.push_back(e.mean);
      }
      pairs.push_back(pj);
    } catch (const Error& e) {
      cert.pairings_finite = false;
      pairs.push_back(std::string("failed: ") + e.what());
    }
  }
  cert.evidence["pairings"] = pairs;
  cert.certified = cert.dmwise_pass && cert.chord_convex && cert.pairings_finite;
  cert.evidence["verdict"] = cert.verdict();
  return cert;
}

nlohmann::json CoordinateTrap::to_json() const {
  return {{"coefficients", {{"u0^2", a}, {"u1^2", b}, {"u0*u1", c}, {"u0", d}, {"u1", e}}},
          {"trap", {u0, u1}},
          {"trap_value", trap_value},
          {"joint_minimum", {joint_u0, joint_u1}},
          {"joint_value", joint_value}};
}

std::optional<CoordinateTrap> find_coordinate_trap(const std::vector<double>& values, const std::vector<double>& grid) {
  const std::size_t nv = values.size();
  if (nv == 0 || grid.empty()) return std::nullopt;
  std::size_t total = 1;
  for (int k = 0; k < 5; ++k) total *= nv;
  // Sparsest coefficient vectors first, then lexicographic.
  std::vector<std::array<double, 5>> order;
  for (std::size_t code = 0; code < total; ++code) {
    std::array<double, 5> co{};
    std::size_t c = code;
    for (auto& x : co) {
      x = values[c % nv];
      c /= nv;
    }
    order.push_back(co);
  }
  auto nonzeros = [](const std::array<double, 5>& co) { return std::count_if(co.begin(), co.end(), [](double x) { return x != 0.0; }); };
  std::stable_sort(order.begin(), order.end(), [&](const auto& l, const auto& r) { return nonzeros(l) < nonzeros(r); });
  for (const auto& co : order) {
    auto f = [&](double u0, double u1) { return co[0] * u0 * u0 + co[1] * u1 * u1 + co[2] * u0 * u1 + co[3] * u0 + co[4] * u1; };
    double jmin = kInf, ju0 = 0, ju1 = 0;
    for (double a : grid)
      for (double b : grid)
        if (f(a, b) < jmin) {
          jmin = f(a, b);
          ju0 = a;
          ju1 = b;
        }
    for (double a : grid)
      for (double b : grid) {
        const double v = f(a, b);
        if (v <= jmin + 1e-9) continue;
        bool coord = true;
        for (double x : grid) coord = coord && f(x, b) >= v && f(a, x) >= v;
        if (coord) return CoordinateTrap{co[0], co[1], co[2], co[3], co[4], a, b, ju0, ju1, v, jmin};
      }
  }
  return std::nullopt;
}

MultiStageTeam coordinate_trap_team(const CoordinateTrap& tr) {
  MultiStageTeam team;
  team.label = "coordinate_trap";
  team.T = 2;
  team.N = 1;
  team.x0 = Distribution::finite_scalar({0.0}, {1.0});
  team.w = {Distribution::finite_scalar({0.0}, {1.0}), Distribution::finite_scalar({0.0}, {1.0})};
  team.v = {{Distribution::finite_scalar({0.0}, {1.0})}, {Distribution::finite_scalar({0.0}, {1.0})}};
  team.obs_dims = {1};
  ActionSpace box{Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)};
  team.action_spaces = {box};
  team.dynamics = [](std::size_t, const Vector&, std::span<const Vector>, const ActionHistory& us, const Vector&) {
    return us.back()[0];
  };
  team.observation = [](std::size_t, std::size_t, std::span<const Vector>, const ActionHistory&, const Vector& v) {
    return v;
  };
  // Shifts keep each stage cost nonnegative on the box.
  const double k0 = std::abs(tr.a) + std::abs(tr.d);
  const double k1 = std::abs(tr.b) + std::abs(tr.c) + std::abs(tr.e);
  team.stage_cost = [tr, k0, k1](std::size_t t, const Vector&, const Vector& x, std::span<const Vector> u) {
    const double v = u[0](0);
    if (t == 0) return tr.a * v * v + tr.d * v + k0;
    return tr.b * v * v + tr.c * x(0) * v + tr.e * v + k1;
  };
  team.terminal_cost = [](const Vector&) { return 0.0; };
  team.info = {{{}}, {{}}};
  return team;
}

MultiPolicy constant_policy(const MultiStageTeam& team, const std::vector<std::vector<Vector>>& values) {
  MultiPolicy p;
  for (std::size_t t = 0; t < team.T; ++t) {
    std::vector<PolicyEntry> row;
    for (std::size_t i = 0; i < team.N; ++i) row.push_back(PolicyEntry::constant(team.info_dim(t, i), values.at(t).at(i)));
    p.entries.push_back(std::move(row));
  }
  return p;
}

}  // namespace teamred
