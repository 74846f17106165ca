#include "teamred/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>

#include "teamred/errors.hpp"

namespace teamred {

std::size_t PrimitiveSpace::add(std::string name, Distribution dist) {
  vars_.push_back({std::move(name), std::move(dist)});
  return vars_.size() - 1;
}

std::optional<std::size_t> PrimitiveSpace::find(const std::string& name) const {
  for (std::size_t k = 0; k < vars_.size(); ++k)
    if (vars_[k].name == name) return k;
  return std::nullopt;
}

std::size_t PrimitiveSpace::index_of(const std::string& name) const {
  if (auto k = find(name)) return *k;
  throw ConfigurationError("unknown primitive '" + name + "'");
}

PrimitiveSample PrimitiveSpace::sample(CounterRng& rng) const {
  PrimitiveSample s;
  s.values.reserve(vars_.size());
  for (const auto& v : vars_) s.values.push_back(v.dist.sample(rng));
  return s;
}

bool PrimitiveSpace::enumerable() const { return true; }

std::string to_string(StructureLabel label) {
  switch (label) {
    case StructureLabel::static_team: return "static";
    case StructureLabel::classical: return "classical";
    case StructureLabel::partially_nested: return "partially-nested";
    case StructureLabel::nonclassical: return "nonclassical";
  }
  return "unknown";
}

std::size_t TeamProblem::signal_dim(SignalRef s) const {
  switch (s.kind) {
    case SignalKind::primitive: return primitives[s.index].dist.dim();
    case SignalKind::measurement: return measurements.at(s.index).dim;
    case SignalKind::action: return action_dim(s.index);
  }
  return 0;
}

std::size_t TeamProblem::info_dim(std::size_t i) const {
  std::size_t d = 0;
  for (const auto& s : info.at(i)) d += signal_dim(s);
  return d;
}

std::string TeamProblem::signal_name(SignalRef s) const {
  switch (s.kind) {
    case SignalKind::primitive: return primitives[s.index].name;
    case SignalKind::measurement: return "y" + std::to_string(s.index + 1);
    case SignalKind::action: return "u" + std::to_string(s.index + 1);
  }
  return "?";
}

Vector gather(std::span<const SignalRef> signals, const PrimitiveSample& sample,
              std::span<const Vector> measurements, std::span<const Vector> actions) {
  Eigen::Index total = 0;
  auto value = [&](SignalRef s) -> const Vector& {
    switch (s.kind) {
      case SignalKind::primitive: return sample.values[s.index];
      case SignalKind::measurement: return measurements[s.index];
      default: return actions[s.index];
    }
  };
  for (const auto& s : signals) total += value(s).size();
  Vector out(total);
  Eigen::Index at = 0;
  for (const auto& s : signals) {
    const Vector& v = value(s);
    out.segment(at, v.size()) = v;
    at += v.size();
  }
  return out;
}

double evaluate_cost_at(const TeamProblem& problem, const PrimitiveSample& sample,
                        std::span<const Vector> actions) {
  std::vector<Vector> prims;
  prims.reserve(problem.cost.reads.size());
  for (auto k : problem.cost.reads) prims.push_back(sample.values[k]);
  return problem.cost.eval(prims, actions);
}

Path simulate_path(const TeamProblem& problem, const Policy& policy,
                   const PrimitiveSample& sample) {
  const std::size_t n = problem.dms();
  if (policy.size() != n)
    throw ConfigurationError("policy has " + std::to_string(policy.size()) + " entries for " +
                             std::to_string(n) + " DMs");
  if (sample.values.size() != problem.primitives.size())
    throw ConfigurationError("primitive sample does not match the primitive space");
  Path path;
  path.measurements.resize(n);
  path.actions.resize(n);
  path.info.resize(n);
  std::vector<Vector> reads;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = problem.measurements[i];
    reads.clear();
    for (const auto& s : m.reads) {
      switch (s.kind) {
        case SignalKind::primitive: reads.push_back(sample.values[s.index]); break;
        case SignalKind::measurement: reads.push_back(path.measurements[s.index]); break;
        case SignalKind::action: reads.push_back(path.actions[s.index]); break;
      }
    }
    path.measurements[i] = m.eval(reads);
    if (static_cast<std::size_t>(path.measurements[i].size()) != m.dim)
      throw ConfigurationError("measurement of DM " + std::to_string(i + 1) +
                               " has the wrong dimension");
    path.info[i] = gather(problem.info[i], sample, path.measurements, path.actions);
    const auto& entry = policy[i];
    if (entry.out_dim() != problem.action_dim(i))
      throw ConfigurationError("policy of DM " + std::to_string(i + 1) +
                               " has the wrong action dimension");
    path.actions[i] = entry(path.info[i]);
    if (!problem.action_spaces[i].contains(path.actions[i], 1e-12))
      throw DomainError(i, "action of DM " + std::to_string(i + 1) +
                               " lies outside its action space");
  }
  path.cost = evaluate_cost_at(problem, sample, path.actions);
  return path;
}

namespace {

using DmSet = std::set<std::size_t>;

class PrecedenceSolver {
 public:
  explicit PrecedenceSolver(const TeamProblem& p) : p_(p) {}

  DmSet affected(SignalRef s) {
    if (s.kind == SignalKind::primitive) return {};
    auto& memo = s.kind == SignalKind::measurement ? meas_ : act_;
    if (auto it = memo.find(s.index); it != memo.end()) return it->second;
    if (!visiting_.insert(s).second)
      throw InvariantViolation("information structure contains a cycle");
    DmSet out;
    if (s.kind == SignalKind::measurement) {
      for (const auto& r : p_.measurements.at(s.index).reads) merge(out, affected(r));
    } else {
      out.insert(s.index);
      for (const auto& r : p_.info.at(s.index)) merge(out, affected(r));
    }
    visiting_.erase(s);
    memo[s.index] = out;
    return out;
  }

 private:
  static void merge(DmSet& into, const DmSet& from) { into.insert(from.begin(), from.end()); }

  const TeamProblem& p_;
  std::map<std::size_t, DmSet> meas_, act_;
  std::set<SignalRef> visiting_;
};

}  // namespace

bool info_contains(const TeamProblem& problem, std::size_t outer, std::size_t inner) {
  const auto& big = problem.info.at(outer);
  for (const auto& s : problem.info.at(inner))
    if (std::find(big.begin(), big.end(), s) == big.end()) return false;
  return true;
}

StructureAnalysis analyze_information_structure(const TeamProblem& problem) {
  PrecedenceSolver solver(problem);
  StructureAnalysis a;
  const std::size_t n = problem.dms();
  bool all_static = true;
  for (std::size_t i = 0; i < n; ++i) {
    DmSet own = solver.affected(measurement_ref(i));
    DmSet full;
    for (const auto& s : problem.info[i]) {
      DmSet part = solver.affected(s);
      full.insert(part.begin(), part.end());
    }
    a.measurement_precedence.emplace_back(own.begin(), own.end());
    a.precedence.emplace_back(full.begin(), full.end());
    if (!full.empty()) all_static = false;
  }
  if (all_static) {
    a.label = StructureLabel::static_team;
    return a;
  }
  bool classical = true;
  for (std::size_t i = 0; i < n && classical; ++i) {
    const auto& info = problem.info[i];
    for (std::size_t k = 0; k < i && classical; ++k) {
      const bool action_known = std::find(info.begin(), info.end(), action_ref(k)) != info.end();
      classical = info_contains(problem, i, k) && action_known;
    }
  }
  if (classical) {
    a.label = StructureLabel::classical;
    return a;
  }
  bool nested = true;
  for (std::size_t i = 0; i < n && nested; ++i)
    for (auto j : a.precedence[i])
      if (!info_contains(problem, i, j)) {
        nested = false;
        break;
      }
  a.label = nested ? StructureLabel::partially_nested : StructureLabel::nonclassical;
  return a;
}

StructureLabel classify_information_structure(const TeamProblem& problem) {
  return analyze_information_structure(problem).label;
}

std::vector<std::string> validate_problem(const TeamProblem& problem) {
  std::vector<std::string> out;
  const std::size_t n = problem.dms();
  std::set<std::string> names;
  for (const auto& v : problem.primitives.variables()) {
    if (!names.insert(v.name).second) out.push_back("primitives: duplicate name (" + v.name + ")");
    for (const auto& issue : v.dist.validate())
      out.push_back("primitives: " + issue + " (" + v.name + ")");
  }
  auto signal_ok = [&](SignalRef s) {
    switch (s.kind) {
      case SignalKind::primitive: return s.index < problem.primitives.size();
      case SignalKind::measurement: return s.index < n;
      case SignalKind::action: return s.index < problem.action_spaces.size();
    }
    return false;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = problem.measurements[i];
    if (m.dm != i) out.push_back("measurements: DM index out of order at position " + std::to_string(i + 1));
    if (!m.eval) out.push_back("measurements: missing eval for DM " + std::to_string(i + 1));
    for (const auto& s : m.reads) {
      if (!signal_ok(s)) {
        out.push_back("measurements: unknown signal read by DM " + std::to_string(i + 1));
      } else if (s.kind != SignalKind::primitive && s.index >= i) {
        out.push_back("measurements: sequentiality violated");
      }
    }
  }
  if (problem.info.size() != n) out.push_back("info: expected one signal set per DM");
  for (std::size_t i = 0; i < problem.info.size() && i < n; ++i) {
    for (const auto& s : problem.info[i]) {
      if (!signal_ok(s)) {
        out.push_back("info: unknown signal in I" + std::to_string(i + 1));
      } else if (s.kind == SignalKind::primitive) {
        out.push_back("info: primitive in I" + std::to_string(i + 1) + " must be exposed as a measurement");
      } else if ((s.kind == SignalKind::measurement && s.index > i) ||
                 (s.kind == SignalKind::action && s.index >= i)) {
        out.push_back("info: I" + std::to_string(i + 1) + " reads a signal not yet realized");
      }
    }
  }
  if (problem.action_spaces.size() != n) out.push_back("action_spaces: expected one box per DM");
  for (const auto& box : problem.action_spaces)
    if (box.lower.size() != box.upper.size() || (box.upper - box.lower).minCoeff() < 0.0)
      out.push_back("action_spaces: lower bound exceeds upper bound");
  if (!problem.cost.eval) out.push_back("cost: missing eval");
  for (auto k : problem.cost.reads)
    if (k >= problem.primitives.size()) out.push_back("cost: reads an unknown primitive");
  return out;
}

double gradient_consistency(const TeamProblem& problem, std::size_t points,
                            std::uint64_t seed, double step) {
  if (!problem.cost.gradient) throw ConfigurationError("cost has no analytic gradient");
  CounterRng rng(seed);
  double worst = 0.0;
  const std::size_t n = problem.dms();
  for (std::size_t p = 0; p < points; ++p) {
    PrimitiveSample s = problem.primitives.sample(rng);
    std::vector<Vector> u(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& box = problem.action_spaces[i];
      u[i].resize(static_cast<Eigen::Index>(box.dim()));
      for (Eigen::Index k = 0; k < u[i].size(); ++k) {
        double x = rng.normal();
        if (std::isfinite(box.lower(k))) x = box.lower(k) + 0.1 + std::abs(x);
        if (std::isfinite(box.upper(k))) x = std::min(x, box.upper(k) - 0.1);
        u[i](k) = x;
      }
    }
    std::vector<Vector> prims;
    for (auto k : problem.cost.reads) prims.push_back(s.values[k]);
    for (std::size_t i = 0; i < n; ++i) {
      const Vector g = problem.cost.gradient(prims, u, i);
      for (Eigen::Index k = 0; k < u[i].size(); ++k) {
        auto up = u, dn = u;
        up[i](k) += step;
        dn[i](k) -= step;
        const double fd = (problem.cost.eval(prims, up) - problem.cost.eval(prims, dn)) / (2.0 * step);
        worst = std::max(worst, std::abs(g(k) - fd) / std::max(1.0, std::abs(fd)));
      }
    }
  }
  return worst;
}

}  // namespace teamred
