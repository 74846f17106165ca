#include "teamred/reduction_dependent.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "teamred/errors.hpp"
#include "teamred/random.hpp"

namespace teamred {

ObservationDecomposition InvertibleObservation::identity(const TeamProblem& problem, std::size_t dm) {
  const auto& m = problem.measurements.at(dm);
  ObservationDecomposition d;
  d.dm = dm;
  d.dim = m.dim;
  for (const auto& r : m.reads) {
    if (r.kind != SignalKind::primitive)
      throw ConfigurationError("identity decomposition needs a measurement of primitives only (DM " +
                               std::to_string(dm + 1) + ")");
    d.static_reads.push_back(r.index);
  }
  d.h = m.eval;
  d.kind = "identity";
  return d;
}

ObservationDecomposition InvertibleObservation::additive(std::size_t dm, std::vector<std::size_t> static_reads,
                                                        std::size_t dim, MeasurementEval h,
                                                        std::vector<std::size_t> upstream,
                                                        std::vector<Matrix> mixing) {
  if (mixing.size() != upstream.size()) throw ConfigurationError("additive mixing: one matrix per upstream DM");
  ObservationDecomposition d;
  d.dm = dm;
  d.static_reads = std::move(static_reads);
  d.dim = dim;
  d.h = std::move(h);
  d.upstream = std::move(upstream);
  auto shared = std::make_shared<std::vector<Matrix>>(std::move(mixing));
  d.g = [shared](const Vector& hv, std::span<const Vector> u) {
    Vector y = hv;
    for (std::size_t k = 0; k < u.size(); ++k) y += (*shared)[k] * u[k];
    return y;
  };
  d.g_inv = [shared](const Vector& y, std::span<const Vector> u) {
    Vector hv = y;
    for (std::size_t k = 0; k < u.size(); ++k) hv -= (*shared)[k] * u[k];
    return hv;
  };
  d.kind = "additive";
  return d;
}

namespace {

const ObservationDecomposition& decomposition(const InvertibleObservation& inv, std::size_t dm) {
  for (const auto& d : inv.dms)
    if (d.dm == dm) return d;
  throw ConfigurationError("missing inverse for the measurement of DM " + std::to_string(dm + 1));
}

Vector eval_h(const ObservationDecomposition& d, const PrimitiveSample& s) {
  std::vector<Vector> args;
  for (auto k : d.static_reads) args.push_back(s[k]);
  return d.h(args);
}

Vector mix(const ObservationDecomposition& d, const Vector& hv, std::span<const Vector> u) {
  return d.upstream.empty() ? hv : d.g(hv, u);
}

Vector unmix(const ObservationDecomposition& d, const Vector& y, std::span<const Vector> u) {
  return d.upstream.empty() ? y : d.g_inv(y, u);
}

}  // namespace

std::vector<std::string> validate_inverse(const TeamProblem& problem, const InvertibleObservation& inv,
                                          std::size_t samples, std::uint64_t seed) {
  std::vector<std::string> errs;
  for (std::size_t i = 0; i < problem.dms(); ++i) {
    try {
      const auto& d = decomposition(inv, i);
      if (d.dim != problem.measurements[i].dim) errs.push_back("inverse dimension mismatch for DM " + std::to_string(i + 1));
      if (!d.h) errs.push_back("missing h for DM " + std::to_string(i + 1));
      if (!d.upstream.empty() && (!d.g || !d.g_inv))
        errs.push_back("missing g or its inverse for DM " + std::to_string(i + 1));
    } catch (const ConfigurationError& e) {
      errs.emplace_back(e.what());
    }
  }
  if (!errs.empty()) return errs;
  CounterRng rng(mix64(seed, 0x1417));
  double worst = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto sample = problem.primitives.sample(rng);
    std::vector<PolicyEntry> entries;
    for (std::size_t i = 0; i < problem.dms(); ++i) {
      Vector c(static_cast<Eigen::Index>(problem.action_dim(i)));
      for (Eigen::Index k = 0; k < c.size(); ++k) c(k) = rng.normal();
      entries.push_back(PolicyEntry::constant(problem.info_dim(i), problem.action_spaces[i].project(c)));
    }
    const auto path = simulate_path(problem, Policy(std::move(entries)), sample);
    for (std::size_t i = 0; i < problem.dms(); ++i) {
      const auto& d = decomposition(inv, i);
      std::vector<Vector> u;
      for (auto k : d.upstream) u.push_back(path.actions[k]);
      const Vector hv = eval_h(d, sample);
      const Vector& y = path.measurements[i];
      const double scale = 1.0 + y.cwiseAbs().maxCoeff();
      worst = std::max(worst, (mix(d, hv, u) - y).cwiseAbs().maxCoeff() / scale);
      worst = std::max(worst, (unmix(d, y, u) - hv).cwiseAbs().maxCoeff() / scale);
    }
  }
  if (worst > 1e-9) errs.push_back("inverse round trip fails (max error " + std::to_string(worst) + ")");
  return errs;
}

std::string to_string(Form form) {
  switch (form) {
    case Form::D: return "D";
    case Form::S: return "S";
    case Form::DCS: return "D-CS";
    case Form::CS: return "CS";
  }
  return "?";
}

Form form_from_string(const std::string& s) {
  if (s == "D" || s == "d") return Form::D;
  if (s == "S" || s == "s") return Form::S;
  if (s == "D-CS" || s == "dcs") return Form::DCS;
  if (s == "CS" || s == "cs") return Form::CS;
  throw ConfigurationError("unknown form '" + s + "' (expected d, s, dcs or cs)");
}

TeamProblem make_form(const TeamProblem& problem, const InvertibleObservation& inv, const FormTag& tag) {
  const auto analysis = analyze_information_structure(problem);
  if (analysis.label == StructureLabel::nonclassical)
    throw UnsupportedForm("policy-dependent forms need a partially nested information structure");
  for (std::size_t i = 0; i < problem.dms(); ++i) (void)decomposition(inv, i);
  TeamProblem out = problem;
  out.label = problem.label + "/" + to_string(tag.form);
  if (tag.form == Form::S || tag.form == Form::CS) {
    for (std::size_t i = 0; i < problem.dms(); ++i) {
      const auto& d = decomposition(inv, i);
      MeasurementMap m;
      m.dm = i;
      for (auto k : d.static_reads) m.reads.push_back(primitive_ref(k));
      m.dim = d.dim;
      m.eval = d.h;
      m.spec = {{"kind", "static-part"}, {"of", problem.measurements[i].spec}};
      out.measurements[i] = std::move(m);
    }
  }
  if (tag.form == Form::DCS || tag.form == Form::CS) {
    for (std::size_t i = 0; i < problem.dms(); ++i) {
      std::vector<std::size_t> shared = analysis.precedence[i];
      if (tag.sharing) {
        shared = tag.sharing->at(i);
        for (auto k : shared)
          if (std::find(analysis.precedence[i].begin(), analysis.precedence[i].end(), k) ==
              analysis.precedence[i].end())
            throw ConfigurationError("sharing pattern: K_" + std::to_string(i + 1) + " must be a subset of ↓" +
                                     std::to_string(i + 1));
      }
      for (auto k : shared) {
        const auto ref = action_ref(k);
        if (std::find(out.info[i].begin(), out.info[i].end(), ref) == out.info[i].end()) out.info[i].push_back(ref);
      }
    }
  }
  return out;
}

namespace {

enum class Direction { to_static, to_dynamic };

struct TransportSpec {
  TeamProblem problem;
  InvertibleObservation inv;
  Policy source;
  Direction dir;
};

// Per-call reconstruction of source-coordinate signals from target ones.
class Reconstruction {
 public:
  Reconstruction(const TransportSpec& spec, std::size_t dm, const Vector& x) : spec_(spec) {
    Eigen::Index at = 0;
    for (const auto& ref : spec.problem.info[dm]) {
      const auto n = static_cast<Eigen::Index>(spec.problem.signal_dim(ref));
      known_[ref] = x.segment(at, n);
      at += n;
    }
  }

  Vector action(std::size_t k) {
    if (auto it = acts_.find(k); it != acts_.end()) return it->second;
    if (auto it = known_.find(action_ref(k)); it != known_.end()) return it->second;
    if (++depth_ > 4 * spec_.problem.dms() + 4)
      throw InvariantViolation("transport recursion exceeded the number of DMs");
    Vector x(static_cast<Eigen::Index>(spec_.problem.info_dim(k)));
    Eigen::Index at = 0;
    for (const auto& ref : spec_.problem.info[k]) {
      const Vector v = source_value(ref);
      x.segment(at, v.size()) = v;
      at += v.size();
    }
    Vector u = spec_.source[k](x);
    --depth_;
    acts_[k] = u;
    return u;
  }

 private:
  Vector source_value(const SignalRef& ref) {
    if (ref.kind == SignalKind::action) return action(ref.index);
    auto it = known_.find(ref);
    if (it == known_.end())
      throw ConfigurationError("transport needs " + spec_.problem.signal_name(ref) +
                               ", which is not observed (information is not partially nested)");
    if (ref.kind == SignalKind::primitive) return it->second;
    const auto& d = decomposition(spec_.inv, ref.index);
    std::vector<Vector> u;
    for (auto k : d.upstream) u.push_back(action(k));
    return spec_.dir == Direction::to_static ? mix(d, it->second, u) : unmix(d, it->second, u);
  }

  const TransportSpec& spec_;
  std::map<SignalRef, Vector> known_;
  std::map<std::size_t, Vector> acts_;
  std::size_t depth_ = 0;
};

Policy transport(const TeamProblem& problem, const InvertibleObservation& inv, const Policy& source,
                 Direction dir) {
  if (source.size() != problem.dms()) throw ConfigurationError("transport: policy size mismatch");
  auto spec = std::make_shared<const TransportSpec>(TransportSpec{problem, inv, source, dir});
  std::vector<PolicyEntry> out;
  for (std::size_t i = 0; i < problem.dms(); ++i) {
    const auto& d = decomposition(inv, i);
    (void)d;
    const std::string label = std::string(dir == Direction::to_static ? "static" : "dynamic") +
                              " transport of " + source[i].label();
    out.push_back(PolicyEntry::closure(label, problem.info_dim(i), problem.action_dim(i),
                                       [spec, i](const Vector& x) {
                                         Reconstruction r(*spec, i, x);
                                         return r.action(i);
                                       }));
  }
  return Policy(std::move(out));
}

}  // namespace

Policy transport_policy_D_to_S(const TeamProblem& problem, const InvertibleObservation& inv,
                               const Policy& gamma_d) {
  return transport(problem, inv, gamma_d, Direction::to_static);
}

Policy transport_policy_S_to_D(const TeamProblem& problem, const InvertibleObservation& inv,
                               const Policy& gamma_s) {
  return transport(problem, inv, gamma_s, Direction::to_dynamic);
}

Policy simplify_affine(const Policy& policy) {
  std::vector<PolicyEntry> out;
  for (const auto& e : policy.entries()) {
    if (e.kind() == PolicyEntry::Kind::closure && !e.is_clamped()) {
      if (auto a = affine_probe(e)) {
        out.push_back(PolicyEntry::affine(a->gain, a->bias));
        continue;
      }
    }
    out.push_back(e);
  }
  return Policy(std::move(out));
}

ConditionCResult check_condition_C(const TeamProblem& problem, const InvertibleObservation& inv,
                                   const Policy& gamma_d, const MonteCarloPlan& plan) {
  plan.validate();
  const auto analysis = analyze_information_structure(problem);
  ConditionCResult res;
  CounterRng rng(mix64(plan.seed, 0xC0DC));
  const std::size_t points = std::min<std::size_t>(plan.samples, 256);
  for (std::size_t i = 0; i < problem.dms(); ++i) {
    const auto& down = analysis.precedence[i];
    if (down.empty()) continue;
    for (std::size_t p = 0; p < points; ++p) {
      const auto sample = problem.primitives.sample(rng);
      const auto path = simulate_path(problem, gamma_d, sample);
      auto F = [&](const std::map<std::size_t, Vector>& u) {
        auto action_of = [&](std::size_t k) {
          auto it = u.find(k);
          return it != u.end() ? it->second : path.actions[k];
        };
        Vector x(static_cast<Eigen::Index>(problem.info_dim(i)));
        Eigen::Index at = 0;
        for (const auto& ref : problem.info[i]) {
          Vector v;
          if (ref.kind == SignalKind::primitive) {
            v = sample[ref.index];
          } else if (ref.kind == SignalKind::action) {
            v = action_of(ref.index);
          } else {
            const auto& d = decomposition(inv, ref.index);
            std::vector<Vector> up;
            for (auto k : d.upstream) up.push_back(action_of(k));
            v = mix(d, eval_h(d, sample), up);
          }
          x.segment(at, v.size()) = v;
          at += v.size();
        }
        return gamma_d[i](x);
      };
      std::map<std::size_t, Vector> base, a, b, ab;
      for (auto k : down) {
        const auto& box = problem.action_spaces[k];
        Vector da(static_cast<Eigen::Index>(problem.action_dim(k)));
        Vector db(da.size());
        for (Eigen::Index c = 0; c < da.size(); ++c) {
          da(c) = rng.normal();
          db(c) = rng.normal();
          if (std::isfinite(box.lower(c))) {
            da(c) = std::abs(da(c));
            db(c) = std::abs(db(c));
          }
          if (std::isfinite(box.upper(c))) {
            da(c) = -std::abs(da(c));
            db(c) = -std::abs(db(c));
          }
        }
        const Vector& u0 = path.actions[k];
        base[k] = u0;
        a[k] = u0 + da;
        b[k] = u0 + db;
        ab[k] = u0 + da + db;
      }
      const Vector f0 = F(base), fa = F(a), fb = F(b), fab = F(ab);
      const double second = (fab - fa - fb + f0).cwiseAbs().maxCoeff();
      const double scale = std::max({f0.cwiseAbs().maxCoeff(), fa.cwiseAbs().maxCoeff(),
                                     fb.cwiseAbs().maxCoeff(), fab.cwiseAbs().maxCoeff()});
      res.max_second_difference = std::max(res.max_second_difference, second);
      res.scale = std::max(res.scale, scale);
    }
  }
  res.holds = res.max_second_difference <= 1e-7 * (1.0 + res.scale);
  return res;
}

}  // namespace teamred
