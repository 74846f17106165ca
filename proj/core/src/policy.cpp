#include "teamred/policy.hpp"

#include <cmath>
#include <limits>

#include "teamred/errors.hpp"
#include "teamred/random.hpp"

namespace teamred {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json vec_json(const Vector& v) {
  auto j = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v(k));
  return j;
}

nlohmann::json mat_json(const Matrix& m) {
  auto j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) j.push_back(vec_json(m.row(r).transpose()));
  return j;
}

Vector json_vec(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  return v;
}

Matrix json_mat(const nlohmann::json& j, Eigen::Index cols_if_empty) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? cols_if_empty : static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols)
      throw ConfigurationError("policy: ragged gain matrix");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

ActionSpace ActionSpace::unbounded(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return {Vector::Constant(n, -kInf), Vector::Constant(n, kInf)};
}

ActionSpace ActionSpace::nonnegative(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return {Vector::Zero(n), Vector::Constant(n, kInf)};
}

bool ActionSpace::bounded() const {
  return lower.array().isFinite().any() || upper.array().isFinite().any();
}

bool ActionSpace::contains(const Vector& u, double tol) const {
  if (u.size() != lower.size()) return false;
  for (Eigen::Index k = 0; k < u.size(); ++k)
    if (!(u(k) >= lower(k) - tol && u(k) <= upper(k) + tol)) return false;
  return true;
}

Vector ActionSpace::project(const Vector& u) const {
  return u.cwiseMax(lower).cwiseMin(upper);
}

PolicyEntry PolicyEntry::affine(Matrix gain, Vector bias) {
  if (gain.rows() != bias.size())
    throw ConfigurationError("affine policy: gain rows do not match bias");
  return PolicyEntry(AffineMap{std::move(gain), std::move(bias)});
}

PolicyEntry PolicyEntry::zero(std::size_t in_dim, std::size_t out_dim) {
  const auto o = static_cast<Eigen::Index>(out_dim);
  return affine(Matrix::Zero(o, static_cast<Eigen::Index>(in_dim)), Vector::Zero(o));
}

PolicyEntry PolicyEntry::constant(std::size_t in_dim, Vector value) {
  const auto o = value.size();
  return affine(Matrix::Zero(o, static_cast<Eigen::Index>(in_dim)), std::move(value));
}

PolicyEntry PolicyEntry::tabular(std::size_t in_dim, std::size_t out_dim,
                                 std::map<std::vector<double>, Vector> table) {
  for (const auto& [key, val] : table)
    if (key.size() != in_dim || static_cast<std::size_t>(val.size()) != out_dim)
      throw ConfigurationError("tabular policy: entry dimensions mismatch");
  return PolicyEntry(TabularMap{in_dim, out_dim, std::move(table)});
}

PolicyEntry PolicyEntry::closure(std::string label, std::size_t in_dim,
                                 std::size_t out_dim,
                                 std::function<Vector(const Vector&)> fn) {
  return PolicyEntry(ClosureMap{std::move(label), in_dim, out_dim, std::move(fn)});
}

Vector PolicyEntry::operator()(const Vector& info) const {
  if (static_cast<std::size_t>(info.size()) != in_dim())
    throw ConfigurationError("policy input has dimension " + std::to_string(info.size()) +
                             ", expected " + std::to_string(in_dim()));
  Vector u;
  if (const auto* a = std::get_if<AffineMap>(&rep_)) {
    u = a->gain * info + a->bias;
  } else if (const auto* t = std::get_if<TabularMap>(&rep_)) {
    std::vector<double> key(info.data(), info.data() + info.size());
    auto it = t->table.find(key);
    if (it == t->table.end())
      throw ConfigurationError("tabular policy: signal value outside the declared support");
    u = it->second;
  } else {
    u = std::get<ClosureMap>(rep_).fn(info);
  }
  if (clamp_) u = clamp_->project(u);
  return u;
}

PolicyEntry::Kind PolicyEntry::kind() const {
  switch (rep_.index()) {
    case 0: return Kind::affine;
    case 1: return Kind::tabular;
    default: return Kind::closure;
  }
}

std::size_t PolicyEntry::in_dim() const {
  return std::visit(
      [](const auto& r) -> std::size_t {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, AffineMap>)
          return static_cast<std::size_t>(r.gain.cols());
        else
          return r.in_dim;
      },
      rep_);
}

std::size_t PolicyEntry::out_dim() const {
  return std::visit(
      [](const auto& r) -> std::size_t {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, AffineMap>)
          return static_cast<std::size_t>(r.gain.rows());
        else
          return r.out_dim;
      },
      rep_);
}

const std::string& PolicyEntry::label() const {
  static const std::string affine_label = "affine";
  static const std::string tabular_label = "tabular";
  if (const auto* c = std::get_if<ClosureMap>(&rep_)) return c->label;
  return rep_.index() == 0 ? affine_label : tabular_label;
}

PolicyEntry PolicyEntry::clamped(const ActionSpace& box) const {
  PolicyEntry e = *this;
  if (box.bounded()) e.clamp_ = box;
  return e;
}

Policy Policy::with_entry(std::size_t i, PolicyEntry e) const {
  Policy p = *this;
  p.entries_.at(i) = std::move(e);
  return p;
}

std::optional<AffineMap> affine_probe(const PolicyEntry& entry, double tol) {
  if (const auto* a = entry.as_affine(); a && !entry.is_clamped()) return *a;
  if (entry.kind() == PolicyEntry::Kind::tabular) return std::nullopt;
  const auto n = static_cast<Eigen::Index>(entry.in_dim());
  const auto m = static_cast<Eigen::Index>(entry.out_dim());
  try {
    const Vector b = entry(Vector::Zero(n));
    Matrix k(m, n);
    for (Eigen::Index c = 0; c < n; ++c) k.col(c) = entry(Vector::Unit(n, c)) - b;
    CounterRng rng(0xAFF1E);
    for (int trial = 0; trial < 4; ++trial) {
      Vector x(n);
      for (Eigen::Index c = 0; c < n; ++c) x(c) = 3.0 * rng.normal();
      const Vector got = entry(x);
      const Vector want = k * x + b;
      if ((got - want).cwiseAbs().maxCoeff() > tol * (1.0 + want.cwiseAbs().maxCoeff()))
        return std::nullopt;
    }
    return AffineMap{k, b};
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

nlohmann::json policy_to_json(const Policy& policy) {
  nlohmann::json j;
  j["entries"] = nlohmann::json::array();
  for (std::size_t i = 0; i < policy.size(); ++i) {
    const auto& e = policy[i];
    nlohmann::json ej;
    ej["dm"] = i + 1;
    ej["in_dim"] = e.in_dim();
    ej["out_dim"] = e.out_dim();
    if (auto a = affine_probe(e)) {
      ej["kind"] = "affine";
      ej["gain"] = mat_json(a->gain);
      ej["bias"] = vec_json(a->bias);
    } else if (const auto* t = e.as_tabular()) {
      ej["kind"] = "tabular";
      auto rows = nlohmann::json::array();
      for (const auto& [key, val] : t->table) rows.push_back({{"signal", key}, {"action", vec_json(val)}});
      ej["table"] = rows;
    } else {
      ej["kind"] = "closure";
      ej["label"] = e.label();
      ej["note"] = "closure: not serializable";
    }
    j["entries"].push_back(ej);
  }
  return j;
}

Policy policy_from_json(const nlohmann::json& j) {
  std::vector<PolicyEntry> entries;
  for (const auto& ej : j.at("entries")) {
    const auto kind = ej.at("kind").get<std::string>();
    if (kind == "affine") {
      Vector bias = json_vec(ej.at("bias"));
      const auto in_dim = ej.contains("in_dim") ? ej["in_dim"].get<Eigen::Index>() : 0;
      Matrix gain = json_mat(ej.at("gain"), in_dim);
      if (gain.rows() == 0) gain.resize(bias.size(), in_dim);
      entries.push_back(PolicyEntry::affine(std::move(gain), std::move(bias)));
    } else if (kind == "tabular") {
      std::map<std::vector<double>, Vector> table;
      for (const auto& row : ej.at("table"))
        table[row.at("signal").get<std::vector<double>>()] = json_vec(row.at("action"));
      entries.push_back(PolicyEntry::tabular(ej.at("in_dim").get<std::size_t>(),
                                             ej.at("out_dim").get<std::size_t>(), std::move(table)));
    } else {
      throw ConfigurationError("policy JSON: entry kind '" + kind + "' cannot be loaded");
    }
  }
  return Policy(std::move(entries));
}

}  // namespace teamred
