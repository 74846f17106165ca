#include "teamred/distribution.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "teamred/errors.hpp"

namespace teamred {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix psd_factor(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

std::vector<WeightedPoint> golub_welsch(const Vector& diag, const Vector& off) {
  const auto n = diag.size();
  Matrix jac = Matrix::Zero(n, n);
  jac.diagonal() = diag;
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    jac(k, k + 1) = off(k);
    jac(k + 1, k) = off(k);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(jac);
  std::vector<WeightedPoint> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    const double v0 = es.eigenvectors()(0, k);
    out.push_back({Vector::Constant(1, es.eigenvalues()(k)), v0 * v0});
  }
  return out;
}

std::vector<WeightedPoint> tensor(const std::vector<WeightedPoint>& rule,
                                  std::size_t dim) {
  std::vector<WeightedPoint> out{{Vector(0), 1.0}};
  for (std::size_t d = 0; d < dim; ++d) {
    std::vector<WeightedPoint> next;
    next.reserve(out.size() * rule.size());
    for (const auto& p : out) {
      for (const auto& r : rule) {
        Vector x(p.x.size() + 1);
        x.head(p.x.size()) = p.x;
        x(p.x.size()) = r.x(0);
        next.push_back({std::move(x), p.w * r.w});
      }
    }
    out = std::move(next);
  }
  return out;
}

Vector json_vector(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  return v;
}

nlohmann::json vector_json(const Vector& v) {
  auto j = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v(k));
  return j;
}

}  // namespace

std::vector<WeightedPoint> gauss_hermite(std::size_t order) {
  if (order == 0) throw ConfigurationError("quadrature order must be positive");
  const auto n = static_cast<Eigen::Index>(order);
  Vector off(std::max<Eigen::Index>(n - 1, 0));
  for (Eigen::Index k = 0; k + 1 < n; ++k) off(k) = std::sqrt(static_cast<double>(k + 1));
  return golub_welsch(Vector::Zero(n), off);
}

std::vector<WeightedPoint> gauss_legendre_unit(std::size_t order) {
  if (order == 0) throw ConfigurationError("quadrature order must be positive");
  const auto n = static_cast<Eigen::Index>(order);
  Vector off(std::max<Eigen::Index>(n - 1, 0));
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    const double m = static_cast<double>(k + 1);
    off(k) = m / std::sqrt(4.0 * m * m - 1.0);
  }
  auto rule = golub_welsch(Vector::Zero(n), off);
  for (auto& p : rule) p.x(0) = 0.5 * (p.x(0) + 1.0);
  return rule;
}

Distribution::Distribution(Rep rep) : rep_(std::move(rep)) {
  if (auto* g = std::get_if<Gaussian>(&rep_)) {
    dim_ = static_cast<std::size_t>(g->mean.size());
    factor_ = psd_factor(g->cov);
  } else if (auto* u = std::get_if<Uniform>(&rep_)) {
    dim_ = static_cast<std::size_t>(u->lower.size());
  } else {
    const auto& f = std::get<FiniteSupport>(rep_);
    dim_ = f.atoms.empty() ? 0 : static_cast<std::size_t>(f.atoms.front().size());
  }
}

Distribution Distribution::gaussian(Vector mean, Matrix cov) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw ConfigurationError("gaussian: covariance shape does not match mean");
  return Distribution(Gaussian{std::move(mean), std::move(cov)});
}

Distribution Distribution::standard_normal(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return gaussian(Vector::Zero(n), Matrix::Identity(n, n));
}

Distribution Distribution::uniform(Vector lower, Vector upper) {
  if (lower.size() != upper.size())
    throw ConfigurationError("uniform: bound dimensions differ");
  return Distribution(Uniform{std::move(lower), std::move(upper)});
}

Distribution Distribution::finite(std::vector<Vector> atoms,
                                  std::vector<double> probs) {
  if (atoms.empty() || atoms.size() != probs.size())
    throw ConfigurationError("finite: atoms and probabilities must be non-empty and aligned");
  for (const auto& a : atoms)
    if (a.size() != atoms.front().size())
      throw ConfigurationError("finite: atoms of differing dimension");
  return Distribution(FiniteSupport{std::move(atoms), std::move(probs)});
}

Distribution Distribution::finite_scalar(const std::vector<double>& atoms,
                                         std::vector<double> probs) {
  std::vector<Vector> a;
  a.reserve(atoms.size());
  for (double x : atoms) a.push_back(Vector::Constant(1, x));
  return finite(std::move(a), std::move(probs));
}

Vector Distribution::sample(CounterRng& rng) const {
  if (const auto* g = std::get_if<Gaussian>(&rep_)) {
    Vector z(g->mean.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
    return g->mean + factor_ * z;
  }
  if (const auto* u = std::get_if<Uniform>(&rep_)) {
    Vector x(u->lower.size());
    for (Eigen::Index k = 0; k < x.size(); ++k)
      x(k) = u->lower(k) + (u->upper(k) - u->lower(k)) * rng.uniform();
    return x;
  }
  const auto& f = std::get<FiniteSupport>(rep_);
  const double r = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < f.atoms.size(); ++k) {
    acc += f.probs[k];
    if (r < acc) return f.atoms[k];
  }
  // Rounding in the cumulative sum: fall back to the last atom with mass.
  for (std::size_t k = f.atoms.size(); k-- > 0;)
    if (f.probs[k] > 0.0) return f.atoms[k];
  return f.atoms.back();
}

double Distribution::log_density(const Vector& x) const {
  if (const auto* g = std::get_if<Gaussian>(&rep_)) {
    Eigen::LLT<Matrix> llt(g->cov);
    if (llt.info() != Eigen::Success)
      throw NumericalError("log_density: gaussian covariance is singular");
    const Vector z = llt.matrixL().solve(x - g->mean);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * (z.squaredNorm() + logdet +
                   static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi));
  }
  if (const auto* u = std::get_if<Uniform>(&rep_)) {
    double lv = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      if (x(k) < u->lower(k) || x(k) > u->upper(k)) return kNegInf;
      lv += std::log(u->upper(k) - u->lower(k));
    }
    return -lv;
  }
  const auto& f = std::get<FiniteSupport>(rep_);
  for (std::size_t k = 0; k < f.atoms.size(); ++k)
    if (f.atoms[k] == x) return f.probs[k] > 0.0 ? std::log(f.probs[k]) : kNegInf;
  return kNegInf;
}

std::vector<WeightedPoint> Distribution::quadrature(std::size_t order) const {
  if (const auto* f = std::get_if<FiniteSupport>(&rep_)) {
    std::vector<WeightedPoint> out;
    for (std::size_t k = 0; k < f->atoms.size(); ++k)
      if (f->probs[k] > 0.0) out.push_back({f->atoms[k], f->probs[k]});
    return out;
  }
  if (const auto* g = std::get_if<Gaussian>(&rep_)) {
    auto pts = tensor(gauss_hermite(order), dim_);
    for (auto& p : pts) p.x = g->mean + factor_ * p.x;
    return pts;
  }
  const auto& u = std::get<Uniform>(rep_);
  auto pts = tensor(gauss_legendre_unit(order), dim_);
  for (auto& p : pts)
    p.x = u.lower + (u.upper - u.lower).cwiseProduct(p.x);
  return pts;
}

std::vector<std::string> Distribution::validate() const {
  std::vector<std::string> out;
  if (const auto* g = std::get_if<Gaussian>(&rep_)) {
    if (!g->cov.isApprox(g->cov.transpose(), 1e-12))
      out.emplace_back("covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(g->cov);
    if (es.eigenvalues().size() > 0 &&
        es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
      out.emplace_back("covariance not PSD");
  } else if (const auto* u = std::get_if<Uniform>(&rep_)) {
    if ((u->upper - u->lower).minCoeff() <= 0.0)
      out.emplace_back("uniform box has empty interior");
  } else {
    const auto& f = std::get<FiniteSupport>(rep_);
    double total = 0.0;
    for (double p : f.probs) {
      if (p < 0.0) out.emplace_back("negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) out.emplace_back("probabilities do not sum to 1");
  }
  return out;
}

nlohmann::json Distribution::to_json() const {
  nlohmann::json j;
  if (const auto* g = std::get_if<Gaussian>(&rep_)) {
    j["dist"] = "gaussian";
    j["params"]["mean"] = vector_json(g->mean);
    auto cov = nlohmann::json::array();
    for (Eigen::Index r = 0; r < g->cov.rows(); ++r) cov.push_back(vector_json(g->cov.row(r).transpose()));
    j["params"]["cov"] = cov;
  } else if (const auto* u = std::get_if<Uniform>(&rep_)) {
    j["dist"] = "uniform";
    j["params"]["lower"] = vector_json(u->lower);
    j["params"]["upper"] = vector_json(u->upper);
  } else {
    const auto& f = std::get<FiniteSupport>(rep_);
    j["dist"] = "finite";
    auto atoms = nlohmann::json::array();
    for (const auto& a : f.atoms) atoms.push_back(vector_json(a));
    j["params"]["atoms"] = atoms;
    j["params"]["probs"] = f.probs;
  }
  j["dim"] = dim_;
  return j;
}

Distribution Distribution::from_json(const nlohmann::json& j) {
  const auto kind = j.at("dist").get<std::string>();
  const auto& p = j.at("params");
  if (kind == "gaussian") {
    Vector mean = json_vector(p.at("mean"));
    Matrix cov(mean.size(), mean.size());
    const auto& c = p.at("cov");
    if (c.size() != static_cast<std::size_t>(mean.size()))
      throw ConfigurationError("gaussian: covariance rows do not match mean");
    for (std::size_t r = 0; r < c.size(); ++r) {
      if (c[r].size() != static_cast<std::size_t>(mean.size()))
        throw ConfigurationError("gaussian: covariance is not square");
      for (std::size_t s = 0; s < c[r].size(); ++s)
        cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(s)) = c[r][s].get<double>();
    }
    return gaussian(std::move(mean), std::move(cov));
  }
  if (kind == "uniform") return uniform(json_vector(p.at("lower")), json_vector(p.at("upper")));
  if (kind == "finite") {
    std::vector<Vector> atoms;
    for (const auto& a : p.at("atoms")) atoms.push_back(json_vector(a));
    return finite(std::move(atoms), p.at("probs").get<std::vector<double>>());
  }
  throw ConfigurationError("unknown distribution kind '" + kind + "'");
}

}  // namespace teamred
