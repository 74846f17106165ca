#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "teamred/random.hpp"
#include "teamred/types.hpp"

namespace teamred {

struct Gaussian {
  Vector mean;
  Matrix cov;
};

struct Uniform {
  Vector lower;
  Vector upper;
};

struct FiniteSupport {
  std::vector<Vector> atoms;
  std::vector<double> probs;
};

struct WeightedPoint {
  Vector x;
  double w;
};

class Distribution {
 public:
  static Distribution gaussian(Vector mean, Matrix cov);
  static Distribution standard_normal(std::size_t dim);
  static Distribution uniform(Vector lower, Vector upper);
  static Distribution finite(std::vector<Vector> atoms,
                             std::vector<double> probs);
  // Scalar atoms convenience.
  static Distribution finite_scalar(const std::vector<double>& atoms,
                                    std::vector<double> probs);

  std::size_t dim() const { return dim_; }
  bool is_gaussian() const { return std::holds_alternative<Gaussian>(rep_); }
  bool is_uniform() const { return std::holds_alternative<Uniform>(rep_); }
  bool is_finite() const { return std::holds_alternative<FiniteSupport>(rep_); }
  const Gaussian& as_gaussian() const { return std::get<Gaussian>(rep_); }
  const Uniform& as_uniform() const { return std::get<Uniform>(rep_); }
  const FiniteSupport& as_finite() const {
    return std::get<FiniteSupport>(rep_);
  }

  Vector sample(CounterRng& rng) const;

  // Log of the density (Lebesgue) or of the mass (finite support).
  // Returns -inf off the support.
  double log_density(const Vector& x) const;

  // Exact nodes for finite support; Gauss-Hermite / Gauss-Legendre tensor
  // rules of the given order per coordinate otherwise.
  std::vector<WeightedPoint> quadrature(std::size_t order) const;

  // Empty iff the descriptor is well formed.
  std::vector<std::string> validate() const;

  nlohmann::json to_json() const;
  static Distribution from_json(const nlohmann::json& j);

 private:
  using Rep = std::variant<Gaussian, Uniform, FiniteSupport>;
  explicit Distribution(Rep rep);

  Rep rep_;
  std::size_t dim_ = 0;
  Matrix factor_;  // gaussian: factor_ * factor_' == cov
};

// Probabilists' Gauss-Hermite rule: nodes/weights for E[f(Z)], Z ~ N(0,1).
std::vector<WeightedPoint> gauss_hermite(std::size_t order);
// Gauss-Legendre rule for E[f(U)], U ~ Uniform(0,1).
std::vector<WeightedPoint> gauss_legendre_unit(std::size_t order);

}  // namespace teamred
