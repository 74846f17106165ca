#pragma once

#include <cmath>
#include <numbers>
#include <span>

#include "teamred/model.hpp"
#include "teamred/reduction_dependent.hpp"

namespace teamred::testing {

inline Vector v1(double x) { return Vector::Constant(1, x); }

inline Matrix row(std::initializer_list<double> xs) {
  Matrix m(1, static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) m(0, k++) = x;
  return m;
}

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// Two DMs: y1 = w1, y2 = w2 + u1; I1 = {y1}, I2 = {y1, y2}; cost supplied.
inline TeamProblem two_dm_additive(CostEval cost, Distribution w1 = Distribution::standard_normal(1),
                                   Distribution w2 = Distribution::standard_normal(1)) {
  TeamProblem p;
  p.label = "two_dm";
  p.primitives.add("w1", std::move(w1));
  p.primitives.add("w2", std::move(w2));
  MeasurementMap m1{0, {primitive_ref(0)}, 1, [](std::span<const Vector> v) { return v[0]; }, {{"kind", "primitive"}}};
  MeasurementMap m2{1, {primitive_ref(1), action_ref(0)}, 1,
                    [](std::span<const Vector> v) { return Vector(v[0] + v[1]); }, {{"kind", "additive"}}};
  p.measurements = {m1, m2};
  p.info = {{measurement_ref(0)}, {measurement_ref(0), measurement_ref(1)}};
  p.action_spaces = {ActionSpace::unbounded(1), ActionSpace::unbounded(1)};
  p.cost.reads = {0, 1};
  p.cost.eval = std::move(cost);
  p.cost.spec = {{"kind", "test"}};
  return p;
}

inline InvertibleObservation two_dm_inverse(const TeamProblem& p) {
  InvertibleObservation inv;
  inv.dms.push_back(InvertibleObservation::identity(p, 0));
  inv.dms.push_back(InvertibleObservation::additive(
      1, {1}, 1, [](std::span<const Vector> v) { return v[0]; }, {0}, {Matrix::Identity(1, 1)}));
  return inv;
}

}  // namespace teamred::testing
