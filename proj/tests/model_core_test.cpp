#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "teamred/distribution.hpp"
#include "teamred/errors.hpp"
#include "teamred/model.hpp"
#include "teamred/monte_carlo.hpp"
#include "teamred/policy.hpp"
#include "teamred/random.hpp"
#include "test_support.hpp"

namespace teamred {
namespace {

using testing::row;
using testing::v1;

TEST(Random, SplitMixReferenceValue) {
  // First output of the reference SplitMix64 generator seeded with 0.
  EXPECT_EQ(mix64(0), 0xE220A8397B1DCDAFULL);
}

TEST(Random, StreamIsAFunctionOfTheKey) {
  CounterRng a(17), b(17), c(18);
  for (int k = 0; k < 100; ++k) {
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
  }
}

TEST(Random, NormalMoments) {
  CounterRng rng(5);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int k = 0; k < n; ++k) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Distribution, LogDensities) {
  const auto n = Distribution::standard_normal(1);
  EXPECT_NEAR(n.log_density(v1(0.0)), -0.5 * std::log(2 * std::numbers::pi), 1e-14);
  EXPECT_NEAR(n.log_density(v1(1.5)), std::log(testing::normal_pdf(1.5)), 1e-14);

  Matrix cov(2, 2);
  cov << 2.0, 0.5, 0.5, 1.0;
  const auto g = Distribution::gaussian(Vector::Zero(2), cov);
  Vector x(2);
  x << 0.3, -0.7;
  const double quad = x.dot(cov.inverse() * x);
  EXPECT_NEAR(g.log_density(x), -0.5 * quad - std::log(2 * std::numbers::pi) - 0.5 * std::log(cov.determinant()), 1e-12);

  const auto u = Distribution::uniform(v1(0.0), v1(0.25));
  EXPECT_NEAR(u.log_density(v1(0.1)), std::log(4.0), 1e-14);
  EXPECT_EQ(u.log_density(v1(0.3)), -INFINITY);

  const auto f = Distribution::finite_scalar({-1, 0, 1}, {0.2, 0.5, 0.3});
  EXPECT_NEAR(f.log_density(v1(1.0)), std::log(0.3), 1e-15);
  EXPECT_EQ(f.log_density(v1(0.5)), -INFINITY);
}

TEST(Distribution, QuadratureIsExactForPolynomials) {
  // Order-n Gauss rules integrate polynomials of degree 2n-1 exactly.
  double m2 = 0, m4 = 0;
  for (const auto& p : gauss_hermite(3)) {
    m2 += p.w * std::pow(p.x(0), 2);
    m4 += p.w * std::pow(p.x(0), 4);
  }
  EXPECT_NEAR(m2, 1.0, 1e-13);
  EXPECT_NEAR(m4, 3.0, 1e-13);
  double u2 = 0;
  for (const auto& p : gauss_legendre_unit(2)) u2 += p.w * p.x(0) * p.x(0);
  EXPECT_NEAR(u2, 1.0 / 3.0, 1e-14);

  Matrix cov(2, 2);
  cov << 1.0, 0.6, 0.6, 2.0;
  Vector mean(2);
  mean << 1.0, -1.0;
  double exy = 0, total = 0;
  for (const auto& p : Distribution::gaussian(mean, cov).quadrature(4)) {
    exy += p.w * p.x(0) * p.x(1);
    total += p.w;
  }
  EXPECT_NEAR(total, 1.0, 1e-13);
  EXPECT_NEAR(exy, 0.6 + mean(0) * mean(1), 1e-12);
}

TEST(Distribution, ValidationAndJsonRoundTrip) {
  EXPECT_FALSE(Distribution::finite_scalar({0, 1}, {0.7, 0.7}).validate().empty());
  const auto f = Distribution::finite_scalar({0, 1}, {0.25, 0.75});
  EXPECT_TRUE(f.validate().empty());
  const auto back = Distribution::from_json(f.to_json());
  EXPECT_EQ(back.to_json(), f.to_json());
  EXPECT_THROW(Distribution::from_json({{"dist", "cauchy"}, {"params", nlohmann::json::object()}}), ConfigurationError);
}

TEST(Policy, AffineProbeAndClamp) {
  const auto e = PolicyEntry::closure("lin", 2, 1, [](const Vector& x) { return v1(3.0 * x(0) - x(1) + 0.5); });
  const auto a = affine_probe(e);
  ASSERT_TRUE(a.has_value());
  EXPECT_NEAR(a->gain(0, 0), 3.0, 1e-12);
  EXPECT_NEAR(a->gain(0, 1), -1.0, 1e-12);
  EXPECT_NEAR(a->bias(0), 0.5, 1e-12);
  const auto sq = PolicyEntry::closure("sq", 1, 1, [](const Vector& x) { return v1(x(0) * x(0)); });
  EXPECT_FALSE(affine_probe(sq).has_value());

  ActionSpace box{v1(-1.0), v1(1.0)};
  const auto c = PolicyEntry::affine(row({2.0}), v1(0.0)).clamped(box);
  EXPECT_DOUBLE_EQ(c(v1(3.0))(0), 1.0);
  EXPECT_DOUBLE_EQ(c(v1(-0.25))(0), -0.5);
}

TEST(Policy, JsonRoundTrip) {
  std::map<std::vector<double>, Vector> table{{{0.0}, v1(1.0)}, {{1.0}, v1(-1.0)}};
  const Policy p({PolicyEntry::affine(row({1.0, 2.0}), v1(0.5)), PolicyEntry::tabular(1, 1, table)});
  const auto j = policy_to_json(p);
  const auto back = policy_from_json(j);
  EXPECT_EQ(policy_to_json(back), j);
  EXPECT_DOUBLE_EQ(back[1](v1(1.0))(0), -1.0);
  // Affine closures serialize through their probed representation; others are marked.
  const Policy closures({PolicyEntry::closure("id", 1, 1, [](const Vector& x) { return x; }),
                         PolicyEntry::closure("sq", 1, 1, [](const Vector& x) { return v1(x(0) * x(0)); })});
  const auto cj = policy_to_json(closures);
  EXPECT_EQ(cj["entries"][0]["kind"], "affine");
  EXPECT_EQ(cj["entries"][1]["kind"], "closure");
  EXPECT_EQ(cj["entries"][1]["note"], "closure: not serializable");
  EXPECT_THROW(policy_from_json(cj), ConfigurationError);
}

TeamProblem example1_like(double alpha) {
  return testing::two_dm_additive([alpha](std::span<const Vector> w, std::span<const Vector> u) {
    const double e = u[0](0) - u[1](0) + w[0](0);
    return e * e - alpha * u[0](0) * u[0](0);
  });
}

TEST(Model, SimulatePathFollowsTheMeasurementChain) {
  const auto p = example1_like(0.5);
  const Policy pol({PolicyEntry::constant(1, v1(2.0)), PolicyEntry::affine(row({0.0, 1.0}), v1(0.0))});
  const PrimitiveSample s{{v1(0.3), v1(-1.2)}};
  const auto path = simulate_path(p, pol, s);
  EXPECT_DOUBLE_EQ(path.measurements[1](0), -1.2 + 2.0);
  EXPECT_DOUBLE_EQ(path.actions[1](0), 0.8);
  // (u1 - u2 + w1)^2 - 0.5 u1^2 with w1 = 0.3.
  EXPECT_NEAR(path.cost, std::pow(2.0 - 0.8 + 0.3, 2) - 0.5 * 4.0, 1e-14);
}

TEST(Model, Classification) {
  auto p = example1_like(0.5);
  EXPECT_EQ(classify_information_structure(p), StructureLabel::partially_nested);

  auto recall = p;
  recall.info[1] = {measurement_ref(0), action_ref(0), measurement_ref(1)};
  EXPECT_EQ(classify_information_structure(recall), StructureLabel::classical);

  auto no_recall = p;
  no_recall.info[1] = {measurement_ref(1)};
  EXPECT_EQ(classify_information_structure(no_recall), StructureLabel::nonclassical);

  auto st = p;
  st.measurements[1].reads = {primitive_ref(1)};
  st.measurements[1].eval = [](std::span<const Vector> v) { return v[0]; };
  EXPECT_EQ(classify_information_structure(st), StructureLabel::static_team);
  EXPECT_EQ(to_string(StructureLabel::partially_nested), "partially-nested");
}

TEST(Model, ValidationFindsBrokenShapes) {
  auto p = example1_like(0.5);
  EXPECT_TRUE(validate_problem(p).empty());
  auto bad = p;
  bad.info[0] = {action_ref(1)};
  EXPECT_FALSE(validate_problem(bad).empty());
  auto prim = p;
  prim.info[0] = {primitive_ref(0)};
  EXPECT_FALSE(validate_problem(prim).empty());
}

TEST(Model, GradientConsistency) {
  auto p = example1_like(0.5);
  p.cost.gradient = [](std::span<const Vector> w, std::span<const Vector> u, std::size_t dm) {
    const double e = u[0](0) - u[1](0) + w[0](0);
    return dm == 0 ? v1(2 * e - u[0](0)) : v1(-2 * e);
  };
  EXPECT_LT(gradient_consistency(p, 50, 3), 1e-7);
  p.cost.gradient = [](std::span<const Vector>, std::span<const Vector>, std::size_t) { return v1(0.0); };
  EXPECT_GT(gradient_consistency(p, 50, 3), 1e-2);
}

TEST(MonteCarlo, IntegrateIsDeterministicAndExactModeIsExact) {
  PrimitiveSpace space;
  space.add("z", Distribution::standard_normal(1));
  MonteCarloPlan plan;
  plan.samples = 5000;
  auto kernel = [](const PrimitiveSample& s, std::size_t, std::span<double> out) { out[0] = s[0](0) * s[0](0); };
  const auto a = integrate(space, plan, 1, kernel)[0];
  const auto b = integrate(space, plan, 1, kernel)[0];
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_NEAR(a.mean, 1.0, 4.0 * a.std_error);
  const auto e = integrate(space, MonteCarloPlan::exact_plan(4), 1, kernel)[0];
  EXPECT_NEAR(e.mean, 1.0, 1e-13);
  EXPECT_EQ(e.std_error, 0.0);
  EXPECT_TRUE(e.exact);

  MonteCarloPlan zero;
  zero.samples = 0;
  EXPECT_THROW(zero.validate(), ConfigurationError);
}

}  // namespace
}  // namespace teamred
