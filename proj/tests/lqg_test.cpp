#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "teamred/errors.hpp"
#include "teamred/lqg.hpp"
#include "teamred/optimality.hpp"
#include "teamred/random.hpp"
#include "test_support.hpp"

namespace teamred {
namespace {

using testing::row;

LqgTeam coupled_static_pair() {
  LqgTeam t;
  t.sigma_zeta = Matrix::Identity(1, 1);
  t.H = {Matrix::Ones(1, 1), Matrix::Ones(1, 1)};
  t.action_dims = {1, 1};
  t.Q = Matrix::Identity(1, 1);
  Matrix R(2, 2);
  R << 2.0, 0.5, 0.5, 1.0;
  t.R = R;
  t.S = Matrix::Ones(2, 1);
  return t;
}

// Three scalar DMs in a chain with B21 = 2, B31 = 1, B32 = 3.
LqgTeam chain3() {
  LqgTeam t;
  t.sigma_zeta = Matrix::Identity(3, 3);
  t.H = {row({1, 0, 0}), row({0, 1, 0}), row({0, 0, 1})};
  t.B[{1, 0}] = Matrix::Constant(1, 1, 2.0);
  t.B[{2, 0}] = Matrix::Constant(1, 1, 1.0);
  t.B[{2, 1}] = Matrix::Constant(1, 1, 3.0);
  t.action_dims = {1, 1, 1};
  t.Q = Matrix::Identity(3, 3);
  t.R = Matrix::Identity(3, 3);
  t.S = 0.3 * Matrix::Ones(3, 3);
  return t;
}

GainSet chain3_manual_gains(const LqgTeam& t) {
  auto g = solve_static_gains(t).gains;
  g.G[0] = row({1});
  g.G[1] = row({2, 3});
  g.G[2] = row({4, 5, 6});
  return g;
}

TEST(StaticGains, MatchGridSearch) {
  const auto t = coupled_static_pair();
  double best = std::numeric_limits<double>::infinity(), b1 = 0, b2 = 0;
  for (int i = -400; i <= 400; ++i)
    for (int j = -400; j <= 400; ++j) {
      const double g1 = 0.005 * i, g2 = 0.005 * j;
      const double J = 1.0 + 2.0 * g1 * g1 + g2 * g2 + g1 * g2 + 2.0 * (g1 + g2);
      if (J < best) best = J, b1 = g1, b2 = g2;
    }
  const auto s = solve_static_gains(t);
  EXPECT_LE(s.relative_residual, 1e-10);
  EXPECT_NEAR(s.gains.G[0](0, 0), b1, 0.005);
  EXPECT_NEAR(s.gains.G[1](0, 0), b2, 0.005);
  const double j = exact_cost(t, s.gains, LqgForm::S);
  EXPECT_LE(j, best + 1e-12);
  EXPECT_NEAR(j, best, 1e-4);
}

LqgTeam scalar_pair() {
  LqgTeam t;
  t.sigma_zeta = Matrix::Identity(1, 1);
  t.H = {Matrix::Ones(1, 1), Matrix::Ones(1, 1)};
  t.action_dims = {1, 1};
  t.Q = Matrix::Identity(1, 1);
  t.R = Matrix::Identity(2, 2);
  t.S = Matrix::Ones(2, 1);
  return t;
}

// Nested grid search on the exact cost, shrinking around the incumbent.
std::pair<double, double> nested_grid_minimum(const LqgTeam& t) {
  auto g = solve_static_gains(t).gains;
  auto J = [&](double a, double b) {
    g.G[0](0, 0) = a;
    g.G[1](0, 0) = b;
    return exact_cost(t, g, LqgForm::S);
  };
  double c0 = 0.0, c1 = 0.0, h = 0.5;
  for (int level = 0; level < 12; ++level, h /= 10.0) {
    double best = std::numeric_limits<double>::infinity(), b0 = c0, b1 = c1;
    for (int i = -20; i <= 20; ++i)
      for (int j = -20; j <= 20; ++j)
        if (const double v = J(c0 + i * h, c1 + j * h); v < best) best = v, b0 = c0 + i * h, b1 = c1 + j * h;
    c0 = b0, c1 = b1;
  }
  return {c0, c1};
}

TEST(StaticGains, ScalarPairMatchesNestedGrid) {
  const auto t = scalar_pair();
  const auto [a, b] = nested_grid_minimum(t);
  const auto g = solve_static_gains(t).gains;
  EXPECT_NEAR(g.G[0](0, 0), a, 1e-6);
  EXPECT_NEAR(g.G[1](0, 0), b, 1e-6);
}

TEST(ExactCost, ScalarPairAgreesWithMonteCarlo) {
  const auto t = scalar_pair();
  const auto g = transport_gains_G_to_K(t, solve_static_gains(t).gains);
  const auto est = evaluate_cost(lqg_problem(t), lqg_policy(t, g, LqgForm::D), MonteCarloPlan{1000000, 42});
  EXPECT_LE(std::abs(est.mean - exact_cost(t, g, LqgForm::D)), 4.0 * est.std_error);
}

TEST(GainTransport, ScalarPairWithMixing) {
  LqgTeam t;
  t.sigma_zeta = Matrix::Identity(2, 2);
  t.H = {row({1, 0}), row({0, 1})};
  t.B[{1, 0}] = Matrix::Constant(1, 1, 5.0);
  t.action_dims = {1, 1};
  t.Q = Matrix::Identity(2, 2);
  t.R = Matrix::Identity(2, 2);
  t.S = Matrix::Identity(2, 2);
  auto g = solve_static_gains(t).gains;
  g.G[0] = row({2});
  g.G[1] = row({3, 4});
  const auto k = transport_gains_G_to_K(t, g);
  EXPECT_NEAR(k.K[0](0, 0), 2.0, 1e-12);
  EXPECT_NEAR(k.K[1](0, 0), -37.0, 1e-12);
  EXPECT_NEAR(k.K[1](0, 1), 4.0, 1e-12);
  const auto d = lqg_problem(t);
  const auto s = make_form(d, lqg_inverse(t), {Form::S, {}});
  CounterRng rng(5);
  double sup = 0.0;
  for (int n = 0; n < 10000; ++n) {
    const auto smp = d.primitives.sample(rng);
    const auto a = simulate_path(d, lqg_policy(t, k, LqgForm::D), smp);
    const auto b = simulate_path(s, lqg_policy(t, k, LqgForm::S), smp);
    for (std::size_t i = 0; i < 2; ++i) sup = std::max(sup, std::abs(a.actions[i](0) - b.actions[i](0)));
  }
  EXPECT_LE(sup, 1e-9);
  EXPECT_LE(std::abs(exact_cost(t, k, LqgForm::S) - exact_cost(t, k, LqgForm::D)), 1e-10);
}

TEST(StaticGains, SingleDecisionMakerClosedForm) {
  LqgTeam t;
  Matrix A(3, 3);
  A << 1.0, 0.2, 0.0, 0.3, 1.1, 0.4, 0.0, -0.5, 0.9;
  t.sigma_zeta = A * A.transpose();
  Matrix H(2, 3);
  H << 1.0, 0.0, 0.5, 0.0, 1.0, -1.0;
  t.H = {H};
  t.action_dims = {2};
  t.Q = Matrix::Identity(3, 3);
  Matrix R(2, 2);
  R << 1.5, 0.2, 0.2, 0.8;
  t.R = R;
  Matrix S(2, 3);
  S << 0.4, -1.0, 0.3, 0.7, 0.1, -0.2;
  t.S = S;
  const Matrix Sy = H * t.sigma_zeta * H.transpose();
  const Matrix expect = -R.inverse() * S * t.sigma_zeta * H.transpose() * Sy.inverse();
  const auto g = solve_static_gains(t).gains;
  EXPECT_LE((g.G[0] - expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(StaticGains, IterativeAgreesWithDirect) {
  for (const auto& t : {coupled_static_pair(), chain3()}) {
    const auto direct = solve_static_gains(t).gains;
    const auto iter = solve_static_gains_iterative(t);
    for (std::size_t i = 0; i < t.dms(); ++i) EXPECT_LE((direct.G[i] - iter.G[i]).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GainTransport, ChainRecursionByHand) {
  const auto t = chain3();
  const auto k = transport_gains_G_to_K(t, chain3_manual_gains(t));
  // Substituting ŷ^S = ŷ^D minus upstream actions by hand.
  EXPECT_NEAR(k.K[0](0, 0), 1.0, 1e-12);
  EXPECT_NEAR(k.K[1](0, 0), -4.0, 1e-12);
  EXPECT_NEAR(k.K[1](0, 1), 3.0, 1e-12);
  EXPECT_NEAR(k.K[2](0, 0), 60.0, 1e-12);
  EXPECT_NEAR(k.K[2](0, 1), -49.0, 1e-12);
  EXPECT_NEAR(k.K[2](0, 2), 6.0, 1e-12);
}

TEST(GainTransport, PathwiseActionsAgree) {
  const auto t = chain3();
  const auto k = transport_gains_G_to_K(t, chain3_manual_gains(t));
  const auto d = lqg_problem(t);
  const auto s = make_form(d, lqg_inverse(t), {Form::S, {}});
  const auto pd = lqg_policy(t, k, LqgForm::D);
  const auto ps = lqg_policy(t, k, LqgForm::S);
  CounterRng rng(77);
  double sup = 0.0;
  for (int n = 0; n < 10000; ++n) {
    const auto smp = d.primitives.sample(rng);
    const auto a = simulate_path(d, pd, smp);
    const auto b = simulate_path(s, ps, smp);
    for (std::size_t i = 0; i < 3; ++i) sup = std::max(sup, (a.actions[i] - b.actions[i]).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(sup, 1e-9);
  EXPECT_NEAR(exact_cost(t, k, LqgForm::S), exact_cost(t, k, LqgForm::D), 1e-9);
}

TEST(GainTransport, NoMixingLeavesGainsUnchanged) {
  auto t = chain3();
  t.B.clear();
  const auto g = solve_static_gains(t).gains;
  const auto k = transport_gains_G_to_K(t, g);
  for (std::size_t i = 0; i < t.dms(); ++i) EXPECT_EQ(k.K[i], g.G[i]);
}

TEST(ExactCost, ZeroGainsGiveTraceTerm) {
  auto t = chain3();
  Matrix Q(3, 3);
  Q << 2.0, 0.1, 0.0, 0.1, 1.0, 0.3, 0.0, 0.3, 1.5;
  t.Q = Q;
  auto g = solve_static_gains(t).gains;
  for (auto& m : g.G) m.setZero();
  g = transport_gains_G_to_K(t, g);
  EXPECT_NEAR(exact_cost(t, g, LqgForm::S), (Q * t.sigma_zeta).trace(), 1e-12);
}

TEST(ExactCost, AgreesWithMonteCarlo) {
  const auto t = chain3();
  const auto g = transport_gains_G_to_K(t, solve_static_gains(t).gains);
  const auto est = evaluate_cost(lqg_problem(t), lqg_policy(t, g, LqgForm::D), MonteCarloPlan{1000000, 42});
  const double exact = exact_cost(t, g, LqgForm::D);
  EXPECT_LE(std::abs(est.mean - exact), 4.0 * est.std_error) << est.mean << " vs " << exact;
}

TEST(LqgJson, RoundTripAndOneBasedKeys) {
  const auto t = chain3();
  const auto back = LqgTeam::from_json(t.to_json());
  EXPECT_EQ(back.sigma_zeta, t.sigma_zeta);
  EXPECT_EQ(back.R, t.R);
  EXPECT_EQ(back.S, t.S);
  ASSERT_EQ(back.B.size(), 3u);
  EXPECT_EQ(back.B.at({2, 1})(0, 0), 3.0);

  const nlohmann::json j = {{"N", 2},
                            {"Sigma_zeta", {{1.0, 0.0}, {0.0, 1.0}}},
                            {"H", {{{1.0, 0.0}}, {{0.0, 1.0}}}},
                            {"dims", {{"u", {1, 1}}}},
                            {"B", {{"(2,1)", 0.5}}},
                            {"Q", {{1.0, 0.0}, {0.0, 1.0}}},
                            {"R", {{1.0, 0.0}, {0.0, 1.0}}},
                            {"S", {{1.0, 0.0}, {0.0, 1.0}}}};
  const auto p = LqgTeam::from_json(j);
  EXPECT_EQ(p.B.at({1, 0})(0, 0), 0.5);
  EXPECT_EQ(p.observed(1), (std::vector<std::size_t>{0, 1}));

  auto bad = j;
  bad["R"] = {{1.0, 0.0}, {0.0, -1.0}};
  EXPECT_THROW(LqgTeam::from_json(bad), ConfigurationError);
  bad = j;
  bad["B"] = {{"(1,2)", 0.5}};
  EXPECT_THROW(LqgTeam::from_json(bad), ConfigurationError);
}

}  // namespace
}  // namespace teamred
