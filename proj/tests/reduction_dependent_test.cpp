#include <gtest/gtest.h>

#include <cmath>

#include "teamred/errors.hpp"
#include "teamred/monte_carlo.hpp"
#include "teamred/random.hpp"
#include "teamred/reduction_dependent.hpp"
#include "teamred/scenarios.hpp"
#include "test_support.hpp"

namespace teamred {
namespace {

using testing::row;
using testing::v1;

double zero_cost(std::span<const Vector>, std::span<const Vector>) { return 0.0; }

// Evaluates a policy entry at a scalar information vector.
double at(const PolicyEntry& e, std::initializer_list<double> xs) {
  Vector x(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double v : xs) x(k++) = v;
  return e(x)(0);
}

TEST(MakeForm, StaticFormReadsOnlyTheStaticPart) {
  const auto b = build_scenario("example1");
  const auto s = make_form(*b.problem, *b.inverse, {Form::S, {}});
  EXPECT_EQ(s.measurements[1].reads, std::vector<SignalRef>{primitive_ref(1)});
  EXPECT_EQ(s.info, b.problem->info);
  CounterRng rng(11);
  const Policy g({PolicyEntry::constant(1, v1(3.0)), PolicyEntry::zero(2, 1)});
  for (int k = 0; k < 50; ++k) {
    const auto sample = s.primitives.sample(rng);
    const auto ps = simulate_path(s, g, sample);
    const auto pd = simulate_path(*b.problem, g, sample);
    EXPECT_DOUBLE_EQ(ps.measurements[1](0), sample[1](0));
    EXPECT_DOUBLE_EQ(pd.measurements[1](0), sample[1](0) + 3.0);
  }
}

TEST(MakeForm, ControlSharingAppendsUpstreamActions) {
  const auto b = build_scenario("example4");
  const auto cs = make_form(*b.problem, *b.inverse, {Form::CS, {}});
  const std::vector<SignalRef> expect{measurement_ref(0), measurement_ref(1), action_ref(0)};
  EXPECT_EQ(cs.info[1], expect);
  EXPECT_EQ(cs.info[0], b.problem->info[0]);
  EXPECT_EQ(cs.measurements[1].reads, std::vector<SignalRef>{primitive_ref(2)});
  const auto dcs = make_form(*b.problem, *b.inverse, {Form::DCS, {}});
  EXPECT_EQ(dcs.info[1], expect);
  EXPECT_EQ(dcs.measurements[1].reads, b.problem->measurements[1].reads);
}

TEST(MakeForm, SharingPatternMustBeSubsetOfPrecedence) {
  const auto p = testing::two_dm_additive(zero_cost);
  const auto inv = testing::two_dm_inverse(p);
  FormTag bad{Form::DCS, std::vector<std::vector<std::size_t>>{{1}, {0}}};
  EXPECT_THROW(make_form(p, inv, bad), ConfigurationError);
  FormTag empty{Form::DCS, std::vector<std::vector<std::size_t>>{{}, {}}};
  EXPECT_EQ(make_form(p, inv, empty).info, p.info);
}

TEST(MakeForm, NonclassicalIsUnsupported) {
  auto p = testing::two_dm_additive(zero_cost);
  p.info[1] = {measurement_ref(1)};
  EXPECT_THROW(make_form(p, testing::two_dm_inverse(p), {Form::S, {}}), UnsupportedForm);
}

TEST(Inverse, ValidatesAndDetectsBrokenInverse) {
  const auto p = testing::two_dm_additive(zero_cost);
  auto inv = testing::two_dm_inverse(p);
  EXPECT_TRUE(validate_inverse(p, inv).empty());
  inv.dms[1].g_inv = [](const Vector& y, std::span<const Vector> u) { return Vector(y + u[0]); };
  EXPECT_FALSE(validate_inverse(p, inv).empty());
}

TEST(Transport, DynamicConstantUpstreamShiftsStaticResponse) {
  const auto p = testing::two_dm_additive(zero_cost);
  const auto inv = testing::two_dm_inverse(p);
  for (double c : {-1.5, 0.0, 2.0}) {
    const Policy gd({PolicyEntry::constant(1, v1(c)), PolicyEntry::affine(row({0.0, 1.0}), v1(0.0))});
    const auto gs = transport_policy_D_to_S(p, inv, gd);
    for (double y1 : {-1.0, 0.4})
      for (double ys : {-2.0, 0.0, 3.3}) EXPECT_NEAR(at(gs[1], {y1, ys}), ys + c, 1e-14);
    const auto simple = simplify_affine(gs);
    ASSERT_NE(simple[1].as_affine(), nullptr);
    EXPECT_NEAR(simple[1].as_affine()->gain(0, 1), 1.0, 1e-9);
    EXPECT_NEAR(simple[1].as_affine()->bias(0), c, 1e-9);
  }
}

TEST(Transport, StaticToDynamicSubtractsUpstream) {
  const auto p = testing::two_dm_additive(zero_cost);
  const auto inv = testing::two_dm_inverse(p);
  const Policy gs({PolicyEntry::affine(row({2.0}), v1(0.5)), PolicyEntry::affine(row({0.0, 1.0}), v1(0.0))});
  const auto gd = transport_policy_S_to_D(p, inv, gs);
  for (double y1 : {-1.0, 0.4})
    for (double y2 : {-2.0, 3.3}) EXPECT_NEAR(at(gd[1], {y1, y2}), y2 - (2.0 * y1 + 0.5), 1e-14);
}

TEST(Transport, SquareRootMixing) {
  const auto b = build_scenario("example3");
  const auto& gs = b.policies.at("gamma_star_transported");
  for (double y1 : {-1.0, 2.0})
    for (double ys : {-0.3, 1.7}) EXPECT_NEAR(at(gs[1], {y1, ys}), ys, 1e-12);
  // A nonzero upstream policy enters through its square root.
  const Policy gd({PolicyEntry::constant(1, v1(4.0)), PolicyEntry::affine(row({0.0, 1.0}), v1(0.0))});
  const auto gs2 = transport_policy_D_to_S(*b.problem, *b.inverse, gd);
  EXPECT_NEAR(at(gs2[1], {0.0, 1.0}), 3.0, 1e-12);
}

TEST(Transport, PathwiseActionsAgreeAndRoundTrip) {
  const auto p = testing::two_dm_additive(zero_cost);
  const auto inv = testing::two_dm_inverse(p);
  const auto s = make_form(p, inv, {Form::S, {}});
  const Policy gd({PolicyEntry::closure("sin", 1, 1, [](const Vector& x) { return v1(std::sin(x(0)) + 0.3); }),
                   PolicyEntry::closure("nl", 2, 1, [](const Vector& x) { return v1(x(0) * x(1) - std::tanh(x(1))); })});
  const auto gs = transport_policy_D_to_S(p, inv, gd);
  const auto back = transport_policy_S_to_D(p, inv, gs);
  CounterRng rng(mix64(42, 3));
  double worst_path = 0.0, worst_round = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const auto sample = p.primitives.sample(rng);
    const auto pd = simulate_path(p, gd, sample);
    const auto ps = simulate_path(s, gs, sample);
    const auto pb = simulate_path(p, back, sample);
    for (std::size_t i = 0; i < 2; ++i) {
      worst_path = std::max(worst_path, std::abs(pd.actions[i](0) - ps.actions[i](0)));
      worst_round = std::max(worst_round, std::abs(pd.actions[i](0) - pb.actions[i](0)));
    }
  }
  EXPECT_LE(worst_path, 1e-9);
  EXPECT_LE(worst_round, 1e-9);
}

TEST(Transport, ControlSharingIgnoresUpstreamPolicy) {
  const auto p = testing::two_dm_additive(zero_cost);
  const auto inv = testing::two_dm_inverse(p);
  const auto dcs = make_form(p, inv, {Form::DCS, {}});
  const auto g2 = PolicyEntry::closure("g2", 3, 1, [](const Vector& x) { return v1(x(1) * x(2) + x(0)); });
  const Policy a({PolicyEntry::constant(1, v1(1.0)), g2});
  const Policy b({PolicyEntry::closure("cube", 1, 1, [](const Vector& x) { return v1(x(0) * x(0) * x(0)); }), g2});
  const auto ta = transport_policy_D_to_S(dcs, inv, a);
  const auto tb = transport_policy_D_to_S(dcs, inv, b);
  CounterRng rng(5);
  for (int k = 0; k < 200; ++k) {
    Vector x(3);
    x << rng.normal(), rng.normal(), rng.normal();
    EXPECT_EQ(ta[1](x)(0), tb[1](x)(0));
    // ŷ^D = ŷ^S + u¹ with u¹ read from the shared slot.
    EXPECT_NEAR(ta[1](x)(0), (x(1) + x(2)) * x(2) + x(0), 1e-12);
  }
}

TEST(Transport, EmbeddingIntoControlSharingPreservesActions) {
  const auto b = build_scenario("example1");
  const auto dcs = make_form(*b.problem, *b.inverse, {Form::DCS, {}});
  const auto& gd = b.policies.at("gamma_star_transported");
  ASSERT_NE(gd[1].as_affine(), nullptr);
  Matrix lifted(1, 3);
  lifted << gd[1].as_affine()->gain, 0.0;
  const Policy gl({gd[0], PolicyEntry::affine(lifted, gd[1].as_affine()->bias)});
  CounterRng rng(8);
  for (int k = 0; k < 500; ++k) {
    const auto sample = b.problem->primitives.sample(rng);
    const auto p1 = simulate_path(*b.problem, gd, sample);
    const auto p2 = simulate_path(dcs, gl, sample);
    EXPECT_EQ(p1.actions[1](0), p2.actions[1](0));
    EXPECT_EQ(p1.cost, p2.cost);
  }
}

TEST(ConditionC, AffineCompositionHolds) {
  const auto b = build_scenario("example1");
  const auto r = check_condition_C(*b.problem, *b.inverse, b.policies.at("gamma_star_transported"), MonteCarloPlan{});
  EXPECT_TRUE(r.holds);
  EXPECT_LE(r.max_second_difference, 1e-9);
}

TEST(ConditionC, SquareRootMixingFails) {
  const auto b = build_scenario("example3");
  const auto r = check_condition_C(*b.problem, *b.inverse, b.policies.at("gamma_star"), MonteCarloPlan{});
  EXPECT_FALSE(r.holds);
  EXPECT_GT(r.max_second_difference, 1e-3);
}

TEST(ConditionC, NonlinearPolicyInAdditiveChannelFails) {
  const auto p = testing::two_dm_additive(zero_cost);
  const auto inv = testing::two_dm_inverse(p);
  const Policy g({PolicyEntry::zero(1, 1),
                  PolicyEntry::closure("sq", 2, 1, [](const Vector& x) { return v1(x(1) * x(1)); })});
  EXPECT_FALSE(check_condition_C(p, inv, g, MonteCarloPlan{}).holds);
}

TEST(FormNames, RoundTrip) {
  for (Form f : {Form::D, Form::S, Form::DCS, Form::CS}) EXPECT_EQ(form_from_string(to_string(f)), f);
  EXPECT_THROW(form_from_string("X"), ConfigurationError);
}

}  // namespace
}  // namespace teamred
