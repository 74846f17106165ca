#include <benchmark/benchmark.h>

#include "teamred/lqg.hpp"
#include "teamred/multistage.hpp"
#include "teamred/optimality.hpp"
#include "teamred/reduction_independent.hpp"
#include "teamred/scenarios.hpp"

namespace {

using namespace teamred;

MonteCarloPlan plan_for(const benchmark::State& state) {
  MonteCarloPlan p;
  p.samples = static_cast<std::size_t>(state.range(0));
  return p;
}

void BM_DirectCost(benchmark::State& state) {
  const auto b = build_scenario("example1");
  const auto& pol = b.policies.at("gamma_star_transported");
  const auto plan = plan_for(state);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_cost(*b.problem, pol, plan).mean);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DirectCost)->Arg(1000)->Arg(100000);

void BM_ReducedCost(benchmark::State& state) {
  const auto b = build_scenario("example1");
  const auto& pol = b.policies.at("gamma_star_transported");
  const auto plan = plan_for(state);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_cost_reduced(*b.reduced, pol, plan).mean);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ReducedCost)->Arg(1000)->Arg(100000);

void BM_FiniteToyExact(benchmark::State& state) {
  const auto b = build_scenario("finite_toy");
  const auto& pol = b.policies.at("global_optimum");
  const auto plan = MonteCarloPlan::exact_plan(1);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_cost_reduced(*b.reduced, pol, plan).mean);
}
BENCHMARK(BM_FiniteToyExact);

void BM_StationarityExample3(benchmark::State& state) {
  const auto b = build_scenario("example3");
  const auto& pol = b.policies.at("gamma_star");
  const DynamicModel model(*b.problem);
  const auto plan = plan_for(state);
  for (auto _ : state) benchmark::DoNotOptimize(stationarity_check(model, pol, plan).pass);
}
BENCHMARK(BM_StationarityExample3)->Arg(20000)->Unit(benchmark::kMillisecond);

// Chain of N scalar DMs, each observing its own coordinate of zeta plus the previous action.
LqgTeam chain(std::size_t n) {
  LqgTeam t;
  t.sigma_zeta = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  t.action_dims.assign(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix h = Matrix::Zero(1, static_cast<Eigen::Index>(n));
    h(0, static_cast<Eigen::Index>(i)) = 1.0;
    t.H.push_back(h);
  }
  for (std::size_t i = 1; i < n; ++i) t.B[{i, i - 1}] = Matrix::Constant(1, 1, 0.5);
  t.Q = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  t.R = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) +
        Matrix::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), 0.1);
  t.S = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  return t;
}

void BM_LqgStaticSolve(benchmark::State& state) {
  const auto t = chain(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(solve_static_gains(t).gains.G.size());
}
BENCHMARK(BM_LqgStaticSolve)->RangeMultiplier(2)->Range(2, 32);

void BM_LqgTransport(benchmark::State& state) {
  const auto t = chain(static_cast<std::size_t>(state.range(0)));
  const auto g = solve_static_gains(t).gains;
  for (auto _ : state) benchmark::DoNotOptimize(transport_gains_G_to_K(t, g).K.size());
}
BENCHMARK(BM_LqgTransport)->RangeMultiplier(2)->Range(2, 32);

void BM_MultistageCost(benchmark::State& state) {
  const auto b = build_scenario("example6_ms");
  const DirectMultiStage m(*b.multistage);
  const auto& pol = b.multi_policies.at("reference");
  const auto plan = plan_for(state);
  for (auto _ : state) benchmark::DoNotOptimize(multistage_cost(m, pol, plan).mean);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MultistageCost)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
