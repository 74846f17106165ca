#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "teamred/model.hpp"

namespace teamred {

struct MonteCarloPlan {
  std::size_t samples = 10000;
  std::uint64_t seed = 42;
  bool common_random_numbers = true;
  bool exact = false;          // quadrature / enumeration instead of sampling
  double fd_step = 1e-5;
  std::size_t quadrature_order = 10;
  std::uint64_t stream = 0;    // mixed into the seed when CRN is off

  static MonteCarloPlan exact_plan(std::size_t order = 10);
  MonteCarloPlan with_stream(std::uint64_t salt) const;
  void validate() const;
};

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  bool exact = false;
};

// Per-sample kernel: writes `outputs` values for one primitive sample.
using SampleKernel =
    std::function<void(const PrimitiveSample&, std::size_t index, std::span<double> out)>;

// Mean and standard error of every kernel output. Samples come in fixed
// blocks of kBlockSize with substream key mix64(seed, block); partial
// moments are merged in block order, so results do not depend on the
// number of workers.
std::vector<Estimate> integrate(const PrimitiveSpace& space, const MonteCarloPlan& plan,
                                std::size_t outputs, const SampleKernel& kernel);

inline constexpr std::size_t kBlockSize = 1024;

// Tensor product of per-variable quadrature rules.
std::vector<std::pair<PrimitiveSample, double>> enumerate_space(const PrimitiveSpace& space,
                                                                std::size_t order);

// Number of workers: TEAMRED_THREADS if set, else hardware concurrency.
std::size_t worker_count();

// Runs fn(task) for task in [0, tasks) on the worker pool.
void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& fn);

}  // namespace teamred
