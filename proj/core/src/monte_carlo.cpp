#include "teamred/monte_carlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "teamred/errors.hpp"

namespace teamred {
namespace {

constexpr std::size_t kMaxNodes = 20'000'000;

// Neumaier compensated sum.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      carry += (sum - t) + x;
    else
      carry += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

// Weighted moments of one output over one block.
struct Moments {
  double weight = 0.0;
  double mean = 0.0;
  double m2 = 0.0;
  void add(double x, double w) {
    weight += w;
    const double delta = x - mean;
    mean += delta * w / weight;
    m2 += w * delta * (x - mean);
  }
};

}  // namespace

MonteCarloPlan MonteCarloPlan::exact_plan(std::size_t order) {
  MonteCarloPlan p;
  p.exact = true;
  p.quadrature_order = order;
  return p;
}

MonteCarloPlan MonteCarloPlan::with_stream(std::uint64_t salt) const {
  MonteCarloPlan p = *this;
  p.stream = salt;
  return p;
}

void MonteCarloPlan::validate() const {
  if (!exact && samples < 1) throw ConfigurationError("plan: samples must be at least 1");
  if (!(fd_step > 0.0)) throw ConfigurationError("plan: fd_step must be positive");
  if (exact && quadrature_order < 1) throw ConfigurationError("plan: quadrature order must be positive");
}

std::size_t worker_count() {
  if (const char* env = std::getenv("TEAMRED_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(std::min<long>(v, 256));
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), tasks);
  if (workers <= 1) {
    for (std::size_t t = 0; t < tasks; ++t) fn(t);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks) return;
      try {
        fn(t);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(tasks);
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  }
  if (failure) std::rethrow_exception(failure);
}

std::vector<std::pair<PrimitiveSample, double>> enumerate_space(const PrimitiveSpace& space,
                                                                std::size_t order) {
  std::vector<std::vector<WeightedPoint>> rules;
  std::size_t total = 1;
  for (const auto& v : space.variables()) {
    rules.push_back(v.dist.quadrature(order));
    total *= rules.back().size();
    if (total > kMaxNodes)
      throw ConfigurationError("exact evaluation would need more than 2e7 nodes");
  }
  std::vector<std::pair<PrimitiveSample, double>> out;
  out.reserve(total);
  std::vector<std::size_t> idx(rules.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    PrimitiveSample s;
    double w = 1.0;
    for (std::size_t k = 0; k < rules.size(); ++k) {
      s.values.push_back(rules[k][idx[k]].x);
      w *= rules[k][idx[k]].w;
    }
    out.emplace_back(std::move(s), w);
    for (std::size_t k = rules.size(); k-- > 0;) {
      if (++idx[k] < rules[k].size()) break;
      idx[k] = 0;
    }
  }
  return out;
}

std::vector<Estimate> integrate(const PrimitiveSpace& space, const MonteCarloPlan& plan,
                                std::size_t outputs, const SampleKernel& kernel) {
  plan.validate();
  std::vector<std::pair<PrimitiveSample, double>> nodes;
  std::size_t count = plan.samples;
  if (plan.exact) {
    nodes = enumerate_space(space, plan.quadrature_order);
    count = nodes.size();
  }
  const std::size_t blocks = (count + kBlockSize - 1) / kBlockSize;
  const std::uint64_t key =
      plan.common_random_numbers ? plan.seed : mix64(plan.seed, plan.stream);

  std::vector<std::vector<Moments>> partial(blocks, std::vector<Moments>(outputs));
  parallel_for(blocks, [&](std::size_t b) {
    CounterRng rng(mix64(key, b));
    std::vector<double> out(outputs);
    auto& acc = partial[b];
    const std::size_t end = std::min(count, (b + 1) * kBlockSize);
    for (std::size_t s = b * kBlockSize; s < end; ++s) {
      std::fill(out.begin(), out.end(), 0.0);
      if (plan.exact) {
        kernel(nodes[s].first, s, out);
        for (std::size_t k = 0; k < outputs; ++k) acc[k].add(out[k], nodes[s].second);
      } else {
        const PrimitiveSample sample = space.sample(rng);
        kernel(sample, s, out);
        for (std::size_t k = 0; k < outputs; ++k) acc[k].add(out[k], 1.0);
      }
      for (std::size_t k = 0; k < outputs; ++k)
        if (!std::isfinite(out[k]))
          throw NumericalError("non-finite pathwise value at sample " + std::to_string(s));
    }
  });

  std::vector<Estimate> result(outputs);
  for (std::size_t k = 0; k < outputs; ++k) {
    CompensatedSum weighted_sum, weight_sum;
    for (std::size_t b = 0; b < blocks; ++b) {
      weighted_sum.add(partial[b][k].mean * partial[b][k].weight);
      weight_sum.add(partial[b][k].weight);
    }
    const double w = weight_sum.value();
    const double mean = weighted_sum.value() / w;
    CompensatedSum m2;
    for (std::size_t b = 0; b < blocks; ++b) {
      const double d = partial[b][k].mean - mean;
      m2.add(partial[b][k].m2 + partial[b][k].weight * d * d);
    }
    Estimate& e = result[k];
    e.mean = mean;
    e.n = count;
    e.exact = plan.exact;
    if (!plan.exact && count > 1)
      e.std_error = std::sqrt(std::max(0.0, m2.value() / static_cast<double>(count - 1)) /
                              static_cast<double>(count));
  }
  return result;
}

}  // namespace teamred
