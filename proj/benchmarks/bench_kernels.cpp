// Microbenchmarks for the two gradient kernels. The interesting readings are
// the naive/opt ratio as the rank grows at fixed order, and as the order
// grows at fixed rank.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "cmtf/gradients.hpp"

using namespace cmtf;

namespace {

struct KernelFixture {
  CoreTensor core;
  std::vector<std::vector<double>> row_storage;
  std::vector<const double*> rows;
  std::vector<std::uint32_t> counts;
  KernelWorkspace ws;
  double x;

  KernelFixture(int order, std::uint32_t rank)
      : core(make_core(order, rank)), ws(core) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(0.1, 1.0);
    for (int n = 0; n < order; ++n) {
      std::vector<double> row(rank);
      for (double& v : row) v = dist(rng);
      row_storage.push_back(std::move(row));
    }
    for (auto& r : row_storage) rows.push_back(r.data());
    counts.assign(order, 4);
    for (double& g : core.stored()) g = dist(rng);
    x = 1.7;
  }

  static CoreTensor make_core(int order, std::uint32_t rank) {
    return CoreTensor::zeros(
        std::vector<std::uint32_t>(order, rank), CoreStructure::DenseTucker);
  }
};

void BM_GradientNaive(benchmark::State& state) {
  KernelFixture f(static_cast<int>(state.range(0)),
                  static_cast<std::uint32_t>(state.range(1)));
  for (auto _ : state) {
    compute_gradient(f.x, f.core, f.rows, 0.1, f.counts, 1000, f.ws);
    benchmark::DoNotOptimize(f.ws.grad.core.data());
  }
}

void BM_GradientOpt(benchmark::State& state) {
  KernelFixture f(static_cast<int>(state.range(0)),
                  static_cast<std::uint32_t>(state.range(1)));
  for (auto _ : state) {
    compute_gradient_opt(f.x, f.core, f.rows, 0.1, f.counts, 1000, f.ws);
    benchmark::DoNotOptimize(f.ws.grad.core.data());
  }
}

void rank_sweep(benchmark::internal::Benchmark* b) {
  for (int j : {4, 6, 8, 10}) b->Args({3, j});
}

void order_sweep(benchmark::internal::Benchmark* b) {
  for (int n : {2, 3, 4, 5}) b->Args({n, 6});
}

BENCHMARK(BM_GradientNaive)->Apply(rank_sweep);
BENCHMARK(BM_GradientOpt)->Apply(rank_sweep);
BENCHMARK(BM_GradientNaive)->Apply(order_sweep);
BENCHMARK(BM_GradientOpt)->Apply(order_sweep);

void BM_CpGradientOpt(benchmark::State& state) {
  const auto rank = static_cast<std::uint32_t>(state.range(0));
  CoreTensor core = CoreTensor::zeros({rank, rank, rank},
                                      CoreStructure::HyperDiagonalCp);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(0.1, 1.0);
  for (double& g : core.stored()) g = dist(rng);
  std::vector<std::vector<double>> storage(3, std::vector<double>(rank));
  std::vector<const double*> rows;
  for (auto& r : storage) {
    for (double& v : r) v = dist(rng);
    rows.push_back(r.data());
  }
  std::vector<std::uint32_t> counts(3, 4);
  KernelWorkspace ws(core);
  for (auto _ : state) {
    compute_gradient_opt(1.7, core, rows, 0.1, counts, 1000, ws);
    benchmark::DoNotOptimize(ws.grad.core.data());
  }
}
BENCHMARK(BM_CpGradientOpt)->Arg(8)->Arg(16)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
