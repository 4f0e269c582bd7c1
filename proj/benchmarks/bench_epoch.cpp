// Whole-epoch throughput on synthetic data: entries per second for both
// kernels and several worker counts.

#include <benchmark/benchmark.h>

#include "cmtf/synth.hpp"
#include "cmtf/trainer.hpp"

using namespace cmtf;

namespace {

DataBundle make_data(std::uint64_t nnz) {
  SynthSpec spec;
  spec.dims = {2000, 2000, 2000};
  spec.ranks = {2, 2, 2};
  spec.n_entries = nnz;
  spec.seed = 31;
  spec.matrix_ratio = 0.1;
  return generate(spec).bundle;
}

void BM_Epoch(benchmark::State& state) {
  static DataBundle bundle = make_data(100000);
  TrainConfig config;
  config.ranks = {8, 8, 8};
  config.kernel = state.range(0) ? GradientKernel::Opt : GradientKernel::Naive;
  config.workers = static_cast<int>(state.range(1));
  config.seed = 5;
  TrainState st = make_state(config, bundle);
  for (auto _ : state) run_epoch(st, bundle, config);
  state.SetItemsProcessed(state.iterations() *
                          static_cast<std::int64_t>(st.schedule.size()));
}

void epoch_args(benchmark::internal::Benchmark* b) {
  for (int kernel : {0, 1})
    for (int workers : {1, 2}) b->Args({kernel, workers});
}

BENCHMARK(BM_Epoch)->Apply(epoch_args)->Unit(benchmark::kMillisecond)
    ->MeasureProcessCPUTime()->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
