// Serial reference vs OpenMP kernels on the synthetic corpus. Argument 0 is
// the serial path, 1 the parallel one.

#include <benchmark/benchmark.h>

#include <numeric>

#include "forelen/dataio.hpp"
#include "forelen/kernels.hpp"
#include "forelen/plp.hpp"

using namespace forelen;

namespace {

Execution mode(const benchmark::State& state) {
  return state.range(0) == 0 ? Execution::kSerial : Execution::kParallel;
}

const Dataset& corpus() {
  static const Dataset ds = [] {
    SynthConfig c;
    c.num_records = 1000;
    return synth_generate(c);
  }();
  return ds;
}

struct HeadFixture {
  std::vector<RealVector> features;
  std::vector<double> lengths;
  std::vector<std::size_t> indices;
  HeadParams params;
  BinLayout bins;
};

const HeadFixture& head_fixture() {
  static const HeadFixture f = [] {
    HeadFixture h;
    const auto& ds = corpus();
    h.features = pool_features(ds, PoolingMode::kEgtp, 1.0, Execution::kSerial);
    for (const auto& r : ds) h.lengths.push_back(r.length);
    h.indices.resize(ds.size());
    std::iota(h.indices.begin(), h.indices.end(), std::size_t{0});
    h.bins = fit_bins(h.lengths, 20, BinScheme::kQuantile);
    h.params = HeadParams::zeros(h.bins.size(), h.features.front().size(), 0.95, 1024.0);
    SeededRng rng(1);
    for (double& w : h.params.weights.data) w = rng.normal(0.0, 0.1);
    return h;
  }();
  return f;
}

void BM_PoolFeatures(benchmark::State& state) {
  const auto& ds = corpus();
  for (auto _ : state) benchmark::DoNotOptimize(pool_features(ds, PoolingMode::kEgtp, 1.0, mode(state)));
}

void BM_BatchGradient(benchmark::State& state) {
  const auto& f = head_fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(batch_gradient(f.params, f.bins, f.features, f.lengths, f.indices, mode(state)));
}

void BM_PredictAll(benchmark::State& state) {
  const auto& f = head_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(predict_all(f.params, f.bins, f.features, mode(state)));
}

void BM_PlpStepMae(benchmark::State& state) {
  static const auto examples = make_plp_examples(corpus(), 1.0).examples;
  const auto& f = head_fixture();
  const std::size_t d = examples.front().prompt_feature.size();
  HeadParams p = HeadParams::zeros(f.bins.size(), 2 * d, 0.95, 1024.0);
  set_default_execution(mode(state));
  for (auto _ : state) benchmark::DoNotOptimize(plp_mean_step_mae(p, f.bins, examples, 1.0));
  set_default_execution(Execution::kParallel);
}

}  // namespace

BENCHMARK(BM_PoolFeatures)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictAll)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PlpStepMae)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
