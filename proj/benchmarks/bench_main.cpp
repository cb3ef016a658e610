#include "config.hpp"
#include "dataset.hpp"
#include "hbnn/gp_layer.hpp"
#include "hbnn/training.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace hbnn;

void BM_KernelMatrix(benchmark::State& state) {
  Rng rng(1);
  const Matrix x = rng.standard_normal(state.range(0), 8);
  Kernel k = Kernel::squared_exponential(1.0, 0.7);
  for (auto _ : state) benchmark::DoNotOptimize(k.matrix(x));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KernelMatrix)->RangeMultiplier(4)->Range(16, 1024)->Complexity();

void BM_GPPredictMarginals(benchmark::State& state) {
  Rng rng(2);
  const Index m = state.range(0);
  GPLayer gp(Kernel::squared_exponential(), rng.standard_normal(m, 1), 1);
  const Matrix x = rng.standard_normal(512, 1);
  for (auto _ : state) benchmark::DoNotOptimize(gp.predict_marginals(x));
}
BENCHMARK(BM_GPPredictMarginals)->Arg(10)->Arg(20)->Arg(50)->Arg(100);

void BM_TrainingEpoch(benchmark::State& state) {
  const char* presets[] = {"dnn", "hbnn-replace", "hfbnn"};
  const std::string preset = presets[state.range(0)];
  const app::Dataset d = app::generate_dataset(200, 1);
  app::RunConfig c;
  c.preset = preset;
  Model model = app::build_model(app::resolve_model_spec(c), 1, 0.0, 1.0, 200, 20, 1);
  TrainConfig tc;
  tc.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(fit(model, d.x, d.y, tc));
  state.SetLabel(preset);
}
BENCHMARK(BM_TrainingEpoch)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
