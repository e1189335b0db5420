// Serial reference vs OpenMP kernel for each parallel hot path.  Run with
// OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <numeric>

#include "deepfpft/deeponet.hpp"
#include "deepfpft/dynamics.hpp"
#include "deepfpft/forcing.hpp"
#include "deepfpft/reliability.hpp"

using namespace deepfpft;

namespace {

const SystemModel& sdof() {
  static const SystemModel m = make_sdof_bouc_wen(6800.0, 3750.0, 232000.0, BoucWenParams::benchmark(6800.0), 0.01, 0.05);
  return m;
}

const ForceEnsemble& forces() {
  static const ForceEnsemble f = force_ensemble(FourierSpec{}, 256, 1, "bench");
  return f;
}

const TrajectoryEnsemble& trajectories() {
  static const TrajectoryEnsemble t = simulate_ensemble(sdof(), forces(), SimulationOptions{0.01, 10, {0}});
  return t;
}

struct Training {
  TripletDataset data;
  OperatorNet net;
  std::vector<std::size_t> rows;
};

const Training& training() {
  static const Training t = [] {
    Rng rng(2);
    Training out;
    out.data = assemble_triplets(forces(), trajectories(), 0, 100, rng);
    out.net = OperatorNet::create(OperatorConfig{}, 0, rng);
    out.rows.resize(1024);
    std::iota(out.rows.begin(), out.rows.end(), std::size_t{0});
    return out;
  }();
  return t;
}

void BM_ForceEnsemble(benchmark::State& state) {
  const GpSpec spec;
  for (auto _ : state) benchmark::DoNotOptimize(force_ensemble(spec, 2000, 3, "bench"));
}
void BM_ForceEnsembleSerial(benchmark::State& state) {
  const GpSpec spec;
  for (auto _ : state) benchmark::DoNotOptimize(force_ensemble_serial(spec, 2000, 3, "bench"));
}

void BM_Simulate(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(simulate_ensemble(sdof(), forces(), SimulationOptions{0.01, 10, {0}}));
}
void BM_SimulateSerial(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(simulate_ensemble_serial(sdof(), forces(), SimulationOptions{0.01, 10, {0}}));
}

void BM_Gradients(benchmark::State& state) {
  const auto& t = training();
  for (auto _ : state) benchmark::DoNotOptimize(deeponet_gradients(t.net, t.data, t.rows));
}
void BM_GradientsReference(benchmark::State& state) {
  const auto& t = training();
  for (auto _ : state) benchmark::DoNotOptimize(deeponet_gradients_reference(t.net, t.data, t.rows));
}

void BM_Predict(benchmark::State& state) {
  const auto& t = training();
  for (auto _ : state)
    benchmark::DoNotOptimize(predict_ensemble(std::span(&t.net, 1), forces(), trajectories().t_grid));
}
void BM_PredictSerial(benchmark::State& state) {
  const auto& t = training();
  for (auto _ : state)
    benchmark::DoNotOptimize(predict_ensemble_serial(std::span(&t.net, 1), forces(), trajectories().t_grid));
}

void BM_Fpft(benchmark::State& state) {
  const double b = peak_quantile_threshold(trajectories().displacement_of(0), 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(fpft_distribution(trajectories(), 0, b));
}
void BM_FpftSerial(benchmark::State& state) {
  const double b = peak_quantile_threshold(trajectories().displacement_of(0), 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(fpft_distribution_serial(trajectories(), 0, b));
}

}  // namespace

BENCHMARK(BM_ForceEnsemble)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForceEnsembleSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Simulate)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SimulateSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gradients)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GradientsReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Predict)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Fpft)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FpftSerial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
