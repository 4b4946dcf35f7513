// OpenMP kernels against their serial reference versions.
#include <benchmark/benchmark.h>

#include <numeric>

#include "aidflow/classifier.hpp"
#include "aidflow/ensemble.hpp"
#include "aidflow/weaklabel.hpp"

using namespace aidflow;

namespace {

std::vector<TimeSlice> random_slices(std::size_t n, std::size_t steps, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TimeSlice> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = out[i];
    s.pair_id = "U-D";
    s.t_end = 1546300800 + 30 * static_cast<Timestamp>(i);
    s.steps = steps;
    const bool slow = rng.uniform() < 0.3;
    for (std::size_t t = 0; t < steps; ++t) {
      const double up = slow && t >= steps / 2 ? 0.5 : 0.95;
      s.channels.push_back(up + rng.normal(0.0, 0.03));
      s.channels.push_back(0.95 + rng.normal(0.0, 0.03));
      s.channels.push_back(slow ? 0.25 : 0.08);
      s.channels.push_back(0.08);
      s.channels.push_back(0.95 - up + rng.normal(0.0, 0.02));
    }
  }
  return out;
}

classifier::ModelConfig bench_model() {
  classifier::ModelConfig c;
  c.units = 32;
  c.dense_units = 16;
  return c;
}

const std::vector<TimeSlice>& slices() {
  static const auto s = random_slices(2048, 20, 1);
  return s;
}

void BM_ApplyLfs(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(weaklabel::apply_lfs(slices()));
}
void BM_ApplyLfsReference(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(weaklabel::reference::apply_lfs(slices()));
}

template <bool Parallel>
void BM_BatchGradient(benchmark::State& state) {
  const auto model = classifier::init_model(bench_model(), 3);
  const std::vector<double> targets(slices().size(), 0.5);
  std::vector<std::size_t> idx(static_cast<std::size_t>(state.range(0)));
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> grad;
  const classifier::LabeledView view{slices(), targets};
  for (auto _ : state) {
    if constexpr (Parallel)
      benchmark::DoNotOptimize(classifier::batch_loss_and_gradient(model.config, model.params, view, idx, 2.0, grad));
    else
      benchmark::DoNotOptimize(
          classifier::reference::batch_loss_and_gradient(model.config, model.params, view, idx, 2.0, grad));
  }
}

template <bool Parallel>
void BM_ForwardBatch(benchmark::State& state) {
  const auto model = classifier::init_model(bench_model(), 4);
  for (auto _ : state) {
    if constexpr (Parallel)
      benchmark::DoNotOptimize(classifier::forward_batch(model, slices()));
    else
      benchmark::DoNotOptimize(classifier::reference::forward_batch(model, slices()));
  }
}

template <bool Parallel>
void BM_Knn(benchmark::State& state) {
  const auto train = random_slices(1024, 20, 5);
  const auto queries = random_slices(256, 20, 6);
  const std::vector<double> labels(train.size(), 1.0);
  for (auto _ : state) {
    if constexpr (Parallel)
      benchmark::DoNotOptimize(classifier::knn_predict(train, labels, queries, 5));
    else
      benchmark::DoNotOptimize(classifier::reference::knn_predict(train, labels, queries, 5));
  }
}

template <bool Parallel>
void BM_EnsemblePredict(benchmark::State& state) {
  ensemble::Ensemble e;
  for (std::uint64_t s = 0; s < 10; ++s) {
    e.members.push_back(classifier::init_model(bench_model(), s));
    e.member_seeds.push_back(s);
    e.val_accuracies.push_back(1.0);
  }
  const std::span<const TimeSlice> batch(slices().data(), 512);
  for (auto _ : state) {
    if constexpr (Parallel)
      benchmark::DoNotOptimize(ensemble::predict_batch(e, batch));
    else
      benchmark::DoNotOptimize(ensemble::reference::predict_batch(e, batch));
  }
}

}  // namespace

BENCHMARK(BM_ApplyLfs)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ApplyLfsReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient<true>)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient<false>)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBatch<true>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBatch<false>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Knn<true>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Knn<false>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnsemblePredict<true>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnsemblePredict<false>)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
