#include <benchmark/benchmark.h>

#include <vector>

#include "mprobe/probe.hpp"
#include "mprobe/rng.hpp"

using namespace mprobe;

namespace {

std::vector<std::vector<double>> points(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto& p : out)
    for (auto& v : p) v = rng.uniform();
  return out;
}

void BM_KnnPredict(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto train = points(n, 16, 1);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 3);
  const auto model = probe::knn_fit(std::move(train), std::move(labels), 5);
  const auto queries = points(1000, 16, 2);
  for (auto _ : state)
    benchmark::DoNotOptimize(probe::knn_predict(model, std::span<const std::vector<double>>(queries)));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_KnnPredict)->Arg(2000)->Arg(16000);

void BM_F1Macro(benchmark::State& state) {
  Rng rng(3);
  std::vector<int> gold(100000), pred(100000);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    gold[i] = static_cast<int>(rng.below(4));
    pred[i] = static_cast<int>(rng.below(4));
  }
  for (auto _ : state) benchmark::DoNotOptimize(probe::f1_macro(gold, pred));
}
BENCHMARK(BM_F1Macro);

}  // namespace

BENCHMARK_MAIN();
