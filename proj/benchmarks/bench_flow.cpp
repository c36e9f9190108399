#include <benchmark/benchmark.h>

#include "mprobe/flow.hpp"
#include "mprobe/rng.hpp"

using namespace mprobe;

namespace {

void BM_RolloutAndBound(benchmark::State& state) {
  Rng rng(7);
  const auto stack = flow::random_causal_stack(rng, static_cast<std::uint32_t>(state.range(0)), 12);
  for (auto _ : state) {
    auto st = flow::rollout(stack);
    benchmark::DoNotOptimize(flow::check_domination_bound(st));
  }
}
BENCHMARK(BM_RolloutAndBound)->Arg(9)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
