#include <benchmark/benchmark.h>

#include <vector>

#include "mprobe/rng.hpp"
#include "mprobe/taskgen.hpp"
#include "mprobe/toylm.hpp"

using namespace mprobe;

namespace {

toylm::ModelConfig default_model() {
  toylm::ModelConfig c;
  c.vocab_size = taskgen::model_vocab_size(64);
  c.max_seq_len = 9;
  c.seed = 3;
  return c;
}

std::vector<std::vector<std::uint32_t>> random_tokens(std::size_t n, std::uint32_t vocab) {
  Rng rng(1);
  std::vector<std::vector<std::uint32_t>> out(n, std::vector<std::uint32_t>(9));
  for (auto& s : out)
    for (auto& t : s) t = static_cast<std::uint32_t>(rng.below(vocab));
  return out;
}

void BM_Forward(benchmark::State& state) {
  const auto m = toylm::Model::init_random(default_model());
  const std::vector<std::uint32_t> toks = {1, 5, 9, 13, 17, 21, 25, 29, 2};
  for (auto _ : state) benchmark::DoNotOptimize(toylm::forward(m, toks));
}
BENCHMARK(BM_Forward);

void BM_LossAndGrad(benchmark::State& state) {
  const auto m = toylm::Model::init_random(default_model());
  const auto toks = random_tokens(static_cast<std::size_t>(state.range(0)), m.config().vocab_size);
  std::vector<toylm::Sequence> batch;
  for (const auto& t : toks) batch.push_back({t, t.back()});
  std::vector<float> grad(m.params().size());
  for (auto _ : state) {
    const double loss = toylm::loss_and_grad(m, std::span<const toylm::Sequence>(batch), std::span<float>(grad), 1.0);
    benchmark::DoNotOptimize(loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrad)->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
