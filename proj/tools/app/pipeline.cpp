#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mprobe/analysis.hpp"
#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"

namespace mprobe::app {

taskgen::Splits make_splits(const RunConfig& cfg) {
  const auto all = taskgen::generate(cfg.task, 0);
  return taskgen::split(all, cfg.split, cfg.split_seed);
}

namespace {

void print_epoch(const toylm::EpochLog& e, void*) {
  std::fprintf(stderr, "epoch %u  train_loss %.5f  dev_acc %.4f\n", e.epoch, e.train_loss, e.dev_accuracy);
}

}  // namespace

toylm::Model train_model(const RunConfig& cfg, const taskgen::Splits& splits, toylm::TrainingLog* log, bool verbose,
                         unsigned threads) {
  auto model = toylm::Model::init_random(cfg.model);
  auto hp = cfg.train;
  hp.threads = threads;
  auto result = toylm::train(model, splits.train, splits.dev, hp, verbose ? print_epoch : nullptr, nullptr);
  if (log) *log = std::move(result);
  return model;
}

toylm::Model random_model(const RunConfig& cfg) {
  auto mc = cfg.model;
  mc.seed = cfg.probe.rand_seed;
  return toylm::Model::init_random(mc);
}

taskgen::Dataset head_of(const taskgen::Dataset& ds, std::uint64_t n) {
  return taskgen::Dataset(ds.begin(), ds.begin() + static_cast<std::ptrdiff_t>(std::min<std::uint64_t>(n, ds.size())));
}

ProbeData collect_probe_data(const RunConfig& cfg, const toylm::Model& model, const toylm::Model& rand,
                             const taskgen::Splits& splits, unsigned threads) {
  ProbeData d;
  d.train = head_of(splits.train, cfg.probe.max_train_examples);
  d.test = head_of(splits.test, cfg.probe.max_test_examples);
  d.model.train = analysis::collect_traces(model, d.train, threads);
  d.model.test = analysis::collect_traces(model, d.test, threads);
  d.rand.train = analysis::collect_traces(rand, d.train, threads);
  d.rand.test = analysis::collect_traces(rand, d.test, threads);
  return d;
}

trace::HeadSubset top_position_entropy_subset(std::span<const heads::HeadProfile> profiles, std::uint32_t layers,
                                              std::uint32_t n_heads, double fraction) {
  trace::HeadSubset keep(layers, std::vector<bool>(n_heads, false));
  const auto per_layer = static_cast<std::size_t>(std::ceil(fraction * n_heads - 1e-12));
  for (std::uint32_t l = 0; l < layers; ++l) {
    std::vector<const heads::HeadProfile*> row;
    for (const auto& p : profiles)
      if (p.layer == l) row.push_back(&p);
    std::stable_sort(row.begin(), row.end(), [](auto* a, auto* b) { return a->position_entropy > b->position_entropy; });
    for (std::size_t i = 0; i < std::min(per_layer, row.size()); ++i) keep[l][row[i]->head] = true;
  }
  return keep;
}

probe::ProbeConfig resolved_probe_config(const RunConfig& cfg, const ProbeData& data) {
  auto pc = probe_config(cfg);
  if (cfg.probe.head_subset == HeadSubsetPolicy::TopPositionEntropy) {
    if (cfg.task.task != taskgen::TaskKind::KthSmallest)
      fail(ErrorKind::Config, "probe.head_subset = top_position_entropy needs the kth task");
    const auto profiles = heads::head_profiles(data.model.test, data.test);
    pc.head_subset = top_position_entropy_subset(profiles, cfg.model.n_layers, cfg.model.n_heads,
                                                 cfg.probe.head_subset_fraction);
  }
  return pc;
}

PruningCurves head_pruning(const RunConfig& cfg, const toylm::Model& model, const taskgen::Dataset& test,
                           std::span<const heads::HeadProfile> profiles, unsigned threads) {
  PruningCurves out;
  const auto& rates = cfg.analysis.prune_rates;
  auto run = [&](heads::PruneCriterion c, std::uint64_t seed, std::string label) {
    const auto schedule = heads::make_schedule(profiles, c, seed, rates);
    out.curves.push_back({std::move(label), heads::pruning_curve(model, test, schedule, threads)});
    return heads::mean_accuracy(out.curves.back().points, 0.1, 0.5);
  };
  out.mean_size = run(heads::PruneCriterion::SizeEntropyAscending, 0, "size_entropy");
  out.mean_position = run(heads::PruneCriterion::PositionEntropyAscending, 0, "position_entropy");
  double sum = 0.0;
  for (std::uint32_t i = 0; i < cfg.analysis.random_orders; ++i) {
    const auto seed = derive_seed(cfg.analysis.random_order_seed, i);
    sum += run(heads::PruneCriterion::Random, seed, "random_" + std::to_string(i));
  }
  out.mean_random = cfg.analysis.random_orders ? sum / cfg.analysis.random_orders : 0.0;
  return out;
}

}  // namespace mprobe::app
