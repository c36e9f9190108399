#pragma once

// Pipeline stages built from a RunConfig. The CLI wires them to files; the
// acceptance suite calls them in memory.

#include <filesystem>
#include <optional>
#include <vector>

#include "mprobe/heads.hpp"
#include "mprobe/probe.hpp"
#include "mprobe/taskgen.hpp"
#include "mprobe/toylm.hpp"
#include "mprobe/trace.hpp"
#include "run_config.hpp"

namespace mprobe::app {

/// Files under cfg.out_dir.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path data(const char* split) const { return root / "data" / (std::string(split) + ".jsonl"); }
  std::filesystem::path checkpoint() const { return root / "model.ckpt"; }
  std::filesystem::path train_log() const { return root / "train_log.json"; }
  std::filesystem::path traces(const char* source, const char* split) const {
    return root / "traces" / (std::string(source) + "_" + split + ".trace");
  }
  std::filesystem::path artifact(const char* name) const { return root / name; }
};

taskgen::Splits make_splits(const RunConfig& cfg);

toylm::Model train_model(const RunConfig& cfg, const taskgen::Splits& splits, toylm::TrainingLog* log = nullptr,
                         bool verbose = false, unsigned threads = 1);

/// The random-init baseline: the configured architecture with probe.rand_seed.
toylm::Model random_model(const RunConfig& cfg);

/// The first `n` examples.
taskgen::Dataset head_of(const taskgen::Dataset& ds, std::uint64_t n);

struct ProbeData {
  taskgen::Dataset train;  // probe train examples
  taskgen::Dataset test;   // probe test examples
  probe::TraceSplits model;
  probe::TraceSplits rand;
};

ProbeData collect_probe_data(const RunConfig& cfg, const toylm::Model& model, const toylm::Model& rand,
                             const taskgen::Splits& splits, unsigned threads = 1);

/// Per layer, the ceil(fraction * H) heads with the largest position entropy.
trace::HeadSubset top_position_entropy_subset(std::span<const heads::HeadProfile> profiles, std::uint32_t layers,
                                              std::uint32_t heads, double fraction);

/// Resolves the configured head-subset policy (KthSmallest only for the
/// entropy-based policy).
probe::ProbeConfig resolved_probe_config(const RunConfig& cfg, const ProbeData& data);

struct PruningCurves {
  std::vector<heads::LabelledCurve> curves;  // size, position, random seeds...
  double mean_size = 0.0;
  double mean_position = 0.0;
  double mean_random = 0.0;  // averaged over random orders
};

/// Size-, position- and random-order pruning curves; means are over rates
/// in [0.1, 0.5].
PruningCurves head_pruning(const RunConfig& cfg, const toylm::Model& model, const taskgen::Dataset& test,
                           std::span<const heads::HeadProfile> profiles, unsigned threads = 1);

}  // namespace mprobe::app
