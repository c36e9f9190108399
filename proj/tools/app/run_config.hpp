#pragma once

// The declarative run configuration shared by every subcommand.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mprobe/probe.hpp"
#include "mprobe/taskgen.hpp"
#include "mprobe/toylm.hpp"

namespace mprobe::app {

enum class HeadSubsetPolicy {
  All,                  // every head enters the pooled mean
  TopPositionEntropy,   // per layer, the top `fraction` of heads by position entropy
};

struct ProbeSection {
  std::uint32_t k_neighbors = 5;
  std::optional<std::uint32_t> prefix;
  probe::FeatureMode features = probe::FeatureMode::Pooled;
  HeadSubsetPolicy head_subset = HeadSubsetPolicy::All;
  double head_subset_fraction = 0.6;
  /// kNN cost grows with train x test instances, so the probe works on
  /// prefixes of the splits.
  std::uint64_t max_train_examples = 2000;
  std::uint64_t max_test_examples = 1000;
  std::uint64_t rand_seed = 9001;  // seed of the random-init baseline model
};

struct AnalysisSection {
  std::vector<double> prune_rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::uint32_t random_orders = 5;  // seeds averaged for the random pruning order
  std::uint64_t random_order_seed = 17;
  double layer_budget = 0.05;
  std::uint32_t bins = 8;
  std::uint32_t resamples = 2048;
  std::uint32_t subset_lo = 64;
  std::uint32_t subset_hi = 128;
  std::uint64_t seed = 23;
  std::uint32_t flow_examples = 256;
  double flow_tolerance = 1e-9;
};

struct RunConfig {
  taskgen::TaskConfig task;
  taskgen::SplitRatios split;
  std::uint64_t split_seed = 7;
  toylm::ModelConfig model;  // vocab_size and max_seq_len follow the task
  toylm::TrainParams train;
  ProbeSection probe;
  AnalysisSection analysis;
  std::filesystem::path out_dir = "run";
};

/// The frozen desk-scale configuration: k-th smallest with m = 8 over 64
/// numbers, k = 2, a 4-layer 4-head d = 64 model.
RunConfig default_config();

/// Overlays a JSON document on the defaults. Unknown keys and wrong types
/// are ErrorKind::Config errors naming the offending field.
RunConfig parse_config(const std::string& json_text, RunConfig base = default_config());
RunConfig load_config(const std::filesystem::path& path);

std::string to_json(const RunConfig& cfg, int indent = -1);

/// Sequence length of the configured task (numbers + query, or statements +
/// question + query).
std::uint32_t sequence_length(const taskgen::TaskConfig& task);

/// Fills model.vocab_size / max_seq_len from the task, validates everything.
void finalize(RunConfig& cfg);

probe::ProbeConfig probe_config(const RunConfig& cfg);

}  // namespace mprobe::app
