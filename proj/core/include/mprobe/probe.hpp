#pragma once

// The attention probe: per-statement features from simplified attention,
// a k-nearest-neighbour classifier, F1-macro, and random-baseline
// normalized scores for statement usefulness (S_P1) and node height (S_P2).

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mprobe/attention.hpp"
#include "mprobe/taskgen.hpp"
#include "mprobe/trace.hpp"

namespace mprobe::probe {

enum class FeatureMode {
  Pooled,   // mean over heads (or a head subset): one value per layer
  PerHead,  // one value per (layer, head)
};

struct ProbeConfig {
  std::uint32_t k_neighbors = 5;
  std::optional<std::uint32_t> prefix;  // number of bottom layers kept
  FeatureMode features = FeatureMode::Pooled;
  std::optional<trace::HeadSubset> head_subset;
  std::uint64_t rand_seed = 0;  // seed of the random-init baseline model, echoed in reports
};

struct ProbeInstance {
  std::uint64_t example_id = 0;
  std::uint32_t unit_index = 0;
  std::vector<double> features;
  bool useful = false;
  std::optional<std::uint32_t> height;  // present iff useful
};

/// One instance per statement. Traces must align with `ds` by example id;
/// they may be pooled (HeadPooled / CrossPooled) or unpooled.
std::vector<ProbeInstance> build_instances(std::span<const trace::SimplifiedAttention> traces,
                                           const taskgen::Dataset& ds, const ProbeConfig& cfg);

// ---------------------------------------------------------------------------
// kNN

/// Euclidean kNN with majority vote. Distance ties go to the earlier
/// training instance; vote ties go to the smaller label.
class KnnModel {
 public:
  KnnModel(std::vector<std::vector<double>> features, std::vector<int> labels, std::uint32_t k);

  int predict(std::span<const double> query) const;
  std::uint32_t k() const { return k_; }
  std::size_t size() const { return labels_.size(); }

 private:
  std::size_t dim_ = 0;
  std::uint32_t k_ = 1;
  std::vector<double> features_;  // row-major, size() x dim_
  std::vector<int> labels_;
};

KnnModel knn_fit(std::vector<std::vector<double>> features, std::vector<int> labels,
                 std::uint32_t k_neighbors);
std::vector<int> knn_predict(const KnnModel& model, std::span<const std::vector<double>> queries,
                             unsigned threads = 1);

// ---------------------------------------------------------------------------
// Scores

/// Unweighted mean of per-class F1 over the classes present in `gold`
/// (a class with precision + recall = 0 scores 0).
double f1_macro(std::span<const int> gold, std::span<const int> pred);

/// Binary F1 of the positive class (label 1).
double f1_binary(std::span<const int> gold, std::span<const int> pred);

/// (f1_model - f1_rand) / (1 - f1_rand), unclamped.
double normalize_score(double f1_model, double f1_rand);

// ---------------------------------------------------------------------------
// Probe pipeline

struct TraceSplits {
  std::vector<trace::SimplifiedAttention> train;
  std::vector<trace::SimplifiedAttention> test;
};

struct ProbeInputs {
  const taskgen::Dataset& train;
  const taskgen::Dataset& test;
  const TraceSplits& model;  // traces of the model under study
  const TraceSplits& rand;   // traces of the random-init baseline
};

/// Test-split predictions of both probes for both trace sources, fitted on
/// the train split. Subsets of test examples can then be scored without
/// refitting.
struct FittedProbe {
  std::size_t n_test_examples = 0;
  // usefulness: one entry per test statement
  std::vector<std::size_t> use_example;
  std::vector<int> use_gold, use_model, use_rand;
  // height: one entry per useful test statement
  std::vector<std::size_t> height_example;
  std::vector<int> height_gold, height_model, height_rand;
};

FittedProbe fit_probe(const ProbeInputs& in, const ProbeConfig& cfg, unsigned threads = 1);

struct SubsetScores {
  double raw_f1_usefulness = 0.0;
  double rand_f1_usefulness = 0.0;
  std::optional<double> s_p1;
  double raw_f1_height = 0.0;
  double rand_f1_height = 0.0;
  std::optional<double> s_p2;
  std::vector<std::string> notes;  // why a score is undefined
};

/// Scores restricted to the given test-example indices (all when empty).
SubsetScores score_subset(const FittedProbe& fp, std::span<const std::size_t> examples = {});

struct LayerScore {
  std::uint32_t layers = 0;  // prefix length l
  SubsetScores scores;
};

struct ProbeReport {
  SubsetScores full;
  std::vector<LayerScore> per_layer;
  /// height -> binary F1 over prefixes l = 1..L, model and random baseline.
  std::map<std::uint32_t, std::vector<double>> per_height_f1;
  std::map<std::uint32_t, std::vector<double>> per_height_f1_rand;
  ProbeConfig config;
  std::uint32_t n_layers = 0;
};

/// Fills raw / random F1 and S_P1 (or a degenerate note).
void probe_usefulness(const ProbeInputs& in, const ProbeConfig& cfg, ProbeReport& report);
/// Fills raw / random height F1 and S_P2. A single height class (k = 1)
/// records raw F1 = 1 and leaves S_P2 undefined.
void probe_height(const ProbeInputs& in, const ProbeConfig& cfg, ProbeReport& report);

std::vector<LayerScore> layerwise_probe(const ProbeInputs& in, const ProbeConfig& cfg,
                                        unsigned threads = 1);

/// One-vs-rest "statement is useful at height h" probe for each requested
/// height, over prefixes l = 1..L. Returns {model curves, random curves}.
std::pair<std::map<std::uint32_t, std::vector<double>>, std::map<std::uint32_t, std::vector<double>>>
per_height_probe(const ProbeInputs& in, const ProbeConfig& cfg, std::span<const std::uint32_t> heights,
                 unsigned threads = 1);

/// Runs everything above into one report.
ProbeReport run_probe(const ProbeInputs& in, const ProbeConfig& cfg, bool layerwise,
                      unsigned threads = 1);

std::string to_json(const ProbeReport& report, int indent = 2);
std::string config_to_json(const ProbeConfig& cfg);

}  // namespace mprobe::probe
