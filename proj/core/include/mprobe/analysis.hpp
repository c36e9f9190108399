#pragma once

// Score/accuracy correlation over resampled test subsets, robustness to
// corrupting a useless statement, greedy layer pruning, heatmap export, and
// the trace collection glue shared by these studies.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mprobe/probe.hpp"
#include "mprobe/taskgen.hpp"
#include "mprobe/toylm.hpp"
#include "mprobe/trace.hpp"

namespace mprobe::analysis {

/// The probe's unpooled trace for every example (see trace::simplify_for_task).
std::vector<trace::SimplifiedAttention> collect_traces(const toylm::Model& model, const taskgen::Dataset& ds,
                                                       unsigned threads = 1);

/// Sample Pearson r. Needs |x| = |y| >= 2; zero variance in either is a
/// Degenerate error.
double pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationRow {
  std::size_t subset_size = 0;
  double accuracy = 0.0;
  std::optional<double> s_p1, s_p2;
};

struct CorrelationReport {
  std::size_t n_resamples = 0;
  std::size_t subset_lo = 0, subset_hi = 0;
  std::uint64_t seed = 0;
  std::optional<double> rho_acc_p1, rho_acc_p2, rho_p1_p2;
  std::vector<CorrelationRow> rows;
  std::vector<std::string> notes;  // why a coefficient is undefined
};

/// Draws n_resamples uniform subsets of size in [lo, hi] of the test split
/// and scores each with the globally fitted probe.
CorrelationReport correlate_scores(const std::vector<bool>& correct, const probe::FittedProbe& fitted,
                                   std::size_t n_resamples, std::size_t subset_lo, std::size_t subset_hi,
                                   std::uint64_t seed);

struct RobustnessBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double mean_delta = 0.0;  // corrupted minus clean accuracy
};

struct RobustnessReport {
  std::vector<double> edges;
  std::vector<RobustnessBin> bins;
  std::size_t n_samples = 0;
  std::size_t corruptible = 0;
  std::size_t skipped = 0;  // examples without a useless statement
  double clean_accuracy = 0.0, corrupted_accuracy = 0.0;
  std::vector<std::pair<double, double>> samples;  // (S_P2, delta)
};

/// Each test example with a useless statement gets one corruption
/// (seeded by its id). Resampled subsets of those examples give (S_P2,
/// accuracy delta) pairs that are binned over the observed S_P2 range.
RobustnessReport robustness_report(const toylm::Model& model, const taskgen::Dataset& test,
                                   const probe::FittedProbe& fitted, std::size_t n_bins,
                                   std::size_t n_resamples, std::size_t subset_lo, std::size_t subset_hi,
                                   std::uint64_t seed, unsigned threads = 1);

struct LayerPruneStep {
  std::uint32_t layer = 0;
  double accuracy = 0.0;
  double drop = 0.0;  // base accuracy minus accuracy with this layer also disabled
  bool accepted = false;
};

struct LayerPruneResult {
  toylm::PruneMask mask;
  double budget = 0.0;
  double base_accuracy = 0.0;
  double final_accuracy = 0.0;
  std::vector<LayerPruneStep> steps;
};

/// Top to bottom: disable a layer's attention and keep it disabled iff the
/// cumulative dev-accuracy drop stays below the budget (a drop <= 0 is always
/// kept).
LayerPruneResult greedy_layer_prune(const toylm::Model& model, const taskgen::Dataset& dev, double budget,
                                    unsigned threads = 1);

/// "layer,index,value" rows for a pooled or rank-permuted trace.
void export_heatmap(const trace::SimplifiedAttention& mean_trace, const std::filesystem::path& path);

void write_correlation_csv(const CorrelationReport& r, const std::filesystem::path& path);
void write_robustness_csv(const RobustnessReport& r, const std::filesystem::path& path);
std::string correlation_json(const CorrelationReport& r, int indent = 2);
std::string robustness_json(const RobustnessReport& r, int indent = 2);
std::string layer_prune_json(const LayerPruneResult& r, const std::string& config_echo, int indent = 2);

}  // namespace mprobe::analysis
