#pragma once

// Per-head attention distributions over number ranks and input positions,
// their entropies, and entropy-ordered head pruning.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mprobe/attention.hpp"
#include "mprobe/taskgen.hpp"
#include "mprobe/toylm.hpp"

namespace mprobe::heads {

enum class DistributionBy { Rank, Position };

/// Mean last-token attention over the content (statement) positions,
/// permuted into value order when by == Rank, then renormalized.
/// Result index is l * H + h. Needs unpooled LastToken traces of a
/// KthSmallest dataset, aligned with it.
std::vector<std::vector<double>> head_distributions(std::span<const trace::SimplifiedAttention> traces,
                                                    const taskgen::Dataset& ds, DistributionBy by);

/// Natural-log entropy with 0 ln 0 = 0. The vector is renormalized first;
/// negative entries are an input error.
double entropy(std::span<const double> p);

struct HeadProfile {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  std::vector<double> rank_dist;
  std::vector<double> pos_dist;
  double size_entropy = 0.0;
  double position_entropy = 0.0;
};

std::vector<HeadProfile> head_profiles(std::span<const trace::SimplifiedAttention> traces,
                                       const taskgen::Dataset& ds);

enum class PruneCriterion { SizeEntropyAscending, PositionEntropyAscending, Random };

std::string to_string(PruneCriterion c);
PruneCriterion criterion_from_string(const std::string& s);

/// Rates 0, 0.1, ..., 0.9.
std::vector<double> default_rates();

struct PruneSchedule {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> ordering;
  PruneCriterion criterion = PruneCriterion::Random;
  std::uint64_t seed = 0;
  std::vector<double> rates;
};

/// Ascending by the chosen entropy, ties by (layer, head); Random is a
/// seeded shuffle of the lexicographic order.
PruneSchedule make_schedule(std::span<const HeadProfile> profiles, PruneCriterion criterion,
                            std::uint64_t seed = 0, std::vector<double> rates = default_rates());

/// Number of heads disabled at `rate`: round(rate * n).
std::size_t heads_for_rate(std::size_t n_heads, double rate);

/// Disables the first heads_for_rate(...) entries of the ordering.
toylm::PruneMask mask_for_rate(const PruneSchedule& schedule, double rate);

struct CurvePoint {
  double rate = 0.0;
  double accuracy = 0.0;
};

std::vector<CurvePoint> pruning_curve(const toylm::Model& model, const taskgen::Dataset& test,
                                      const PruneSchedule& schedule, unsigned threads = 1);

/// Mean accuracy over points whose rate lies in [lo, hi].
double mean_accuracy(std::span<const CurvePoint> curve, double lo, double hi);

void write_head_entropy_csv(std::span<const HeadProfile> profiles, const std::filesystem::path& path);

struct LabelledCurve {
  std::string criterion;
  std::vector<CurvePoint> points;
};
void write_pruning_curve_csv(std::span<const LabelledCurve> curves, const std::filesystem::path& path);

}  // namespace mprobe::heads
