#include "mprobe/heads.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/trace.hpp"

namespace mprobe::heads {

using trace::SimplifiedAttention;
using trace::TraceKind;

std::vector<std::vector<double>> head_distributions(std::span<const SimplifiedAttention> traces,
                                                    const taskgen::Dataset& ds, DistributionBy by) {
  if (traces.empty()) fail(ErrorKind::Input, "head_distributions: empty trace set");
  if (traces.size() != ds.size()) fail(ErrorKind::Data, "head_distributions: traces and dataset differ in size");
  const std::uint32_t L = traces.front().layers, H = traces.front().heads;
  const std::size_t m = ds.front().statement_spans.size();
  std::vector<std::vector<double>> acc(static_cast<std::size_t>(L) * H, std::vector<double>(m, 0.0));

  std::vector<std::uint32_t> cols(m);
  for (std::size_t e = 0; e < traces.size(); ++e) {
    const auto& s = traces[e];
    const auto& ex = ds[e];
    if (s.kind != TraceKind::LastToken)
      fail(ErrorKind::Input, "head_distributions: expects unpooled LastToken traces");
    if (ex.task != taskgen::TaskKind::KthSmallest)
      fail(ErrorKind::Input, "head_distributions: only defined for the k-th smallest task");
    if (s.example_id != ex.id) fail(ErrorKind::Data, "head_distributions: trace/example id mismatch");
    if (s.layers != L || s.heads != H || ex.statement_spans.size() != m)
      fail(ErrorKind::Data, "head_distributions: inconsistent trace shapes");

    for (std::size_t u = 0; u < m; ++u) cols[u] = ex.statement_spans[u].start;
    if (by == DistributionBy::Rank)
      std::stable_sort(cols.begin(), cols.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return ex.tokens[a] < ex.tokens[b]; });
    for (std::uint32_t l = 0; l < L; ++l)
      for (std::uint32_t h = 0; h < H; ++h) {
        auto& dst = acc[static_cast<std::size_t>(l) * H + h];
        for (std::size_t r = 0; r < m; ++r) dst[r] += s.at(l, h, cols[r]);
      }
  }
  for (auto& d : acc) {
    const double total = std::accumulate(d.begin(), d.end(), 0.0);
    if (total > 0)
      for (auto& v : d) v /= total;
    else
      std::fill(d.begin(), d.end(), 1.0 / static_cast<double>(m));
  }
  return acc;
}

double entropy(std::span<const double> p) {
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0) fail(ErrorKind::Input, "entropy: negative probability mass");
    total += v;
  }
  if (!(total > 0.0)) fail(ErrorKind::Input, "entropy: zero total mass");
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) {
      const double q = v / total;
      h -= q * std::log(q);
    }
  return h;
}

std::vector<HeadProfile> head_profiles(std::span<const SimplifiedAttention> traces, const taskgen::Dataset& ds) {
  auto rank = head_distributions(traces, ds, DistributionBy::Rank);
  auto pos = head_distributions(traces, ds, DistributionBy::Position);
  const std::uint32_t H = traces.front().heads;
  std::vector<HeadProfile> out(rank.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& p = out[i];
    p.layer = static_cast<std::uint32_t>(i / H);
    p.head = static_cast<std::uint32_t>(i % H);
    p.size_entropy = entropy(rank[i]);
    p.position_entropy = entropy(pos[i]);
    p.rank_dist = std::move(rank[i]);
    p.pos_dist = std::move(pos[i]);
  }
  return out;
}

std::string to_string(PruneCriterion c) {
  switch (c) {
    case PruneCriterion::SizeEntropyAscending: return "size_entropy";
    case PruneCriterion::PositionEntropyAscending: return "position_entropy";
    case PruneCriterion::Random: return "random";
  }
  return "?";
}

PruneCriterion criterion_from_string(const std::string& s) {
  if (s == "size_entropy") return PruneCriterion::SizeEntropyAscending;
  if (s == "position_entropy") return PruneCriterion::PositionEntropyAscending;
  if (s == "random") return PruneCriterion::Random;
  fail(ErrorKind::Config, "unknown pruning criterion '" + s + "' (size_entropy, position_entropy, random)");
}

std::vector<double> default_rates() {
  std::vector<double> r;
  for (int i = 0; i < 10; ++i) r.push_back(i / 10.0);
  return r;
}

PruneSchedule make_schedule(std::span<const HeadProfile> profiles, PruneCriterion criterion, std::uint64_t seed,
                            std::vector<double> rates) {
  for (double r : rates)
    if (!(r >= 0.0 && r < 1.0)) fail(ErrorKind::Config, "make_schedule: rates must lie in [0, 1)");
  std::vector<const HeadProfile*> sorted;
  for (const auto& p : profiles) sorted.push_back(&p);
  auto lex = [](const HeadProfile* a, const HeadProfile* b) {
    return std::pair(a->layer, a->head) < std::pair(b->layer, b->head);
  };
  std::sort(sorted.begin(), sorted.end(), lex);
  if (criterion == PruneCriterion::Random) {
    Rng rng(seed);
    rng.shuffle(std::span<const HeadProfile*>(sorted));
  } else {
    const bool by_size = criterion == PruneCriterion::SizeEntropyAscending;
    std::stable_sort(sorted.begin(), sorted.end(), [by_size](const HeadProfile* a, const HeadProfile* b) {
      return by_size ? a->size_entropy < b->size_entropy : a->position_entropy < b->position_entropy;
    });
  }
  PruneSchedule s;
  s.criterion = criterion;
  s.seed = seed;
  s.rates = std::move(rates);
  for (const auto* p : sorted) s.ordering.emplace_back(p->layer, p->head);
  return s;
}

std::size_t heads_for_rate(std::size_t n_heads, double rate) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n_heads)));
}

toylm::PruneMask mask_for_rate(const PruneSchedule& schedule, double rate) {
  toylm::PruneMask mask;
  const std::size_t n = std::min(schedule.ordering.size(), heads_for_rate(schedule.ordering.size(), rate));
  for (std::size_t i = 0; i < n; ++i) mask.disabled_heads.insert(schedule.ordering[i]);
  return mask;
}

std::vector<CurvePoint> pruning_curve(const toylm::Model& model, const taskgen::Dataset& test,
                                      const PruneSchedule& schedule, unsigned threads) {
  std::vector<CurvePoint> out;
  for (double r : schedule.rates)
    out.push_back({r, toylm::evaluate_accuracy(model, test, mask_for_rate(schedule, r), threads)});
  return out;
}

double mean_accuracy(std::span<const CurvePoint> curve, double lo, double hi) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : curve)
    if (p.rate >= lo - 1e-12 && p.rate <= hi + 1e-12) sum += p.accuracy, ++n;
  if (n == 0) fail(ErrorKind::Input, "mean_accuracy: no curve points in range");
  return sum / static_cast<double>(n);
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  return f;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_head_entropy_csv(std::span<const HeadProfile> profiles, const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "layer,head,size_entropy,position_entropy\n";
  for (const auto& p : profiles)
    f << p.layer << ',' << p.head << ',' << num(p.size_entropy) << ',' << num(p.position_entropy) << '\n';
  if (!f) fail(ErrorKind::Io, "write failed: " + path.string());
}

void write_pruning_curve_csv(std::span<const LabelledCurve> curves, const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "criterion,rate,accuracy\n";
  for (const auto& c : curves)
    for (const auto& p : c.points) f << c.criterion << ',' << num(p.rate) << ',' << num(p.accuracy) << '\n';
  if (!f) fail(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace mprobe::heads
