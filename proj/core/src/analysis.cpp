#include "mprobe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"

namespace mprobe::analysis {

using nlohmann::ordered_json;

std::vector<trace::SimplifiedAttention> collect_traces(const toylm::Model& model, const taskgen::Dataset& ds,
                                                       unsigned threads) {
  std::vector<trace::SimplifiedAttention> out(ds.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < ds.size(); i += step) {
      const auto rec = toylm::forward(model, std::span<const std::uint32_t>(ds[i].tokens));
      out[i] = trace::simplify_for_task(rec.attention, ds[i]);
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, ds.size()))));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::Input, "pearson: length mismatch");
  if (x.size() < 2) fail(ErrorKind::Input, "pearson: needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorKind::Degenerate, "pearson: zero variance, correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::vector<std::size_t> sample_subset(Rng& rng, std::span<const std::size_t> pool, std::size_t lo, std::size_t hi) {
  const std::size_t size = lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  std::vector<std::size_t> v(pool.begin(), pool.end());
  // Partial Fisher-Yates: the first `size` entries are a uniform subset.
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(v.size() - i));
    std::swap(v[i], v[j]);
  }
  v.resize(size);
  std::sort(v.begin(), v.end());
  return v;
}

std::optional<double> try_pearson(const std::vector<double>& x, const std::vector<double>& y, const std::string& name,
                                  std::vector<std::string>& notes) {
  try {
    return pearson(x, y);
  } catch (const Error& e) {
    notes.push_back(name + ": " + e.what());
    return std::nullopt;
  }
}

void check_bounds(std::size_t lo, std::size_t hi, std::size_t n, const char* who) {
  if (lo == 0 || lo > hi) fail(ErrorKind::Config, std::string(who) + ": need 1 <= subset_lo <= subset_hi");
  if (hi > n)
    fail(ErrorKind::Config, std::string(who) + ": subset_hi " + std::to_string(hi) + " exceeds the " +
                                std::to_string(n) + " available examples");
}

}  // namespace

CorrelationReport correlate_scores(const std::vector<bool>& correct, const probe::FittedProbe& fitted,
                                   std::size_t n_resamples, std::size_t lo, std::size_t hi, std::uint64_t seed) {
  if (correct.size() != fitted.n_test_examples)
    fail(ErrorKind::Input, "correlate: correctness and probe cover different test sets");
  check_bounds(lo, hi, correct.size(), "correlate");
  CorrelationReport r;
  r.n_resamples = n_resamples;
  r.subset_lo = lo;
  r.subset_hi = hi;
  r.seed = seed;
  std::vector<std::size_t> all(correct.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t s = 0; s < n_resamples; ++s) {
    const auto subset = sample_subset(rng, all, lo, hi);
    CorrelationRow row;
    row.subset_size = subset.size();
    std::size_t ok = 0;
    for (auto e : subset) ok += correct[e];
    row.accuracy = static_cast<double>(ok) / static_cast<double>(subset.size());
    const auto sc = probe::score_subset(fitted, subset);
    row.s_p1 = sc.s_p1;
    row.s_p2 = sc.s_p2;
    r.rows.push_back(row);
  }

  auto pairs = [&](auto fx, auto fy) {
    std::pair<std::vector<double>, std::vector<double>> p;
    for (const auto& row : r.rows) {
      const std::optional<double> a = fx(row), b = fy(row);
      if (a && b) p.first.push_back(*a), p.second.push_back(*b);
    }
    return p;
  };
  auto acc = [](const CorrelationRow& x) { return std::optional<double>(x.accuracy); };
  auto p1 = [](const CorrelationRow& x) { return x.s_p1; };
  auto p2 = [](const CorrelationRow& x) { return x.s_p2; };
  {
    auto [x, y] = pairs(acc, p1);
    r.rho_acc_p1 = try_pearson(x, y, "rho_acc_p1", r.notes);
  }
  {
    auto [x, y] = pairs(acc, p2);
    r.rho_acc_p2 = try_pearson(x, y, "rho_acc_p2", r.notes);
  }
  {
    auto [x, y] = pairs(p1, p2);
    r.rho_p1_p2 = try_pearson(x, y, "rho_p1_p2", r.notes);
  }
  return r;
}

RobustnessReport robustness_report(const toylm::Model& model, const taskgen::Dataset& test,
                                   const probe::FittedProbe& fitted, std::size_t n_bins, std::size_t n_resamples,
                                   std::size_t lo, std::size_t hi, std::uint64_t seed, unsigned threads) {
  if (n_bins == 0) fail(ErrorKind::Config, "robustness: n_bins must be positive");
  if (fitted.n_test_examples != test.size()) fail(ErrorKind::Input, "robustness: probe fitted on another test set");
  RobustnessReport r;
  std::vector<std::size_t> usable;
  taskgen::Dataset clean, corrupted;
  for (std::size_t e = 0; e < test.size(); ++e) {
    const auto& ex = test[e];
    if (ex.task != taskgen::TaskKind::ChainProof)
      fail(ErrorKind::Precondition, "robustness: needs a chain-task dataset");
    if (ex.tree.nodes.size() >= ex.statement_spans.size()) {
      ++r.skipped;
      continue;
    }
    usable.push_back(e);
    clean.push_back(ex);
    corrupted.push_back(taskgen::corrupt_useless(ex, derive_seed(seed, ex.id)));
  }
  if (usable.empty()) fail(ErrorKind::Input, "robustness: no example has a useless statement");
  r.corruptible = usable.size();
  const auto ok_clean = toylm::predict_correct(model, clean, {}, threads);
  const auto ok_corr = toylm::predict_correct(model, corrupted, {}, threads);
  std::vector<int> c_clean(test.size(), 0), c_corr(test.size(), 0);
  for (std::size_t i = 0; i < usable.size(); ++i) {
    c_clean[usable[i]] = ok_clean[i];
    c_corr[usable[i]] = ok_corr[i];
  }
  r.clean_accuracy = static_cast<double>(std::count(ok_clean.begin(), ok_clean.end(), true)) / usable.size();
  r.corrupted_accuracy = static_cast<double>(std::count(ok_corr.begin(), ok_corr.end(), true)) / usable.size();

  lo = std::min(lo, usable.size());
  hi = std::min(hi, usable.size());
  check_bounds(lo, hi, usable.size(), "robustness");
  Rng rng(seed);
  for (std::size_t s = 0; s < n_resamples; ++s) {
    const auto subset = sample_subset(rng, usable, lo, hi);
    const auto sc = probe::score_subset(fitted, subset);
    if (!sc.s_p2) continue;
    double delta = 0.0;
    for (auto e : subset) delta += c_corr[e] - c_clean[e];
    r.samples.emplace_back(*sc.s_p2, delta / static_cast<double>(subset.size()));
  }
  r.n_samples = r.samples.size();
  if (r.samples.empty()) return r;

  double mn = r.samples.front().first, mx = mn;
  for (const auto& [s2, d] : r.samples) mn = std::min(mn, s2), mx = std::max(mx, s2);
  const double width = (mx - mn) / static_cast<double>(n_bins);
  for (std::size_t b = 0; b <= n_bins; ++b) r.edges.push_back(b == n_bins ? mx : mn + width * b);
  r.bins.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) r.bins[b].lo = r.edges[b], r.bins[b].hi = r.edges[b + 1];
  for (const auto& [s2, d] : r.samples) {
    std::size_t b = width > 0 ? static_cast<std::size_t>((s2 - mn) / width) : 0;
    b = std::min(b, n_bins - 1);
    ++r.bins[b].count;
    r.bins[b].mean_delta += d;
  }
  for (auto& b : r.bins)
    if (b.count) b.mean_delta /= static_cast<double>(b.count);
  return r;
}

LayerPruneResult greedy_layer_prune(const toylm::Model& model, const taskgen::Dataset& dev, double budget,
                                    unsigned threads) {
  if (!(budget >= 0.0 && budget < 1.0)) fail(ErrorKind::Config, "prune-layers: budget must lie in [0, 1)");
  if (dev.empty()) fail(ErrorKind::Input, "prune-layers: empty dev set");
  LayerPruneResult r;
  r.budget = budget;
  r.base_accuracy = toylm::evaluate_accuracy(model, dev, {}, threads);
  r.final_accuracy = r.base_accuracy;
  for (std::uint32_t l = model.config().n_layers; l-- > 0;) {
    toylm::PruneMask trial = r.mask;
    trial.disabled_layers.insert(l);
    LayerPruneStep step;
    step.layer = l;
    step.accuracy = toylm::evaluate_accuracy(model, dev, trial, threads);
    step.drop = r.base_accuracy - step.accuracy;
    step.accepted = step.drop <= 0.0 || step.drop < budget;
    if (step.accepted) {
      r.mask = trial;
      r.final_accuracy = step.accuracy;
    }
    r.steps.push_back(step);
  }
  return r;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  return f;
}

std::string num(double v, const char* fmt = "%.17g") {
  char buf[40];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

ordered_json opt(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

}  // namespace

void export_heatmap(const trace::SimplifiedAttention& s, const std::filesystem::path& path) {
  if (s.heads != 1) fail(ErrorKind::Input, "export_heatmap: expects a pooled (2-D) trace");
  auto f = open_out(path);
  f << "layer,index,value\n";
  for (std::uint32_t l = 0; l < s.layers; ++l)
    for (std::uint32_t i = 0; i < s.width; ++i) f << l << ',' << i << ',' << num(s.at(l, 0, i), "%.9g") << '\n';
  if (!f) fail(ErrorKind::Io, "write failed: " + path.string());
}

void write_correlation_csv(const CorrelationReport& r, const std::filesystem::path& path) {
  auto f = open_out(path);
  f << "resample,subset_size,accuracy,s_p1,s_p2\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    f << i << ',' << row.subset_size << ',' << num(row.accuracy) << ',' << (row.s_p1 ? num(*row.s_p1) : "")
      << ',' << (row.s_p2 ? num(*row.s_p2) : "") << '\n';
  }
  if (!f) fail(ErrorKind::Io, "write failed: " + path.string());
}

void write_robustness_csv(const RobustnessReport& r, const std::filesystem::path& path) {
  auto f = open_out(path);
  f << "bin,lo,hi,count,mean_delta\n";
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    const auto& bin = r.bins[b];
    f << b << ',' << num(bin.lo) << ',' << num(bin.hi) << ',' << bin.count << ',' << num(bin.mean_delta) << '\n';
  }
  if (!f) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::string correlation_json(const CorrelationReport& r, int indent) {
  ordered_json j;
  j["n_resamples"] = r.n_resamples;
  j["subset_lo"] = r.subset_lo;
  j["subset_hi"] = r.subset_hi;
  j["seed"] = r.seed;
  j["rho_acc_p1"] = opt(r.rho_acc_p1);
  j["rho_acc_p2"] = opt(r.rho_acc_p2);
  j["rho_p1_p2"] = opt(r.rho_p1_p2);
  j["notes"] = r.notes;
  return j.dump(indent);
}

std::string robustness_json(const RobustnessReport& r, int indent) {
  ordered_json j;
  j["n_samples"] = r.n_samples;
  j["corruptible_examples"] = r.corruptible;
  j["skipped_examples"] = r.skipped;
  j["clean_accuracy"] = r.clean_accuracy;
  j["corrupted_accuracy"] = r.corrupted_accuracy;
  j["edges"] = r.edges;
  ordered_json bins = ordered_json::array();
  for (const auto& b : r.bins) bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"mean_delta", b.mean_delta}});
  j["bins"] = bins;
  return j.dump(indent);
}

std::string layer_prune_json(const LayerPruneResult& r, const std::string& config_echo, int indent) {
  ordered_json j;
  j["budget"] = r.budget;
  j["base_accuracy"] = r.base_accuracy;
  j["final_accuracy"] = r.final_accuracy;
  j["disabled_layers"] = std::vector<std::uint32_t>(r.mask.disabled_layers.begin(), r.mask.disabled_layers.end());
  ordered_json steps = ordered_json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"layer", s.layer}, {"accuracy", s.accuracy}, {"drop", s.drop}, {"accepted", s.accepted}});
  j["steps"] = steps;
  j["config"] = config_echo.empty() ? ordered_json(nullptr) : ordered_json::parse(config_echo);
  return j.dump(indent);
}

}  // namespace mprobe::analysis
