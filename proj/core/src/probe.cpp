#include "mprobe/probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <thread>

#include "json.hpp"
#include "mprobe/error.hpp"

namespace mprobe::probe {

using taskgen::Dataset;
using taskgen::Example;
using trace::SimplifiedAttention;
using trace::TraceKind;

namespace {

std::uint32_t unit_column(const SimplifiedAttention& s, const Example& ex, std::size_t unit) {
  switch (s.kind) {
    case TraceKind::LastToken:
    case TraceKind::HeadPooled:
      return ex.statement_spans[unit].start;
    case TraceKind::CrossHypernode:
    case TraceKind::CrossPooled:
      return static_cast<std::uint32_t>(unit);
    case TraceKind::RankPermuted:
      break;
  }
  fail(ErrorKind::Input, "probe: rank-permuted traces cannot be probed per statement");
}

std::optional<std::uint32_t> height_of(const Example& ex, std::size_t unit) {
  const auto& nodes = ex.tree.nodes;
  for (std::size_t n = 0; n < nodes.size(); ++n)
    if (nodes[n] == unit) return ex.tree.heights[n];
  return std::nullopt;
}

}  // namespace

std::vector<ProbeInstance> build_instances(std::span<const SimplifiedAttention> traces, const Dataset& ds,
                                           const ProbeConfig& cfg) {
  if (traces.size() != ds.size())
    fail(ErrorKind::Data, "probe: " + std::to_string(traces.size()) + " traces for " +
                              std::to_string(ds.size()) + " examples");
  std::vector<ProbeInstance> out;
  for (std::size_t e = 0; e < ds.size(); ++e) {
    const Example& ex = ds[e];
    const SimplifiedAttention& raw = traces[e];
    if (raw.example_id != ex.id)
      fail(ErrorKind::Data, "probe: trace id " + std::to_string(raw.example_id) +
                                " does not match example id " + std::to_string(ex.id));
    const std::uint32_t kept = cfg.prefix.value_or(raw.layers);
    if (kept == 0 || kept > raw.layers)
      fail(ErrorKind::Input, "probe: prefix " + std::to_string(kept) + " outside [1, " +
                                 std::to_string(raw.layers) + "]");

    SimplifiedAttention pooled;
    const SimplifiedAttention* src = &raw;
    if (cfg.features == FeatureMode::Pooled && !trace::is_pooled(raw.kind)) {
      pooled = trace::pool_heads(raw, cfg.head_subset);
      src = &pooled;
    }
    if (cfg.features == FeatureMode::PerHead && trace::is_pooled(raw.kind))
      fail(ErrorKind::Input, "probe: per-head features need unpooled traces");

    for (std::size_t u = 0; u < ex.statement_spans.size(); ++u) {
      ProbeInstance inst;
      inst.example_id = ex.id;
      inst.unit_index = static_cast<std::uint32_t>(u);
      const std::uint32_t col = unit_column(*src, ex, u);
      if (col >= src->width) fail(ErrorKind::Data, "probe: trace narrower than its example");
      inst.features.reserve(static_cast<std::size_t>(kept) * src->heads);
      for (std::uint32_t l = 0; l < kept; ++l)
        for (std::uint32_t h = 0; h < src->heads; ++h) inst.features.push_back(src->at(l, h, col));
      inst.height = height_of(ex, u);
      inst.useful = inst.height.has_value();
      out.push_back(std::move(inst));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

KnnModel::KnnModel(std::vector<std::vector<double>> features, std::vector<int> labels, std::uint32_t k)
    : k_(k), labels_(std::move(labels)) {
  if (features.empty()) fail(ErrorKind::Input, "knn: empty training set");
  if (features.size() != labels_.size()) fail(ErrorKind::Input, "knn: features and labels differ in length");
  if (k == 0 || k > features.size())
    fail(ErrorKind::Input, "knn: k_neighbors must lie in [1, " + std::to_string(features.size()) + "]");
  dim_ = features.front().size();
  features_.reserve(features.size() * dim_);
  for (const auto& f : features) {
    if (f.size() != dim_) fail(ErrorKind::Input, "knn: ragged feature vectors");
    features_.insert(features_.end(), f.begin(), f.end());
  }
}

int KnnModel::predict(std::span<const double> query) const {
  if (query.size() != dim_) fail(ErrorKind::Input, "knn: query dimension mismatch");
  const std::size_t n = labels_.size();
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = features_.data() + i * dim_;
    double d = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double diff = row[j] - query[j];
      d += diff * diff;
    }
    dist[i] = {d, i};
  }
  // Pair ordering breaks distance ties by insertion index.
  std::nth_element(dist.begin(), dist.begin() + (k_ - 1), dist.end());
  std::map<int, std::uint32_t> votes;
  const auto kth = dist[k_ - 1];
  for (std::size_t i = 0; i < n; ++i)
    if (dist[i] <= kth) ++votes[labels_[dist[i].second]];
  int best = 0;
  std::uint32_t best_count = 0;
  for (const auto& [label, count] : votes)
    if (count > best_count) best = label, best_count = count;
  return best;
}

KnnModel knn_fit(std::vector<std::vector<double>> features, std::vector<int> labels,
                 std::uint32_t k_neighbors) {
  return KnnModel(std::move(features), std::move(labels), k_neighbors);
}

std::vector<int> knn_predict(const KnnModel& model, std::span<const std::vector<double>> queries,
                             unsigned threads) {
  std::vector<int> out(queries.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < queries.size(); i += step) out[i] = model.predict(queries[i]);
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(queries.size())));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return out;
}

// ---------------------------------------------------------------------------

double f1_macro(std::span<const int> gold, std::span<const int> pred) {
  if (gold.size() != pred.size()) fail(ErrorKind::Input, "f1_macro: gold and pred differ in length");
  if (gold.empty()) fail(ErrorKind::Input, "f1_macro: empty label vectors");
  std::map<int, std::array<std::size_t, 3>> counts;  // tp, fp, fn
  for (int g : gold) counts[g];
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) {
      ++counts[gold[i]][0];
    } else {
      ++counts[gold[i]][2];
      auto it = counts.find(pred[i]);
      if (it != counts.end()) ++it->second[1];
    }
  }
  double sum = 0.0;
  for (const auto& [label, c] : counts) {
    const double denom = 2.0 * c[0] + c[1] + c[2];
    sum += denom > 0 ? 2.0 * c[0] / denom : 0.0;
  }
  return sum / static_cast<double>(counts.size());
}

double f1_binary(std::span<const int> gold, std::span<const int> pred) {
  if (gold.size() != pred.size()) fail(ErrorKind::Input, "f1_binary: gold and pred differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i] == 1, p = pred[i] == 1;
    tp += g && p;
    fp += !g && p;
    fn += g && !p;
  }
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0 ? 2.0 * tp / denom : 0.0;
}

double normalize_score(double f1_model, double f1_rand) {
  if (!(f1_rand < 1.0)) fail(ErrorKind::Degenerate, "normalize_score: random baseline F1 is 1");
  return (f1_model - f1_rand) / (1.0 - f1_rand);
}

// ---------------------------------------------------------------------------

namespace {

struct LabelledSet {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  std::vector<std::size_t> example;
};

enum class Target { Usefulness, Height };

LabelledSet select(const std::vector<ProbeInstance>& inst, const Dataset& ds, Target target) {
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t e = 0; e < ds.size(); ++e) index.emplace(ds[e].id, e);
  LabelledSet out;
  for (const auto& in : inst) {
    if (target == Target::Height && !in.useful) continue;
    out.features.push_back(in.features);
    out.labels.push_back(target == Target::Usefulness ? static_cast<int>(in.useful)
                                                      : static_cast<int>(*in.height));
    out.example.push_back(index.at(in.example_id));
  }
  return out;
}

std::vector<int> fit_and_predict(const LabelledSet& train, const LabelledSet& test, std::uint32_t k,
                                 unsigned threads) {
  if (test.features.empty()) return {};
  const auto model = knn_fit(train.features, train.labels, std::min<std::size_t>(k, train.features.size()));
  return knn_predict(model, test.features, threads);
}

struct SourcePredictions {
  std::vector<int> use, height;
};

SourcePredictions predict_source(const ProbeInputs& in, const TraceSplits& traces, const ProbeConfig& cfg,
                                 unsigned threads, LabelledSet* use_test, LabelledSet* height_test) {
  const auto train_inst = build_instances(traces.train, in.train, cfg);
  const auto test_inst = build_instances(traces.test, in.test, cfg);
  const auto use_train = select(train_inst, in.train, Target::Usefulness);
  const auto h_train = select(train_inst, in.train, Target::Height);
  *use_test = select(test_inst, in.test, Target::Usefulness);
  *height_test = select(test_inst, in.test, Target::Height);
  SourcePredictions p;
  p.use = fit_and_predict(use_train, *use_test, cfg.k_neighbors, threads);
  if (!h_train.features.empty())
    p.height = fit_and_predict(h_train, *height_test, cfg.k_neighbors, threads);
  else
    p.height.assign(height_test->labels.size(), 0);
  return p;
}

bool single_class(std::span<const int> labels) {
  return std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end();
}

}  // namespace

FittedProbe fit_probe(const ProbeInputs& in, const ProbeConfig& cfg, unsigned threads) {
  if (in.train.empty() || in.test.empty()) fail(ErrorKind::Input, "probe: empty train or test split");
  LabelledSet use_test, h_test, use_test_r, h_test_r;
  const auto model = predict_source(in, in.model, cfg, threads, &use_test, &h_test);
  const auto rand = predict_source(in, in.rand, cfg, threads, &use_test_r, &h_test_r);
  if (use_test.labels != use_test_r.labels || h_test.labels != h_test_r.labels)
    fail(ErrorKind::Data, "probe: model and random traces disagree in shape");

  FittedProbe fp;
  fp.n_test_examples = in.test.size();
  fp.use_example = std::move(use_test.example);
  fp.use_gold = std::move(use_test.labels);
  fp.use_model = model.use;
  fp.use_rand = rand.use;
  fp.height_example = std::move(h_test.example);
  fp.height_gold = std::move(h_test.labels);
  fp.height_model = model.height;
  fp.height_rand = rand.height;
  return fp;
}

SubsetScores score_subset(const FittedProbe& fp, std::span<const std::size_t> examples) {
  std::vector<bool> keep(fp.n_test_examples, examples.empty());
  for (std::size_t e : examples) {
    if (e >= fp.n_test_examples) fail(ErrorKind::Input, "probe: subset index out of range");
    keep[e] = true;
  }
  auto gather = [&](const std::vector<std::size_t>& ex, const std::vector<int>& v) {
    std::vector<int> out;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (keep[ex[i]]) out.push_back(v[i]);
    return out;
  };

  SubsetScores s;
  const auto ug = gather(fp.use_example, fp.use_gold);
  if (ug.empty()) fail(ErrorKind::Input, "probe: no statements in the evaluated subset");
  s.raw_f1_usefulness = f1_macro(ug, gather(fp.use_example, fp.use_model));
  s.rand_f1_usefulness = f1_macro(ug, gather(fp.use_example, fp.use_rand));
  if (single_class(ug))
    s.notes.push_back("usefulness: every statement has the same label; S_P1 undefined");
  else if (s.rand_f1_usefulness >= 1.0)
    s.notes.push_back("usefulness: random baseline F1 is 1; S_P1 undefined");
  else
    s.s_p1 = normalize_score(s.raw_f1_usefulness, s.rand_f1_usefulness);

  const auto hg = gather(fp.height_example, fp.height_gold);
  if (hg.empty() || single_class(hg)) {
    s.raw_f1_height = 1.0;
    s.rand_f1_height = 1.0;
    s.notes.push_back("height: a single height class; raw F1 is 1 by convention, S_P2 undefined");
  } else {
    s.raw_f1_height = f1_macro(hg, gather(fp.height_example, fp.height_model));
    s.rand_f1_height = f1_macro(hg, gather(fp.height_example, fp.height_rand));
    if (s.rand_f1_height >= 1.0)
      s.notes.push_back("height: random baseline F1 is 1; S_P2 undefined");
    else
      s.s_p2 = normalize_score(s.raw_f1_height, s.rand_f1_height);
  }
  return s;
}

void probe_usefulness(const ProbeInputs& in, const ProbeConfig& cfg, ProbeReport& report) {
  const auto s = score_subset(fit_probe(in, cfg));
  report.full.raw_f1_usefulness = s.raw_f1_usefulness;
  report.full.rand_f1_usefulness = s.rand_f1_usefulness;
  report.full.s_p1 = s.s_p1;
  for (const auto& n : s.notes)
    if (n.starts_with("usefulness")) report.full.notes.push_back(n);
  report.config = cfg;
}

void probe_height(const ProbeInputs& in, const ProbeConfig& cfg, ProbeReport& report) {
  const auto s = score_subset(fit_probe(in, cfg));
  report.full.raw_f1_height = s.raw_f1_height;
  report.full.rand_f1_height = s.rand_f1_height;
  report.full.s_p2 = s.s_p2;
  for (const auto& n : s.notes)
    if (n.starts_with("height")) report.full.notes.push_back(n);
  report.config = cfg;
}

namespace {

std::uint32_t trace_layers(const ProbeInputs& in) {
  if (in.model.train.empty()) fail(ErrorKind::Input, "probe: no training traces");
  return in.model.train.front().layers;
}

}  // namespace

std::vector<LayerScore> layerwise_probe(const ProbeInputs& in, const ProbeConfig& cfg, unsigned threads) {
  const std::uint32_t L = trace_layers(in);
  std::vector<LayerScore> out;
  for (std::uint32_t l = 1; l <= L; ++l) {
    ProbeConfig c = cfg;
    c.prefix = l;
    out.push_back({l, score_subset(fit_probe(in, c, threads))});
  }
  return out;
}

std::pair<std::map<std::uint32_t, std::vector<double>>, std::map<std::uint32_t, std::vector<double>>>
per_height_probe(const ProbeInputs& in, const ProbeConfig& cfg, std::span<const std::uint32_t> heights,
                 unsigned threads) {
  const std::uint32_t L = trace_layers(in);
  std::set<std::uint32_t> present;
  for (const auto& ex : in.test)
    for (auto h : ex.tree.heights) present.insert(h);
  for (auto h : heights)
    if (!present.count(h))
      fail(ErrorKind::Input, "per-height probe: height " + std::to_string(h) + " absent from the test split");

  std::map<std::uint32_t, std::vector<double>> model_curves, rand_curves;
  for (std::uint32_t l = 1; l <= L; ++l) {
    ProbeConfig c = cfg;
    c.prefix = l;
    std::array<std::vector<ProbeInstance>, 2> tr = {build_instances(in.model.train, in.train, c),
                                                    build_instances(in.rand.train, in.train, c)};
    std::array<std::vector<ProbeInstance>, 2> te = {build_instances(in.model.test, in.test, c),
                                                    build_instances(in.rand.test, in.test, c)};
    for (auto h : heights) {
      auto label = [h](const ProbeInstance& p) { return static_cast<int>(p.useful && *p.height == h); };
      for (int src = 0; src < 2; ++src) {
        std::vector<std::vector<double>> xf, qf;
        std::vector<int> y, gold;
        for (const auto& p : tr[src]) xf.push_back(p.features), y.push_back(label(p));
        for (const auto& p : te[src]) qf.push_back(p.features), gold.push_back(label(p));
        const auto model = knn_fit(std::move(xf), std::move(y),
                                   std::min<std::size_t>(cfg.k_neighbors, tr[src].size()));
        const double f1 = f1_binary(gold, knn_predict(model, qf, threads));
        (src == 0 ? model_curves : rand_curves)[h].push_back(f1);
      }
    }
  }
  return {model_curves, rand_curves};
}

ProbeReport run_probe(const ProbeInputs& in, const ProbeConfig& cfg, bool layerwise, unsigned threads) {
  ProbeReport r;
  r.config = cfg;
  r.n_layers = trace_layers(in);
  r.full = score_subset(fit_probe(in, cfg, threads));
  if (layerwise) {
    r.per_layer = layerwise_probe(in, cfg, threads);
    std::set<std::uint32_t> present;
    for (const auto& ex : in.test)
      for (auto h : ex.tree.heights) present.insert(h);
    const std::vector<std::uint32_t> heights(present.begin(), present.end());
    auto curves = per_height_probe(in, cfg, heights, threads);
    r.per_height_f1 = std::move(curves.first);
    r.per_height_f1_rand = std::move(curves.second);
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::ordered_json;

ordered_json opt(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

ordered_json scores_json(const SubsetScores& s) {
  ordered_json j;
  j["raw_f1_usefulness"] = s.raw_f1_usefulness;
  j["rand_f1_usefulness"] = s.rand_f1_usefulness;
  j["s_p1"] = opt(s.s_p1);
  j["raw_f1_height"] = s.raw_f1_height;
  j["rand_f1_height"] = s.rand_f1_height;
  j["s_p2"] = opt(s.s_p2);
  j["notes"] = s.notes;
  return j;
}

ordered_json config_json(const ProbeConfig& cfg) {
  ordered_json j;
  j["k_neighbors"] = cfg.k_neighbors;
  j["prefix"] = cfg.prefix ? ordered_json(*cfg.prefix) : ordered_json(nullptr);
  j["features"] = cfg.features == FeatureMode::Pooled ? "pooled" : "per_head";
  if (cfg.head_subset) {
    ordered_json rows = ordered_json::array();
    for (const auto& layer : *cfg.head_subset) {
      ordered_json row = ordered_json::array();
      for (bool b : layer) row.push_back(b);
      rows.push_back(row);
    }
    j["head_subset"] = rows;
  } else {
    j["head_subset"] = nullptr;
  }
  j["rand_seed"] = cfg.rand_seed;
  return j;
}

}  // namespace

std::string config_to_json(const ProbeConfig& cfg) { return config_json(cfg).dump(); }

std::string to_json(const ProbeReport& report, int indent) {
  ordered_json j = scores_json(report.full);
  j["n_layers"] = report.n_layers;
  ordered_json layers = ordered_json::array();
  for (const auto& ls : report.per_layer) {
    ordered_json e = scores_json(ls.scores);
    e["layers"] = ls.layers;
    layers.push_back(e);
  }
  j["per_layer"] = layers;
  auto curves = [](const std::map<std::uint32_t, std::vector<double>>& m) {
    ordered_json out = ordered_json::object();
    for (const auto& [h, v] : m) out[std::to_string(h)] = v;
    return out;
  };
  j["per_height_f1"] = curves(report.per_height_f1);
  j["per_height_f1_rand"] = curves(report.per_height_f1_rand);
  j["config"] = config_json(report.config);
  return j.dump(indent);
}

}  // namespace mprobe::probe
