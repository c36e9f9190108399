// mprobe: generate tasks, train the toy model, trace and probe its attention,
// and run the pruning / flow / correlation studies.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "app/pipeline.hpp"
#include "app/run_config.hpp"
#include "json.hpp"
#include "mprobe/analysis.hpp"
#include "mprobe/error.hpp"
#include "mprobe/flow.hpp"
#include "mprobe/heads.hpp"
#include "mprobe/probe.hpp"
#include "mprobe/reference.hpp"
#include "mprobe/trace.hpp"

namespace fs = std::filesystem;
using namespace mprobe;
using nlohmann::ordered_json;

namespace {

struct Globals {
  std::string config_path;
  unsigned threads = 1;
  bool deterministic = false;
  std::string out_dir;
};

struct Overrides {
  std::optional<std::string> task;
  std::optional<std::uint32_t> m, k, vocab, statements, depth, epochs, k_neighbors, prefix;
  std::optional<std::uint64_t> n, seed, resamples;
  std::optional<double> lr, budget;
  std::optional<std::string> head_subset;
};

app::RunConfig resolve(const Globals& g, const Overrides& o) {
  app::RunConfig cfg = g.config_path.empty() ? app::default_config() : app::load_config(g.config_path);
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  if (o.task) {
    if (*o.task == "kth") cfg.task.task = taskgen::TaskKind::KthSmallest;
    else if (*o.task == "chain") cfg.task.task = taskgen::TaskKind::ChainProof;
    else fail(ErrorKind::Config, "--task must be kth or chain");
  }
  if (o.m) cfg.task.m = *o.m;
  if (o.k) cfg.task.k = *o.k;
  if (o.vocab) cfg.task.vocab_size = *o.vocab;
  if (o.statements) cfg.task.n_statements = *o.statements;
  if (o.depth) cfg.task.chain_depth = *o.depth;
  if (o.n) cfg.task.n_examples = *o.n;
  if (o.seed) cfg.task.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.lr) cfg.train.learning_rate = *o.lr;
  if (o.k_neighbors) cfg.probe.k_neighbors = *o.k_neighbors;
  if (o.prefix) cfg.probe.prefix = *o.prefix;
  if (o.head_subset) {
    if (*o.head_subset == "all") cfg.probe.head_subset = app::HeadSubsetPolicy::All;
    else if (*o.head_subset == "top_position_entropy") cfg.probe.head_subset = app::HeadSubsetPolicy::TopPositionEntropy;
    else fail(ErrorKind::Config, "--head-subset must be all or top_position_entropy");
  }
  if (o.resamples) cfg.analysis.resamples = static_cast<std::uint32_t>(*o.resamples);
  if (o.budget) cfg.analysis.layer_budget = *o.budget;
  app::finalize(cfg);
  return cfg;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  f << text;
  if (!text.empty() && text.back() != '\n') f << '\n';
  if (!f) fail(ErrorKind::Io, "write failed: " + path.string());
}

/// JSON artifact with the config echo and, unless deterministic, a timestamp.
void write_artifact(const fs::path& path, ordered_json body, const app::RunConfig& cfg, const Globals& g) {
  body["config"] = ordered_json::parse(app::to_json(cfg));
  if (!g.deterministic) body["created_at"] = timestamp();
  write_text(path, body.dump(2));
}

/// CSV schemas are fixed, so their config echo goes to a sidecar file.
void write_sidecar(const fs::path& csv, const app::RunConfig& cfg, const Globals& g) {
  ordered_json meta;
  meta["artifact"] = csv.filename().string();
  write_artifact(fs::path(csv.string() + ".meta.json"), meta, cfg, g);
}

taskgen::Splits load_splits(const app::RunPaths& p) {
  taskgen::Splits s;
  s.train = taskgen::read_jsonl(p.data("train"));
  s.dev = taskgen::read_jsonl(p.data("dev"));
  s.test = taskgen::read_jsonl(p.data("test"));
  return s;
}

app::ProbeData load_probe_data(const app::RunConfig& cfg, const app::RunPaths& p) {
  const auto splits = load_splits(p);
  app::ProbeData d;
  d.train = app::head_of(splits.train, cfg.probe.max_train_examples);
  d.test = app::head_of(splits.test, cfg.probe.max_test_examples);
  d.model.train = trace::read_traces(p.traces("model", "train")).records;
  d.model.test = trace::read_traces(p.traces("model", "test")).records;
  d.rand.train = trace::read_traces(p.traces("rand", "train")).records;
  d.rand.test = trace::read_traces(p.traces("rand", "test")).records;
  return d;
}

// ---------------------------------------------------------------------------

int cmd_gen(const app::RunConfig& cfg, const Globals& g) {
  const app::RunPaths p{cfg.out_dir};
  const auto splits = app::make_splits(cfg);
  fs::create_directories(p.root / "data");
  taskgen::write_jsonl(splits.train, p.data("train"));
  taskgen::write_jsonl(splits.dev, p.data("dev"));
  taskgen::write_jsonl(splits.test, p.data("test"));
  write_artifact(p.artifact("run_config.json"), ordered_json::object(), cfg, g);
  std::printf("wrote %zu / %zu / %zu examples to %s\n", splits.train.size(), splits.dev.size(), splits.test.size(),
              (p.root / "data").c_str());
  return 0;
}

int cmd_train(const app::RunConfig& cfg, const Globals& g) {
  const app::RunPaths p{cfg.out_dir};
  const auto splits = load_splits(p);
  toylm::TrainingLog log;
  const auto model = app::train_model(cfg, splits, &log, true, g.threads);
  toylm::save_checkpoint(model, p.checkpoint());
  const double test_acc = toylm::evaluate_accuracy(model, splits.test, {}, g.threads);
  ordered_json j;
  ordered_json epochs = ordered_json::array();
  for (const auto& e : log.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_accuracy", e.dev_accuracy}});
  j["epochs"] = epochs;
  j["steps"] = log.steps;
  j["test_accuracy"] = test_acc;
  write_artifact(p.train_log(), j, cfg, g);
  std::printf("test accuracy %.4f; checkpoint %s\n", test_acc, p.checkpoint().c_str());
  return 0;
}

int cmd_trace(const app::RunConfig& cfg, const Globals& g) {
  const app::RunPaths p{cfg.out_dir};
  const auto splits = load_splits(p);
  const auto model = toylm::load_checkpoint(p.checkpoint());
  const auto rand = app::random_model(cfg);
  const auto data = app::collect_probe_data(cfg, model, rand, splits, g.threads);
  fs::create_directories(p.root / "traces");
  auto save = [&](const std::vector<trace::SimplifiedAttention>& recs, const char* src, const char* split) {
    trace::TraceFile tf;
    tf.kind = recs.empty() ? trace::TraceKind::LastToken : recs.front().kind;
    tf.layers = static_cast<std::uint16_t>(cfg.model.n_layers);
    tf.heads = static_cast<std::uint16_t>(cfg.model.n_heads);
    tf.records = recs;
    trace::write_traces(tf, p.traces(src, split));
  };
  save(data.model.train, "model", "train");
  save(data.model.test, "model", "test");
  save(data.rand.train, "rand", "train");
  save(data.rand.test, "rand", "test");
  std::printf("traced %zu train / %zu test examples into %s\n", data.train.size(), data.test.size(),
              (p.root / "traces").c_str());
  return 0;
}

int cmd_probe(const app::RunConfig& cfg, const Globals& g, bool layerwise) {
  const app::RunPaths p{cfg.out_dir};
  const auto data = load_probe_data(cfg, p);
  const auto pc = app::resolved_probe_config(cfg, data);
  const probe::ProbeInputs in{data.train, data.test, data.model, data.rand};
  const auto report = probe::run_probe(in, pc, layerwise, g.threads);
  auto j = ordered_json::parse(probe::to_json(report));
  j["probe_config"] = j["config"];
  write_artifact(p.artifact("probe_report.json"), j, cfg, g);
  auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("undefined"); };
  std::printf("usefulness raw F1 %.4f (random %.4f)  S_P1 %s\n", report.full.raw_f1_usefulness,
              report.full.rand_f1_usefulness, show(report.full.s_p1).c_str());
  std::printf("height     raw F1 %.4f (random %.4f)  S_P2 %s\n", report.full.raw_f1_height,
              report.full.rand_f1_height, show(report.full.s_p2).c_str());
  for (const auto& ls : report.per_layer)
    std::printf("  layers 1..%u: S_P1 %s  S_P2 %s\n", ls.layers, show(ls.scores.s_p1).c_str(),
                show(ls.scores.s_p2).c_str());
  for (const auto& n : report.full.notes) std::printf("note: %s\n", n.c_str());
  return 0;
}

int cmd_entropy(const app::RunConfig& cfg, const Globals& g) {
  const app::RunPaths p{cfg.out_dir};
  const auto splits = load_splits(p);
  const auto test = app::head_of(splits.test, cfg.probe.max_test_examples);
  const auto traces = trace::read_traces(p.traces("model", "test")).records;
  const auto profiles = heads::head_profiles(traces, test);
  heads::write_head_entropy_csv(profiles, p.artifact("head_entropy.csv"));
  write_sidecar(p.artifact("head_entropy.csv"), cfg, g);
  for (const auto& h : profiles)
    std::printf("layer %u head %u  size %.4f  position %.4f\n", h.layer, h.head, h.size_entropy, h.position_entropy);
  return 0;
}

int cmd_prune_heads(const app::RunConfig& cfg, const Globals& g) {
  const app::RunPaths p{cfg.out_dir};
  const auto splits = load_splits(p);
  const auto model = toylm::load_checkpoint(p.checkpoint());
  const auto probe_test = app::head_of(splits.test, cfg.probe.max_test_examples);
  const auto traces = trace::read_traces(p.traces("model", "test")).records;
  const auto profiles = heads::head_profiles(traces, probe_test);
  const auto curves = app::head_pruning(cfg, model, splits.test, profiles, g.threads);
  heads::write_pruning_curve_csv(curves.curves, p.artifact("pruning_curve.csv"));
  write_sidecar(p.artifact("pruning_curve.csv"), cfg, g);
  std::printf("mean accuracy over rates 0.1..0.5: size %.4f  random %.4f  position %.4f\n", curves.mean_size,
              curves.mean_random, curves.mean_position);
  return 0;
}

int cmd_prune_layers(const app::RunConfig& cfg, const Globals& g) {
  const app::RunPaths p{cfg.out_dir};
  const auto splits = load_splits(p);
  const auto model = toylm::load_checkpoint(p.checkpoint());
  const auto r = analysis::greedy_layer_prune(model, splits.dev, cfg.analysis.layer_budget, g.threads);
  write_artifact(p.artifact("layer_prune_log.json"), ordered_json::parse(analysis::layer_prune_json(r, "")), cfg, g);
  for (const auto& s : r.steps)
    std::printf("layer %u  accuracy %.4f  drop %+.4f  %s\n", s.layer, s.accuracy, s.drop,
                s.accepted ? "pruned" : "kept");
  std::printf("disabled %zu of %u layers; dev accuracy %.4f -> %.4f\n", r.mask.disabled_layers.size(),
              cfg.model.n_layers, r.base_accuracy, r.final_accuracy);
  return 0;
}

int cmd_flow(const app::RunConfig& cfg, const Globals& g, std::uint32_t random_stacks) {
  const app::RunPaths p{cfg.out_dir};
  std::vector<flow::ExampleFlow> rows;
  if (random_stacks > 0) {
    Rng rng(cfg.analysis.seed);
    for (std::uint32_t i = 0; i < random_stacks; ++i) {
      const auto T = static_cast<std::uint32_t>(1 + rng.below(10));
      const auto L = static_cast<std::uint32_t>(1 + rng.below(8));
      const auto stack = flow::random_causal_stack(rng, T, L);
      auto st = flow::rollout(stack);
      rows.push_back({i, flow::check_domination_bound(st, cfg.analysis.flow_tolerance)});
    }
  } else {
    const auto splits = load_splits(p);
    const auto model = toylm::load_checkpoint(p.checkpoint());
    const auto ex = app::head_of(splits.test, cfg.analysis.flow_examples);
    for (const auto& e : ex) {
      const auto rec = toylm::forward(model, std::span<const std::uint32_t>(e.tokens));
      auto st = flow::rollout(flow::pooled_layers(rec.attention));
      rows.push_back({e.id, flow::check_domination_bound(st, cfg.analysis.flow_tolerance)});
    }
  }
  auto j = ordered_json::parse(flow::flow_report_json(rows, ""));
  j.erase("config");
  write_artifact(p.artifact("flow_report.json"), j, cfg, g);
  std::printf("%zu inputs, bound holds on all: %s, min margin %.3g\n", rows.size(),
              j["all_hold"].get<bool>() ? "yes" : "no", j["min_margin"].is_null() ? 0.0 : j["min_margin"].get<double>());
  if (!j["all_hold"].get<bool>()) fail(ErrorKind::Numeric, "flow-check: domination bound violated");
  return 0;
}

int cmd_correlate(const app::RunConfig& cfg, const Globals& g) {
  const app::RunPaths p{cfg.out_dir};
  const auto data = load_probe_data(cfg, p);
  const auto model = toylm::load_checkpoint(p.checkpoint());
  const auto pc = app::resolved_probe_config(cfg, data);
  const probe::ProbeInputs in{data.train, data.test, data.model, data.rand};
  const auto fitted = probe::fit_probe(in, pc, g.threads);
  const auto correct = toylm::predict_correct(model, data.test, {}, g.threads);
  const auto r = analysis::correlate_scores(correct, fitted, cfg.analysis.resamples, cfg.analysis.subset_lo,
                                            cfg.analysis.subset_hi, cfg.analysis.seed);
  analysis::write_correlation_csv(r, p.artifact("correlation.csv"));
  write_sidecar(p.artifact("correlation.csv"), cfg, g);
  write_artifact(p.artifact("correlation.json"), ordered_json::parse(analysis::correlation_json(r)), cfg, g);
  auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("undefined"); };
  std::printf("rho(acc, S_P1) %s  rho(acc, S_P2) %s  rho(S_P1, S_P2) %s\n", show(r.rho_acc_p1).c_str(),
              show(r.rho_acc_p2).c_str(), show(r.rho_p1_p2).c_str());
  for (const auto& n : r.notes) std::printf("note: %s\n", n.c_str());
  return 0;
}

int cmd_robustness(const app::RunConfig& cfg, const Globals& g) {
  const app::RunPaths p{cfg.out_dir};
  const auto data = load_probe_data(cfg, p);
  const auto model = toylm::load_checkpoint(p.checkpoint());
  const auto pc = app::resolved_probe_config(cfg, data);
  const probe::ProbeInputs in{data.train, data.test, data.model, data.rand};
  const auto fitted = probe::fit_probe(in, pc, g.threads);
  const auto r = analysis::robustness_report(model, data.test, fitted, cfg.analysis.bins, cfg.analysis.resamples,
                                             cfg.analysis.subset_lo, cfg.analysis.subset_hi, cfg.analysis.seed,
                                             g.threads);
  analysis::write_robustness_csv(r, p.artifact("robustness.csv"));
  write_sidecar(p.artifact("robustness.csv"), cfg, g);
  write_artifact(p.artifact("robustness.json"), ordered_json::parse(analysis::robustness_json(r)), cfg, g);
  std::printf("clean accuracy %.4f, corrupted %.4f over %zu examples (%zu skipped)\n", r.clean_accuracy,
              r.corrupted_accuracy, r.corruptible, r.skipped);
  for (const auto& b : r.bins)
    std::printf("  S_P2 [%.3f, %.3f]: %zu samples, mean delta %+.4f\n", b.lo, b.hi, b.count, b.mean_delta);
  return 0;
}

int cmd_heatmap(const app::RunConfig& cfg, const Globals& g) {
  const app::RunPaths p{cfg.out_dir};
  const auto data = load_probe_data(cfg, p);
  const auto pc = app::resolved_probe_config(cfg, data);
  std::vector<trace::SimplifiedAttention> reduced;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    auto pooled = trace::pool_heads(data.model.test[i], pc.head_subset);
    if (cfg.task.task == taskgen::TaskKind::KthSmallest)
      pooled = trace::rank_permute(pooled, trace::value_ranking(data.test[i]));
    reduced.push_back(std::move(pooled));
  }
  const auto mean = trace::expected_trace(reduced);
  analysis::export_heatmap(mean, p.artifact("heatmap.csv"));
  write_sidecar(p.artifact("heatmap.csv"), cfg, g);
  std::printf("heatmap of %u layers x %u columns from %zu examples\n", mean.layers, mean.width, reduced.size());
  return 0;
}

int cmd_repro_tables() {
  const auto cells = reference::reproduce(0.15);
  std::fputs(reference::format_table(cells).c_str(), stdout);
  std::size_t checked = 0, ok = 0;
  for (const auto& c : cells)
    if (c.checked) ++checked, ok += c.within_tolerance;
  std::printf("finetuned cells within 0.15 points: %zu / %zu (k=7 S_P2 is inconsistent with its raw values)\n", ok,
              checked);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"mprobe: probe a toy transformer's attention for reasoning-tree structure"};
  cli.require_subcommand(1);
  Globals g;
  Overrides o;
  cli.add_option("--config", g.config_path, "JSON run configuration (defaults to the built-in desk config)");
  cli.add_option("--threads", g.threads, "worker threads for parallel stages")->check(CLI::PositiveNumber);
  cli.add_flag("--deterministic", g.deterministic, "omit timestamps so outputs are byte-identical across runs");
  cli.add_option("--out-dir", g.out_dir, "run directory (overrides paths.out_dir)");

  auto* gen = cli.add_subcommand("gen", "generate a dataset and write train/dev/test JSONL splits");
  gen->add_option("--task", o.task, "kth or chain");
  gen->add_option("--m", o.m, "numbers per example (kth)");
  gen->add_option("--k", o.k, "rank of the answer (kth)");
  gen->add_option("--vocab", o.vocab, "domain vocabulary size");
  gen->add_option("--statements", o.statements, "statements per example (chain)");
  gen->add_option("--depth", o.depth, "proof depth 0 or 1 (chain)");
  gen->add_option("--n", o.n, "number of examples");
  gen->add_option("--seed", o.seed, "generator seed");

  auto* train = cli.add_subcommand("train", "train the toy model on the generated splits");
  train->add_option("--epochs", o.epochs, "training epochs");
  train->add_option("--lr", o.lr, "peak learning rate");

  auto* tr = cli.add_subcommand("trace", "record simplified attention of the trained and random-init models");

  bool layerwise = false;
  auto* pr = cli.add_subcommand("probe", "fit the kNN probes and write probe_report.json");
  pr->add_option("--k-neighbors", o.k_neighbors, "kNN neighbours");
  pr->add_option("--prefix", o.prefix, "use only the bottom N layers");
  pr->add_option("--head-subset", o.head_subset, "all or top_position_entropy");
  pr->add_flag("--layerwise", layerwise, "also probe every layer prefix and every height");

  auto* ent = cli.add_subcommand("entropy", "per-head size and position entropy (head_entropy.csv)");
  auto* ph = cli.add_subcommand("prune-heads", "accuracy under entropy-ordered and random head pruning");
  auto* pl = cli.add_subcommand("prune-layers", "greedy top-down layer pruning under an accuracy budget");
  pl->add_option("--budget", o.budget, "total dev-accuracy drop allowed, as a fraction");

  std::uint32_t random_stacks = 0;
  auto* fl = cli.add_subcommand("flow-check", "check the first-token domination bound on rolled-out attention");
  fl->add_option("--random", random_stacks, "check N random causal stacks instead of model attention");

  auto* co = cli.add_subcommand("correlate", "correlation of subset accuracy with probe scores");
  co->add_option("--resamples", o.resamples, "number of resampled subsets");
  auto* ro = cli.add_subcommand("robustness", "accuracy change after corrupting a useless statement (chain task)");
  ro->add_option("--resamples", o.resamples, "number of resampled subsets");
  auto* hm = cli.add_subcommand("heatmap", "mean (rank-permuted) pooled attention as CSV");
  hm->add_option("--head-subset", o.head_subset, "all or top_position_entropy");
  auto* rt = cli.add_subcommand("repro-tables", "recompute normalized probing scores from published raw F1");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (rt->parsed()) return cmd_repro_tables();
    const auto cfg = resolve(g, o);
    if (gen->parsed()) return cmd_gen(cfg, g);
    if (train->parsed()) return cmd_train(cfg, g);
    if (tr->parsed()) return cmd_trace(cfg, g);
    if (pr->parsed()) return cmd_probe(cfg, g, layerwise);
    if (ent->parsed()) return cmd_entropy(cfg, g);
    if (ph->parsed()) return cmd_prune_heads(cfg, g);
    if (pl->parsed()) return cmd_prune_layers(cfg, g);
    if (fl->parsed()) return cmd_flow(cfg, g, random_stacks);
    if (co->parsed()) return cmd_correlate(cfg, g);
    if (ro->parsed()) return cmd_robustness(cfg, g);
    if (hm->parsed()) return cmd_heatmap(cfg, g);
  } catch (const Error& e) {
    std::fprintf(stderr, "mprobe: %s: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "mprobe: io error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mprobe: error: %s\n", e.what());
    return 2;
  }
  return 1;
}
