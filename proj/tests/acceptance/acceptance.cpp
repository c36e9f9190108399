// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
//
//   acceptance [--only N[,N...]] [--known-failure N[,N...]] [--threads N]
//
// Exit status is 0 iff every criterion that ran either passed or is listed
// with --known-failure. Known failures still print FAIL.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "app/pipeline.hpp"
#include "app/run_config.hpp"
#include "gradcheck.hpp"
#include "mprobe/analysis.hpp"
#include "mprobe/error.hpp"
#include "mprobe/flow.hpp"
#include "mprobe/heads.hpp"
#include "mprobe/probe.hpp"
#include "mprobe/reference.hpp"
#include "mprobe/taskgen.hpp"
#include "mprobe/toylm.hpp"
#include "mprobe/trace.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mprobe;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

fs::path scratch_dir() {
  auto d = fs::temp_directory_path() / fs::path("mprobe_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

// ---------------------------------------------------------------------------
// 1. Score normalization against the published table

Outcome criterion_1() {
  const auto t0 = Clock::now();
  const auto cells = reference::reproduce(0.15);
  const double secs = seconds_since(t0);
  int checked = 0, ok = 0;
  bool k7_mismatch = false;
  std::string bad;
  for (const auto& c : cells) {
    if (c.checked) {
      ++checked;
      if (c.within_tolerance)
        ++ok;
      else
        bad += fmt(" k=%u %s", c.k, c.column.c_str());
    }
    if (c.k == 7 && c.column == "S_P2 GPT-2_FT")
      k7_mismatch = c.known_inconsistency && !c.within_tolerance && c.computed &&
                    std::abs(*c.computed - 94.92) < 0.005 && c.printed && *c.printed == 91.56;
  }
  const bool pass = checked == 14 && ok == checked && k7_mismatch && secs < 1.0;
  return {pass, fmt("%d/%d finetuned cells within 0.15; k=7 S_P2 mismatch %s; %.3f s%s", ok, checked,
                    k7_mismatch ? "reported" : "NOT reported", secs, bad.c_str())};
}

// ---------------------------------------------------------------------------
// 2-4 share one trained model.

struct Desk {
  app::RunConfig cfg;
  taskgen::Splits splits;
  toylm::Model model{toylm::ModelConfig{}};
  double test_accuracy = 0.0;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
  app::ProbeData data;
  probe::ProbeReport report;
};

Desk& desk(unsigned threads) {
  static std::unique_ptr<Desk> d;
  if (d) return *d;
  d = std::make_unique<Desk>();
  const auto t0 = Clock::now();
  d->cfg = app::default_config();
  app::finalize(d->cfg);
  d->splits = app::make_splits(d->cfg);
  d->model = app::train_model(d->cfg, d->splits, nullptr, false, threads);
  d->train_seconds = seconds_since(t0);
  d->test_accuracy = toylm::evaluate_accuracy(d->model, d->splits.test, {}, threads);
  const auto rnd = app::random_model(d->cfg);
  d->data = app::collect_probe_data(d->cfg, d->model, rnd, d->splits, threads);
  const auto pcfg = app::resolved_probe_config(d->cfg, d->data);
  d->report = probe::run_probe(probe::ProbeInputs{d->data.train, d->data.test, d->data.model, d->data.rand}, pcfg,
                               true, threads);
  d->total_seconds = seconds_since(t0);
  return *d;
}

Outcome criterion_2(unsigned threads) {
  const auto& d = desk(threads);
  const auto& f = d.report.full;
  // Chance F1-macro of a uniform guess over C classes is 1/C; both probes
  // are binary here (useful or not; leaf or root for k = 2).
  const double chance = 0.5;
  const bool acc_ok = d.test_accuracy >= 0.90;
  const bool p1_ok = f.s_p1 && *f.s_p1 >= 0.6;
  const bool p2_ok = f.s_p2 && *f.s_p2 >= 0.6;
  const bool rand_ok =
      std::abs(f.rand_f1_usefulness - chance) <= 0.1 && std::abs(f.rand_f1_height - chance) <= 0.1;
  const bool time_ok = d.total_seconds <= 900.0;
  return {acc_ok && p1_ok && p2_ok && rand_ok && time_ok,
          fmt("train %zu ex, test acc %.4f; S_P1 %.4f, S_P2 %.4f; random-init raw F1 %.4f / %.4f (chance %.2f); "
              "%.0f s (train %.0f s) on %u thread(s)",
              d.splits.train.size(), d.test_accuracy, f.s_p1.value_or(NAN), f.s_p2.value_or(NAN),
              f.rand_f1_usefulness, f.rand_f1_height, chance, d.total_seconds, d.train_seconds, threads)};
}

Outcome criterion_3(unsigned threads) {
  const auto& d = desk(threads);
  const auto& pl = d.report.per_layer;
  if (pl.empty()) return {false, "no layer-wise scores"};
  double max1 = -INFINITY, max2 = -INFINITY;
  for (const auto& l : pl) {
    if (!l.scores.s_p1 || !l.scores.s_p2) return {false, fmt("undefined score at prefix %u", l.layers)};
    max1 = std::max(max1, *l.scores.s_p1);
    max2 = std::max(max2, *l.scores.s_p2);
  }
  std::uint32_t l1 = 0, l2 = 0;
  for (const auto& l : pl)
    if (!l1 && *l.scores.s_p1 >= 0.9 * max1) l1 = l.layers;
  for (const auto& l : pl)
    if (!l2 && *l.scores.s_p2 >= 0.9 * max2) l2 = l.layers;
  const double first2 = *pl.front().scores.s_p2, last2 = *pl.back().scores.s_p2;
  std::string series = " S_P1(l):";
  for (const auto& l : pl) series += fmt(" %.3f", *l.scores.s_p1);
  series += "; S_P2(l):";
  for (const auto& l : pl) series += fmt(" %.3f", *l.scores.s_p2);
  return {l1 <= l2 && last2 >= first2,
          fmt("first l reaching 90%% of max: S_P1 %u, S_P2 %u; S_P2(L) %.3f vs S_P2(1) %.3f;", l1, l2, last2, first2) +
              series};
}

Outcome criterion_4(unsigned threads) {
  const auto& d = desk(threads);
  // Entropies come from the unpooled last-token traces of the probe's test
  // examples; accuracy is measured on the full test split.
  const auto profiles = heads::head_profiles(d.data.model.test, d.data.test);
  const auto curves = app::head_pruning(d.cfg, d.model, d.splits.test, profiles, threads);
  double pos_lo = INFINITY, pos_hi = -INFINITY;
  for (const auto& p : profiles) pos_lo = std::min(pos_lo, p.position_entropy), pos_hi = std::max(pos_hi, p.position_entropy);
  const bool pass = curves.mean_size < curves.mean_random && curves.mean_random < curves.mean_position;
  return {pass, fmt("mean acc over rates 0.1-0.5: size %.4f, random %.4f (%u orders), position %.4f; "
                    "position entropies span [%.3f, %.3f] (ln 8 = %.3f)",
                    curves.mean_size, curves.mean_random, d.cfg.analysis.random_orders, curves.mean_position, pos_lo,
                    pos_hi, std::log(8.0))};
}

// ---------------------------------------------------------------------------
// 5. First-token domination bound

Outcome criterion_5() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = INFINITY;
  int stacks = 0;
  for (; stacks < 1000; ++stacks) {
    const auto T = 1 + static_cast<std::uint32_t>(rng.below(10));
    const auto L = 1 + static_cast<std::uint32_t>(rng.below(8));
    auto st = flow::rollout(flow::random_causal_stack(rng, T, L));
    worst = std::min(worst, flow::check_domination_bound(st).margin);
  }
  flow::Matrix a(2, 2);
  a << 1.0, 0.0, 0.5, 0.5;
  auto tight = flow::rollout(std::vector<flow::Matrix>(8, a));
  const double tight_margin = flow::check_domination_bound(tight).margin;
  const double secs = seconds_since(t0);
  return {worst >= -1e-9 && tight_margin == 0.0 && secs < 10.0,
          fmt("%d random stacks, min margin %.3g; tight 2-token margin %.3g; %.2f s", stacks, worst, tight_margin, secs)};
}

// ---------------------------------------------------------------------------
// 6. Oracle suites

Outcome criterion_6() {
  Rng rng(606);
  double f1_err = 0, ent_err = 0, r_err = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(60);
    const int C = 2 + static_cast<int>(rng.below(4));
    std::vector<int> g(n), p(n);
    for (std::size_t j = 0; j < n; ++j) g[j] = int(rng.below(C)), p[j] = int(rng.below(C + 1));
    f1_err = std::max(f1_err, std::abs(probe::f1_macro(g, p) - oracle::f1_macro(g, p)));

    std::vector<double> q(1 + rng.below(30));
    for (auto& v : q) v = rng.coin() ? rng.uniform() : 0.0;
    q[0] += 1e-3;
    ent_err = std::max(ent_err, std::abs(heads::entropy(q) - oracle::entropy(q)));

    std::vector<double> x(2 + rng.below(60)), y(x.size());
    const double slope = rng.normal();
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = rng.normal(), y[j] = slope * x[j] + rng.normal();
    r_err = std::max(r_err, std::abs(analysis::pearson(x, y) - oracle::pearson(x, y)));
  }

  std::vector<std::vector<double>> tx, qx;
  std::vector<int> ty, qy;
  for (int c = 0; c < 5; ++c) {
    for (int i = 0; i < 40; ++i) tx.push_back({8.0 * c + rng.uniform(), -8.0 * c + rng.uniform()}), ty.push_back(c);
    for (int i = 0; i < 100; ++i) qx.push_back({8.0 * c + rng.uniform(), -8.0 * c + rng.uniform()}), qy.push_back(c);
  }
  const bool knn_exact = probe::knn_predict(probe::knn_fit(tx, ty, 1), qx) == qy;

  const auto gc = oracle::toy_gradient_check(1e-4);
  const bool pass = f1_err <= 1e-12 && ent_err <= 1e-12 && r_err <= 1e-12 && knn_exact && gc.worst_rel <= 1e-3 &&
                    gc.worst_abs < 1e-7;
  return {pass, fmt("max |err| f1 %.2g, entropy %.2g, pearson %.2g over 1000 instances each; kNN k=1 %s; "
                    "gradient check max rel err %.2g over %zu/%zu entries",
                    f1_err, ent_err, r_err, knn_exact ? "exact" : "WRONG", gc.worst_rel, gc.compared, gc.total)};
}

// ---------------------------------------------------------------------------
// 7. Generator soundness

Outcome criterion_7() {
  taskgen::TaskConfig kc;
  kc.m = 8;
  kc.k = 3;
  kc.vocab_size = 64;
  kc.n_examples = 10000;
  kc.seed = 71;
  std::size_t kth_bad = 0;
  for (const auto& ex : taskgen::generate(kc, 0)) {
    std::vector<std::uint32_t> nums;
    for (const auto& sp : ex.statement_spans) nums.push_back(ex.tokens[sp.start]);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> got;
    for (std::size_t i = 0; i < ex.tree.nodes.size(); ++i) got.emplace_back(ex.tree.nodes[i], ex.tree.heights[i]);
    std::sort(got.begin(), got.end());
    auto sorted = nums;
    std::sort(sorted.begin(), sorted.end());
    if (got != oracle::kth_tree(nums, kc.k) || ex.answer != sorted[kc.k - 1]) ++kth_bad;
  }

  taskgen::TaskConfig cc;
  cc.task = taskgen::TaskKind::ChainProof;
  cc.vocab_size = 32;
  cc.n_statements = 6;
  cc.n_examples = 10000;
  cc.seed = 72;
  std::size_t chain_bad = 0, corrupt_bad = 0, corrupted = 0;
  for (const auto& ex : taskgen::generate(cc, 0)) {
    const auto st = taskgen::decode_statements(ex);
    const auto q = taskgen::decode_question(ex);
    const auto truth = oracle::chain_truth(st, q.entity, q.attribute);
    bool ok = truth && *truth == (ex.label == taskgen::Label::True);
    for (auto node : ex.tree.nodes) {
      auto reduced = st;
      reduced.erase(reduced.begin() + node);
      ok = ok && !oracle::chain_truth(reduced, q.entity, q.attribute).has_value();
    }
    chain_bad += !ok;
    if (ex.tree.nodes.size() < st.size()) {
      ++corrupted;
      const auto c = taskgen::corrupt_useless(ex, ex.id);
      const auto cq = taskgen::decode_question(c);
      const bool same = c.label == ex.label && c.tree == ex.tree && c.answer == ex.answer &&
                        oracle::chain_truth(taskgen::decode_statements(c), cq.entity, cq.attribute) == truth;
      corrupt_bad += !same;
    }
  }
  return {kth_bad == 0 && chain_bad == 0 && corrupt_bad == 0,
          fmt("violations: kth %zu/10000, chain %zu/10000, corrupt_useless %zu/%zu", kth_bad, chain_bad, corrupt_bad,
              corrupted)};
}

// ---------------------------------------------------------------------------
// 8. Format round-trips

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MPROBE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome criterion_8() {
  const auto dir = scratch_dir();
  std::string detail;
  bool pass = true;

  auto app_cfg = app::default_config();
  app_cfg.task.n_examples = 300;
  app::finalize(app_cfg);
  bool jsonl_ok = true;
  for (auto kind : {taskgen::TaskKind::KthSmallest, taskgen::TaskKind::ChainProof}) {
    auto tc = app_cfg.task;
    tc.task = kind;
    if (kind == taskgen::TaskKind::ChainProof) tc.vocab_size = 32;
    const auto ds = taskgen::generate(tc, 3);
    taskgen::write_jsonl(ds, dir / "a.jsonl");
    const auto back = taskgen::read_jsonl(dir / "a.jsonl");
    taskgen::write_jsonl(back, dir / "b.jsonl");
    jsonl_ok = jsonl_ok && back == ds && slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl");
  }
  pass = pass && jsonl_ok;
  detail += jsonl_ok ? "JSONL ok" : "JSONL MISMATCH";

  const auto model = toylm::Model::init_random(app_cfg.model);
  toylm::save_checkpoint(model, dir / "a.ckpt");
  const auto loaded = toylm::load_checkpoint(dir / "a.ckpt");
  toylm::save_checkpoint(loaded, dir / "b.ckpt");
  const bool ckpt_ok = slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt");
  pass = pass && ckpt_ok;
  detail += ckpt_ok ? ", checkpoint ok" : ", checkpoint MISMATCH";

  const auto ds = taskgen::generate(app_cfg.task, 0);
  bool trace_ok = true;
  for (bool pooled : {false, true}) {
    trace::TraceFile tf;
    tf.layers = static_cast<std::uint16_t>(app_cfg.model.n_layers);
    tf.heads = pooled ? 1 : static_cast<std::uint16_t>(app_cfg.model.n_heads);
    tf.kind = pooled ? trace::TraceKind::HeadPooled : trace::TraceKind::LastToken;
    for (const auto& s : analysis::collect_traces(model, ds)) tf.records.push_back(pooled ? trace::pool_heads(s) : s);
    trace::write_traces(tf, dir / "a.trace");
    trace::write_traces(trace::read_traces(dir / "a.trace"), dir / "b.trace");
    trace_ok = trace_ok && slurp(dir / "a.trace") == slurp(dir / "b.trace");
  }
  pass = pass && trace_ok;
  detail += trace_ok ? ", traces ok" : ", traces MISMATCH";

  // A generated run directory whose test trace has a corrupted header.
  const auto run = dir / "run";
  const int gen_code = run_cli("--out-dir " + run.string() + " gen --n 300");
  trace::TraceFile tf;
  tf.layers = static_cast<std::uint16_t>(app_cfg.model.n_layers);
  tf.heads = static_cast<std::uint16_t>(app_cfg.model.n_heads);
  fs::create_directories(run / "traces");
  const auto good = slurp(dir / "a.trace");  // last written: pooled
  std::vector<std::pair<const char*, std::string>> corruptions;
  auto bytes = good;
  bytes[0] = 'X';
  corruptions.push_back({"magic", bytes});
  bytes = good;
  bytes[8] = 9;
  corruptions.push_back({"version", bytes});
  bytes = good;
  bytes[12] = 0;  // kind flag says unpooled but payload is pooled
  bytes[15] = 4;
  corruptions.push_back({"kind/length", bytes});
  bytes = good;
  bytes[17] = static_cast<char>(0xff);  // record count
  corruptions.push_back({"count", bytes});
  std::string codes;
  for (const auto& [what, b] : corruptions) {
    {
      std::ofstream f(run / "traces" / "model_test.trace", std::ios::binary);
      f << b;
    }
    const int code = run_cli("--out-dir " + run.string() + " entropy");
    codes += fmt(" %s=%d", what, code);
    pass = pass && code == 2;
  }
  pass = pass && gen_code == 0;
  detail += ", corrupted trace headers exit codes:" + codes;
  fs::remove_all(dir);
  return {pass, detail};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, known;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc)
      only = parse_list(argv[++i]);
    else if (a == "--known-failure" && i + 1 < argc)
      known = parse_list(argv[++i]);
    else if (a == "--threads" && i + 1 < argc)
      threads = static_cast<unsigned>(std::stoul(argv[++i]));
    else {
      std::fprintf(stderr, "usage: acceptance [--only N,...] [--known-failure N,...] [--threads N]\n");
      return 1;
    }
  }

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion_1},
      {2, [&] { return criterion_2(threads); }},
      {3, [&] { return criterion_3(threads); }},
      {4, [&] { return criterion_4(threads); }},
      {5, criterion_5},
      {6, criterion_6},
      {7, criterion_7},
      {8, criterion_8},
  };

  int unexpected = 0;
  for (const auto& [n, run] : criteria) {
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const bool expected_fail = known.count(n) != 0;
    std::printf("criterion %d: %s  %s%s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                !o.pass && expected_fail ? "  [known failure]" : "");
    std::fflush(stdout);
    if (!o.pass && !expected_fail) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
