#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mprobe/error.hpp"

namespace mprobe::app {

using nlohmann::json;
using nlohmann::ordered_json;

RunConfig default_config() {
  RunConfig c;
  c.task.task = taskgen::TaskKind::KthSmallest;
  c.task.m = 8;
  c.task.k = 2;
  c.task.vocab_size = 64;
  c.task.n_examples = 60000;
  c.task.seed = 1;

  c.model.n_layers = 4;
  c.model.n_heads = 4;
  c.model.d_model = 64;
  c.model.seed = 3;

  c.train.epochs = 3;
  c.train.batch_size = 128;
  c.train.learning_rate = 1e-3;
  c.train.weight_decay = 0.01;
  c.train.schedule = toylm::LrSchedule::Cosine;
  c.train.warmup_steps = 100;
  c.train.grad_clip = 1.0;
  c.train.seed = 11;
  finalize(c);
  return c;
}

namespace {

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) fail(ErrorKind::Config, "config: '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail(ErrorKind::Config, "config: unknown key '" + name_ + "." + key + "'");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      dst = it->template get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::Config, "config: '" + name_ + "." + key + "' has the wrong type");
    }
  }

  template <typename T>
  void get_optional(const char* key, std::optional<T>& dst) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      dst.reset();
      return;
    }
    T v{};
    get(key, v);
    dst = v;
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const std::string& name() const { return name_; }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

template <typename E>
E parse_enum(const std::string& field, const std::string& v, std::initializer_list<std::pair<const char*, E>> opts) {
  std::string allowed;
  for (const auto& [name, val] : opts) {
    if (v == name) return val;
    allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  }
  fail(ErrorKind::Config, "config: '" + field + "' must be one of " + allowed + " (got '" + v + "')");
}

}  // namespace

RunConfig parse_config(const std::string& text, RunConfig c) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Config, std::string("config: invalid JSON: ") + e.what());
  }
  {
    Section top(root, "config");
    if (const json* t = top.sub("task")) {
      Section s(*t, "task");
      std::string kind = taskgen::to_string(c.task.task);
      s.get("task", kind);
      c.task.task = parse_enum<taskgen::TaskKind>("task.task", kind,
                                                  {{"kth", taskgen::TaskKind::KthSmallest},
                                                   {"chain", taskgen::TaskKind::ChainProof}});
      s.get("m", c.task.m);
      s.get("k", c.task.k);
      s.get("vocab_size", c.task.vocab_size);
      s.get("n_statements", c.task.n_statements);
      s.get_optional("chain_depth", c.task.chain_depth);
      s.get("n_examples", c.task.n_examples);
      s.get("seed", c.task.seed);
    }
    if (const json* t = top.sub("split")) {
      Section s(*t, "split");
      s.get("train", c.split.train);
      s.get("dev", c.split.dev);
      s.get("test", c.split.test);
      s.get("seed", c.split_seed);
    }
    if (const json* t = top.sub("model")) {
      Section s(*t, "model");
      s.get("n_layers", c.model.n_layers);
      s.get("n_heads", c.model.n_heads);
      s.get("d_model", c.model.d_model);
      s.get("seed", c.model.seed);
    }
    if (const json* t = top.sub("train")) {
      Section s(*t, "train");
      s.get("epochs", c.train.epochs);
      s.get("batch_size", c.train.batch_size);
      s.get("learning_rate", c.train.learning_rate);
      s.get("weight_decay", c.train.weight_decay);
      s.get("beta1", c.train.beta1);
      s.get("beta2", c.train.beta2);
      s.get("eps", c.train.eps);
      std::string sched = c.train.schedule == toylm::LrSchedule::Cosine ? "cosine" : "constant";
      s.get("schedule", sched);
      c.train.schedule = parse_enum<toylm::LrSchedule>(
          "train.schedule", sched, {{"cosine", toylm::LrSchedule::Cosine}, {"constant", toylm::LrSchedule::Constant}});
      s.get("warmup_steps", c.train.warmup_steps);
      s.get("grad_clip", c.train.grad_clip);
      s.get("shards", c.train.shards);
      s.get("seed", c.train.seed);
    }
    if (const json* t = top.sub("probe")) {
      Section s(*t, "probe");
      s.get("k_neighbors", c.probe.k_neighbors);
      s.get_optional("prefix", c.probe.prefix);
      std::string feat = c.probe.features == probe::FeatureMode::Pooled ? "pooled" : "per_head";
      s.get("features", feat);
      c.probe.features = parse_enum<probe::FeatureMode>(
          "probe.features", feat, {{"pooled", probe::FeatureMode::Pooled}, {"per_head", probe::FeatureMode::PerHead}});
      std::string policy = c.probe.head_subset == HeadSubsetPolicy::All ? "all" : "top_position_entropy";
      s.get("head_subset", policy);
      c.probe.head_subset = parse_enum<HeadSubsetPolicy>(
          "probe.head_subset", policy,
          {{"all", HeadSubsetPolicy::All}, {"top_position_entropy", HeadSubsetPolicy::TopPositionEntropy}});
      s.get("head_subset_fraction", c.probe.head_subset_fraction);
      s.get("max_train_examples", c.probe.max_train_examples);
      s.get("max_test_examples", c.probe.max_test_examples);
      s.get("rand_seed", c.probe.rand_seed);
    }
    if (const json* t = top.sub("analysis")) {
      Section s(*t, "analysis");
      s.get("prune_rates", c.analysis.prune_rates);
      s.get("random_orders", c.analysis.random_orders);
      s.get("random_order_seed", c.analysis.random_order_seed);
      s.get("layer_budget", c.analysis.layer_budget);
      s.get("bins", c.analysis.bins);
      s.get("resamples", c.analysis.resamples);
      s.get("subset_lo", c.analysis.subset_lo);
      s.get("subset_hi", c.analysis.subset_hi);
      s.get("seed", c.analysis.seed);
      s.get("flow_examples", c.analysis.flow_examples);
      s.get("flow_tolerance", c.analysis.flow_tolerance);
    }
    if (const json* t = top.sub("paths")) {
      Section s(*t, "paths");
      std::string out = c.out_dir.string();
      s.get("out_dir", out);
      c.out_dir = out;
    }
  }
  finalize(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::Config, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const RunConfig& c, int indent) {
  ordered_json j;
  j["task"] = {{"task", taskgen::to_string(c.task.task)},
               {"m", c.task.m},
               {"k", c.task.k},
               {"vocab_size", c.task.vocab_size},
               {"n_statements", c.task.n_statements},
               {"chain_depth", c.task.chain_depth ? ordered_json(*c.task.chain_depth) : ordered_json(nullptr)},
               {"n_examples", c.task.n_examples},
               {"seed", c.task.seed}};
  j["split"] = {{"train", c.split.train}, {"dev", c.split.dev}, {"test", c.split.test}, {"seed", c.split_seed}};
  j["model"] = {{"n_layers", c.model.n_layers}, {"n_heads", c.model.n_heads}, {"d_model", c.model.d_model},
                {"seed", c.model.seed}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"schedule", c.train.schedule == toylm::LrSchedule::Cosine ? "cosine" : "constant"},
                {"warmup_steps", c.train.warmup_steps},
                {"grad_clip", c.train.grad_clip},
                {"shards", c.train.shards},
                {"seed", c.train.seed}};
  j["probe"] = {{"k_neighbors", c.probe.k_neighbors},
                {"prefix", c.probe.prefix ? ordered_json(*c.probe.prefix) : ordered_json(nullptr)},
                {"features", c.probe.features == probe::FeatureMode::Pooled ? "pooled" : "per_head"},
                {"head_subset", c.probe.head_subset == HeadSubsetPolicy::All ? "all" : "top_position_entropy"},
                {"head_subset_fraction", c.probe.head_subset_fraction},
                {"max_train_examples", c.probe.max_train_examples},
                {"max_test_examples", c.probe.max_test_examples},
                {"rand_seed", c.probe.rand_seed}};
  j["analysis"] = {{"prune_rates", c.analysis.prune_rates},
                   {"random_orders", c.analysis.random_orders},
                   {"random_order_seed", c.analysis.random_order_seed},
                   {"layer_budget", c.analysis.layer_budget},
                   {"bins", c.analysis.bins},
                   {"resamples", c.analysis.resamples},
                   {"subset_lo", c.analysis.subset_lo},
                   {"subset_hi", c.analysis.subset_hi},
                   {"seed", c.analysis.seed},
                   {"flow_examples", c.analysis.flow_examples},
                   {"flow_tolerance", c.analysis.flow_tolerance}};
  j["paths"] = {{"out_dir", c.out_dir.string()}};
  return j.dump(indent);
}

std::uint32_t sequence_length(const taskgen::TaskConfig& t) {
  return t.task == taskgen::TaskKind::KthSmallest ? t.m + 1 : 4 * t.n_statements + 4;
}

void finalize(RunConfig& c) {
  c.task.validate();
  c.model.vocab_size = taskgen::model_vocab_size(c.task.vocab_size);
  c.model.max_seq_len = sequence_length(c.task);
  c.model.validate();
  c.train.validate();
  if (c.probe.k_neighbors == 0) fail(ErrorKind::Config, "config: probe.k_neighbors must be positive");
  if (c.probe.prefix && (*c.probe.prefix == 0 || *c.probe.prefix > c.model.n_layers))
    fail(ErrorKind::Config, "config: probe.prefix must lie in [1, model.n_layers]");
  if (!(c.probe.head_subset_fraction > 0.0 && c.probe.head_subset_fraction <= 1.0))
    fail(ErrorKind::Config, "config: probe.head_subset_fraction must lie in (0, 1]");
  if (c.probe.max_train_examples == 0 || c.probe.max_test_examples == 0)
    fail(ErrorKind::Config, "config: probe example caps must be positive");
  for (double r : c.analysis.prune_rates)
    if (!(r >= 0.0 && r < 1.0)) fail(ErrorKind::Config, "config: analysis.prune_rates must lie in [0, 1)");
  if (!(c.analysis.layer_budget >= 0.0 && c.analysis.layer_budget < 1.0))
    fail(ErrorKind::Config, "config: analysis.layer_budget must lie in [0, 1)");
  if (c.analysis.bins == 0) fail(ErrorKind::Config, "config: analysis.bins must be positive");
  if (c.analysis.subset_lo == 0 || c.analysis.subset_lo > c.analysis.subset_hi)
    fail(ErrorKind::Config, "config: need 1 <= analysis.subset_lo <= analysis.subset_hi");
}

probe::ProbeConfig probe_config(const RunConfig& c) {
  probe::ProbeConfig p;
  p.k_neighbors = c.probe.k_neighbors;
  p.prefix = c.probe.prefix;
  p.features = c.probe.features;
  p.rand_seed = c.probe.rand_seed;
  return p;
}

}  // namespace mprobe::app
