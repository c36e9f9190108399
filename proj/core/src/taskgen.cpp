#include "mprobe/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"

namespace mprobe::taskgen {

namespace {

constexpr int kMaxExampleAttempts = 200;
constexpr int kMaxDistractorAttempts = 500;

std::uint32_t n_attributes(std::uint32_t domain) { return domain - chain_entity_count(domain); }

}  // namespace

std::uint32_t ReasoningTree::depth() const {
  std::uint32_t d = 0;
  for (auto h : heights) d = std::max(d, h);
  return d;
}

bool ReasoningTree::contains(std::uint32_t statement) const {
  return std::find(nodes.begin(), nodes.end(), statement) != nodes.end();
}

std::optional<std::uint32_t> ReasoningTree::height_of(std::uint32_t statement) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i] == statement) return heights[i];
  return std::nullopt;
}

std::string to_string(TaskKind kind) {
  return kind == TaskKind::KthSmallest ? "kth" : "chain";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "kth") return TaskKind::KthSmallest;
  if (s == "chain") return TaskKind::ChainProof;
  fail(ErrorKind::Config, "unknown task '" + s + "' (expected kth|chain)");
}

void TaskConfig::validate() const {
  if (task == TaskKind::KthSmallest) {
    if (k < 1 || k > m || m > vocab_size)
      fail(ErrorKind::Config, "task: need 1 <= k <= m <= vocab_size (k=" + std::to_string(k) +
                                  ", m=" + std::to_string(m) +
                                  ", vocab_size=" + std::to_string(vocab_size) + ")");
  } else {
    if (n_statements < 2) fail(ErrorKind::Config, "task: n_statements must be >= 2");
    if (vocab_size < 8) fail(ErrorKind::Config, "task: chain task needs vocab_size >= 8");
    if (chain_depth && *chain_depth > 1)
      fail(ErrorKind::Config, "task: chain_depth must be 0 or 1");
  }
}

// ---------------------------------------------------------------------------
// KthSmallest

ReasoningTree annotate_tree_kth(std::span<const std::uint32_t> numbers, std::uint32_t k) {
  if (k < 1 || k > numbers.size())
    fail(ErrorKind::Input, "annotate_tree_kth: k out of range");
  std::vector<std::uint32_t> order(numbers.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(),
            [&](std::uint32_t a, std::uint32_t b) { return numbers[a] < numbers[b]; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (numbers[order[i]] == numbers[order[i - 1]])
      fail(ErrorKind::Data, "annotate_tree_kth: duplicate number " +
                                std::to_string(numbers[order[i]]));

  ReasoningTree tree;
  tree.nodes.assign(order.begin(), order.begin() + k);
  tree.heights.assign(k, 0);
  if (k > 1) tree.heights[k - 1] = 1;
  return tree;
}

Example make_kth_example(std::uint64_t id, std::span<const std::uint32_t> numbers,
                         std::uint32_t k, std::uint32_t domain) {
  Example ex;
  ex.id = id;
  ex.task = TaskKind::KthSmallest;
  ex.tokens.assign(numbers.begin(), numbers.end());
  ex.tokens.push_back(special_token(domain, Special::Qry));
  for (std::uint32_t i = 0; i < numbers.size(); ++i) ex.statement_spans.push_back({i, i + 1});
  ex.tree = annotate_tree_kth(numbers, k);
  ex.answer = numbers[ex.tree.nodes.back()];
  ex.k = k;
  return ex;
}

Dataset gen_kth_smallest(const TaskConfig& cfg, std::uint64_t split_seed) {
  TaskConfig c = cfg;
  c.task = TaskKind::KthSmallest;
  c.validate();
  Rng rng(derive_seed(cfg.seed, split_seed));
  Dataset ds;
  ds.reserve(cfg.n_examples);
  std::vector<std::uint32_t> numbers;
  std::vector<char> used(cfg.vocab_size, 0);
  for (std::uint64_t i = 0; i < cfg.n_examples; ++i) {
    numbers.clear();
    while (numbers.size() < cfg.m) {
      const auto v = static_cast<std::uint32_t>(rng.below(cfg.vocab_size));
      if (used[v]) continue;
      used[v] = 1;
      numbers.push_back(v);
    }
    for (auto v : numbers) used[v] = 0;
    ds.push_back(make_kth_example(i, numbers, cfg.k, cfg.vocab_size));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// ChainProof

std::uint32_t chain_entity_count(std::uint32_t domain) { return std::max(2u, domain / 4); }

std::optional<bool> forward_chain(std::span<const Statement> statements, const Question& q) {
  // (entity, attribute) -> bit 1 positive, bit 2 negative
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> known;
  for (const auto& s : statements)
    if (s.kind == StatementKind::Fact) known[{s.lhs, s.rhs}] |= s.positive ? 1 : 2;

  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& r : statements) {
      if (r.kind != StatementKind::Rule) continue;
      std::vector<std::uint32_t> holders;
      for (const auto& [key, bits] : known)
        if (key.second == r.lhs && (bits & 1)) holders.push_back(key.first);
      for (auto e : holders) {
        int& bits = known[{e, r.rhs}];
        const int add = r.positive ? 1 : 2;
        if (!(bits & add)) {
          bits |= add;
          changed = true;
        }
      }
    }
  }
  for (const auto& [key, bits] : known)
    if (bits == 3) return std::nullopt;
  auto it = known.find({q.entity, q.attribute});
  if (it == known.end()) return std::nullopt;
  return it->second == 1;
}

std::vector<Statement> decode_statements(const Example& ex) {
  if (ex.task != TaskKind::ChainProof) fail(ErrorKind::Input, "decode_statements: not a chain example");
  // The final token is QRY, which pins down the domain size.
  const std::uint32_t domain = ex.tokens.back() - static_cast<std::uint32_t>(Special::Qry);
  std::vector<Statement> out;
  for (const auto& span : ex.statement_spans) {
    if (span.size() != 4) fail(ErrorKind::Data, "chain statement span must have 4 tokens");
    const std::uint32_t rel = ex.tokens[span.start + 1];
    const std::uint32_t pol = ex.tokens[span.start + 3];
    Statement s;
    s.lhs = ex.tokens[span.start];
    s.rhs = ex.tokens[span.start + 2];
    if (rel == special_token(domain, Special::Has))
      s.kind = StatementKind::Fact;
    else if (rel == special_token(domain, Special::Implies))
      s.kind = StatementKind::Rule;
    else
      fail(ErrorKind::Data, "chain statement has unknown relation token");
    if (pol == special_token(domain, Special::Pos))
      s.positive = true;
    else if (pol == special_token(domain, Special::Neg))
      s.positive = false;
    else
      fail(ErrorKind::Data, "chain statement has unknown polarity token");
    out.push_back(s);
  }
  return out;
}

Question decode_question(const Example& ex) {
  if (!ex.question_span || ex.question_span->size() != 3)
    fail(ErrorKind::Data, "chain question span must have 3 tokens");
  return {ex.tokens[ex.question_span->start], ex.tokens[ex.question_span->start + 2]};
}

Example make_chain_example(std::uint64_t id, std::span<const Statement> statements,
                           const Question& q, bool answer, ReasoningTree tree,
                           std::uint32_t domain) {
  Example ex;
  ex.id = id;
  ex.task = TaskKind::ChainProof;
  for (const auto& s : statements) {
    const auto start = static_cast<std::uint32_t>(ex.tokens.size());
    ex.tokens.push_back(s.lhs);
    ex.tokens.push_back(special_token(
        domain, s.kind == StatementKind::Fact ? Special::Has : Special::Implies));
    ex.tokens.push_back(s.rhs);
    ex.tokens.push_back(special_token(domain, s.positive ? Special::Pos : Special::Neg));
    ex.statement_spans.push_back({start, start + 4});
  }
  const auto qstart = static_cast<std::uint32_t>(ex.tokens.size());
  ex.tokens.push_back(q.entity);
  ex.tokens.push_back(special_token(domain, Special::Ask));
  ex.tokens.push_back(q.attribute);
  ex.question_span = Span{qstart, qstart + 3};
  ex.tokens.push_back(special_token(domain, Special::Qry));
  ex.answer = special_token(domain, answer ? Special::True : Special::False);
  ex.label = answer ? Label::True : Label::False;
  ex.tree = std::move(tree);
  return ex;
}

namespace {

bool same_triple(const Statement& a, const Statement& b) {
  return a.kind == b.kind && a.lhs == b.lhs && a.rhs == b.rhs;
}

// The statement set answers q with `answer`, and removing any gold
// statement leaves q undecided (so no alternative proof exists).
bool proof_is_unique(std::vector<Statement>& stmts, std::size_t n_gold, const Question& q,
                     bool answer) {
  auto res = forward_chain(stmts, q);
  if (!res || *res != answer) return false;
  for (std::size_t g = 0; g < n_gold; ++g) {
    Statement removed = stmts[g];
    stmts.erase(stmts.begin() + static_cast<std::ptrdiff_t>(g));
    const bool alt = forward_chain(stmts, q).has_value();
    stmts.insert(stmts.begin() + static_cast<std::ptrdiff_t>(g), removed);
    if (alt) return false;
  }
  return true;
}

bool robust_to_flips(std::vector<Statement>& stmts, std::size_t n_gold, const Question& q,
                     bool answer) {
  for (std::size_t d = n_gold; d < stmts.size(); ++d) {
    stmts[d].positive = !stmts[d].positive;
    const bool ok = proof_is_unique(stmts, n_gold, q, answer);
    stmts[d].positive = !stmts[d].positive;
    if (!ok) return false;
  }
  return true;
}

Statement sample_distractor(Rng& rng, std::uint32_t n_ent, std::uint32_t n_attr) {
  Statement s;
  s.positive = rng.coin();
  if (rng.coin()) {
    s.kind = StatementKind::Fact;
    s.lhs = static_cast<std::uint32_t>(rng.below(n_ent));
    s.rhs = n_ent + static_cast<std::uint32_t>(rng.below(n_attr));
  } else {
    s.kind = StatementKind::Rule;
    s.lhs = n_ent + static_cast<std::uint32_t>(rng.below(n_attr));
    do {
      s.rhs = n_ent + static_cast<std::uint32_t>(rng.below(n_attr));
    } while (s.rhs == s.lhs);
  }
  return s;
}

std::optional<Example> try_chain_example(Rng& rng, const TaskConfig& cfg, std::uint64_t id,
                                         bool answer, std::uint32_t depth) {
  const std::uint32_t domain = cfg.vocab_size;
  const std::uint32_t n_ent = chain_entity_count(domain);
  const std::uint32_t n_attr = n_attributes(domain);

  Question q;
  q.entity = static_cast<std::uint32_t>(rng.below(n_ent));
  q.attribute = n_ent + static_cast<std::uint32_t>(rng.below(n_attr));

  std::vector<Statement> stmts;
  if (depth == 0) {
    stmts.push_back({StatementKind::Fact, q.entity, q.attribute, answer});
  } else {
    std::uint32_t mid;
    do {
      mid = n_ent + static_cast<std::uint32_t>(rng.below(n_attr));
    } while (mid == q.attribute);
    stmts.push_back({StatementKind::Fact, q.entity, mid, true});
    stmts.push_back({StatementKind::Rule, mid, q.attribute, answer});
  }
  const std::size_t n_gold = stmts.size();
  if (cfg.n_statements < n_gold) return std::nullopt;

  while (stmts.size() < cfg.n_statements) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxDistractorAttempts && !placed; ++attempt) {
      Statement d = sample_distractor(rng, n_ent, n_attr);
      if (std::any_of(stmts.begin(), stmts.end(),
                      [&](const Statement& s) { return same_triple(s, d); }))
        continue;
      stmts.push_back(d);
      bool ok = proof_is_unique(stmts, n_gold, q, answer);
      if (ok) {
        stmts.back().positive = !stmts.back().positive;
        ok = proof_is_unique(stmts, n_gold, q, answer);
        stmts.back().positive = !stmts.back().positive;
      }
      if (ok)
        placed = true;
      else
        stmts.pop_back();
    }
    if (!placed) return std::nullopt;
  }
  if (!robust_to_flips(stmts, n_gold, q, answer)) return std::nullopt;

  std::vector<std::uint32_t> order(stmts.size());
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(std::span<std::uint32_t>(order));
  std::vector<Statement> shuffled(stmts.size());
  std::vector<std::uint32_t> position_of(stmts.size());
  for (std::uint32_t pos = 0; pos < order.size(); ++pos) {
    shuffled[pos] = stmts[order[pos]];
    position_of[order[pos]] = pos;
  }

  ReasoningTree tree;
  tree.nodes.push_back(position_of[0]);
  tree.heights.push_back(0);
  if (depth == 1) {
    tree.nodes.push_back(position_of[1]);
    tree.heights.push_back(1);
  }
  return make_chain_example(id, shuffled, q, answer, std::move(tree), domain);
}

}  // namespace

Dataset gen_chain_proof(const TaskConfig& cfg, std::uint64_t split_seed) {
  TaskConfig c = cfg;
  c.task = TaskKind::ChainProof;
  c.validate();
  Rng rng(derive_seed(cfg.seed, split_seed));
  Dataset ds;
  ds.reserve(cfg.n_examples);
  for (std::uint64_t i = 0; i < cfg.n_examples; ++i) {
    // Alternating labels keep True/False exactly balanced.
    const bool answer = (i % 2) == 0;
    const std::uint32_t depth =
        cfg.chain_depth ? *cfg.chain_depth : static_cast<std::uint32_t>(rng.below(2));
    std::optional<Example> ex;
    for (int attempt = 0; attempt < kMaxExampleAttempts && !ex; ++attempt)
      ex = try_chain_example(rng, cfg, i, answer, depth);
    if (!ex)
      fail(ErrorKind::Generation, "gen_chain_proof: could not place distractors for example " +
                                      std::to_string(i) + " after bounded retries");
    ds.push_back(std::move(*ex));
  }
  return ds;
}

Dataset generate(const TaskConfig& cfg, std::uint64_t split_seed) {
  return cfg.task == TaskKind::KthSmallest ? gen_kth_smallest(cfg, split_seed)
                                           : gen_chain_proof(cfg, split_seed);
}

Example corrupt_useless(const Example& ex, std::uint64_t rng_seed) {
  if (ex.task != TaskKind::ChainProof)
    fail(ErrorKind::Precondition, "corrupt_useless: only chain examples carry polarity tokens");
  std::vector<std::uint32_t> useless;
  for (std::uint32_t i = 0; i < ex.statement_spans.size(); ++i)
    if (!ex.tree.contains(i)) useless.push_back(i);
  if (useless.empty())
    fail(ErrorKind::Precondition,
         "corrupt_useless: example " + std::to_string(ex.id) + " has no useless statement");
  Rng rng(rng_seed);
  const auto target = useless[rng.below(useless.size())];
  const std::uint32_t domain = ex.tokens.back() - static_cast<std::uint32_t>(Special::Qry);
  const std::uint32_t pos = special_token(domain, Special::Pos);
  const std::uint32_t neg = special_token(domain, Special::Neg);
  Example out = ex;
  std::uint32_t& pol = out.tokens[ex.statement_spans[target].end - 1];
  if (pol != pos && pol != neg) fail(ErrorKind::Data, "corrupt_useless: missing polarity token");
  pol = (pol == pos) ? neg : pos;
  return out;
}

void validate_example(const Example& ex, std::uint32_t model_vocab) {
  const auto where = "example " + std::to_string(ex.id) + ": ";
  if (ex.tokens.empty()) fail(ErrorKind::Data, where + "no tokens");
  for (auto t : ex.tokens)
    if (t >= model_vocab) fail(ErrorKind::Data, where + "token id out of vocabulary");
  if (ex.answer >= model_vocab) fail(ErrorKind::Data, where + "answer id out of vocabulary");

  std::vector<char> covered(ex.tokens.size(), 0);
  std::uint32_t prev_end = 0;
  auto mark = [&](const Span& s) {
    if (s.empty() || s.start < prev_end || s.end > ex.tokens.size())
      fail(ErrorKind::Data, where + "spans must be non-empty, disjoint and in order");
    for (auto i = s.start; i < s.end; ++i) covered[i] = 1;
    prev_end = s.end;
  };
  for (const auto& s : ex.statement_spans) mark(s);
  if (ex.question_span && !ex.question_span->empty()) mark(*ex.question_span);

  const std::uint32_t domain = model_vocab - kNumSpecial;
  for (std::size_t i = 0; i < ex.tokens.size(); ++i)
    if (!covered[i] && ex.tokens[i] != special_token(domain, Special::Qry))
      fail(ErrorKind::Data, where + "token " + std::to_string(i) + " outside every span");

  const auto& tree = ex.tree;
  if (tree.nodes.size() != tree.heights.size())
    fail(ErrorKind::Data, where + "tree nodes/heights length mismatch");
  std::set<std::uint32_t> seen;
  for (auto n : tree.nodes) {
    if (n >= ex.statement_spans.size()) fail(ErrorKind::Data, where + "tree node out of range");
    if (!seen.insert(n).second) fail(ErrorKind::Data, where + "duplicate tree node");
  }
  const auto depth = tree.depth();
  for (std::uint32_t h = 0; h <= depth && !tree.nodes.empty(); ++h) {
    const auto count = std::count(tree.heights.begin(), tree.heights.end(), h);
    if (count == 0) fail(ErrorKind::Data, where + "tree heights are not contiguous");
    if (h > 0 && count != 1) fail(ErrorKind::Data, where + "more than one node above height 0");
  }
  if (depth > 1) fail(ErrorKind::Data, where + "tree depth above 1");
}

Splits split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.dev + ratios.test;
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 || std::abs(sum - 1.0) > 1e-9)
    fail(ErrorKind::Config, "split: ratios must be non-negative and sum to 1");

  // Labelled examples are cut per label so each split keeps the balance.
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.size(); ++i)
    groups[ds[i].label ? static_cast<int>(*ds[i].label) : -1].push_back(i);

  const std::size_t n = ds.size();
  const double want[3] = {ratios.train, ratios.dev, ratios.test};
  const char* names[3] = {"train", "dev", "test"};
  std::size_t totals[3] = {0, 0, 0};
  std::vector<int> which(n, 2);
  Rng rng(seed);
  for (auto& [label, idx] : groups) {
    const std::size_t g = idx.size();
    const auto n_train = std::min(g, static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(g))));
    const auto n_dev = std::min(g - n_train, static_cast<std::size_t>(std::llround(ratios.dev * static_cast<double>(g))));
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i = 0; i < g; ++i) which[idx[i]] = i < n_train ? 0 : i < n_train + n_dev ? 1 : 2;
    totals[0] += n_train;
    totals[1] += n_dev;
    totals[2] += g - n_train - n_dev;
  }
  for (int s = 0; s < 3; ++s)
    if (want[s] > 0 && totals[s] == 0)
      fail(ErrorKind::Config, std::string("split: ") + names[s] + " split would be empty");

  Splits out;
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = which[i] == 0 ? out.train : which[i] == 1 ? out.dev : out.test;
    dst.push_back(ds[i]);
  }
  return out;
}

}  // namespace mprobe::taskgen
