#pragma once

// Synthetic reasoning tasks with gold reasoning-tree annotations.
//
// Two tasks are provided:
//  * KthSmallest: m distinct numbers followed by a QRY token; the answer is
//    the k-th smallest number. The tree has the k smallest numbers as nodes,
//    the k-th smallest at height 1 (root) and the others at height 0.
//  * ChainProof: fact / rule statements over entities and attributes, a
//    question "entity HAS? attribute" and a True/False answer. Exactly one
//    proof of depth 0 (a single fact) or depth 1 (fact + rule) exists.
//
// Token layout: ids [0, vocab_size) are the number / symbol domain, the
// special tokens below follow it.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mprobe::taskgen {

enum class TaskKind { KthSmallest, ChainProof };
enum class Label { True, False };

/// Special tokens, offset from the domain size.
enum class Special : std::uint32_t {
  Qry = 0,
  Has,
  Implies,
  Ask,  // "HAS?" in the question
  Pos,
  Neg,
  True,
  False,
};
inline constexpr std::uint32_t kNumSpecial = 8;

constexpr std::uint32_t special_token(std::uint32_t domain, Special s) {
  return domain + static_cast<std::uint32_t>(s);
}

/// Total model vocabulary for a given domain size.
constexpr std::uint32_t model_vocab_size(std::uint32_t domain) { return domain + kNumSpecial; }

/// Half-open token range [start, end).
struct Span {
  std::uint32_t start = 0;
  std::uint32_t end = 0;

  std::uint32_t size() const { return end - start; }
  bool empty() const { return end <= start; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct ReasoningTree {
  std::vector<std::uint32_t> nodes;    // statement indices forming V
  std::vector<std::uint32_t> heights;  // aligned with nodes

  std::uint32_t depth() const;
  bool contains(std::uint32_t statement) const;
  std::optional<std::uint32_t> height_of(std::uint32_t statement) const;
  friend bool operator==(const ReasoningTree&, const ReasoningTree&) = default;
};

struct Example {
  std::uint64_t id = 0;
  TaskKind task = TaskKind::KthSmallest;
  std::vector<std::uint32_t> tokens;
  std::vector<Span> statement_spans;
  std::optional<Span> question_span;
  std::uint32_t answer = 0;
  std::optional<Label> label;   // ChainProof only
  std::optional<std::uint32_t> k;  // KthSmallest only
  ReasoningTree tree;

  std::size_t n_statements() const { return statement_spans.size(); }
  friend bool operator==(const Example&, const Example&) = default;
};

using Dataset = std::vector<Example>;

struct TaskConfig {
  TaskKind task = TaskKind::KthSmallest;
  std::uint32_t m = 16;
  std::uint32_t k = 2;
  std::uint32_t vocab_size = 256;
  std::uint32_t n_statements = 4;
  /// ChainProof proof depth; nullopt samples depth 0 and 1 with equal odds.
  std::optional<std::uint32_t> chain_depth;
  std::uint64_t n_examples = 1000;
  std::uint64_t seed = 0;

  /// Throws ErrorKind::Config when the configuration is unusable.
  void validate() const;
};

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// KthSmallest

/// Tree for the k smallest of `numbers`: nodes listed in ascending value
/// order, the k-th smallest is the root (height 1); k = 1 gives a depth-0 tree.
ReasoningTree annotate_tree_kth(std::span<const std::uint32_t> numbers, std::uint32_t k);

/// Builds one KthSmallest example from an explicit number list.
Example make_kth_example(std::uint64_t id, std::span<const std::uint32_t> numbers,
                         std::uint32_t k, std::uint32_t domain);

Dataset gen_kth_smallest(const TaskConfig& cfg, std::uint64_t split_seed);

// ---------------------------------------------------------------------------
// ChainProof

enum class StatementKind { Fact, Rule };

/// Decoded statement. Facts are (entity HAS attribute), rules are
/// (attribute IMPLIES attribute); `positive` is the polarity token.
struct Statement {
  StatementKind kind = StatementKind::Fact;
  std::uint32_t lhs = 0;
  std::uint32_t rhs = 0;
  bool positive = true;
  friend bool operator==(const Statement&, const Statement&) = default;
};

struct Question {
  std::uint32_t entity = 0;
  std::uint32_t attribute = 0;
};

/// Number of entity symbols for a domain; attributes use the remaining ids.
std::uint32_t chain_entity_count(std::uint32_t domain);

/// Forward chaining result for a question: nullopt when the statements do not
/// decide it (or derive a contradiction anywhere).
std::optional<bool> forward_chain(std::span<const Statement> statements, const Question& q);

/// Decodes the statements / question of a ChainProof example.
std::vector<Statement> decode_statements(const Example& ex);
Question decode_question(const Example& ex);

/// Encodes statements + question into a full example (tokens, spans, answer).
Example make_chain_example(std::uint64_t id, std::span<const Statement> statements,
                           const Question& q, bool answer, ReasoningTree tree,
                           std::uint32_t domain);

Dataset gen_chain_proof(const TaskConfig& cfg, std::uint64_t split_seed);

/// Dispatches on cfg.task.
Dataset generate(const TaskConfig& cfg, std::uint64_t split_seed);

/// Flips the polarity token of one uniformly chosen statement outside the
/// gold tree. Answer, label and tree are unchanged.
Example corrupt_useless(const Example& ex, std::uint64_t rng_seed);

/// Throws ErrorKind::Data if the example breaks a structural invariant.
void validate_example(const Example& ex, std::uint32_t model_vocab);

// ---------------------------------------------------------------------------
// Splits and files

struct SplitRatios {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

struct Splits {
  Dataset train;
  Dataset dev;
  Dataset test;
};

/// Deterministic shuffle-and-cut, stratified by label when labels exist.
/// Each split keeps the input order.
Splits split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed);

void write_jsonl(const Dataset& ds, const std::filesystem::path& path);
Dataset read_jsonl(const std::filesystem::path& path);

/// Single-line serialization (no trailing newline) and its inverse.
std::string to_jsonl_line(const Example& ex);
Example from_jsonl_line(const std::string& line, std::size_t line_number);

}  // namespace mprobe::taskgen
