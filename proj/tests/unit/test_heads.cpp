#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mprobe/error.hpp"
#include "mprobe/heads.hpp"
#include "mprobe/rng.hpp"
#include "oracles.hpp"

using namespace mprobe;
using namespace mprobe::heads;
using trace::SimplifiedAttention;
using trace::TraceKind;

namespace {

std::vector<HeadProfile> fake_profiles(std::uint32_t L, std::uint32_t H, Rng& rng) {
  std::vector<HeadProfile> out;
  for (std::uint32_t l = 0; l < L; ++l)
    for (std::uint32_t h = 0; h < H; ++h) {
      HeadProfile p;
      p.layer = l;
      p.head = h;
      p.size_entropy = rng.uniform();
      p.position_entropy = rng.uniform();
      out.push_back(p);
    }
  return out;
}

}  // namespace

TEST_CASE("entropy: worked examples") {
  const std::vector<double> uniform(16, 1.0 / 16);
  CHECK(entropy(uniform) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  const std::vector<double> onehot = {0, 1, 0};
  CHECK(entropy(onehot) == 0.0);
  const std::vector<double> p = {0.5, 0.25, 0.25};
  CHECK(entropy(p) == doctest::Approx(1.0397207708).epsilon(1e-9));
  const std::vector<double> neg = {0.5, -0.1, 0.6};
  CHECK_THROWS_AS(entropy(neg), Error);
}

TEST_CASE("entropy matches the direct-summation oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> p(1 + rng.below(20));
    double s = 0;
    for (auto& v : p) s += (v = rng.coin() ? rng.uniform() : 0.0);
    if (s == 0) p[0] = 1.0;
    CHECK(std::abs(entropy(p) - oracle::entropy(p)) <= 1e-12);
  }
}

TEST_CASE("head distributions by rank and position") {
  const auto ex = taskgen::make_kth_example(0, std::vector<std::uint32_t>{5, 2, 9, 7}, 2, 16);
  const taskgen::Dataset ds = {ex};
  SimplifiedAttention s(TraceKind::LastToken, 1, 2, 5, 0);
  for (std::uint32_t j = 0; j < 4; ++j) s.at(0, 0, j) = 0.2f;  // uniform over content
  s.at(0, 0, 4) = 0.2f;
  s.at(0, 1, 1) = 0.9f;  // always the smallest number
  s.at(0, 1, 4) = 0.1f;
  const std::vector<SimplifiedAttention> tr = {s};

  const auto pos = head_distributions(tr, ds, DistributionBy::Position);
  const auto rank = head_distributions(tr, ds, DistributionBy::Rank);
  for (double v : pos[0]) CHECK(v == doctest::Approx(0.25));
  CHECK(rank[1] == std::vector<double>{1, 0, 0, 0});
  CHECK(pos[1] == std::vector<double>{0, 1, 0, 0});

  const auto prof = head_profiles(tr, ds);
  CHECK(prof[0].position_entropy == doctest::Approx(std::log(4.0)));
  CHECK(prof[1].size_entropy == 0.0);
  CHECK_THROWS_AS(head_distributions({}, {}, DistributionBy::Rank), Error);
}

TEST_CASE("rank and position distributions differ when size and position are independent") {
  taskgen::TaskConfig c;
  c.m = 6;
  c.vocab_size = 40;
  c.n_examples = 300;
  const auto ds = taskgen::generate(c, 0);
  std::vector<SimplifiedAttention> tr;
  for (const auto& ex : ds) {
    SimplifiedAttention s(TraceKind::LastToken, 1, 1, 7, ex.id);
    s.at(0, 0, ex.statement_spans[ex.tree.nodes.back()].start) = 1.0f;  // the k-th smallest
    tr.push_back(s);
  }
  const auto prof = head_profiles(tr, ds);
  CHECK(prof[0].size_entropy == doctest::Approx(0.0));
  CHECK(prof[0].position_entropy > 0.9 * std::log(6.0));
}

TEST_CASE("schedules: entropy order, ties, and seeded shuffles") {
  std::vector<HeadProfile> two(2);
  two[0].layer = 0, two[0].head = 0, two[0].size_entropy = 0.9;
  two[1].layer = 0, two[1].head = 1, two[1].size_entropy = 0.3;
  const auto s = make_schedule(two, PruneCriterion::SizeEntropyAscending);
  CHECK(s.ordering.front() == std::pair<std::uint32_t, std::uint32_t>{0, 1});

  two[0].size_entropy = 0.3;
  CHECK(make_schedule(two, PruneCriterion::SizeEntropyAscending).ordering.front() ==
        std::pair<std::uint32_t, std::uint32_t>{0, 0});

  Rng rng(3);
  const auto prof = fake_profiles(12, 4, rng);
  const auto a = make_schedule(prof, PruneCriterion::Random, 42);
  const auto b = make_schedule(prof, PruneCriterion::Random, 42);
  const auto c = make_schedule(prof, PruneCriterion::Random, 43);
  CHECK(a.ordering == b.ordering);
  CHECK(a.ordering != c.ordering);
  auto sorted = a.ordering;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == std::pair<std::uint32_t, std::uint32_t>(i / 4, i % 4));

  const auto half = mask_for_rate(a, 0.5);
  CHECK(half.disabled_heads.size() == 24);
  for (std::size_t i = 0; i < 24; ++i) CHECK(half.disabled_heads.count(a.ordering[i]) == 1);
  CHECK(mask_for_rate(a, 0.0).empty());
  CHECK(heads_for_rate(16, 0.1) == 2);
}

TEST_CASE("criterion names round-trip") {
  for (auto c : {PruneCriterion::SizeEntropyAscending, PruneCriterion::PositionEntropyAscending, PruneCriterion::Random})
    CHECK(criterion_from_string(to_string(c)) == c);
  CHECK_THROWS_AS(criterion_from_string("nope"), Error);
}

TEST_CASE("pruning curve at rate 0 equals unpruned accuracy") {
  taskgen::TaskConfig t;
  t.m = 5;
  t.vocab_size = 16;
  t.n_examples = 80;
  const auto ds = taskgen::generate(t, 0);
  toylm::ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.vocab_size = taskgen::model_vocab_size(16);
  c.max_seq_len = 6;
  const auto m = toylm::Model::init_random(c);
  Rng rng(1);
  const auto sched = make_schedule(fake_profiles(2, 2, rng), PruneCriterion::PositionEntropyAscending);
  const auto curve = pruning_curve(m, ds, sched);
  REQUIRE(curve.size() == 10);
  CHECK(curve.front().rate == 0.0);
  CHECK(curve.front().accuracy == toylm::evaluate_accuracy(m, ds));
  const std::vector<CurvePoint> pts = {{0.0, 1.0}, {0.1, 0.5}, {0.2, 0.7}, {0.6, 0.0}};
  CHECK(mean_accuracy(pts, 0.1, 0.5) == doctest::Approx(0.6));
}
