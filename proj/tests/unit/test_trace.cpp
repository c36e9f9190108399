#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/toylm.hpp"
#include "mprobe/trace.hpp"

using namespace mprobe;
using namespace mprobe::trace;

namespace {

toylm::Model model_for(std::uint32_t domain, std::uint32_t T) {
  toylm::ModelConfig c;
  c.n_layers = 3;
  c.n_heads = 2;
  c.d_model = 16;
  c.vocab_size = taskgen::model_vocab_size(domain);
  c.max_seq_len = T;
  c.seed = 21;
  return toylm::Model::init_random(c);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

}  // namespace

TEST_CASE("last_token_slice reads the final row exactly") {
  const auto m = model_for(16, 8);
  const std::vector<std::uint32_t> toks = {1, 4, 9, 3, 16};
  const auto rec = toylm::forward(m, toks);
  const auto s = last_token_slice(rec.attention, 7);
  CHECK(s.kind == TraceKind::LastToken);
  CHECK(s.example_id == 7);
  CHECK(s.width == 5);
  for (std::uint32_t l = 0; l < 3; ++l)
    for (std::uint32_t h = 0; h < 2; ++h) {
      double sum = 0;
      for (std::uint32_t j = 0; j < 5; ++j) {
        CHECK(s.at(l, h, j) == rec.attention.at(l, h, 4, j));
        sum += s.at(l, h, j);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }

  const std::vector<std::uint32_t> one = {2};
  const auto s1 = last_token_slice(toylm::forward(m, one).attention);
  for (float v : s1.values) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("pool_heads: mean, identity and subsets") {
  SimplifiedAttention s(TraceKind::LastToken, 1, 2, 2, 0);
  s.values = {0.2f, 0.8f, 0.4f, 0.6f};
  const auto p = pool_heads(s);
  CHECK(p.kind == TraceKind::HeadPooled);
  CHECK(p.values[0] == doctest::Approx(0.3f));
  CHECK(p.values[1] == doctest::Approx(0.7f));

  const auto only_second = pool_heads(s, HeadSubset{{false, true}});
  CHECK(only_second.values == std::vector<float>{0.4f, 0.6f});
  CHECK_THROWS_AS(pool_heads(s, HeadSubset{{false, false}}), Error);
  CHECK_THROWS_AS(pool_heads(p), Error);

  SimplifiedAttention single(TraceKind::LastToken, 2, 1, 3, 0);
  single.values = {0.1f, 0.2f, 0.7f, 0.3f, 0.3f, 0.4f};
  CHECK(pool_heads(single).values == single.values);
}

TEST_CASE("pool_heads commutes with prefix") {
  const auto m = model_for(16, 8);
  const std::vector<std::uint32_t> toks = {3, 1, 4, 1, 5, 16};
  const auto s = last_token_slice(toylm::forward(m, toks).attention);
  for (std::uint32_t l = 1; l <= 3; ++l) CHECK(pool_heads(prefix(s, l)).values == prefix(pool_heads(s), l).values);
  CHECK(prefix(s, 3).values == s.values);
  CHECK(prefix(s, 1).values.size() == s.values.size() / 3);
  CHECK_THROWS_AS(prefix(s, 0), Error);
  CHECK_THROWS_AS(prefix(s, 4), Error);
}

TEST_CASE("rank_permute on [5,2,9]") {
  const auto ex = taskgen::make_kth_example(0, std::vector<std::uint32_t>{5, 2, 9}, 2, 16);
  const auto ranking = value_ranking(ex);
  CHECK(ranking == std::vector<std::uint32_t>{1, 0, 2, 3});

  SimplifiedAttention p(TraceKind::HeadPooled, 1, 1, 4, 0);
  p.values = {0.1f, 0.2f, 0.3f, 0.4f};
  const auto r = rank_permute(p, ranking);
  CHECK(r.kind == TraceKind::RankPermuted);
  CHECK(r.values == std::vector<float>{0.2f, 0.1f, 0.3f, 0.4f});

  const std::vector<std::uint32_t> identity = {0, 1, 2, 3};
  CHECK(rank_permute(p, identity).values == p.values);
  const std::vector<std::uint32_t> twice = {0, 0, 2, 3};
  CHECK_THROWS_AS(rank_permute(p, twice), Error);
}

TEST_CASE("rank_permute then its inverse restores the trace") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint32_t w = 1 + static_cast<std::uint32_t>(rng.below(12));
    SimplifiedAttention p(TraceKind::HeadPooled, 2, 1, w, 0);
    for (auto& v : p.values) v = static_cast<float>(rng.uniform());
    std::vector<std::uint32_t> perm(w), inv(w);
    std::iota(perm.begin(), perm.end(), 0u);
    rng.shuffle(std::span<std::uint32_t>(perm));
    for (std::uint32_t r = 0; r < w; ++r) inv[perm[r]] = r;
    const auto fwd = rank_permute(p, perm);
    for (std::uint32_t l = 0; l < 2; ++l) {
      std::vector<float> a(p.row(l, 0).begin(), p.row(l, 0).end()), b(fwd.row(l, 0).begin(), fwd.row(l, 0).end());
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
    }
    auto back_in = fwd;
    back_in.kind = TraceKind::HeadPooled;
    CHECK(rank_permute(back_in, inv).values == p.values);
  }
}

TEST_CASE("cross_pool: mean over statement tokens, max over question tokens") {
  AttentionTensor a(1, 1, 4);
  a.at(0, 0, 2, 0) = 0.1f;
  a.at(0, 0, 2, 1) = 0.3f;
  a.at(0, 0, 3, 0) = 0.2f;
  a.at(0, 0, 3, 1) = 0.4f;
  const std::vector<taskgen::Span> st = {{0, 2}};
  const auto out = cross_pool(a, st, {2, 4});
  CHECK(out.width == 2);
  CHECK(out.at(0, 0, 0) == doctest::Approx(0.3f));

  AttentionTensor b(1, 1, 2);
  b.at(0, 0, 1, 0) = 0.37f;
  const std::vector<taskgen::Span> one = {{0, 1}};
  CHECK(cross_pool(b, one, {1, 2}).at(0, 0, 0) == 0.37f);

  const std::vector<taskgen::Span> overlap = {{0, 2}, {1, 2}};
  try {
    cross_pool(a, overlap, {2, 4});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
}

TEST_CASE("cross_pool on chain examples stays within the relevant entries") {
  taskgen::TaskConfig c;
  c.task = taskgen::TaskKind::ChainProof;
  c.vocab_size = 24;
  c.n_statements = 6;
  c.n_examples = 10;
  c.seed = 2;
  const auto ds = taskgen::generate(c, 0);
  const auto m = model_for(24, toylm::max_length(ds));
  for (const auto& ex : ds) {
    const auto a = toylm::forward(m, ex.tokens).attention;
    const auto s = simplify_for_task(a, ex);
    CHECK(s.kind == TraceKind::CrossHypernode);
    CHECK(s.width == ex.statement_spans.size() + 1);
    const auto q = *ex.question_span;
    for (std::uint32_t l = 0; l < 3; ++l)
      for (std::uint32_t h = 0; h < 2; ++h)
        for (std::uint32_t u = 0; u < s.width; ++u) {
          const auto sp = u < ex.statement_spans.size() ? ex.statement_spans[u] : q;
          float lo = 1, hi = 0;
          for (auto qi = q.start; qi < q.end; ++qi)
            for (auto si = sp.start; si < sp.end; ++si) {
              lo = std::min(lo, a.at(l, h, qi, si));
              hi = std::max(hi, a.at(l, h, qi, si));
            }
          CHECK(s.at(l, h, u) >= lo - 1e-7f);
          CHECK(s.at(l, h, u) <= hi + 1e-7f);
        }
  }
}

TEST_CASE("expected_trace: mean, order invariance and stochastic rows") {
  SimplifiedAttention x(TraceKind::HeadPooled, 1, 1, 3, 0), y(TraceKind::HeadPooled, 1, 1, 3, 1),
      z(TraceKind::HeadPooled, 1, 1, 3, 2);
  x.values = {0.2f, 0.3f, 0.5f};
  y.values = {0.6f, 0.2f, 0.2f};
  z.values = {0.1f, 0.1f, 0.8f};
  const std::vector<SimplifiedAttention> one = {x};
  CHECK(expected_trace(one).values == x.values);
  const std::vector<SimplifiedAttention> xyz = {x, y, z}, zyx = {z, y, x};
  const auto a = expected_trace(xyz), b = expected_trace(zyx);
  for (int i = 0; i < 3; ++i) CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-7));
  CHECK(a.values[0] + a.values[1] + a.values[2] == doctest::Approx(1.0f).epsilon(1e-5));
  const std::vector<SimplifiedAttention> two = {x, y};
  CHECK(expected_trace(two).values[0] == doctest::Approx(0.4f));
  SimplifiedAttention w(TraceKind::HeadPooled, 1, 1, 4, 3);
  const std::vector<SimplifiedAttention> mixed = {x, w};
  CHECK_THROWS_AS(expected_trace(mixed), Error);
}

TEST_CASE("trace files round-trip byte-exactly") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = dir / "mprobe_unit_a.trace", p2 = dir / "mprobe_unit_b.trace";
  taskgen::TaskConfig c;
  c.m = 6;
  c.vocab_size = 16;
  c.n_examples = 5;
  const auto ds = taskgen::generate(c, 0);
  const auto m = model_for(16, 7);
  TraceFile tf;
  tf.kind = TraceKind::LastToken;
  tf.layers = 3;
  tf.heads = 2;
  for (const auto& ex : ds) tf.records.push_back(simplify_for_task(toylm::forward(m, ex.tokens).attention, ex));
  for (std::size_t i = 0; i < ds.size(); ++i) tf.records[i].example_id = ds[i].id;
  write_traces(tf, p1);
  const auto back = read_traces(p1);
  REQUIRE(back.records.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.records[i].values == tf.records[i].values);
    CHECK(back.records[i].example_id == ds[i].id);
  }
  write_traces(back, p2);
  CHECK(slurp(p1) == slurp(p2));

  TraceFile empty;
  empty.kind = TraceKind::HeadPooled;
  empty.layers = 2;
  empty.heads = 1;
  write_traces(empty, p2);
  CHECK(read_traces(p2).records.empty());
}

TEST_CASE("corrupted trace headers are data errors") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto p = dir / "mprobe_unit_c.trace", q = dir / "mprobe_unit_d.trace";
  TraceFile tf;
  tf.kind = TraceKind::HeadPooled;
  tf.layers = 2;
  tf.heads = 1;
  SimplifiedAttention r(TraceKind::HeadPooled, 2, 1, 3, 9);
  r.values = {0.2f, 0.3f, 0.5f, 0.1f, 0.1f, 0.8f};
  tf.records.push_back(r);
  write_traces(tf, p);
  const auto good = slurp(p);

  auto expect_data_error = [&](std::string bytes) {
    spit(q, bytes);
    try {
      read_traces(q);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Data);
    }
  };
  auto bad = good;
  bad[0] = 'X';
  expect_data_error(bad);  // magic
  bad = good;
  bad[8] = 7;
  expect_data_error(bad);  // version
  bad = good;
  bad[12] = 9;
  expect_data_error(bad);  // kind flag
  bad = good;
  bad[12] = 0;
  bad[15] = 2;
  expect_data_error(bad);  // kind says unpooled, payload sized for one head
  expect_data_error(good.substr(0, good.size() - 2));
}
