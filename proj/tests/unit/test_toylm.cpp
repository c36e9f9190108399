#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/taskgen.hpp"
#include "mprobe/toylm.hpp"
#include "gradcheck.hpp"

using namespace mprobe;
using namespace mprobe::toylm;

namespace {

ModelConfig small_cfg(std::uint64_t seed = 1) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.vocab_size = taskgen::model_vocab_size(16);
  c.max_seq_len = 10;
  c.seed = seed;
  return c;
}

void check_attention(const ForwardRecord& r) {
  const auto& a = r.attention;
  CHECK(a.max_row_deviation() <= 1e-5);
  CHECK(a.max_above_diagonal() == 0.0);
}

taskgen::TaskConfig tiny_task(std::uint64_t n) {
  taskgen::TaskConfig t;
  t.m = 4;
  t.k = 1;
  t.vocab_size = 16;
  t.n_examples = n;
  t.seed = 3;
  return t;
}

}  // namespace

TEST_CASE("init is a pure function of the seed") {
  const auto a = Model::init_random(small_cfg(1));
  const auto b = Model::init_random(small_cfg(1));
  const auto c = Model::init_random(small_cfg(2));
  CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  CHECK_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
}

TEST_CASE("GPT-2-small shape is accepted") {
  ModelConfig c;
  c.n_layers = 12;
  c.n_heads = 12;
  c.d_model = 768;
  c.vocab_size = 50257;
  c.max_seq_len = 1024;
  CHECK_NOTHROW(c.validate());
  CHECK(ParamLayout(c).total > 85'000'000u);
}

TEST_CASE("attention is causal and row-stochastic") {
  const auto m = Model::init_random(small_cfg());
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint32_t> toks(1 + rng.below(10));
    for (auto& t : toks) t = static_cast<std::uint32_t>(rng.below(m.config().vocab_size));
    check_attention(forward(m, toks));
  }
}

TEST_CASE("a single token attends to itself with weight 1") {
  const auto m = Model::init_random(small_cfg());
  const std::vector<std::uint32_t> toks = {3};
  const auto r = forward(m, toks);
  for (std::uint32_t l = 0; l < 2; ++l)
    for (std::uint32_t h = 0; h < 2; ++h) CHECK(r.attention.at(l, h, 0, 0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("overlength input is an input error") {
  const auto m = Model::init_random(small_cfg());
  const std::vector<std::uint32_t> toks(11, 1);
  try {
    forward(m, toks);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Input);
  }
}

TEST_CASE("empty mask and a mask disabling nothing give identical logits") {
  const auto m = Model::init_random(small_cfg());
  const std::vector<std::uint32_t> toks = {1, 5, 7, 2};
  PruneMask none;
  const auto a = forward(m, toks);
  const auto b = forward(m, toks, none);
  CHECK(a.logits == b.logits);
}

TEST_CASE("masks change the computation and record excluded heads") {
  const auto m = Model::init_random(small_cfg());
  const std::vector<std::uint32_t> toks = {1, 5, 7, 2};
  PruneMask mask;
  mask.disabled_heads.insert({0, 1});
  const auto r = forward(m, toks, mask);
  CHECK(r.excluded_heads == std::vector<std::pair<std::uint32_t, std::uint32_t>>{{0, 1}});
  CHECK(r.logits != forward(m, toks).logits);

  // With zero output biases (as at init) silencing every head of a layer is
  // the same as skipping that layer's attention.
  PruneMask heads, layer;
  heads.disabled_heads = {{1, 0}, {1, 1}};
  layer.disabled_layers = {1};
  const auto x = forward(m, toks, heads).logits;
  const auto y = forward(m, toks, layer).logits;
  REQUIRE(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == doctest::Approx(y[i]).epsilon(1e-6));

  PruneMask bad;
  bad.disabled_heads.insert({2, 0});
  CHECK_THROWS_AS(bad.validate(m.config()), Error);
}

TEST_CASE("batch_logits matches per-sequence forward") {
  const auto m = Model::init_random(small_cfg());
  const std::vector<std::vector<std::uint32_t>> toks = {{1, 2, 3}, {4, 5}, {6, 7, 8}};
  std::vector<Sequence> batch;
  for (const auto& t : toks) batch.push_back({t, 0});
  const auto out = batch_logits(m, std::span<const Sequence>(batch));
  const auto V = m.config().vocab_size;
  for (std::size_t b = 0; b < toks.size(); ++b) {
    const auto ref = forward(m, toks[b]).logits;
    for (std::uint32_t v = 0; v < V; ++v) CHECK(out[b * V + v] == doctest::Approx(ref[v]).epsilon(1e-5));
  }
}

TEST_CASE("analytic gradients match central differences") {
  const auto r = oracle::toy_gradient_check();
  CHECK(r.compared > r.total / 2);
  CHECK(r.worst_rel <= 1e-3);
  CHECK(r.worst_abs < 1e-7);
}

TEST_CASE("lr = 0 leaves parameters unchanged") {
  const auto ds = taskgen::generate(tiny_task(256), 0);
  ModelConfig c = small_cfg();
  c.max_seq_len = toylm::max_length(ds);
  auto m = Model::init_random(c);
  const std::vector<float> before(m.params().begin(), m.params().end());
  TrainParams hp;
  hp.epochs = 1;
  hp.batch_size = 64;
  hp.learning_rate = 0.0;
  hp.weight_decay = 0.0;
  train(m, ds, ds, hp);
  CHECK(std::equal(before.begin(), before.end(), m.params().begin()));
}

TEST_CASE("training is deterministic and reduces the loss") {
  const auto ds = taskgen::generate(tiny_task(1024), 0);
  const auto dev = taskgen::generate(tiny_task(256), 1);
  ModelConfig c = small_cfg();
  c.max_seq_len = toylm::max_length(ds);
  TrainParams hp;
  hp.epochs = 3;
  hp.batch_size = 32;
  hp.learning_rate = 3e-3;
  hp.weight_decay = 0.01;
  hp.seed = 5;
  auto a = Model::init_random(c);
  auto b = Model::init_random(c);
  const auto la = train(a, ds, dev, hp);
  const auto lb = train(b, ds, dev, hp);
  CHECK(la == lb);
  CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  REQUIRE(la.epochs.size() == 3);
  CHECK(la.epochs.back().train_loss < la.epochs.front().train_loss);

  hp.threads = 2;
  auto d = Model::init_random(c);
  const auto ld = train(d, ds, dev, hp);
  CHECK(ld == la);
}

TEST_CASE("evaluate_accuracy: empty dataset and random model") {
  const auto m = Model::init_random(small_cfg());
  CHECK_THROWS_AS(evaluate_accuracy(m, {}), Error);

  taskgen::TaskConfig t;
  t.m = 16;
  t.k = 2;
  t.vocab_size = 256;
  t.n_examples = 300;
  t.seed = 8;
  const auto ds = taskgen::generate(t, 0);
  ModelConfig c;
  c.vocab_size = taskgen::model_vocab_size(256);
  c.max_seq_len = 17;
  c.seed = 4;
  const auto rnd = Model::init_random(c);
  CHECK(evaluate_accuracy(rnd, ds) < 0.1);
  CHECK(evaluate_accuracy(rnd, ds, {}, 2) == evaluate_accuracy(rnd, ds));
}

TEST_CASE("checkpoint round-trips byte-exactly and rejects corruption") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = dir / "mprobe_unit_a.ckpt", p2 = dir / "mprobe_unit_b.ckpt";
  const auto m = Model::init_random(small_cfg());
  save_checkpoint(m, p1);
  const auto back = load_checkpoint(p1);
  CHECK(back.config() == m.config());
  save_checkpoint(back, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {}), b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);

  const std::vector<std::uint32_t> toks = {1, 2, 3, 4};
  CHECK(forward(back, toks).logits == forward(m, toks).logits);
  const auto shrunk = load_checkpoint(p1, 6);
  CHECK(shrunk.config().max_seq_len == 6);
  CHECK(forward(shrunk, toks).logits == forward(m, toks).logits);
  CHECK_THROWS_AS(load_checkpoint(p1, 11), Error);

  auto bad = b1;
  bad[0] = 'X';
  {
    std::ofstream out(p2, std::ios::binary);
    out << bad;
  }
  CHECK_THROWS_AS(load_checkpoint(p2), Error);
  {
    std::ofstream out(p2, std::ios::binary);
    out << b1.substr(0, b1.size() - 3);
  }
  try {
    load_checkpoint(p2);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
}

TEST_CASE("model config JSON round-trips") {
  const auto c = small_cfg(77);
  CHECK(config_from_json(config_to_json(c)) == c);
}
