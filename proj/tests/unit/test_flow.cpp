#include <cmath>

#include "doctest.h"
#include "mprobe/error.hpp"
#include "mprobe/flow.hpp"
#include "mprobe/toylm.hpp"
#include "oracles.hpp"

using namespace mprobe;
using namespace mprobe::flow;

namespace {

std::vector<std::vector<double>> to_nested(const Matrix& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

std::vector<Matrix> tight_stack(double eps, int L) {
  Matrix a(2, 2);
  a << 1, 0, eps, 1 - eps;
  return std::vector<Matrix>(L, a);
}

}  // namespace

TEST_CASE("rollout matches the triple-loop oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto T = 1 + static_cast<std::uint32_t>(rng.below(10));
    const auto L = 1 + static_cast<std::uint32_t>(rng.below(8));
    const auto stack = random_causal_stack(rng, T, L);
    const auto st = rollout(stack);
    std::vector<std::vector<std::vector<double>>> nested;
    for (const auto& m : stack) nested.push_back(to_nested(m));
    const auto ref = oracle::rollout(nested);
    for (std::uint32_t l = 0; l < L; ++l)
      for (std::uint32_t i = 0; i < T; ++i)
        for (std::uint32_t j = 0; j < T; ++j) CHECK(std::abs(st.accum[l](i, j) - ref[l][i][j]) <= 1e-12);
  }
}

TEST_CASE("rollout rows stay stochastic") {
  Rng rng(8);
  const auto stack = random_causal_stack(rng, 6, 8);
  auto st = rollout(stack);
  const auto ir = information_ratio_first(st);
  CHECK(ir.rows() == 6);
  CHECK(ir.cols() == 8);
  for (const auto& m : st.accum)
    for (Eigen::Index i = 0; i < 6; ++i) CHECK(m.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  for (Eigen::Index l = 0; l < 8; ++l) CHECK(ir(0, l) == 1.0);
}

TEST_CASE("the bound is tight on the two-token stack") {
  for (double eps : {0.5, 0.25}) {
    auto st = rollout(tight_stack(eps, 8));
    const auto r = check_domination_bound(st);
    CHECK(r.epsilon == eps);
    CHECK(r.margin == 0.0);
    CHECK(r.holds);
    CHECK(r.worst_token == 1);
  }
}

TEST_CASE("the bound holds on random stacks") {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto T = 1 + static_cast<std::uint32_t>(rng.below(10));
    const auto L = 1 + static_cast<std::uint32_t>(rng.below(8));
    auto st = rollout(random_causal_stack(rng, T, L));
    const auto r = check_domination_bound(st);
    CHECK(r.margin >= -1e-9);
  }
}

TEST_CASE("invalid stacks are rejected") {
  Matrix bad(2, 2);
  bad << 0.5, 0.5, 0.5, 0.5;  // not causal
  std::vector<Matrix> s = {bad};
  CHECK_THROWS_AS(rollout(s), Error);
  bad << 1, 0, 0.3, 0.3;  // row does not sum to 1
  s = {bad};
  CHECK_THROWS_AS(rollout(s), Error);
  CHECK_THROWS_AS(rollout(std::vector<Matrix>{}), Error);
}

TEST_CASE("pooled model attention satisfies the bound") {
  toylm::ModelConfig c;
  c.n_layers = 3;
  c.n_heads = 2;
  c.d_model = 16;
  c.vocab_size = 20;
  c.max_seq_len = 8;
  const auto m = toylm::Model::init_random(c);
  const std::vector<std::uint32_t> toks = {1, 4, 2, 8, 5, 7};
  const auto layers = pooled_layers(toylm::forward(m, toks).attention);
  REQUIRE(layers.size() == 3);
  auto st = rollout(layers);
  CHECK(check_domination_bound(st).holds);
}
