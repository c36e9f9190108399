#include <cmath>

#include "app/run_config.hpp"
#include "doctest.h"
#include "mprobe/error.hpp"
#include "mprobe/reference.hpp"

using namespace mprobe;
using namespace mprobe::app;

namespace {

ErrorKind kind_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Numeric;
}

}  // namespace

TEST_CASE("default config is valid and frozen") {
  auto c = default_config();
  CHECK_NOTHROW(finalize(c));
  CHECK(c.model.n_layers == 4);
  CHECK(c.model.n_heads == 4);
  CHECK(c.model.d_model == 64);
  CHECK(c.task.m == 8);
  CHECK(c.task.k == 2);
  CHECK(c.task.vocab_size == 64);
  CHECK(c.model.vocab_size == taskgen::model_vocab_size(64));
  CHECK(c.model.max_seq_len == 9);
}

TEST_CASE("config overlays and JSON round-trip") {
  const auto c = parse_config(R"({"task": {"task": "chain", "n_statements": 6, "vocab_size": 32},
                                   "train": {"epochs": 1}, "paths": {"out_dir": "x"}})");
  CHECK(c.task.task == taskgen::TaskKind::ChainProof);
  CHECK(c.task.n_statements == 6);
  CHECK(c.train.epochs == 1);
  CHECK(c.out_dir == "x");
  CHECK(sequence_length(c.task) == 4 * 6 + 4);
  CHECK(to_json(parse_config(to_json(c))) == to_json(c));
}

TEST_CASE("config errors name the field") {
  CHECK(kind_of(R"({"task": {"mm": 3}})") == ErrorKind::Config);
  CHECK(kind_of(R"({"train": {"epochs": "two"}})") == ErrorKind::Config);
  CHECK(kind_of(R"({"bogus": {}})") == ErrorKind::Config);
  CHECK(kind_of("{not json") == ErrorKind::Config);
  try {
    parse_config(R"({"probe": {"features": "dense"}})");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("probe.features") != std::string::npos);
  }
  auto bad = default_config();
  bad.task.k = 20;
  CHECK_THROWS_AS(finalize(bad), Error);
}

TEST_CASE("exit codes per error kind") {
  CHECK(exit_code(ErrorKind::Config) == 1);
  CHECK(exit_code(ErrorKind::Input) == 1);
  CHECK(exit_code(ErrorKind::Data) == 2);
  CHECK(exit_code(ErrorKind::Io) == 2);
  CHECK(exit_code(ErrorKind::Numeric) == 3);
}

TEST_CASE("normalized table reproduction") {
  const auto cells = reference::reproduce();
  int checked = 0;
  for (const auto& c : cells) {
    if (c.checked) {
      ++checked;
      CHECK(c.within_tolerance);
    }
    if (c.k == 1 && c.column == "S_P1 GPT-2_FT") CHECK(*c.computed == doctest::Approx(92.95).epsilon(1e-4));
    if (c.k == 7 && c.column == "S_P2 GPT-2_FT") {
      CHECK(c.known_inconsistency);
      CHECK_FALSE(c.within_tolerance);
      CHECK(*c.computed == doctest::Approx(94.92).epsilon(1e-4));
    }
  }
  CHECK(checked == 14);
  CHECK_FALSE(reference::format_table(cells).empty());
}
