#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mprobe/error.hpp"
#include "mprobe/taskgen.hpp"

namespace mprobe::taskgen {

using ojson = nlohmann::ordered_json;

std::string to_jsonl_line(const Example& ex) {
  ojson j;
  j["id"] = ex.id;
  j["task"] = to_string(ex.task);
  j["tokens"] = ex.tokens;
  ojson spans = ojson::array();
  for (const auto& s : ex.statement_spans) spans.push_back({s.start, s.end});
  j["statement_spans"] = std::move(spans);
  if (ex.question_span)
    j["question_span"] = {ex.question_span->start, ex.question_span->end};
  else
    j["question_span"] = nullptr;
  j["answer"] = ex.answer;
  if (ex.label)
    j["label"] = *ex.label == Label::True ? "true" : "false";
  else
    j["label"] = nullptr;
  if (ex.k)
    j["k"] = *ex.k;
  else
    j["k"] = nullptr;
  j["tree"] = {{"nodes", ex.tree.nodes}, {"heights", ex.tree.heights}};
  return j.dump();
}

namespace {

Span parse_span(const ojson& j) {
  if (!j.is_array() || j.size() != 2) throw std::runtime_error("span must be [start, end]");
  return {j[0].get<std::uint32_t>(), j[1].get<std::uint32_t>()};
}

}  // namespace

Example from_jsonl_line(const std::string& line, std::size_t line_number) {
  try {
    const ojson j = ojson::parse(line);
    if (!j.is_object()) throw std::runtime_error("expected a JSON object");
    Example ex;
    ex.id = j.at("id").get<std::uint64_t>();
    ex.task = task_kind_from_string(j.at("task").get<std::string>());
    ex.tokens = j.at("tokens").get<std::vector<std::uint32_t>>();
    for (const auto& s : j.at("statement_spans")) ex.statement_spans.push_back(parse_span(s));
    if (!j.at("question_span").is_null()) ex.question_span = parse_span(j.at("question_span"));
    ex.answer = j.at("answer").get<std::uint32_t>();
    const auto& label = j.at("label");
    if (!label.is_null()) {
      const auto s = label.get<std::string>();
      if (s != "true" && s != "false") throw std::runtime_error("label must be true|false|null");
      ex.label = s == "true" ? Label::True : Label::False;
    }
    if (!j.at("k").is_null()) ex.k = j.at("k").get<std::uint32_t>();
    const auto& tree = j.at("tree");
    ex.tree.nodes = tree.at("nodes").get<std::vector<std::uint32_t>>();
    ex.tree.heights = tree.at("heights").get<std::vector<std::uint32_t>>();
    if (ex.tree.nodes.size() != ex.tree.heights.size())
      throw std::runtime_error("tree nodes/heights length mismatch");
    return ex;
  } catch (const mprobe::Error& e) {
    fail(ErrorKind::Data, "line " + std::to_string(line_number) + ": " + e.what());
  } catch (const std::exception& e) {
    fail(ErrorKind::Data, "line " + std::to_string(line_number) + ": " + e.what());
  }
}

void write_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  for (const auto& ex : ds) out << to_jsonl_line(ex) << '\n';
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

Dataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  Dataset ds;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      ds.push_back(from_jsonl_line(line, line_number));
    } catch (const Error& e) {
      fail(ErrorKind::Data, path.string() + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace mprobe::taskgen
