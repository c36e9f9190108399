#include "mprobe/trace.hpp"

#include <algorithm>
#include <numeric>

#include "mprobe/error.hpp"

namespace mprobe::trace {

SimplifiedAttention last_token_slice(const AttentionTensor& a, std::uint64_t example_id) {
  const std::uint32_t T = a.tokens();
  if (T == 0) fail(ErrorKind::Input, "last_token_slice: empty attention tensor");
  SimplifiedAttention out(TraceKind::LastToken, a.layers(), a.heads(), T, example_id);
  for (std::uint32_t l = 0; l < a.layers(); ++l)
    for (std::uint32_t h = 0; h < a.heads(); ++h)
      for (std::uint32_t j = 0; j < T; ++j) out.at(l, h, j) = a.at(l, h, T - 1, j);
  out.transforms.push_back("last_token");
  return out;
}

SimplifiedAttention pool_heads(const SimplifiedAttention& s, const std::optional<HeadSubset>& subset) {
  TraceKind kind;
  if (s.kind == TraceKind::LastToken)
    kind = TraceKind::HeadPooled;
  else if (s.kind == TraceKind::CrossHypernode)
    kind = TraceKind::CrossPooled;
  else
    fail(ErrorKind::Input, "pool_heads: expects a LastToken or CrossHypernode trace");
  if (subset) {
    if (subset->size() != s.layers)
      fail(ErrorKind::Input, "pool_heads: head subset must list every layer");
    for (const auto& row : *subset)
      if (row.size() != s.heads) fail(ErrorKind::Input, "pool_heads: head subset row has the wrong width");
  }

  SimplifiedAttention out(kind, s.layers, 1, s.width, s.example_id);
  out.transforms = s.transforms;
  for (std::uint32_t l = 0; l < s.layers; ++l) {
    std::uint32_t used = 0;
    for (std::uint32_t h = 0; h < s.heads; ++h) {
      if (subset && !(*subset)[l][h]) continue;
      ++used;
      for (std::uint32_t i = 0; i < s.width; ++i) out.at(l, 0, i) += s.at(l, h, i);
    }
    if (used == 0)
      fail(ErrorKind::Input, "pool_heads: empty head subset at layer " + std::to_string(l));
    for (std::uint32_t i = 0; i < s.width; ++i) out.at(l, 0, i) /= static_cast<float>(used);
  }
  out.transforms.push_back(subset ? "pool_heads(subset)" : "pool_heads");
  return out;
}

SimplifiedAttention rank_permute(const SimplifiedAttention& s, std::span<const std::uint32_t> ranking) {
  if (s.kind != TraceKind::HeadPooled && s.kind != TraceKind::RankPermuted)
    fail(ErrorKind::Input, "rank_permute: expects a HeadPooled trace");
  if (ranking.size() != s.width) fail(ErrorKind::Input, "rank_permute: ranking length != width");
  std::vector<char> seen(s.width, 0);
  for (auto r : ranking) {
    if (r >= s.width || seen[r]) fail(ErrorKind::Input, "rank_permute: ranking is not a bijection");
    seen[r] = 1;
  }
  SimplifiedAttention out(TraceKind::RankPermuted, s.layers, 1, s.width, s.example_id);
  out.transforms = s.transforms;
  for (std::uint32_t l = 0; l < s.layers; ++l)
    for (std::uint32_t r = 0; r < s.width; ++r) out.at(l, 0, r) = s.at(l, 0, ranking[r]);
  out.transforms.push_back("rank_permute");
  return out;
}

std::vector<std::uint32_t> value_ranking(const taskgen::Example& ex) {
  std::vector<std::uint32_t> content;
  std::vector<char> is_content(ex.tokens.size(), 0);
  for (const auto& sp : ex.statement_spans)
    for (auto i = sp.start; i < sp.end; ++i) {
      content.push_back(i);
      is_content[i] = 1;
    }
  std::stable_sort(content.begin(), content.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return ex.tokens[a] < ex.tokens[b]; });
  for (std::uint32_t i = 0; i < ex.tokens.size(); ++i)
    if (!is_content[i]) content.push_back(i);
  return content;
}

SimplifiedAttention cross_pool(const AttentionTensor& a, std::span<const taskgen::Span> statement_spans,
                               const taskgen::Span& question_span, std::uint64_t example_id) {
  const std::uint32_t T = a.tokens();
  if (question_span.empty()) fail(ErrorKind::Input, "cross_pool: question span is empty");
  std::vector<taskgen::Span> units(statement_spans.begin(), statement_spans.end());
  units.push_back(question_span);
  std::vector<char> used(T, 0);
  for (const auto& sp : units) {
    if (sp.empty() || sp.end > T) fail(ErrorKind::Data, "cross_pool: span out of range");
    for (auto i = sp.start; i < sp.end; ++i) {
      if (used[i]) fail(ErrorKind::Data, "cross_pool: overlapping spans");
      used[i] = 1;
    }
  }

  const auto width = static_cast<std::uint32_t>(units.size());
  SimplifiedAttention out(TraceKind::CrossHypernode, a.layers(), a.heads(), width, example_id);
  for (std::uint32_t l = 0; l < a.layers(); ++l)
    for (std::uint32_t h = 0; h < a.heads(); ++h)
      for (std::uint32_t u = 0; u < width; ++u) {
        const auto& sp = units[u];
        float best = 0.0f;
        for (auto q = question_span.start; q < question_span.end; ++q) {
          double sum = 0.0;
          for (auto s = sp.start; s < sp.end; ++s) sum += a.at(l, h, q, s);
          const auto mean = static_cast<float>(sum / sp.size());
          if (q == question_span.start || mean > best) best = mean;
        }
        out.at(l, h, u) = best;
      }
  out.transforms.push_back("cross_pool");
  return out;
}

SimplifiedAttention prefix(const SimplifiedAttention& s, std::uint32_t n_layers) {
  if (n_layers < 1 || n_layers > s.layers)
    fail(ErrorKind::Input, "prefix: layer count must be in [1, " + std::to_string(s.layers) + "]");
  SimplifiedAttention out = s;
  out.layers = n_layers;
  out.values.resize(static_cast<std::size_t>(n_layers) * s.heads * s.width);
  out.transforms.push_back("prefix(" + std::to_string(n_layers) + ")");
  return out;
}

SimplifiedAttention expected_trace(std::span<const SimplifiedAttention> traces) {
  if (traces.empty()) fail(ErrorKind::Input, "expected_trace: no traces");
  const auto& first = traces.front();
  std::vector<double> acc(first.values.size(), 0.0);
  for (const auto& t : traces) {
    if (t.kind != first.kind || t.layers != first.layers || t.heads != first.heads ||
        t.width != first.width)
      fail(ErrorKind::Input, "expected_trace: traces differ in kind or shape");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t.values[i];
  }
  SimplifiedAttention out(first.kind, first.layers, first.heads, first.width, 0);
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.values[i] = static_cast<float>(acc[i] / static_cast<double>(traces.size()));
  out.transforms = first.transforms;
  out.transforms.push_back("mean(" + std::to_string(traces.size()) + ")");
  return out;
}

SimplifiedAttention simplify_for_task(const AttentionTensor& a, const taskgen::Example& ex) {
  if (ex.task == taskgen::TaskKind::ChainProof) {
    if (!ex.question_span) fail(ErrorKind::Data, "chain example without question span");
    return cross_pool(a, ex.statement_spans, *ex.question_span, ex.id);
  }
  return last_token_slice(a, ex.id);
}

}  // namespace mprobe::trace
