#pragma once

// Attention simplifications: last-token slicing, head pooling, rank
// permutation, cross-hypernode pooling, layer prefixes and dataset means,
// plus the binary trace file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mprobe/attention.hpp"
#include "mprobe/taskgen.hpp"

namespace mprobe::trace {

/// out[l, h, j] = A(l, h)[T - 1, j].
SimplifiedAttention last_token_slice(const AttentionTensor& a, std::uint64_t example_id = 0);

/// Per-layer head selection: `keep[l][h]` marks heads that enter the mean.
using HeadSubset = std::vector<std::vector<bool>>;

/// Mean over heads. LastToken -> HeadPooled, CrossHypernode -> CrossPooled.
/// With a subset, every layer must keep at least one head.
SimplifiedAttention pool_heads(const SimplifiedAttention& s,
                               const std::optional<HeadSubset>& subset = std::nullopt);

/// Reorders columns: out[l, r] = s[l, ranking[r]]. `ranking` must be a
/// permutation of [0, width).
SimplifiedAttention rank_permute(const SimplifiedAttention& s, std::span<const std::uint32_t> ranking);

/// Source positions ordered by ascending token value over the statement
/// spans, followed by the remaining (special) positions in order.
std::vector<std::uint32_t> value_ranking(const taskgen::Example& ex);

/// out[l, h, i] = max over question tokens q of mean over statement-i tokens s
/// of A(l, h)[q, s]; slot |S| applies the same rule to the question's own
/// tokens. Ties in the max resolve to the lowest question token.
SimplifiedAttention cross_pool(const AttentionTensor& a, std::span<const taskgen::Span> statement_spans,
                               const taskgen::Span& question_span, std::uint64_t example_id = 0);

/// Keeps layers [0, n_layers).
SimplifiedAttention prefix(const SimplifiedAttention& s, std::uint32_t n_layers);

/// Elementwise mean of traces with identical kind and shape.
SimplifiedAttention expected_trace(std::span<const SimplifiedAttention> traces);

/// The simplified trace the probe consumes for an example: LastToken for
/// KthSmallest, CrossHypernode for ChainProof (both unpooled).
SimplifiedAttention simplify_for_task(const AttentionTensor& a, const taskgen::Example& ex);

// ---------------------------------------------------------------------------
// Trace file: "MPROBE01", u32 version, u8 kind, u16 L, u16 H, u32 n, then
// per record u64 id, u32 width, f32[L * H * width]. Little-endian throughout.

inline constexpr std::uint32_t kTraceVersion = 1;

struct TraceFile {
  TraceKind kind = TraceKind::LastToken;
  std::uint16_t layers = 0;
  std::uint16_t heads = 0;
  std::vector<SimplifiedAttention> records;
};

void write_traces(const TraceFile& tf, const std::filesystem::path& path);
TraceFile read_traces(const std::filesystem::path& path);

}  // namespace mprobe::trace
