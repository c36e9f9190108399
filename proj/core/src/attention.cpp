#include "mprobe/attention.hpp"

#include <algorithm>
#include <cmath>

namespace mprobe::trace {

AttentionTensor::AttentionTensor(std::uint32_t layers, std::uint32_t heads, std::uint32_t tokens)
    : layers_(layers),
      heads_(heads),
      tokens_(tokens),
      values_(static_cast<std::size_t>(layers) * heads * tokens * tokens, 0.0f) {}

std::span<float> AttentionTensor::matrix(std::uint32_t l, std::uint32_t h) {
  return std::span<float>(values_).subspan(index(l, h, 0, 0),
                                           static_cast<std::size_t>(tokens_) * tokens_);
}

std::span<const float> AttentionTensor::matrix(std::uint32_t l, std::uint32_t h) const {
  return std::span<const float>(values_).subspan(index(l, h, 0, 0),
                                                 static_cast<std::size_t>(tokens_) * tokens_);
}

double AttentionTensor::max_row_deviation() const {
  double worst = 0.0;
  for (std::uint32_t l = 0; l < layers_; ++l)
    for (std::uint32_t h = 0; h < heads_; ++h)
      for (std::uint32_t i = 0; i < tokens_; ++i) {
        double sum = 0.0;
        for (std::uint32_t j = 0; j < tokens_; ++j) sum += at(l, h, i, j);
        worst = std::max(worst, std::abs(sum - 1.0));
      }
  return worst;
}

double AttentionTensor::max_above_diagonal() const {
  double worst = 0.0;
  for (std::uint32_t l = 0; l < layers_; ++l)
    for (std::uint32_t h = 0; h < heads_; ++h)
      for (std::uint32_t i = 0; i < tokens_; ++i)
        for (std::uint32_t j = i + 1; j < tokens_; ++j)
          worst = std::max(worst, static_cast<double>(std::abs(at(l, h, i, j))));
  return worst;
}

std::string to_string(TraceKind kind) {
  switch (kind) {
    case TraceKind::LastToken: return "last_token";
    case TraceKind::HeadPooled: return "head_pooled";
    case TraceKind::CrossHypernode: return "cross_hypernode";
    case TraceKind::CrossPooled: return "cross_pooled";
    case TraceKind::RankPermuted: return "rank_permuted";
  }
  return "unknown";
}

bool is_pooled(TraceKind kind) {
  return kind == TraceKind::HeadPooled || kind == TraceKind::CrossPooled ||
         kind == TraceKind::RankPermuted;
}

SimplifiedAttention::SimplifiedAttention(TraceKind kind, std::uint32_t layers,
                                         std::uint32_t heads, std::uint32_t width,
                                         std::uint64_t example_id)
    : kind(kind),
      layers(layers),
      heads(heads),
      width(width),
      values(static_cast<std::size_t>(layers) * heads * width, 0.0f),
      example_id(example_id) {}

}  // namespace mprobe::trace
