#pragma once

// Attention containers shared by the model and the trace transforms.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mprobe::trace {

/// Post-softmax attention of one forward pass: L x H matrices of T x T,
/// stored layer-major, then head, then row (query), then column (key).
class AttentionTensor {
 public:
  AttentionTensor() = default;
  AttentionTensor(std::uint32_t layers, std::uint32_t heads, std::uint32_t tokens);

  std::uint32_t layers() const { return layers_; }
  std::uint32_t heads() const { return heads_; }
  std::uint32_t tokens() const { return tokens_; }

  float& at(std::uint32_t l, std::uint32_t h, std::uint32_t i, std::uint32_t j) {
    return values_[index(l, h, i, j)];
  }
  float at(std::uint32_t l, std::uint32_t h, std::uint32_t i, std::uint32_t j) const {
    return values_[index(l, h, i, j)];
  }

  std::span<float> matrix(std::uint32_t l, std::uint32_t h);
  std::span<const float> matrix(std::uint32_t l, std::uint32_t h) const;
  std::span<const float> values() const { return values_; }

  /// Largest |row sum - 1| over all rows.
  double max_row_deviation() const;
  /// Largest |a[i][j]| with j > i.
  double max_above_diagonal() const;

 private:
  std::size_t index(std::uint32_t l, std::uint32_t h, std::uint32_t i, std::uint32_t j) const {
    return ((static_cast<std::size_t>(l) * heads_ + h) * tokens_ + i) * tokens_ + j;
  }

  std::uint32_t layers_ = 0;
  std::uint32_t heads_ = 0;
  std::uint32_t tokens_ = 0;
  std::vector<float> values_;
};

enum class TraceKind : std::uint8_t {
  LastToken = 0,       // L x H x T
  HeadPooled = 1,      // L x T
  CrossHypernode = 2,  // L x H x (|S| + 1)
  CrossPooled = 3,     // L x (|S| + 1)
  RankPermuted = 4,    // L x T, in-memory only
};

std::string to_string(TraceKind kind);
bool is_pooled(TraceKind kind);

/// A reduced attention trace: `layers x heads x width` values, layer-major.
/// Pooled kinds have heads == 1.
struct SimplifiedAttention {
  TraceKind kind = TraceKind::LastToken;
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::uint32_t width = 0;
  std::vector<float> values;
  std::uint64_t example_id = 0;
  std::vector<std::string> transforms;

  SimplifiedAttention() = default;
  SimplifiedAttention(TraceKind kind, std::uint32_t layers, std::uint32_t heads,
                      std::uint32_t width, std::uint64_t example_id);

  float& at(std::uint32_t l, std::uint32_t h, std::uint32_t i) {
    return values[(static_cast<std::size_t>(l) * heads + h) * width + i];
  }
  float at(std::uint32_t l, std::uint32_t h, std::uint32_t i) const {
    return values[(static_cast<std::size_t>(l) * heads + h) * width + i];
  }
  std::span<const float> row(std::uint32_t l, std::uint32_t h) const {
    return std::span<const float>(values).subspan((static_cast<std::size_t>(l) * heads + h) * width,
                                                  width);
  }
};

}  // namespace mprobe::trace
