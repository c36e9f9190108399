#pragma once

// A small pre-norm decoder-only transformer with hand-written backprop.
//
// Parameters live in one flat vector; `ParamLayout` gives the offsets. The
// order (also the checkpoint order) is:
//
//   tok_emb [V x d], pos_emb [T_max x d],
//   per layer: ln1_g [d], ln1_b [d], w_qkv [3d x d], b_qkv [3d],
//              w_o [d x d], b_o [d], ln2_g [d], ln2_b [d],
//              w_fc [4d x d], b_fc [4d], w_proj [d x 4d], b_proj [d],
//   lnf_g [d], lnf_b [d], w_out [V x d]
//
// Matrices are row-major (out x in); a linear layer computes y = x W^T + b.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <new>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mprobe/attention.hpp"
#include "mprobe/taskgen.hpp"

namespace mprobe::toylm {

/// Cache-line aligned storage. SIMD kernels peel a head off unaligned
/// buffers, which changes the summation order and so the low bits of the
/// result; a fixed alignment keeps runs bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

struct ModelConfig {
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t d_model = 64;
  std::uint32_t vocab_size = taskgen::model_vocab_size(64);
  std::uint32_t max_seq_len = 16;
  std::uint64_t seed = 0;

  std::uint32_t d_head() const { return d_model / n_heads; }
  std::uint32_t d_ff() const { return 4 * d_model; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct PruneMask {
  std::set<std::pair<std::uint32_t, std::uint32_t>> disabled_heads;
  std::set<std::uint32_t> disabled_layers;

  bool layer_disabled(std::uint32_t l) const { return disabled_layers.count(l) != 0; }
  bool head_disabled(std::uint32_t l, std::uint32_t h) const {
    return layer_disabled(l) || disabled_heads.count({l, h}) != 0;
  }
  bool empty() const { return disabled_heads.empty() && disabled_layers.empty(); }
  /// Throws ErrorKind::Input for out-of-range indices.
  void validate(const ModelConfig& cfg) const;
};

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
  std::size_t ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
};

struct ParamLayout {
  std::size_t tok_emb = 0;
  std::size_t pos_emb = 0;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_g = 0;
  std::size_t lnf_b = 0;
  std::size_t w_out = 0;
  std::size_t total = 0;

  explicit ParamLayout(const ModelConfig& cfg);
};

template <typename Scalar>
class Transformer {
 public:
  /// All-zero parameters; use `init_random` for a usable model.
  explicit Transformer(const ModelConfig& cfg);

  /// normal(0, 0.02) for embeddings and weight matrices, zero biases, unit
  /// layer-norm gains. A pure function of cfg (including cfg.seed).
  static Transformer init_random(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<Scalar> params() { return params_; }
  std::span<const Scalar> params() const { return params_; }

  /// Same weights in another precision.
  template <typename Other>
  Transformer<Other> cast() const {
    Transformer<Other> out(cfg_);
    auto dst = out.params();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<Other>(params_[i]);
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  AlignedVector<Scalar> params_;
};

using Model = Transformer<float>;

/// One training / evaluation sequence: the model predicts `target` after the
/// last token.
struct Sequence {
  std::span<const std::uint32_t> tokens;
  std::uint32_t target = 0;
};

struct ForwardRecord {
  std::vector<float> logits;  // vocab-sized, last position
  trace::AttentionTensor attention;
  /// Residual stream before layer 0 and after every layer: (L + 1) x T x d,
  /// filled only when requested.
  std::vector<std::vector<float>> hidden;
  /// Heads whose output was zeroed by the mask; their rows are recorded but
  /// must be excluded from analysis.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> excluded_heads;
};

template <typename Scalar>
ForwardRecord forward(const Transformer<Scalar>& model, std::span<const std::uint32_t> tokens,
                      const PruneMask& mask = {}, bool keep_hidden = false);

/// Last-position logits for a batch, row-major B x V. Sequences of differing
/// length are processed in equal-length groups.
template <typename Scalar>
std::vector<Scalar> batch_logits(const Transformer<Scalar>& model, std::span<const Sequence> batch,
                                 const PruneMask& mask = {});

/// Mean answer-token cross-entropy over `batch`. When `grad` is non-empty the
/// gradient of (grad_scale * summed loss) is accumulated into it.
template <typename Scalar>
double loss_and_grad(const Transformer<Scalar>& model, std::span<const Sequence> batch,
                     std::span<Scalar> grad, double grad_scale);

/// Wraps each example as a Sequence over its tokens and answer.
std::vector<Sequence> as_sequences(const taskgen::Dataset& ds);

/// Longest sequence in a dataset.
std::uint32_t max_length(const taskgen::Dataset& ds);

/// Fraction of examples whose argmax logit equals the answer token.
double evaluate_accuracy(const Model& model, const taskgen::Dataset& ds, const PruneMask& mask = {},
                         unsigned threads = 1);

/// Per-example correctness, in dataset order.
std::vector<bool> predict_correct(const Model& model, const taskgen::Dataset& ds,
                                  const PruneMask& mask = {}, unsigned threads = 1);

// ---------------------------------------------------------------------------
// Training

enum class LrSchedule { Constant, Cosine };

struct TrainParams {
  std::uint32_t epochs = 2;
  std::uint32_t batch_size = 256;
  double learning_rate = 1e-6;
  double weight_decay = 1e-3;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule = LrSchedule::Constant;
  std::uint32_t warmup_steps = 0;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  /// Each batch is cut into this many fixed shards whose gradients are summed
  /// in shard order; the result does not depend on `threads`.
  std::uint32_t shards = 4;
  unsigned threads = 1;

  void validate() const;
};

struct EpochLog {
  std::uint32_t epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  std::uint64_t steps = 0;
  friend bool operator==(const TrainingLog&, const TrainingLog&) = default;
};

/// Optional per-epoch observer (e.g. progress printing).
using EpochCallback = void (*)(const EpochLog&, void* user);

/// AdamW with decoupled weight decay on answer-token cross-entropy. Batch
/// order is a pure function of hp.seed. A NaN loss throws ErrorKind::Numeric
/// naming the epoch and batch.
TrainingLog train(Model& model, const taskgen::Dataset& train_ds, const taskgen::Dataset& dev_ds,
                  const TrainParams& hp, EpochCallback on_epoch = nullptr, void* user = nullptr);

// ---------------------------------------------------------------------------
// Checkpoints: "MPCKPT01", u32 version, u32 config length, config JSON,
// then the flat parameter vector as little-endian f32.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);

/// `max_seq_len` may shrink the positional table; growing it is an error.
Model load_checkpoint(const std::filesystem::path& path,
                      std::optional<std::uint32_t> max_seq_len = std::nullopt);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

}  // namespace mprobe::toylm
