#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <thread>

#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"
#include "mprobe/toylm.hpp"

namespace mprobe::toylm {

void TrainParams::validate() const {
  if (batch_size == 0) fail(ErrorKind::Config, "train: batch_size must be positive");
  if (!(learning_rate >= 0.0)) fail(ErrorKind::Config, "train: learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::Config, "train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    fail(ErrorKind::Config, "train: betas must lie in [0, 1)");
  if (shards == 0) fail(ErrorKind::Config, "train: shards must be positive");
  if (!(grad_clip >= 0.0)) fail(ErrorKind::Config, "train: grad_clip must be >= 0");
}

namespace {

double scheduled_lr(const TrainParams& hp, std::uint64_t step, std::uint64_t total_steps) {
  if (hp.warmup_steps > 0 && step < hp.warmup_steps)
    return hp.learning_rate * static_cast<double>(step + 1) / hp.warmup_steps;
  if (hp.schedule == LrSchedule::Constant) return hp.learning_rate;
  const auto span = std::max<std::uint64_t>(1, total_steps - std::min<std::uint64_t>(total_steps, hp.warmup_steps));
  const double progress = static_cast<double>(step - hp.warmup_steps) / static_cast<double>(span);
  return hp.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

}  // namespace

TrainingLog train(Model& model, const taskgen::Dataset& train_ds, const taskgen::Dataset& dev_ds,
                  const TrainParams& hp, EpochCallback on_epoch, void* user) {
  hp.validate();
  if (train_ds.empty()) fail(ErrorKind::Input, "train: empty training set");
  if (max_length(train_ds) > model.config().max_seq_len)
    fail(ErrorKind::Config, "train: dataset sequences exceed max_seq_len");

  const auto seqs = as_sequences(train_ds);
  const std::size_t n_params = model.params().size();
  std::vector<double> m1(n_params, 0.0), m2(n_params, 0.0);
  AlignedVector<float> grad(n_params);
  std::vector<AlignedVector<float>> shard_grads(hp.shards, AlignedVector<float>(n_params));
  std::vector<double> shard_loss(hp.shards);

  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(hp.seed);

  const std::uint64_t batches_per_epoch = (seqs.size() + hp.batch_size - 1) / hp.batch_size;
  const std::uint64_t total_steps = batches_per_epoch * hp.epochs;

  TrainingLog log;
  std::vector<Sequence> batch;
  for (std::uint32_t epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::uint64_t bi = 0; bi < batches_per_epoch; ++bi) {
      const std::size_t lo = bi * hp.batch_size;
      const std::size_t hi = std::min(seqs.size(), lo + hp.batch_size);
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(seqs[order[i]]);

      // Fixed shard boundaries: identical sums whatever the thread count.
      const std::size_t n = batch.size();
      const std::size_t n_shards = std::min<std::size_t>(hp.shards, n);
      const double scale = 1.0 / static_cast<double>(n);
      auto run_shard = [&](std::size_t s) {
        const std::size_t a = n * s / n_shards, b = n * (s + 1) / n_shards;
        std::fill(shard_grads[s].begin(), shard_grads[s].end(), 0.0f);
        const auto part = std::span<const Sequence>(batch).subspan(a, b - a);
        shard_loss[s] = loss_and_grad(model, part, std::span<float>(shard_grads[s]), scale) *
                        static_cast<double>(b - a);
      };
      const unsigned threads = std::max(1u, std::min<unsigned>(hp.threads, static_cast<unsigned>(n_shards)));
      if (threads == 1) {
        for (std::size_t s = 0; s < n_shards; ++s) run_shard(s);
      } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t)
          pool.emplace_back([&, t] {
            for (std::size_t s = t; s < n_shards; s += threads) run_shard(s);
          });
      }

      double batch_loss = 0.0;
      std::copy(shard_grads[0].begin(), shard_grads[0].end(), grad.begin());
      batch_loss += shard_loss[0];
      for (std::size_t s = 1; s < n_shards; ++s) {
        for (std::size_t i = 0; i < n_params; ++i) grad[i] += shard_grads[s][i];
        batch_loss += shard_loss[s];
      }
      batch_loss /= static_cast<double>(n);
      if (!std::isfinite(batch_loss))
        fail(ErrorKind::Numeric, "train: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", batch " + std::to_string(bi));
      epoch_loss += batch_loss * static_cast<double>(n);

      double clip = 1.0;
      if (hp.grad_clip > 0.0) {
        double sq = 0.0;
        for (float g : grad) sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(sq);
        if (norm > hp.grad_clip) clip = hp.grad_clip / norm;
      }

      const std::uint64_t step = log.steps++;
      const double lr = scheduled_lr(hp, step, total_steps);
      const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step + 1));
      const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step + 1));
      auto params = model.params();
      for (std::size_t i = 0; i < n_params; ++i) {
        const double g = static_cast<double>(grad[i]) * clip;
        m1[i] = hp.beta1 * m1[i] + (1.0 - hp.beta1) * g;
        m2[i] = hp.beta2 * m2[i] + (1.0 - hp.beta2) * g * g;
        const double update = (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + hp.eps) +
                              hp.weight_decay * static_cast<double>(params[i]);
        params[i] = static_cast<float>(static_cast<double>(params[i]) - lr * update);
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_loss / static_cast<double>(seqs.size());
    entry.dev_accuracy = dev_ds.empty() ? 0.0 : evaluate_accuracy(model, dev_ds, {}, hp.threads);
    log.epochs.push_back(entry);
    if (on_epoch) on_epoch(entry, user);
  }
  return log;
}

}  // namespace mprobe::toylm
