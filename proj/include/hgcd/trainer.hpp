#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hgcd/data.hpp"
#include "hgcd/losses.hpp"
#include "hgcd/model.hpp"

namespace hgcd {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 200;
  int64_t batch_size = 64;
  LossWeights weights;   // holds warmup_epochs
  LossOptions options;
  uint64_t seed = 42;
  double clip_norm = 0.0;  // 0 = off; global-norm clip for divergence recovery
  bool cosine_lr = false;  // constant lr by default
  ModelConfig model;       // includes the tree depth
  AugmentConfig augment;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  LossBreakdown loss;  // per-epoch means
};

struct TrainState {
  Model model;
  std::vector<std::vector<double>> momentum_buffers;  // parallel to model params
  int epoch = 0;
  uint64_t seed = 0;
  std::vector<EpochStats> history;

  TrainState(ModelConfig cfg, uint64_t seed_);
};

// v <- momentum * v + g; w <- w - lr * v. Parameters with no gradient written
// (disconnected from the loss) are treated as zero-gradient. A non-finite
// gradient aborts the step naming the offending parameter.
void sgd_step(std::vector<Param>& params, std::vector<std::vector<double>>& momentum_buffers,
              double lr, double momentum);

struct TrainResult {
  TrainState state;
  bool diverged = false;
  int diverged_epoch = 0;
  int diverged_step = 0;
  std::string reason;
};

// Called after every completed epoch; wall_ms is diagnostic only and is kept
// out of TrainState so checkpoints stay byte-reproducible.
using EpochCallback =
    std::function<void(const TrainState&, const EpochStats&, double wall_ms)>;

// Full training run: per epoch, make_batches -> forward both heads ->
// warm-up-gated total loss -> backward -> sgd_step. Deterministic under
// cfg.seed. On loss divergence training stops with the last-good parameters
// in the returned state.
TrainResult train(const EmbeddingDataset& ds, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = nullptr);

// Resumes from state.epoch up to cfg.epochs; an interrupted run continued
// this way matches an uninterrupted one exactly.
TrainResult continue_training(TrainState state, const EmbeddingDataset& ds,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr);

// Versioned binary checkpoint: magic "HGCD", format version, length-prefixed
// JSON metadata (model config, epoch, seed, loss history), then each tensor
// as (name, shape, little-endian 64-bit floats). save -> load -> save is
// byte-identical.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace hgcd
