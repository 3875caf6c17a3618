#pragma once

#include "histex/data.hpp"
#include "histex/encoders.hpp"
#include "histex/loss.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace histex {

struct TrainConfig {
  int epochs = 15;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double split_fraction = 0.8;
  std::uint64_t seed = 0;
  LossConfig loss;
  bool augment = true;
  Index embed_dim = 256;
  BackboneKind backbone = BackboneKind::Compact;
  nn::CompactSpec compact;
  /// Optional `image.backbone.*` weights for the residual backbone.
  std::filesystem::path backbone_weights;
  /// Fixed work partition for per-sample backbone passes; results depend on this, not on core count.
  std::size_t lanes = 4;

  void validate() const;
};

/// Pretty-printed JSON echo of every field, as stored in checkpoints.
std::string to_json(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  /// Mean loss over the epoch's gradient batches (train mode, augmented).
  double train_loss = 0.0;
  /// evaluate_loss() on the un-augmented train split after the epoch.
  double train_eval_loss = 0.0;
  double test_loss = 0.0;
  std::size_t epoch_size = 0;
  std::size_t batches = 0;
};

struct Checkpoint {
  std::unique_ptr<DualEncoder> model;
  TrainConfig config;
  std::vector<std::string> gene_names;
  double best_test_loss = 0.0;
  int epoch_of_best = 0;
  std::vector<EpochRecord> history;
};

/// Which pairs were touched by augmentation and by gradient batches during train().
struct TrainTrace {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  std::vector<std::uint32_t> augment_count;
  std::vector<std::uint32_t> gradient_count;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1, split at floor(n * fraction). Throws TooFewPairs when n < 2.
SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed);

std::pair<std::vector<PatchSpotPair>, std::vector<PatchSpotPair>> split_dataset(
    const std::vector<PatchSpotPair>& pairs, double fraction, std::uint64_t seed);

/// Loss of one batch in the given mode plus gradients of every parameter, accumulated into `grads`.
/// Dropout masks are drawn from `rng` (image head first, then spot head).
LossEvaluation batch_gradients(const DualEncoder& model, std::span<const Raster* const> patches,
                               const Matrix& expressions, const LossConfig& loss, Mode mode, nn::DropoutRng* rng,
                               nn::GradBuffer& grads, std::size_t lanes = 1);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full contrastive training run with pair-level split and best-test-loss selection.
/// Throws NonFiniteLoss (message carries epoch and batch index).
Checkpoint train(const TrainConfig& config, const std::vector<PatchSpotPair>& pairs,
                 const std::vector<std::string>& gene_names = {}, TrainTrace* trace = nullptr,
                 const EpochCallback& on_epoch = {});

/// Mean configured loss in eval mode over consecutive batches of `batch_size`
/// (the last, possibly smaller, batch included; batches weighted by size).
double evaluate_loss(const DualEncoder& model, const std::vector<const PatchSpotPair*>& pairs,
                     const LossConfig& loss, int batch_size, std::size_t lanes = 1);
double evaluate_loss(const Checkpoint& checkpoint, const std::vector<PatchSpotPair>& pairs);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// `epoch,train_loss,test_loss`, one row per epoch.
void save_loss_curve(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace histex
