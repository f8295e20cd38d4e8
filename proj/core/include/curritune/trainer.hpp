#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "curritune/curriculum.hpp"
#include "curritune/model.hpp"

namespace curritune {

struct TrainConfig {
  int n_epochs = 3;
  int batch_size = 8;
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  /// Global-norm clip; disabled when empty.
  std::optional<double> grad_clip = 1.0;
  /// Seeds the epoch permutations; must match the plan being followed.
  std::uint64_t seed = 0;
  /// After the random first epoch, rescore with the just-trained weights and
  /// rebuild the sorted epochs (no effect on random plans or 1-epoch runs).
  bool rescore_after_epoch1 = true;
  /// Reduction used by the rescoring pass. Training steps always average
  /// over the batch's answer tokens; this field never changes that.
  Reduction loss_reduction = Reduction::sum;
  /// Provenance copied into the rescore cache header.
  std::string tokenizer_digest;
  std::string template_digest;

  void validate() const;
};

/// One optimizer step: the ids visited, the mean per-answer-token loss, and
/// the pre-clip gradient norm.
struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;  // 1-based
  std::vector<std::int64_t> example_ids;
  std::int64_t answer_tokens = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  std::int64_t steps = 0;
  /// Answer-token-weighted mean training loss over the epoch.
  double mean_loss = 0.0;
  double wall_seconds = 0.0;  // diagnostic only; excluded from determinism
  std::string checkpoint_digest;
};

/// Training diary, serializable as JSON Lines (one object per step, then one
/// per epoch). Checkpoints and plans are the reproducible artifacts; the log
/// is diagnostic (wall_seconds varies run to run).
struct RunLog {
  std::string plan_digest;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
};

struct TrainResult {
  Model model;
  RunLog log;
  /// The plan actually followed — differs from the input plan when
  /// rescore_after_epoch1 rebuilt the sorted epochs.
  CurriculumPlan plan;
  /// Rescoring pass output, when one ran.
  std::optional<ScoreCache> rescore_cache;
};

/// Runs instruction tuning over the plan's epochs: examples visited in
/// exactly the plan order, batched consecutively; per step the answer-masked
/// cross-entropy is averaged over the batch's answer tokens, gradients are
/// globally norm-clipped and applied with decoupled-weight-decay Adam.
/// When checkpoint_dir is given, epoch-end checkpoints land there as
/// epoch_NNN.ckpt.
TrainResult train(const std::vector<TokenizedExample>& examples,
                  const CurriculumPlan& plan, const Model& initial,
                  const TrainConfig& config,
                  const std::filesystem::path* checkpoint_dir = nullptr);

/// Saves, reloads, and verifies that the reloaded model reproduces the
/// forward pass on the probe sequence bitwise; returns the reloaded model.
Model checkpoint_roundtrip(const Model& model, const std::filesystem::path& path,
                           std::span<const std::int32_t> probe);

/// Loads a checkpoint and rejects it unless its architecture matches the
/// expected config; resuming from a differently-shaped checkpoint is an
/// error, never a silent reinterpretation.
Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace curritune
