#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "curritune/corpus.hpp"
#include "curritune/model.hpp"

namespace curritune {

/// The three per-example difficulty metrics.
enum class Metric { length, attention, loss };

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

/// Which metrics a scoring pass computes. Attention and loss need a model;
/// length is a property of the tokenized example alone.
struct MetricSet {
  bool length = true;
  bool attention = true;
  bool loss = true;

  bool needs_model() const { return attention || loss; }
  bool any() const { return length || attention || loss; }
};

/// Parses a comma-separated subset, e.g. "length,loss".
MetricSet parse_metric_set(std::string_view csv);

/// Difficulty scores for one example. Absent metrics (not requested when the
/// cache was built) are empty optionals. model_fingerprint identifies the
/// checkpoint behind attention/loss; length is model-independent.
struct DifficultyRecord {
  std::int64_t id = 0;
  std::optional<double> length_score;
  std::optional<double> attention_score;
  std::optional<double> loss_score;
  std::string model_fingerprint;
};

/// Token count of the full sequence, answer and <eos> included.
double score_length(const TokenizedExample& example);

/// Mean over layers of the population variance of pooled attention
/// probabilities. The pool for a layer takes every head and every query row
/// at or after answer_start, restricted to the row's causal support
/// (columns <= row); structurally-masked entries never enter the pool.
/// Degenerate single-column rows (probability exactly 1) do count.
double score_attention(const AttentionCapture& capture, std::int32_t answer_start);

/// Answer-segment cross-entropy of a forward result; sum is the headline
/// definition, mean divides by the answer span.
double score_loss(const ForwardResult& result, std::int32_t answer_start,
                  Reduction reduction = Reduction::sum);

enum class ScoreErrorPolicy { abort, skip };

struct ScoreOptions {
  MetricSet metrics;
  Reduction loss_reduction = Reduction::sum;
  /// Worker threads for the per-example forward passes; results are ordered
  /// by example regardless.
  int jobs = 1;
  /// abort: first failing example stops the pass. skip: failing examples are
  /// dropped and reported via *skip_log.
  ScoreErrorPolicy on_error = ScoreErrorPolicy::abort;
  /// Provenance recorded in the cache header.
  std::string tokenizer_digest;
  std::string template_digest;
};

/// A scored dataset plus the settings that produced it, serializable as
/// JSON Lines: one header object, then one row object per example with
/// full-precision (17 significant digit) numbers so reload is exact.
struct ScoreCache {
  struct Header {
    std::string tool_version{kToolVersion};
    std::string tokenizer_digest;
    std::string template_digest;
    std::string model_fingerprint;  // empty for model-free caches
    MetricSet metrics;
    Reduction loss_reduction = Reduction::sum;
    bool length_includes_answer = true;
  };

  Header header;
  std::vector<DifficultyRecord> rows;

  /// Ids strictly increasing, scores present per header.metrics, all finite
  /// and non-negative.
  void validate() const;

  /// Throws unless the cache was scored by the checkpoint with this
  /// fingerprint (model-free caches match anything).
  void expect_fingerprint(const std::string& model_fingerprint) const;

  const DifficultyRecord& row_for(std::int64_t id) const;

  std::string serialize() const;
  static ScoreCache deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static ScoreCache load(const std::filesystem::path& path);
  std::string digest() const { return digest_of(serialize()); }
};

/// Scores every example, one forward pass (with attention capture when
/// needed) per example. model may be null only for length-only passes.
/// Deterministic: row order follows the input order whatever options.jobs is.
ScoreCache score_dataset(const std::vector<TokenizedExample>& examples,
                         const Model* model, const ScoreOptions& options,
                         std::vector<std::string>* skip_log = nullptr);

}  // namespace curritune
