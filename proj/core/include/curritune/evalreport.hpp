#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "curritune/corpus.hpp"
#include "curritune/trainer.hpp"

namespace curritune {

/// A named accuracy task: instruction records whose outputs are the expected
/// answers under exact-match greedy decoding.
struct TaskSet {
  std::string name;
  std::vector<InstructionRecord> items;
};

/// Everything evaluate() needs: tokenized held-out examples for perplexity
/// and per-task tokenized prompts with expected answer strings.
struct EvalSuite {
  struct Task {
    std::string name;
    std::vector<TokenizedExample> items;  // answer part present but unused
    std::vector<std::string> expected;    // answer text per item
  };

  std::vector<TokenizedExample> held_out;
  std::vector<Task> tasks;
};

/// Tokenizes held-out records and task items. When train_records is given,
/// held-out records whose (instruction, input, output) content duplicates a
/// training record are rejected; ids overlap by construction (both files
/// number from zero), so disjointness is enforced on content.
EvalSuite build_suite(const std::vector<InstructionRecord>& held_out,
                      const std::vector<TaskSet>& task_sets,
                      const PromptTemplate& tmpl, const Tokenizer& tokenizer,
                      int max_seq,
                      const std::vector<InstructionRecord>* train_records = nullptr);

/// Greedily samples up to max_new tokens after the prefix (argmax per step,
/// lowest id on ties), stopping before emitting <eos>. Returns only the new
/// tokens.
std::vector<std::int32_t> greedy_decode(const Model& model,
                                        std::span<const std::int32_t> prefix,
                                        int max_new);

/// One evaluation outcome: pooled answer-token perplexity over the held-out
/// set plus exact-match accuracy per task (fractions in [0, 1]).
struct MetricRow {
  double perplexity = 0.0;
  std::vector<double> task_accuracy;  // aligned with suite.tasks
};

MetricRow evaluate(const Model& model, const Tokenizer& tokenizer,
                   const EvalSuite& suite);

/// The comparison table: per-(epochs, method) scores, a base-model row, an
/// average column over the task columns, optional perplexity column kept out
/// of the average. Values are percentages.
struct ResultsGrid {
  struct Row {
    int epochs = 0;  // 0 marks the base row
    std::string method;
    double average = 0.0;
    std::vector<double> cells;
    std::optional<double> perplexity;

    bool is_base() const { return epochs == 0; }
  };

  std::string caption;
  std::vector<std::string> columns;
  std::vector<Row> rows;
};

/// Checks shape and that every row's average matches the mean of its cells
/// within the 2-decimal rounding convention (0.005 + epsilon).
void validate_grid(const ResultsGrid& grid);

/// Row indexes whose 2-decimal-rounded average is the maximum among
/// non-base rows; ties all count.
std::vector<std::size_t> best_rows(const ResultsGrid& grid);

enum class GridFormat { markdown, csv };
GridFormat parse_grid_format(std::string_view name);

/// Renders the grid with 2-decimal numbers: markdown bolds the best
/// average(s); CSV carries a 0/1 "best" flag column instead.
std::string render_grid(const ResultsGrid& grid, GridFormat format);

/// Reads a results fixture (JSON object with "caption", "columns", "rows")
/// so published tables can be typed in as test data.
ResultsGrid load_grid_fixture(const std::filesystem::path& path);

struct CompareConfig {
  std::vector<PolicyKind> policies{PolicyKind::random, PolicyKind::attention,
                                   PolicyKind::loss, PolicyKind::length};
  std::vector<int> epoch_counts{1, 2, 3};
  TrainConfig train;  // n_epochs is overridden per cell
  SortDirection direction = SortDirection::easy_to_hard;
  /// Parallel cell workers; 1 = sequential.
  int jobs = 1;
  /// Keep going when a cell fails, dropping its row; otherwise the first
  /// failure aborts the grid with the cell named.
  bool allow_partial = false;
  /// When set, each cell leaves its final checkpoint, plan and run log in
  /// out_dir/cell_<method>_<epochs>/.
  std::optional<std::filesystem::path> out_dir;
};

/// Trains one cell per (epochs, policy) from the shared initial model and
/// epoch-1 permutation, evaluates every final checkpoint and the untrained
/// base model, and assembles the grid: epoch-1 rows coincide across policies
/// and appear once (as "random"); the base row comes last. Accuracies and
/// their average are percentages.
ResultsGrid run_comparison(const std::vector<TokenizedExample>& train_examples,
                           const EvalSuite& suite, const Model& initial,
                           const Tokenizer& tokenizer, const CompareConfig& config);

}  // namespace curritune
