#include "curritune/evalreport.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>
#include <unordered_set>

#include <json.hpp>

namespace curritune {

namespace {

// Content identity of a record; ids are per-file positions, so held-out /
// train disjointness has to be about content.
std::string content_key(const InstructionRecord& r) {
  std::string key;
  key.reserve(r.instruction.size() + r.input.size() + r.output.size() + 2);
  key += r.instruction;
  key.push_back('\x1f');
  key += r.input;
  key.push_back('\x1f');
  key += r.output;
  return key;
}

constexpr double kAverageTolerance = 0.005 + 1e-9;

}  // namespace

EvalSuite build_suite(const std::vector<InstructionRecord>& held_out,
                      const std::vector<TaskSet>& task_sets,
                      const PromptTemplate& tmpl, const Tokenizer& tokenizer,
                      int max_seq,
                      const std::vector<InstructionRecord>* train_records) {
  EvalSuite suite;
  if (train_records != nullptr) {
    std::unordered_set<std::string> train_keys;
    train_keys.reserve(train_records->size());
    for (const InstructionRecord& r : *train_records) {
      train_keys.insert(content_key(r));
    }
    for (const InstructionRecord& r : held_out) {
      if (train_keys.count(content_key(r)) != 0) {
        throw DataError("held-out record " + std::to_string(r.id) +
                        " duplicates a training record");
      }
    }
  }
  suite.held_out = encode_dataset(held_out, tmpl, tokenizer, max_seq);
  for (const TaskSet& task : task_sets) {
    if (task.items.empty()) {
      throw DataError("task set \"" + task.name + "\" is empty");
    }
    EvalSuite::Task t;
    t.name = task.name;
    t.items = encode_dataset(task.items, tmpl, tokenizer, max_seq);
    t.expected.reserve(task.items.size());
    for (const InstructionRecord& r : task.items) {
      t.expected.push_back(r.output);
    }
    suite.tasks.push_back(std::move(t));
  }
  return suite;
}

std::vector<std::int32_t> greedy_decode(const Model& model,
                                        std::span<const std::int32_t> prefix,
                                        int max_new) {
  std::vector<std::int32_t> seq(prefix.begin(), prefix.end());
  std::vector<std::int32_t> out;
  const int max_seq = model.config().max_seq;
  for (int i = 0; i < max_new; ++i) {
    if (static_cast<int>(seq.size()) >= max_seq) {
      break;
    }
    const ForwardResult r = model.forward(seq, false);
    const int last = r.seq_len - 1;
    std::int32_t best = 0;
    double best_v = r.logit(last, 0);
    for (std::int32_t v = 1; v < r.vocab; ++v) {
      const double lv = r.logit(last, v);
      if (lv > best_v) {  // strict: ties keep the lowest id
        best_v = lv;
        best = v;
      }
    }
    if (best == Tokenizer::kEosId) {
      break;
    }
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

MetricRow evaluate(const Model& model, const Tokenizer& tokenizer,
                   const EvalSuite& suite) {
  if (suite.held_out.empty()) {
    throw DataError("evaluation suite is empty");
  }
  MetricRow row;
  double total_nll = 0.0;
  std::int64_t total_tokens = 0;
  for (const TokenizedExample& ex : suite.held_out) {
    total_nll += model.masked_sum_loss(ex.tokens, ex.answer_start);
    total_tokens += ex.answer_span();
  }
  row.perplexity = std::exp(total_nll / static_cast<double>(total_tokens));

  for (const EvalSuite::Task& task : suite.tasks) {
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < task.items.size(); ++i) {
      const TokenizedExample& item = task.items[i];
      const std::span<const std::int32_t> prefix(item.tokens.data(),
                                                 static_cast<std::size_t>(item.answer_start));
      const std::vector<std::int32_t> decoded = greedy_decode(
          model, prefix, model.config().max_seq - item.answer_start);
      if (tokenizer.decode(decoded) == task.expected[i]) {
        ++hits;
      }
    }
    row.task_accuracy.push_back(static_cast<double>(hits) /
                                static_cast<double>(task.items.size()));
  }
  return row;
}

// ---------------------------------------------------------------------------
// Grids

void validate_grid(const ResultsGrid& grid) {
  if (grid.rows.empty() || grid.columns.empty()) {
    throw DataError("results grid is empty");
  }
  int base_rows = 0;
  for (const ResultsGrid::Row& row : grid.rows) {
    if (row.cells.size() != grid.columns.size()) {
      throw DataError("results grid: row " + row.method + "/" +
                      std::to_string(row.epochs) + " has " +
                      std::to_string(row.cells.size()) + " cells, expected " +
                      std::to_string(grid.columns.size()));
    }
    double sum = 0.0;
    for (double c : row.cells) {
      sum += c;
    }
    const double mean = sum / static_cast<double>(row.cells.size());
    if (std::abs(row.average - mean) > kAverageTolerance) {
      throw DataError("results grid: average of row " + row.method + "/" +
                      std::to_string(row.epochs) + " (" + format_fixed(row.average, 2) +
                      ") does not match its cells (" + format_fixed(mean, 2) + ")");
    }
    base_rows += row.is_base() ? 1 : 0;
  }
  if (base_rows > 1) {
    throw DataError("results grid: more than one base row");
  }
}

std::vector<std::size_t> best_rows(const ResultsGrid& grid) {
  // Compare at the 2-decimal print precision so rendering and emphasis agree.
  long long best = -1;
  for (const ResultsGrid::Row& row : grid.rows) {
    if (row.is_base()) {
      continue;
    }
    best = std::max(best, std::llround(row.average * 100.0));
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < grid.rows.size(); ++i) {
    if (!grid.rows[i].is_base() && std::llround(grid.rows[i].average * 100.0) == best) {
      out.push_back(i);
    }
  }
  return out;
}

GridFormat parse_grid_format(std::string_view name) {
  if (name == "markdown" || name == "md") return GridFormat::markdown;
  if (name == "csv") return GridFormat::csv;
  throw DataError("unknown grid format: " + std::string(name));
}

std::string render_grid(const ResultsGrid& grid, GridFormat format) {
  validate_grid(grid);
  const std::vector<std::size_t> best = best_rows(grid);
  auto is_best = [&](std::size_t i) {
    return std::find(best.begin(), best.end(), i) != best.end();
  };
  const bool has_ppl = std::any_of(grid.rows.begin(), grid.rows.end(),
                                   [](const auto& r) { return r.perplexity.has_value(); });

  std::string out;
  if (format == GridFormat::markdown) {
    out += "| Epochs | Method | Average |";
    for (const std::string& c : grid.columns) {
      out += " " + c + " |";
    }
    if (has_ppl) {
      out += " Perplexity |";
    }
    out += "\n|---|---|---|";
    for (std::size_t i = 0; i < grid.columns.size(); ++i) {
      out += "---|";
    }
    if (has_ppl) {
      out += "---|";
    }
    out += "\n";
    for (std::size_t i = 0; i < grid.rows.size(); ++i) {
      const ResultsGrid::Row& row = grid.rows[i];
      out += "| " + (row.is_base() ? std::string("-") : std::to_string(row.epochs)) +
             " | " + row.method + " | ";
      const std::string avg = format_fixed(row.average, 2);
      out += is_best(i) ? "**" + avg + "**" : avg;
      out += " |";
      for (double c : row.cells) {
        out += " " + format_fixed(c, 2) + " |";
      }
      if (has_ppl) {
        out += row.perplexity ? " " + format_fixed(*row.perplexity, 2) + " |" : " - |";
      }
      out += "\n";
    }
  } else {
    out += "epochs,method,average";
    for (const std::string& c : grid.columns) {
      out += "," + c;
    }
    if (has_ppl) {
      out += ",perplexity";
    }
    out += ",best\n";
    for (std::size_t i = 0; i < grid.rows.size(); ++i) {
      const ResultsGrid::Row& row = grid.rows[i];
      out += (row.is_base() ? std::string("-") : std::to_string(row.epochs)) + "," +
             row.method + "," + format_fixed(row.average, 2);
      for (double c : row.cells) {
        out += "," + format_fixed(c, 2);
      }
      if (has_ppl) {
        out += row.perplexity ? "," + format_fixed(*row.perplexity, 2) : ",-";
      }
      out += is_best(i) ? ",1\n" : ",0\n";
    }
  }
  return out;
}

ResultsGrid load_grid_fixture(const std::filesystem::path& path) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("grid fixture " + path.string() + ": malformed JSON: " + e.what());
  }
  ResultsGrid grid;
  grid.caption = obj.value("caption", "");
  grid.columns = obj.at("columns").get<std::vector<std::string>>();
  for (const auto& r : obj.at("rows")) {
    ResultsGrid::Row row;
    row.epochs = r.at("epochs").get<int>();
    row.method = r.at("method").get<std::string>();
    row.average = r.at("average").get<double>();
    row.cells = r.at("cells").get<std::vector<double>>();
    if (r.contains("perplexity")) {
      row.perplexity = r["perplexity"].get<double>();
    }
    grid.rows.push_back(std::move(row));
  }
  validate_grid(grid);
  return grid;
}

// ---------------------------------------------------------------------------
// run_comparison

ResultsGrid run_comparison(const std::vector<TokenizedExample>& train_examples,
                           const EvalSuite& suite, const Model& initial,
                           const Tokenizer& tokenizer, const CompareConfig& config) {
  if (train_examples.empty()) {
    throw DataError("comparison needs a non-empty training set");
  }
  if (suite.tasks.empty()) {
    throw DataError("comparison needs at least one task set");
  }
  if (config.policies.empty() || config.epoch_counts.empty()) {
    throw DataError("comparison needs at least one policy and one epoch count");
  }

  // Requested policies in the canonical row order.
  std::vector<PolicyKind> policies;
  for (PolicyKind kind : {PolicyKind::random, PolicyKind::attention, PolicyKind::loss,
                          PolicyKind::length}) {
    if (std::find(config.policies.begin(), config.policies.end(), kind) !=
        config.policies.end()) {
      policies.push_back(kind);
    }
  }
  std::vector<int> epoch_counts = config.epoch_counts;
  std::sort(epoch_counts.begin(), epoch_counts.end());
  epoch_counts.erase(std::unique(epoch_counts.begin(), epoch_counts.end()),
                     epoch_counts.end());
  if (epoch_counts.front() < 1) {
    throw DataError("epoch counts must be >= 1");
  }

  // One scoring pass with the shared initial model covers every cell's
  // starting plan.
  const bool need_attention =
      std::find(policies.begin(), policies.end(), PolicyKind::attention) != policies.end();
  const bool need_loss =
      std::find(policies.begin(), policies.end(), PolicyKind::loss) != policies.end();
  ScoreOptions sopts;
  sopts.metrics = MetricSet{true, need_attention, need_loss};
  sopts.loss_reduction = config.train.loss_reduction;
  sopts.tokenizer_digest = config.train.tokenizer_digest;
  sopts.template_digest = config.train.template_digest;
  const ScoreCache initial_scores = score_dataset(
      train_examples, sopts.metrics.needs_model() ? &initial : nullptr, sopts);

  struct Cell {
    int epochs = 0;
    PolicyKind kind = PolicyKind::random;
    std::string label;
  };
  std::vector<Cell> cells;
  for (int epochs : epoch_counts) {
    if (epochs == 1) {
      // All policies share the seeded random first epoch, so one run covers
      // every epoch-1 cell.
      cells.push_back({1, PolicyKind::random, "random"});
    } else {
      for (PolicyKind kind : policies) {
        cells.push_back({epochs, kind, std::string(policy_kind_name(kind))});
      }
    }
  }

  std::vector<ResultsGrid::Row> rows(cells.size());
  std::vector<std::string> failures(cells.size());

  auto run_cell = [&](std::size_t index) {
    const Cell& cell = cells[index];
    try {
      TrainConfig tc = config.train;
      tc.n_epochs = cell.epochs;
      const OrderingPolicy policy{cell.kind, config.direction};
      const CurriculumPlan plan =
          build_plan(initial_scores, policy, cell.epochs, tc.seed);

      std::filesystem::path cell_dir;
      const std::filesystem::path* ckpt_dir = nullptr;
      if (config.out_dir) {
        cell_dir = *config.out_dir /
                   ("cell_" + cell.label + "_" + std::to_string(cell.epochs));
        std::filesystem::create_directories(cell_dir);
        ckpt_dir = &cell_dir;
      }

      TrainResult result = train(train_examples, plan, initial, tc, ckpt_dir);
      if (config.out_dir) {
        result.plan.save(cell_dir / "plan.jsonl");
        result.log.save(cell_dir / "runlog.jsonl");
        if (result.rescore_cache) {
          result.rescore_cache->save(cell_dir / "rescore_cache.jsonl");
        }
      }

      const MetricRow metrics = evaluate(result.model, tokenizer, suite);
      ResultsGrid::Row row;
      row.epochs = cell.epochs;
      row.method = cell.label;
      double sum = 0.0;
      for (double acc : metrics.task_accuracy) {
        row.cells.push_back(acc * 100.0);
        sum += acc * 100.0;
      }
      row.average = sum / static_cast<double>(row.cells.size());
      row.perplexity = metrics.perplexity;
      rows[index] = std::move(row);
    } catch (const std::exception& e) {
      failures[index] = e.what();
    }
  };

  const int jobs = std::max(1, config.jobs);
  if (jobs == 1 || cells.size() < 2) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      run_cell(i);
    }
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
        run_cell(i);
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(jobs), cells.size());
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back(worker);
    }
    for (std::thread& t : pool) {
      t.join();
    }
  }

  ResultsGrid grid;
  for (const EvalSuite::Task& task : suite.tasks) {
    grid.columns.push_back(task.name);
  }
  std::string failure_report;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!failures[i].empty()) {
      if (!failure_report.empty()) {
        failure_report += "; ";
      }
      failure_report += "cell " + cells[i].label + "/" +
                        std::to_string(cells[i].epochs) + " epochs: " + failures[i];
      continue;
    }
    grid.rows.push_back(std::move(rows[i]));
  }
  if (!failure_report.empty() && !config.allow_partial) {
    throw DataError("comparison failed: " + failure_report);
  }

  const MetricRow base = evaluate(initial, tokenizer, suite);
  ResultsGrid::Row base_row;
  base_row.epochs = 0;
  base_row.method = "base";
  double sum = 0.0;
  for (double acc : base.task_accuracy) {
    base_row.cells.push_back(acc * 100.0);
    sum += acc * 100.0;
  }
  base_row.average = sum / static_cast<double>(base_row.cells.size());
  base_row.perplexity = base.perplexity;
  grid.rows.push_back(std::move(base_row));

  validate_grid(grid);
  return grid;
}

}  // namespace curritune
