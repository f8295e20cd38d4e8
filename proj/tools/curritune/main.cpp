// Command-line front end for the curriculum tuning toolkit. One subcommand
// per pipeline stage: gen-data, init, score, plan, train, eval, compare.
// Exit codes: 0 success, 1 usage error, 2 data/model error, 3 runtime
// failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "curritune/curriculum.hpp"
#include "curritune/difficulty.hpp"
#include "curritune/evalreport.hpp"
#include "curritune/manifest.hpp"
#include "curritune/synthdata.hpp"
#include "curritune/trainer.hpp"

namespace fs = std::filesystem;
using namespace curritune;

namespace {

// ---------------------------------------------------------------------------
// Shared option bundles

struct ModelArgs {
  std::string model_path;
  std::string tokenizer_path;

  void attach(CLI::App* cmd, bool model_required) {
    auto* m = cmd->add_option("--model", model_path, "Model checkpoint (.ckpt)");
    if (model_required) {
      m->required();
    }
    cmd->add_option("--tokenizer", tokenizer_path,
                    "Tokenizer file (default: tokenizer.txt next to --model)");
  }

  fs::path tokenizer_file() const {
    if (!tokenizer_path.empty()) {
      return tokenizer_path;
    }
    if (model_path.empty()) {
      throw DataError("--tokenizer is required when no --model is given");
    }
    return fs::path(model_path).parent_path() / "tokenizer.txt";
  }
};

struct TrainArgs {
  int epochs = 3;
  int batch_size = 8;
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  bool no_clip = false;
  bool no_rescore = false;
  std::uint64_t seed = 0;
  std::string reduction = "sum";

  void attach(CLI::App* cmd, bool with_epochs = true) {
    if (with_epochs) {
      cmd->add_option("--epochs", epochs, "Training epochs")
          ->check(CLI::PositiveNumber);
    }
    cmd->add_option("--batch-size", batch_size, "Examples per optimizer step")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--learning-rate", learning_rate, "Adam learning rate");
    cmd->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    cmd->add_option("--grad-clip", grad_clip, "Global gradient-norm clip");
    cmd->add_flag("--no-grad-clip", no_clip, "Disable gradient clipping");
    cmd->add_flag("--no-rescore", no_rescore,
                  "Keep the initial difficulty order instead of rescoring with "
                  "the epoch-1 weights");
    cmd->add_option("--seed", seed, "Permutation seed");
    cmd->add_option("--reduction", reduction, "Scoring loss reduction")
        ->check(CLI::IsMember({"sum", "mean"}));
  }

  TrainConfig to_config(const Tokenizer& tokenizer, const PromptTemplate& tmpl) const {
    TrainConfig config;
    config.n_epochs = epochs;
    config.batch_size = batch_size;
    config.learning_rate = learning_rate;
    config.weight_decay = weight_decay;
    config.grad_clip = no_clip ? std::nullopt : std::optional<double>(grad_clip);
    config.seed = seed;
    config.rescore_after_epoch1 = !no_rescore;
    config.loss_reduction = parse_reduction(reduction);
    config.tokenizer_digest = tokenizer.digest();
    config.template_digest = tmpl.digest();
    config.validate();
    return config;
  }
};

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    const std::string item = csv.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) {
      out.push_back(item);
    }
    if (comma == std::string::npos) {
      break;
    }
    start = comma + 1;
  }
  return out;
}

// "--task name=path" specs to loaded task sets.
std::vector<TaskSet> load_task_sets(const std::vector<std::string>& specs) {
  std::vector<TaskSet> tasks;
  for (const std::string& spec : specs) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw DataError("task spec must be name=path, got \"" + spec + "\"");
    }
    TaskSet task;
    task.name = spec.substr(0, eq);
    task.items = load_dataset(spec.substr(eq + 1));
    tasks.push_back(std::move(task));
  }
  return tasks;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text_file(out_path, text);
  }
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataCmd {
  std::string out_dir;
  SynthConfig config;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("gen-data",
                                   "Generate the bundled synthetic corpus "
                                   "(copy task plus modadd evaluation items)");
    cmd->add_option("--out-dir", out_dir, "Output directory")
        ->envname("CURRITUNE_OUT_DIR")
        ->required();
    cmd->add_option("--train", config.n_train, "Training records");
    cmd->add_option("--heldout", config.n_heldout, "Held-out records");
    cmd->add_option("--task-items", config.n_task_items, "Items per task set");
    cmd->add_option("--seed", config.seed, "Generator seed");
    cmd->callback([this] { run(); });
  }

  void run() const {
    const SynthBundle bundle = generate_bundle(config);
    const fs::path dir(out_dir);
    save_records_jsonl(dir / "train.jsonl", bundle.train);
    save_records_jsonl(dir / "heldout.jsonl", bundle.heldout);

    Manifest manifest;
    manifest.command = "gen-data";
    manifest.add_option("train", std::to_string(config.n_train));
    manifest.add_option("heldout", std::to_string(config.n_heldout));
    manifest.add_option("task_items", std::to_string(config.n_task_items));
    manifest.add_seed("seed", config.seed);
    manifest.add_output(dir / "train.jsonl");
    manifest.add_output(dir / "heldout.jsonl");
    for (const TaskSet& task : bundle.tasks) {
      const fs::path path = dir / ("task_" + task.name + ".jsonl");
      save_records_jsonl(path, task.items);
      manifest.add_output(path);
    }
    manifest.save_into(dir);
    std::cout << "wrote synthetic corpus to " << dir.string() << "\n";
  }
};

// ---------------------------------------------------------------------------
// init

struct InitCmd {
  std::string data_path;
  std::string out_dir;
  int vocab_size = 192;
  int layers = 2;
  int heads = 4;
  int d_model = 32;
  int d_ff = 96;
  int max_seq = 128;
  std::string precision = "double";
  std::uint64_t seed = 1;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "init", "Train a tokenizer on a dataset and write an initial checkpoint");
    cmd->add_option("--data", data_path, "Training dataset (JSON Lines)")->required();
    cmd->add_option("--out-dir", out_dir, "Output directory")
        ->envname("CURRITUNE_OUT_DIR")
        ->required();
    cmd->add_option("--vocab-size", vocab_size, "Tokenizer vocabulary budget");
    cmd->add_option("--layers", layers, "Transformer blocks");
    cmd->add_option("--heads", heads, "Attention heads");
    cmd->add_option("--d-model", d_model, "Model width");
    cmd->add_option("--d-ff", d_ff, "Feed-forward width");
    cmd->add_option("--max-seq", max_seq, "Context window");
    cmd->add_option("--precision", precision, "Compute precision")
        ->check(CLI::IsMember({"double", "single"}));
    cmd->add_option("--seed", seed, "Initialization seed");
    cmd->callback([this] { run(); });
  }

  void run() const {
    const std::vector<InstructionRecord> records = load_dataset(data_path);
    const PromptTemplate tmpl = default_template();
    const Tokenizer tokenizer = train_tokenizer(records, vocab_size, seed, tmpl);

    ModelConfig config;
    config.n_layers = layers;
    config.n_heads = heads;
    config.d_model = d_model;
    config.d_ff = d_ff;
    config.max_seq = max_seq;
    config.vocab_size = tokenizer.vocab_size();
    config.precision = parse_precision(precision);
    config.validate();

    // Surface window problems now rather than mid-train.
    encode_dataset(records, tmpl, tokenizer, max_seq);

    const Model model = init_model(config, seed);
    const fs::path dir(out_dir);
    tokenizer.save(dir / "tokenizer.txt");
    model.save(dir / "model_init.ckpt");

    Manifest manifest;
    manifest.command = "init";
    manifest.add_option("vocab_size", std::to_string(vocab_size));
    manifest.add_option("layers", std::to_string(layers));
    manifest.add_option("heads", std::to_string(heads));
    manifest.add_option("d_model", std::to_string(d_model));
    manifest.add_option("d_ff", std::to_string(d_ff));
    manifest.add_option("max_seq", std::to_string(max_seq));
    manifest.add_option("precision", precision);
    manifest.add_option("template_digest", tmpl.digest());
    manifest.add_seed("seed", seed);
    manifest.add_input(data_path);
    manifest.add_output(dir / "tokenizer.txt");
    manifest.add_output(dir / "model_init.ckpt");
    manifest.save_into(dir);
    std::cout << "tokenizer vocab " << tokenizer.vocab_size() << ", model "
              << model.n_params() << " parameters, fingerprint " << model.fingerprint()
              << "\n";
  }
};

// ---------------------------------------------------------------------------
// score

struct ScoreCmd {
  std::string data_path;
  ModelArgs model_args;
  std::string out_path;
  std::string metrics = "length,attention,loss";
  std::string reduction = "sum";
  int jobs = 1;
  int max_seq = 0;  // 0: take the model's window
  bool skip_errors = false;

  void attach(CLI::App& app) {
    auto* cmd =
        app.add_subcommand("score", "Compute per-example difficulty scores");
    cmd->add_option("--data", data_path, "Dataset (JSON Lines)")->required();
    model_args.attach(cmd, /*model_required=*/false);
    cmd->add_option("--out", out_path, "Score cache file to write")->required();
    cmd->add_option("--metrics", metrics,
                    "Comma-separated subset of length,attention,loss");
    cmd->add_option("--reduction", reduction, "Loss reduction")
        ->check(CLI::IsMember({"sum", "mean"}));
    cmd->add_option("--jobs", jobs, "Parallel scoring workers")
        ->envname("CURRITUNE_JOBS");
    cmd->add_option("--max-seq", max_seq,
                    "Context window for model-free scoring (default: the model's)");
    cmd->add_flag("--skip-errors", skip_errors,
                  "Drop unscorable examples instead of aborting");
    cmd->callback([this] { run(); });
  }

  void run() const {
    ScoreOptions options;
    options.metrics = parse_metric_set(metrics);
    options.loss_reduction = parse_reduction(reduction);
    options.jobs = jobs;
    options.on_error =
        skip_errors ? ScoreErrorPolicy::skip : ScoreErrorPolicy::abort;
    if (options.metrics.needs_model() && model_args.model_path.empty()) {
      if (options.metrics.attention) {
        throw DataError("attention scoring requires a model");
      }
      throw DataError("loss scoring requires a model");
    }

    std::optional<Model> model;
    if (!model_args.model_path.empty()) {
      model = Model::load(model_args.model_path);
    }
    const Tokenizer tokenizer = Tokenizer::load(model_args.tokenizer_file());
    const PromptTemplate tmpl = default_template();
    options.tokenizer_digest = tokenizer.digest();
    options.template_digest = tmpl.digest();

    const int window =
        max_seq > 0 ? max_seq
                    : (model ? model->config().max_seq
                             : std::numeric_limits<std::int32_t>::max());
    const std::vector<InstructionRecord> records = load_dataset(data_path);
    const std::vector<TokenizedExample> examples =
        encode_dataset(records, tmpl, tokenizer, window);

    std::vector<std::string> skip_log;
    const ScoreCache cache =
        score_dataset(examples, model ? &*model : nullptr, options, &skip_log);
    for (const std::string& line : skip_log) {
      std::cerr << "skipped " << line << "\n";
    }
    cache.save(out_path);

    Manifest manifest;
    manifest.command = "score";
    manifest.add_option("metrics", metrics);
    manifest.add_option("reduction", reduction);
    manifest.add_option("jobs", std::to_string(jobs));
    manifest.add_input(data_path);
    if (model) {
      manifest.add_input(model_args.model_path);
    }
    manifest.add_input(model_args.tokenizer_file());
    manifest.add_output(out_path);
    manifest.save_into(fs::path(out_path).parent_path());
    std::cout << "scored " << cache.rows.size() << " examples -> " << out_path
              << "\n";
  }
};

// ---------------------------------------------------------------------------
// plan

struct PlanCmd {
  std::string cache_path;
  std::string model_path;
  std::string policy = "random";
  std::string direction = "easy_to_hard";
  int epochs = 3;
  std::uint64_t seed = 0;
  std::string out_path;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("plan", "Build per-epoch training orders");
    cmd->add_option("--cache", cache_path, "Score cache from `score`")->required();
    cmd->add_option("--model", model_path,
                    "Verify the cache fingerprint against this checkpoint");
    cmd->add_option("--policy", policy, "Ordering policy")
        ->check(CLI::IsMember({"random", "length", "attention", "loss"}));
    cmd->add_option("--direction", direction, "Sort direction")
        ->check(CLI::IsMember({"easy_to_hard", "hard_to_easy"}));
    cmd->add_option("--epochs", epochs, "Epoch count")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "Permutation seed");
    cmd->add_option("--out", out_path, "Plan file to write")->required();
    cmd->callback([this] { run(); });
  }

  void run() const {
    const ScoreCache cache = ScoreCache::load(cache_path);
    if (!model_path.empty()) {
      cache.expect_fingerprint(Model::load(model_path).fingerprint());
    }
    const OrderingPolicy ordering{parse_policy_kind(policy),
                                  parse_direction(direction)};
    const CurriculumPlan plan = build_plan(cache, ordering, epochs, seed);
    plan.save(out_path);

    Manifest manifest;
    manifest.command = "plan";
    manifest.add_option("policy", policy);
    manifest.add_option("direction", direction);
    manifest.add_option("epochs", std::to_string(epochs));
    manifest.add_seed("seed", seed);
    manifest.add_input(cache_path);
    manifest.add_output(out_path);
    manifest.save_into(fs::path(out_path).parent_path());
    std::cout << "plan over " << plan.n_examples << " examples -> " << out_path
              << "\n";
  }
};

// ---------------------------------------------------------------------------
// train

struct TrainCmd {
  std::string data_path;
  ModelArgs model_args;
  std::string out_dir;
  std::string plan_path;
  std::string policy = "random";
  std::string direction = "easy_to_hard";
  TrainArgs train_args;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("train", "Run curriculum-ordered tuning");
    cmd->add_option("--data", data_path, "Training dataset (JSON Lines)")->required();
    model_args.attach(cmd, /*model_required=*/true);
    cmd->add_option("--out-dir", out_dir, "Output directory")
        ->envname("CURRITUNE_OUT_DIR")
        ->required();
    cmd->add_option("--plan", plan_path,
                    "Follow an existing plan instead of building one");
    cmd->add_option("--policy", policy, "Ordering policy")
        ->check(CLI::IsMember({"random", "length", "attention", "loss"}));
    cmd->add_option("--direction", direction, "Sort direction")
        ->check(CLI::IsMember({"easy_to_hard", "hard_to_easy"}));
    train_args.attach(cmd);
    cmd->callback([this] { run(); });
  }

  void run() const {
    const Tokenizer tokenizer = Tokenizer::load(model_args.tokenizer_file());
    const PromptTemplate tmpl = default_template();
    const Model initial = Model::load(model_args.model_path);
    const std::vector<InstructionRecord> records = load_dataset(data_path);
    const std::vector<TokenizedExample> examples =
        encode_dataset(records, tmpl, tokenizer, initial.config().max_seq);

    TrainConfig config = train_args.to_config(tokenizer, tmpl);
    const fs::path dir(out_dir);
    fs::create_directories(dir);

    CurriculumPlan plan;
    if (!plan_path.empty()) {
      plan = CurriculumPlan::load(plan_path);
      config.n_epochs = plan.n_epochs;
      config.seed = plan.seed;
    } else {
      const OrderingPolicy ordering{parse_policy_kind(policy),
                                    parse_direction(direction)};
      ScoreOptions sopts;
      sopts.metrics = MetricSet{true, ordering.kind == PolicyKind::attention,
                                ordering.kind == PolicyKind::loss};
      sopts.loss_reduction = config.loss_reduction;
      sopts.tokenizer_digest = config.tokenizer_digest;
      sopts.template_digest = config.template_digest;
      const ScoreCache scores = score_dataset(
          examples, sopts.metrics.needs_model() ? &initial : nullptr, sopts);
      scores.save(dir / "initial_scores.jsonl");
      plan = build_plan(scores, ordering, config.n_epochs, config.seed);
    }

    const TrainResult result = train(examples, plan, initial, config, &dir);
    result.plan.save(dir / "plan.jsonl");
    result.log.save(dir / "runlog.jsonl");
    if (result.rescore_cache) {
      result.rescore_cache->save(dir / "rescore_cache.jsonl");
    }

    Manifest manifest;
    manifest.command = "train";
    manifest.add_option("policy",
                        std::string(policy_kind_name(result.plan.policy.kind)));
    manifest.add_option("direction",
                        std::string(direction_name(result.plan.policy.direction)));
    manifest.add_option("epochs", std::to_string(config.n_epochs));
    manifest.add_option("batch_size", std::to_string(config.batch_size));
    manifest.add_option("learning_rate", format_g17(config.learning_rate));
    manifest.add_option("weight_decay", format_g17(config.weight_decay));
    manifest.add_option("grad_clip",
                        config.grad_clip ? format_g17(*config.grad_clip) : "none");
    manifest.add_option("rescore_after_epoch1",
                        config.rescore_after_epoch1 ? "true" : "false");
    manifest.add_option("loss_reduction",
                        std::string(reduction_name(config.loss_reduction)));
    manifest.add_seed("seed", config.seed);
    manifest.add_input(data_path);
    manifest.add_input(model_args.model_path);
    manifest.add_input(model_args.tokenizer_file());
    manifest.add_output(dir / "plan.jsonl");
    manifest.add_output(dir / "runlog.jsonl");
    for (const EpochRecord& epoch : result.log.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch.epoch);
      manifest.add_output(dir / name);
    }
    if (result.rescore_cache) {
      manifest.add_output(dir / "rescore_cache.jsonl");
    }
    if (plan_path.empty()) {
      manifest.add_output(dir / "initial_scores.jsonl");
    }
    manifest.save_into(dir);

    const EpochRecord& last = result.log.epochs.back();
    std::cout << "trained " << config.n_epochs << " epoch(s); final mean loss "
              << format_fixed(last.mean_loss, 4) << ", checkpoint "
              << last.checkpoint_digest << "\n";
  }
};

// ---------------------------------------------------------------------------
// eval

struct EvalCmd {
  ModelArgs model_args;
  std::string heldout_path;
  std::vector<std::string> task_specs;
  std::string out_path;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "eval", "Evaluate a checkpoint: held-out perplexity and task accuracy");
    model_args.attach(cmd, /*model_required=*/true);
    cmd->add_option("--heldout", heldout_path, "Held-out dataset (JSON Lines)")
        ->required();
    cmd->add_option("--task", task_specs,
                    "Accuracy task as name=path (repeatable)");
    cmd->add_option("--out", out_path, "Report file (default: stdout)");
    cmd->callback([this] { run(); });
  }

  void run() const {
    const Model model = Model::load(model_args.model_path);
    const Tokenizer tokenizer = Tokenizer::load(model_args.tokenizer_file());
    const PromptTemplate tmpl = default_template();
    const EvalSuite suite =
        build_suite(load_dataset(heldout_path), load_task_sets(task_specs), tmpl,
                    tokenizer, model.config().max_seq);
    const MetricRow row = evaluate(model, tokenizer, suite);

    nlohmann::ordered_json report;
    report["model_fingerprint"] = model.fingerprint();
    report["perplexity"] = row.perplexity;
    nlohmann::ordered_json tasks = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < suite.tasks.size(); ++i) {
      tasks[suite.tasks[i].name] = row.task_accuracy[i];
    }
    report["task_accuracy"] = tasks;
    emit(report.dump(2) + "\n", out_path);

    if (!out_path.empty()) {
      Manifest manifest;
      manifest.command = "eval";
      manifest.add_input(model_args.model_path);
      manifest.add_input(model_args.tokenizer_file());
      manifest.add_input(heldout_path);
      manifest.add_output(out_path);
      manifest.save_into(fs::path(out_path).parent_path());
    }
  }
};

// ---------------------------------------------------------------------------
// compare

struct CompareCmd {
  std::string data_path;
  std::string heldout_path;
  std::vector<std::string> task_specs;
  ModelArgs model_args;
  std::string policies = "random,attention,loss,length";
  std::string epochs_list = "1,2,3";
  std::string direction = "easy_to_hard";
  TrainArgs train_args;
  int jobs = 1;
  std::string format = "markdown";
  std::string out_path;
  std::string out_dir;
  bool allow_partial = false;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "compare", "Train the (epochs x policy) grid and render the results table");
    cmd->add_option("--data", data_path, "Training dataset (JSON Lines)")->required();
    cmd->add_option("--heldout", heldout_path, "Held-out dataset (JSON Lines)")
        ->required();
    cmd->add_option("--task", task_specs, "Accuracy task as name=path (repeatable)")
        ->required();
    model_args.attach(cmd, /*model_required=*/true);
    cmd->add_option("--policies", policies, "Comma-separated ordering policies");
    cmd->add_option("--epochs-list", epochs_list, "Comma-separated epoch counts");
    cmd->add_option("--direction", direction, "Sort direction")
        ->check(CLI::IsMember({"easy_to_hard", "hard_to_easy"}));
    train_args.attach(cmd, /*with_epochs=*/false);
    cmd->add_option("--jobs", jobs, "Parallel cell workers")
        ->envname("CURRITUNE_JOBS");
    cmd->add_option("--format", format, "Grid format")
        ->check(CLI::IsMember({"markdown", "csv"}));
    cmd->add_option("--out", out_path, "Grid file (default: stdout)");
    cmd->add_option("--out-dir", out_dir,
                    "Directory for per-cell checkpoints, plans and logs")
        ->envname("CURRITUNE_OUT_DIR");
    cmd->add_flag("--allow-partial", allow_partial,
                  "Emit the grid even if some cells fail");
    cmd->callback([this] { run(); });
  }

  void run() const {
    const Tokenizer tokenizer = Tokenizer::load(model_args.tokenizer_file());
    const PromptTemplate tmpl = default_template();
    const Model initial = Model::load(model_args.model_path);
    const std::vector<InstructionRecord> train_records = load_dataset(data_path);
    const std::vector<TokenizedExample> examples =
        encode_dataset(train_records, tmpl, tokenizer, initial.config().max_seq);
    const EvalSuite suite =
        build_suite(load_dataset(heldout_path), load_task_sets(task_specs), tmpl,
                    tokenizer, initial.config().max_seq, &train_records);

    CompareConfig config;
    config.policies.clear();
    for (const std::string& p : split_csv(policies)) {
      config.policies.push_back(parse_policy_kind(p));
    }
    config.epoch_counts.clear();
    for (const std::string& e : split_csv(epochs_list)) {
      try {
        config.epoch_counts.push_back(std::stoi(e));
      } catch (const std::exception&) {
        throw DataError("bad epoch count \"" + e + "\" in --epochs-list");
      }
    }
    config.train = train_args.to_config(tokenizer, tmpl);
    config.direction = parse_direction(direction);
    config.jobs = jobs;
    config.allow_partial = allow_partial;
    if (!out_dir.empty()) {
      config.out_dir = fs::path(out_dir);
      fs::create_directories(*config.out_dir);
    }

    const ResultsGrid grid =
        run_comparison(examples, suite, initial, tokenizer, config);
    const std::string text = render_grid(grid, parse_grid_format(format));
    emit(text, out_path);

    if (!out_dir.empty()) {
      Manifest manifest;
      manifest.command = "compare";
      manifest.add_option("policies", policies);
      manifest.add_option("epochs_list", epochs_list);
      manifest.add_option("format", format);
      manifest.add_option("jobs", std::to_string(jobs));
      manifest.add_seed("seed", train_args.seed);
      manifest.add_input(data_path);
      manifest.add_input(heldout_path);
      manifest.add_input(model_args.model_path);
      manifest.add_input(model_args.tokenizer_file());
      if (!out_path.empty()) {
        manifest.add_output(out_path);
      }
      manifest.save_into(fs::path(out_dir));
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curriculum-ordered instruction tuning on a small transformer"};
  app.set_config("--config", "", "Read options from a config file");
  app.require_subcommand(1);

  GenDataCmd gen_data;
  InitCmd init;
  ScoreCmd score;
  PlanCmd plan;
  TrainCmd train;
  EvalCmd eval;
  CompareCmd compare;
  gen_data.attach(app);
  init.attach(app);
  score.attach(app);
  plan.attach(app);
  train.attach(app);
  eval.attach(app);
  compare.attach(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version exit clean, usage errors as 1
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
