#include "curritune/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

#include <json.hpp>

namespace curritune {

void TrainConfig::validate() const {
  if (n_epochs < 1) {
    throw DataError("train config: n_epochs must be >= 1");
  }
  if (batch_size < 1) {
    throw DataError("train config: batch_size must be >= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw DataError("train config: learning_rate must be positive");
  }
  if (weight_decay < 0.0) {
    throw DataError("train config: weight_decay must be non-negative");
  }
  if (grad_clip && !(*grad_clip > 0.0)) {
    throw DataError("train config: grad_clip must be positive when set");
  }
}

std::string RunLog::serialize() const {
  nlohmann::ordered_json hdr;
  hdr["kind"] = "curritune-runlog";
  hdr["version"] = 1;
  hdr["plan_digest"] = plan_digest;
  std::string out = hdr.dump();
  out.push_back('\n');
  for (const StepRecord& s : steps) {
    std::string ids;
    for (std::size_t i = 0; i < s.example_ids.size(); ++i) {
      if (i > 0) ids.push_back(',');
      ids += std::to_string(s.example_ids[i]);
    }
    out += "{\"step\":" + std::to_string(s.step) +
           ",\"epoch\":" + std::to_string(s.epoch) + ",\"ids\":[" + ids + "]" +
           ",\"answer_tokens\":" + std::to_string(s.answer_tokens) +
           ",\"loss\":" + format_g17(s.loss) +
           ",\"grad_norm\":" + format_g17(s.grad_norm) + "}\n";
  }
  for (const EpochRecord& e : epochs) {
    out += "{\"epoch\":" + std::to_string(e.epoch) +
           ",\"steps\":" + std::to_string(e.steps) +
           ",\"mean_loss\":" + format_g17(e.mean_loss) +
           ",\"wall_seconds\":" + format_fixed(e.wall_seconds, 3) +
           ",\"checkpoint_digest\":\"" + e.checkpoint_digest + "\"}\n";
  }
  return out;
}

void RunLog::save(const std::filesystem::path& path) const {
  write_text_file(path, serialize());
}

TrainResult train(const std::vector<TokenizedExample>& examples,
                  const CurriculumPlan& plan, const Model& initial,
                  const TrainConfig& config,
                  const std::filesystem::path* checkpoint_dir) {
  config.validate();
  plan.validate();
  if (plan.n_epochs != config.n_epochs || plan.seed != config.seed) {
    throw DataError("plan does not match the train config (epochs or seed differ)");
  }
  if (examples.size() != plan.ids.size()) {
    throw DataError("plan does not cover the example set (" +
                    std::to_string(plan.ids.size()) + " planned, " +
                    std::to_string(examples.size()) + " given)");
  }
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].id != plan.ids[i]) {
      throw DataError("plan does not cover the example set (id mismatch at position " +
                      std::to_string(i) + ")");
    }
    if (examples[i].length() > initial.config().max_seq) {
      throw DataError("example " + std::to_string(examples[i].id) +
                      " exceeds the model's context window");
    }
  }

  TrainResult res{initial, RunLog{}, plan, std::nullopt};
  Model& model = res.model;

  AdamWState opt_state;
  AdamWHyper hyper;
  hyper.lr = config.learning_rate;
  hyper.weight_decay = config.weight_decay;

  std::int64_t step = model.step();
  const std::size_t n = examples.size();

  for (int e = 0; e < plan.n_epochs; ++e) {
    if (e == 1 && config.rescore_after_epoch1 &&
        plan.policy.kind != PolicyKind::random) {
      ScoreOptions opts;
      opts.metrics = MetricSet{true, plan.policy.kind == PolicyKind::attention,
                               plan.policy.kind == PolicyKind::loss};
      opts.loss_reduction = config.loss_reduction;
      opts.tokenizer_digest = config.tokenizer_digest;
      opts.template_digest = config.template_digest;
      ScoreCache fresh = score_dataset(examples, &model, opts);
      res.plan = rebuild_sorted_epochs(res.plan, fresh);
      res.rescore_cache = std::move(fresh);
    }

    const auto wall_start = std::chrono::steady_clock::now();
    const std::vector<std::int64_t>& order = res.plan.epochs[static_cast<std::size_t>(e)];
    double epoch_nll = 0.0;
    std::int64_t epoch_tokens = 0;
    std::int64_t epoch_steps = 0;

    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(config.batch_size));
      model.zero_grad();
      double batch_nll = 0.0;
      std::int64_t batch_tokens = 0;
      StepRecord rec;
      rec.epoch = e + 1;
      for (std::size_t i = begin; i < end; ++i) {
        const TokenizedExample& ex = examples[static_cast<std::size_t>(order[i])];
        batch_nll += model.accumulate_grad(ex.tokens, ex.answer_start);
        batch_tokens += ex.answer_span();
        rec.example_ids.push_back(ex.id);
      }
      const double loss = batch_nll / static_cast<double>(batch_tokens);
      if (!std::isfinite(loss)) {
        throw DataError("non-finite loss at step " + std::to_string(step + 1));
      }
      model.scale_grad(1.0 / static_cast<double>(batch_tokens));
      const double norm = model.grad_l2norm();
      if (config.grad_clip && norm > *config.grad_clip) {
        model.scale_grad(*config.grad_clip / norm);
      }
      model.adamw_update(opt_state, hyper);
      ++step;
      model.set_step(step);

      rec.step = step;
      rec.answer_tokens = batch_tokens;
      rec.loss = loss;
      rec.grad_norm = norm;
      res.log.steps.push_back(std::move(rec));
      epoch_nll += batch_nll;
      epoch_tokens += batch_tokens;
      ++epoch_steps;
    }

    EpochRecord er;
    er.epoch = e + 1;
    er.steps = epoch_steps;
    er.mean_loss = epoch_nll / static_cast<double>(epoch_tokens);
    er.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
            .count();
    er.checkpoint_digest = model.fingerprint();
    if (checkpoint_dir != nullptr) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", e + 1);
      model.save(*checkpoint_dir / name);
    }
    res.log.epochs.push_back(std::move(er));
  }

  res.log.plan_digest = res.plan.digest();
  return res;
}

Model checkpoint_roundtrip(const Model& model, const std::filesystem::path& path,
                           std::span<const std::int32_t> probe) {
  model.save(path);
  Model reloaded = Model::load(path);
  const ForwardResult before = model.forward(probe, false);
  const ForwardResult after = reloaded.forward(probe, false);
  const bool same =
      before.logits.size() == after.logits.size() &&
      std::memcmp(before.logits.data(), after.logits.data(),
                  before.logits.size() * sizeof(double)) == 0;
  if (!same) {
    throw Error("checkpoint round-trip changed the forward pass");
  }
  return reloaded;
}

namespace {

std::string describe_shape(const ModelConfig& c) {
  return std::to_string(c.n_layers) + " layers, " + std::to_string(c.n_heads) +
         " heads, d_model " + std::to_string(c.d_model) + ", d_ff " +
         std::to_string(c.d_ff) + ", max_seq " + std::to_string(c.max_seq) +
         ", vocab " + std::to_string(c.vocab_size);
}

}  // namespace

Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Model model = Model::load(path);
  if (!model.config().same_shape(expected)) {
    throw DataError("checkpoint config mismatch: expected " + describe_shape(expected) +
                    " but " + path.string() + " holds " +
                    describe_shape(model.config()));
  }
  return model;
}

}  // namespace curritune
