#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "curritune/common.hpp"
#include "curritune/difficulty.hpp"
#include "curritune/trainer.hpp"
#include "testutil.hpp"

using namespace curritune;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_ff = 24;
  cfg.max_seq = 32;
  cfg.vocab_size = 32;
  return cfg;
}

std::vector<TokenizedExample> small_examples(int n, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  std::vector<TokenizedExample> out;
  for (int i = 0; i < n; ++i) {
    TokenizedExample ex;
    ex.id = i;
    const int T = 6 + static_cast<int>(bounded_rand(rng, 10));
    ex.tokens = testutil::random_tokens(T, 32, rng);
    ex.tokens.back() = 1;  // <eos>
    ex.answer_start = static_cast<std::int32_t>(T - 2 - bounded_rand(rng, 3));
    out.push_back(std::move(ex));
  }
  return out;
}

/// One-epoch plan with an explicit visit order.
CurriculumPlan manual_plan(std::vector<std::int64_t> order, std::uint64_t seed) {
  CurriculumPlan plan;
  plan.n_examples = static_cast<std::int64_t>(order.size());
  plan.n_epochs = 1;
  plan.seed = seed;
  plan.policy = {PolicyKind::random, SortDirection::easy_to_hard};
  for (std::int64_t i = 0; i < plan.n_examples; ++i) {
    plan.ids.push_back(i);
  }
  plan.epochs.push_back(std::move(order));
  plan.validate();
  return plan;
}

TrainConfig quiet_config(int epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.n_epochs = epochs;
  cfg.batch_size = 2;
  cfg.learning_rate = 1e-3;
  cfg.seed = seed;
  return cfg;
}

ScoreCache scores_for(const std::vector<TokenizedExample>& examples,
                      const Model& model) {
  return score_dataset(examples, &model, ScoreOptions{});
}

std::vector<double> flat_grads(const Model& model) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(model.n_params()));
  for (std::size_t t = 0; t < model.n_tensors(); ++t) {
    for (std::int64_t k = 0; k < model.tensor_info(t).size; ++k) {
      out.push_back(model.grad(t, k));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("examples are visited in exactly the plan order") {
  const auto examples = small_examples(3, 1);
  const Model initial(small_config(), 1);
  CurriculumPlan plan = manual_plan({2, 0, 1}, 5);

  TrainConfig cfg = quiet_config(1, 5);
  cfg.batch_size = 1;
  const TrainResult res = train(examples, plan, initial, cfg);

  REQUIRE(res.log.steps.size() == 3);
  CHECK(res.log.steps[0].example_ids == std::vector<std::int64_t>{2});
  CHECK(res.log.steps[1].example_ids == std::vector<std::int64_t>{0});
  CHECK(res.log.steps[2].example_ids == std::vector<std::int64_t>{1});
  REQUIRE(res.log.epochs.size() == 1);
  CHECK(res.log.epochs[0].steps == 3);
}

TEST_CASE("batches slice the plan consecutively across epochs") {
  const auto examples = small_examples(5, 2);
  const Model initial(small_config(), 2);
  const ScoreCache cache = scores_for(examples, initial);
  const OrderingPolicy policy{PolicyKind::length, SortDirection::easy_to_hard};
  const CurriculumPlan plan = build_plan(cache, policy, 2, 9);

  TrainConfig cfg = quiet_config(2, 9);
  cfg.rescore_after_epoch1 = false;  // keep the input plan's orders
  const TrainResult res = train(examples, plan, initial, cfg);

  // ceil(5/2) = 3 steps per epoch.
  REQUIRE(res.log.steps.size() == 6);
  std::size_t s = 0;
  for (int e = 0; e < 2; ++e) {
    std::vector<std::int64_t> visited;
    for (int b = 0; b < 3; ++b, ++s) {
      CHECK(res.log.steps[s].epoch == e + 1);
      for (std::int64_t id : res.log.steps[s].example_ids) {
        visited.push_back(id);
      }
    }
    std::vector<std::int64_t> planned;
    for (std::int64_t pos : plan.epochs[static_cast<std::size_t>(e)]) {
      planned.push_back(examples[static_cast<std::size_t>(pos)].id);
    }
    CHECK(visited == planned);
  }
}

TEST_CASE("step loss averages the batch's answer-token losses") {
  const auto examples = small_examples(4, 3);
  const Model initial(small_config(), 3);
  const CurriculumPlan plan = manual_plan({0, 1, 2, 3}, 1);
  TrainConfig cfg = quiet_config(1, 1);
  cfg.batch_size = 2;
  const TrainResult res = train(examples, plan, initial, cfg);

  double nll = 0.0;
  std::int64_t tokens = 0;
  for (int i = 0; i < 2; ++i) {
    nll += initial.masked_sum_loss(examples[static_cast<std::size_t>(i)].tokens,
                                   examples[static_cast<std::size_t>(i)].answer_start);
    tokens += examples[static_cast<std::size_t>(i)].answer_span();
  }
  CHECK(res.log.steps[0].answer_tokens == tokens);
  CHECK(res.log.steps[0].loss ==
        doctest::Approx(nll / static_cast<double>(tokens)).epsilon(1e-12));

  // Epoch mean is answer-token weighted.
  double total_nll = 0.0;
  std::int64_t total_tokens = 0;
  for (const StepRecord& s : res.log.steps) {
    total_nll += s.loss * static_cast<double>(s.answer_tokens);
    total_tokens += s.answer_tokens;
  }
  CHECK(res.log.epochs[0].mean_loss ==
        doctest::Approx(total_nll / static_cast<double>(total_tokens)).epsilon(1e-9));
}

TEST_CASE("training is deterministic run to run") {
  const auto examples = small_examples(8, 4);
  const Model initial(small_config(), 4);
  const ScoreCache cache = scores_for(examples, initial);
  const OrderingPolicy policy{PolicyKind::loss, SortDirection::easy_to_hard};
  const CurriculumPlan plan = build_plan(cache, policy, 2, 13);
  const TrainConfig cfg = quiet_config(2, 13);

  const TrainResult a = train(examples, plan, initial, cfg);
  const TrainResult b = train(examples, plan, initial, cfg);
  CHECK(a.model.fingerprint() == b.model.fingerprint());
  REQUIRE(a.log.steps.size() == b.log.steps.size());
  for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
    CHECK(a.log.steps[i].loss == b.log.steps[i].loss);
    CHECK(a.log.steps[i].grad_norm == b.log.steps[i].grad_norm);
  }
  for (std::size_t e = 0; e < a.log.epochs.size(); ++e) {
    CHECK(a.log.epochs[e].checkpoint_digest == b.log.epochs[e].checkpoint_digest);
  }
  CHECK(a.log.serialize().find("curritune-runlog") != std::string::npos);
}

TEST_CASE("plan and example set must agree before any step runs") {
  const auto examples = small_examples(3, 5);
  const Model initial(small_config(), 5);
  const CurriculumPlan plan = manual_plan({0, 1, 2}, 2);

  TrainConfig cfg = quiet_config(2, 2);  // epochs differ from the plan
  CHECK_THROWS_WITH_AS(train(examples, plan, initial, cfg),
                       doctest::Contains("plan does not match the train config"),
                       DataError);

  cfg = quiet_config(1, 3);  // seed differs
  CHECK_THROWS_WITH_AS(train(examples, plan, initial, cfg),
                       doctest::Contains("plan does not match the train config"),
                       DataError);

  cfg = quiet_config(1, 2);
  const auto fewer = small_examples(2, 5);
  CHECK_THROWS_WITH_AS(train(fewer, plan, initial, cfg),
                       doctest::Contains("does not cover"), DataError);

  auto renamed = examples;
  renamed[1].id = 9;
  CHECK_THROWS_WITH_AS(train(renamed, plan, initial, cfg),
                       doctest::Contains("id mismatch"), DataError);

  auto oversized = examples;
  std::mt19937_64 rng(6);
  oversized[0].tokens = testutil::random_tokens(40, 32, rng);
  CHECK_THROWS_WITH_AS(train(oversized, plan, initial, cfg),
                       doctest::Contains("context window"), DataError);
}

TEST_CASE("non-finite losses abort with the step index") {
  const auto examples = small_examples(2, 7);
  Model initial(small_config(), 7);
  // Poison the final layer-norm gain: every position flows through it, so the
  // NaN is guaranteed to reach the loss on the very first step.
  for (std::size_t i = 0; i < initial.n_tensors(); ++i) {
    if (initial.tensor_info(i).name == "lnf.g") {
      initial.set_param(i, 0, std::numeric_limits<double>::quiet_NaN());
    }
  }
  const CurriculumPlan plan = manual_plan({0, 1}, 1);
  CHECK_THROWS_WITH_AS(train(examples, plan, initial, quiet_config(1, 1)),
                       doctest::Contains("non-finite loss at step 1"), DataError);
}

TEST_CASE("answer masking: context-target gradients split off exactly") {
  // For each example, the all-positions gradient must equal the answer-only
  // gradient plus the context-only gradient: the masked pass contributes
  // nothing from pre-answer prediction targets.
  const ModelConfig cfg = small_config();
  Model model(cfg, 8);
  const auto examples = small_examples(2, 8);

  model.zero_grad();
  for (const auto& ex : examples) {
    model.accumulate_grad(ex.tokens, ex.answer_start);
  }
  const std::vector<double> answer_only = flat_grads(model);

  model.zero_grad();
  for (const auto& ex : examples) {
    model.accumulate_grad_range(ex.tokens, 1, ex.answer_start);
  }
  const std::vector<double> context_only = flat_grads(model);

  model.zero_grad();
  for (const auto& ex : examples) {
    model.accumulate_grad_range(ex.tokens, 1, ex.length());
  }
  const std::vector<double> all_targets = flat_grads(model);

  REQUIRE(answer_only.size() == all_targets.size());
  for (std::size_t i = 0; i < all_targets.size(); ++i) {
    CHECK(all_targets[i] == doctest::Approx(answer_only[i] + context_only[i])
                                .epsilon(1e-9)
                                .scale(1.0));
  }
}

TEST_CASE("rescoring rebuilds sorted epochs from the epoch-one weights") {
  const auto examples = small_examples(6, 9);
  const Model initial(small_config(), 9);
  const ScoreCache cache = scores_for(examples, initial);
  const OrderingPolicy policy{PolicyKind::loss, SortDirection::easy_to_hard};
  const CurriculumPlan plan = build_plan(cache, policy, 2, 17);

  testutil::TempDir tmp;
  TrainConfig cfg = quiet_config(2, 17);
  const std::filesystem::path dir = tmp.path();
  const TrainResult res = train(examples, plan, initial, cfg, &dir);

  REQUIRE(res.rescore_cache.has_value());
  const Model after_epoch1 = Model::load(dir / "epoch_001.ckpt");
  CHECK(res.rescore_cache->header.model_fingerprint == after_epoch1.fingerprint());
  CHECK(res.plan.cache_digest == res.rescore_cache->digest());
  CHECK(res.plan.epochs[0] == plan.epochs[0]);

  // Epoch 2 follows the fresh scores in non-decreasing order.
  const auto& order = res.plan.epochs[1];
  for (std::size_t i = 1; i < order.size(); ++i) {
    const double prev =
        *res.rescore_cache->rows[static_cast<std::size_t>(order[i - 1])].loss_score;
    const double cur =
        *res.rescore_cache->rows[static_cast<std::size_t>(order[i])].loss_score;
    CHECK(prev <= cur);
  }

  // Without rescoring the input plan is followed unchanged.
  cfg.rescore_after_epoch1 = false;
  const TrainResult plain = train(examples, plan, initial, cfg);
  CHECK_FALSE(plain.rescore_cache.has_value());
  CHECK(plain.plan.serialize() == plan.serialize());

  // Random plans never rescore.
  const OrderingPolicy rnd{PolicyKind::random, SortDirection::easy_to_hard};
  const CurriculumPlan random_plan = build_plan(cache, rnd, 2, 17);
  TrainConfig rcfg = quiet_config(2, 17);
  const TrainResult random_res = train(examples, random_plan, initial, rcfg);
  CHECK_FALSE(random_res.rescore_cache.has_value());
}

TEST_CASE("epoch checkpoints land in the target directory and reload") {
  const auto examples = small_examples(4, 10);
  const Model initial(small_config(), 10);
  const CurriculumPlan plan = manual_plan({0, 1, 2, 3}, 3);

  testutil::TempDir tmp;
  const std::filesystem::path dir = tmp.path();
  const TrainResult res = train(examples, plan, initial, quiet_config(1, 3), &dir);
  REQUIRE(std::filesystem::exists(dir / "epoch_001.ckpt"));
  const Model back = Model::load(dir / "epoch_001.ckpt");
  CHECK(back.fingerprint() == res.model.fingerprint());
  CHECK(back.fingerprint() == res.log.epochs[0].checkpoint_digest);
}

TEST_CASE("checkpoint round-trip reproduces the forward pass") {
  const Model model(small_config(), 11);
  std::mt19937_64 rng(11);
  const auto probe = testutil::random_tokens(10, 32, rng);

  testutil::TempDir tmp;
  const Model back = checkpoint_roundtrip(model, tmp / "m.ckpt", probe);
  CHECK(back.fingerprint() == model.fingerprint());
}

TEST_CASE("checkpoints from a different architecture are rejected") {
  const Model model(small_config(), 12);
  testutil::TempDir tmp;
  model.save(tmp / "m.ckpt");

  CHECK(load_checkpoint(tmp / "m.ckpt", small_config()).fingerprint() ==
        model.fingerprint());

  ModelConfig other = small_config();
  other.d_model = 32;
  other.d_ff = 48;
  CHECK_THROWS_WITH_AS(load_checkpoint(tmp / "m.ckpt", other),
                       doctest::Contains("checkpoint config mismatch"), DataError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.n_epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = TrainConfig{};
  cfg.grad_clip = -1.0;
  CHECK_THROWS_AS(cfg.validate(), DataError);
  cfg = TrainConfig{};
  cfg.grad_clip.reset();
  cfg.validate();
}
