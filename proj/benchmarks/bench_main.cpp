// Microbenchmarks for the hot paths: the transformer forward/backward passes,
// tokenizer encoding, attention-variance scoring, and plan construction.

#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "curritune/common.hpp"
#include "curritune/corpus.hpp"
#include "curritune/curriculum.hpp"
#include "curritune/difficulty.hpp"
#include "curritune/model.hpp"
#include "curritune/synthdata.hpp"

using namespace curritune;

namespace {

// The CLI's default model shape.
ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_model = 32;
  cfg.d_ff = 96;
  cfg.max_seq = 128;
  cfg.vocab_size = 192;
  return cfg;
}

std::vector<std::int32_t> random_tokens(int len, int vocab, std::mt19937_64& rng) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(len));
  for (auto& t : out) {
    t = static_cast<std::int32_t>(
        3 + bounded_rand(rng, static_cast<std::uint64_t>(vocab - 3)));
  }
  return out;
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  const Model model(bench_config(), 1);
  std::mt19937_64 rng(7);
  const auto tokens =
      random_tokens(static_cast<int>(state.range(0)), model.config().vocab_size, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(tokens, false));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Arg(128);

static void BM_ForwardWithCapture(benchmark::State& state) {
  const Model model(bench_config(), 1);
  std::mt19937_64 rng(7);
  const auto tokens =
      random_tokens(static_cast<int>(state.range(0)), model.config().vocab_size, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(tokens, true));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardWithCapture)->Arg(64)->Arg(128);

static void BM_AccumulateGrad(benchmark::State& state) {
  Model model(bench_config(), 1);
  std::mt19937_64 rng(7);
  const int len = static_cast<int>(state.range(0));
  const auto tokens = random_tokens(len, model.config().vocab_size, rng);
  const std::int32_t answer_start = len / 2;
  for (auto _ : state) {
    model.zero_grad();
    benchmark::DoNotOptimize(model.accumulate_grad(tokens, answer_start));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AccumulateGrad)->Arg(32)->Arg(64)->Arg(128);

static void BM_TokenizerEncode(benchmark::State& state) {
  SynthConfig scfg;
  scfg.n_train = 128;
  const SynthBundle bundle = generate_bundle(scfg);
  const Tokenizer tokenizer = train_tokenizer(bundle.train, 192, 1);
  const std::string text = render_prompt(bundle.train[0], default_template()).text;
  for (auto _ : state) {
    benchmark::DoNotOptimize(tokenizer.encode(text));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_TokenizerEncode);

static void BM_ScoreAttention(benchmark::State& state) {
  const Model model(bench_config(), 1);
  std::mt19937_64 rng(7);
  const int len = static_cast<int>(state.range(0));
  const auto tokens = random_tokens(len, model.config().vocab_size, rng);
  const ForwardResult fr = model.forward(tokens, true);
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_attention(*fr.capture, len / 2));
  }
}
BENCHMARK(BM_ScoreAttention)->Arg(64)->Arg(128);

static void BM_BuildPlan(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(9);
  ScoreCache cache;
  cache.header.metrics = MetricSet{true, false, false};
  for (std::size_t i = 0; i < n; ++i) {
    DifficultyRecord row;
    row.id = static_cast<std::int64_t>(i);
    row.length_score = static_cast<double>(4 + bounded_rand(rng, 120));
    cache.rows.push_back(row);
  }
  const OrderingPolicy policy{PolicyKind::length, SortDirection::easy_to_hard};
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_plan(cache, policy, 3, 42));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BuildPlan)->Arg(256)->Arg(4096);

BENCHMARK_MAIN();
