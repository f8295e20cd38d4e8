#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "curritune/model.hpp"
#include "testutil.hpp"

using namespace curritune;

namespace {

// The relative-error floor makes the quotient meaningful for near-zero
// gradients: central differences with h = 1e-4 carry O(h^2) truncation noise,
// so entries below ~1e-3 are compared at that scale instead of amplifying
// rounding dust into spurious relative error.
constexpr double kStep = 1e-4;
constexpr double kFloor = 1e-3;

ModelConfig check_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.max_seq = 16;
  cfg.vocab_size = 32;
  cfg.precision = Precision::f64;
  return cfg;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
  const ModelConfig cfg = check_config();
  std::mt19937_64 rng(31);
  std::vector<std::vector<std::int32_t>> sequences{
      testutil::random_tokens(12, cfg.vocab_size, rng),
      testutil::random_tokens(16, cfg.vocab_size, rng),
  };
  const std::vector<std::int32_t> answer_starts{7, 9};

  const testutil::GradCheckReport report =
      testutil::run_gradient_check(cfg, 17, sequences, answer_starts, kStep, kFloor);
  CHECK(report.params_checked == cfg.param_count());
  CHECK(report.max_rel_error < 1e-4);
  MESSAGE("max relative error ", report.max_rel_error, " over ",
          report.params_checked, " parameters in ", report.seconds, "s");
  CHECK(report.seconds < 60.0);
}

TEST_CASE("range-targeted gradients are exact for the shortest answer span") {
  // answer_start = T-1 scores exactly one target; a second seed guards the
  // boundary handling.
  const ModelConfig cfg = check_config();
  std::mt19937_64 rng(77);
  const int T = 10;
  std::vector<std::vector<std::int32_t>> sequences{
      testutil::random_tokens(T, cfg.vocab_size, rng)};
  const std::vector<std::int32_t> answer_starts{T - 1};

  const testutil::GradCheckReport report =
      testutil::run_gradient_check(cfg, 18, sequences, answer_starts, kStep, kFloor);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("gradient accumulation over a batch equals summed single grads") {
  const ModelConfig cfg = check_config();
  std::mt19937_64 rng(41);
  const auto seq_a = testutil::random_tokens(9, cfg.vocab_size, rng);
  const auto seq_b = testutil::random_tokens(14, cfg.vocab_size, rng);

  Model accum(cfg, 4);
  accum.zero_grad();
  accum.accumulate_grad(seq_a, 4);
  accum.accumulate_grad(seq_b, 6);

  Model single(cfg, 4);
  single.zero_grad();
  single.accumulate_grad(seq_a, 4);
  std::vector<double> first(static_cast<std::size_t>(single.n_params()));
  {
    std::size_t flat = 0;
    for (std::size_t t = 0; t < single.n_tensors(); ++t) {
      for (std::int64_t k = 0; k < single.tensor_info(t).size; ++k) {
        first[flat++] = single.grad(t, k);
      }
    }
  }
  single.zero_grad();
  single.accumulate_grad(seq_b, 6);

  std::size_t flat = 0;
  for (std::size_t t = 0; t < single.n_tensors(); ++t) {
    for (std::int64_t k = 0; k < single.tensor_info(t).size; ++k, ++flat) {
      const double expect = first[flat] + single.grad(t, k);
      CHECK(accum.grad(t, k) ==
            doctest::Approx(expect).epsilon(1e-12).scale(1.0));
    }
  }
}

TEST_CASE("scale_grad and grad_l2norm agree") {
  const ModelConfig cfg = check_config();
  Model model(cfg, 9);
  std::mt19937_64 rng(51);
  model.zero_grad();
  model.accumulate_grad(testutil::random_tokens(12, cfg.vocab_size, rng), 5);
  const double norm = model.grad_l2norm();
  CHECK(norm > 0.0);
  model.scale_grad(0.25);
  CHECK(model.grad_l2norm() == doctest::Approx(norm * 0.25).epsilon(1e-12));
}
