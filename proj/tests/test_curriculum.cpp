#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "curritune/common.hpp"
#include "curritune/curriculum.hpp"
#include "testutil.hpp"

using namespace curritune;

namespace {

ScoreCache cache_with(const std::vector<double>& lengths,
                      const std::vector<double>& attentions,
                      const std::vector<double>& losses) {
  ScoreCache cache;
  cache.header.model_fingerprint = "cafecafecafecafe";
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    DifficultyRecord row;
    row.id = static_cast<std::int64_t>(i);
    row.length_score = lengths[i];
    row.attention_score = attentions[i];
    row.loss_score = losses[i];
    row.model_fingerprint = cache.header.model_fingerprint;
    cache.rows.push_back(row);
  }
  cache.validate();
  return cache;
}

}  // namespace

TEST_CASE("sort keys order each metric the documented way") {
  DifficultyRecord a, b;
  a.id = 0;
  a.length_score = 3;
  a.attention_score = 0.01;
  a.loss_score = 2.0;
  b.id = 1;
  b.length_score = 10;
  b.attention_score = 0.18;
  b.loss_score = 0.5;

  const OrderingPolicy len{PolicyKind::length, SortDirection::easy_to_hard};
  CHECK(sort_key(len, a) < sort_key(len, b));  // shorter first

  const OrderingPolicy loss{PolicyKind::loss, SortDirection::easy_to_hard};
  CHECK(sort_key(loss, b) < sort_key(loss, a));  // lower loss first

  // Concentrated attention (high variance) counts as easy and sorts first.
  const OrderingPolicy att{PolicyKind::attention, SortDirection::easy_to_hard};
  CHECK(sort_key(att, b) < sort_key(att, a));

  const OrderingPolicy att_rev{PolicyKind::attention, SortDirection::hard_to_easy};
  CHECK(sort_key(att_rev, a) < sort_key(att_rev, b));

  const OrderingPolicy rnd{PolicyKind::random, SortDirection::easy_to_hard};
  CHECK(sort_key(rnd, a) == 0.0);
  CHECK(sort_key(rnd, b) == 0.0);

  DifficultyRecord empty;
  CHECK_THROWS_WITH_AS(sort_key(len, empty), doctest::Contains("no length"),
                       DataError);
}

TEST_CASE("policy and direction names round-trip") {
  for (PolicyKind k : {PolicyKind::random, PolicyKind::length, PolicyKind::attention,
                       PolicyKind::loss}) {
    CHECK(parse_policy_kind(policy_kind_name(k)) == k);
  }
  CHECK(parse_direction(direction_name(SortDirection::hard_to_easy)) ==
        SortDirection::hard_to_easy);
  CHECK_THROWS_AS(parse_policy_kind("bogus"), DataError);
  CHECK_THROWS_AS(parse_direction("sideways"), DataError);
}

TEST_CASE("seeded permutations are deterministic and seed-sensitive") {
  const auto a = seeded_permutation(20, 5, 0);
  CHECK(a == seeded_permutation(20, 5, 0));
  CHECK(a != seeded_permutation(20, 5, 1));
  CHECK(a != seeded_permutation(20, 6, 0));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    CHECK(sorted[i] == static_cast<std::int64_t>(i));
  }
  CHECK(seeded_permutation(0, 1, 0).empty());
  CHECK(seeded_permutation(1, 1, 0) == std::vector<std::int64_t>{0});
}

TEST_CASE("sorted epochs order by score with the first epoch random") {
  const ScoreCache cache = cache_with({5, 3, 9}, {0.1, 0.2, 0.3}, {1, 2, 3});
  const OrderingPolicy policy{PolicyKind::length, SortDirection::easy_to_hard};
  const CurriculumPlan plan = build_plan(cache, policy, 3, 11);

  CHECK(plan.epochs[0] == seeded_permutation(3, 11, 0));
  const std::vector<std::int64_t> sorted{1, 0, 2};
  CHECK(plan.epochs[1] == sorted);
  CHECK(plan.epochs[2] == sorted);
  CHECK(plan.ids == std::vector<std::int64_t>{0, 1, 2});
  CHECK(plan.cache_digest == cache.digest());
}

TEST_CASE("ties break by ascending id") {
  const ScoreCache cache = cache_with({7, 7, 4}, {0.1, 0.1, 0.1}, {1, 1, 1});
  const OrderingPolicy policy{PolicyKind::length, SortDirection::easy_to_hard};
  const CurriculumPlan plan = build_plan(cache, policy, 2, 1);
  CHECK(plan.epochs[1] == std::vector<std::int64_t>{2, 0, 1});

  const OrderingPolicy loss{PolicyKind::loss, SortDirection::easy_to_hard};
  CHECK(build_plan(cache, loss, 2, 1).epochs[1] ==
        std::vector<std::int64_t>{0, 1, 2});
}

TEST_CASE("random plans redraw every epoch; one-epoch plans are just the shuffle") {
  const ScoreCache cache = cache_with({2, 3, 4, 5, 6, 7, 8, 9, 10, 11},
                                      std::vector<double>(10, 0.1),
                                      std::vector<double>(10, 1.0));
  const OrderingPolicy rnd{PolicyKind::random, SortDirection::easy_to_hard};
  const CurriculumPlan plan = build_plan(cache, rnd, 3, 21);
  CHECK(plan.epochs[0] == seeded_permutation(10, 21, 0));
  CHECK(plan.epochs[1] == seeded_permutation(10, 21, 1));
  CHECK(plan.epochs[2] == seeded_permutation(10, 21, 2));
  CHECK(plan.epochs[0] != plan.epochs[1]);

  const OrderingPolicy len{PolicyKind::length, SortDirection::easy_to_hard};
  const CurriculumPlan one = build_plan(cache, len, 1, 21);
  CHECK(one.epochs.size() == 1);
  CHECK(one.epochs[0] == plan.epochs[0]);  // shared first epoch across policies
}

TEST_CASE("empty caches and bad epoch counts are rejected") {
  ScoreCache empty;
  const OrderingPolicy rnd{PolicyKind::random, SortDirection::easy_to_hard};
  CHECK_THROWS_WITH_AS(build_plan(empty, rnd, 1, 0),
                       doctest::Contains("empty score cache"), DataError);
  const ScoreCache cache = cache_with({3}, {0.1}, {1});
  CHECK_THROWS_AS(build_plan(cache, rnd, 0, 0), DataError);
}

TEST_CASE("randomized trials hold the plan contract") {
  std::string message;
  const bool ok = testutil::run_plan_trials(250, 2024, &message);
  CHECK_MESSAGE(ok, message);
}

TEST_CASE("plans serialize and reload byte-identically") {
  const ScoreCache cache = cache_with({5, 3, 9, 3}, {0.4, 0.3, 0.2, 0.1},
                                      {2, 1, 0.5, 4});
  const OrderingPolicy policy{PolicyKind::attention, SortDirection::easy_to_hard};
  const CurriculumPlan plan = build_plan(cache, policy, 3, 31);

  const std::string bytes = plan.serialize();
  CHECK(bytes.find("curritune-plan") != std::string::npos);
  const CurriculumPlan back = CurriculumPlan::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.epochs == plan.epochs);
  CHECK(back.ids == plan.ids);
  CHECK(back.policy.kind == plan.policy.kind);
  CHECK(back.seed == plan.seed);

  testutil::TempDir tmp;
  plan.save(tmp / "plan.jsonl");
  CHECK(CurriculumPlan::load(tmp / "plan.jsonl").serialize() == bytes);
}

TEST_CASE("plan validation catches corrupted epochs") {
  const ScoreCache cache = cache_with({5, 3, 9}, {0.3, 0.2, 0.1}, {1, 2, 3});
  const OrderingPolicy policy{PolicyKind::length, SortDirection::easy_to_hard};
  CurriculumPlan plan = build_plan(cache, policy, 2, 3);
  plan.epochs[1][0] = plan.epochs[1][1];  // no longer a permutation
  CHECK_THROWS_AS(plan.validate(), DataError);
}

TEST_CASE("rebuild_sorted_epochs follows fresh scores but keeps epoch one") {
  const ScoreCache cache = cache_with({5, 3, 9}, {0.3, 0.2, 0.1}, {1.0, 2.0, 3.0});
  const OrderingPolicy policy{PolicyKind::loss, SortDirection::easy_to_hard};
  const CurriculumPlan plan = build_plan(cache, policy, 3, 7);
  CHECK(plan.epochs[1] == std::vector<std::int64_t>{0, 1, 2});

  // Fresh pass reverses the loss ranking.
  const ScoreCache fresh = cache_with({5, 3, 9}, {0.3, 0.2, 0.1}, {3.0, 2.0, 1.0});
  const CurriculumPlan rebuilt = rebuild_sorted_epochs(plan, fresh);
  CHECK(rebuilt.epochs[0] == plan.epochs[0]);
  CHECK(rebuilt.epochs[1] == std::vector<std::int64_t>{2, 1, 0});
  CHECK(rebuilt.epochs[2] == std::vector<std::int64_t>{2, 1, 0});
  CHECK(rebuilt.cache_digest == fresh.digest());
  CHECK(rebuilt.seed == plan.seed);

  // Random plans ignore scores entirely.
  const OrderingPolicy rnd{PolicyKind::random, SortDirection::easy_to_hard};
  const CurriculumPlan random_plan = build_plan(cache, rnd, 3, 7);
  CHECK(rebuild_sorted_epochs(random_plan, fresh).epochs == random_plan.epochs);
}

TEST_CASE("rebuild rejects a cache covering different ids") {
  const ScoreCache cache = cache_with({5, 3}, {0.3, 0.2}, {1.0, 2.0});
  const OrderingPolicy policy{PolicyKind::length, SortDirection::easy_to_hard};
  const CurriculumPlan plan = build_plan(cache, policy, 2, 9);

  ScoreCache wrong = cache_with({5, 3, 4}, {0.3, 0.2, 0.1}, {1.0, 2.0, 3.0});
  CHECK_THROWS_WITH_AS(rebuild_sorted_epochs(plan, wrong),
                       doctest::Contains("does not cover"), DataError);

  ScoreCache shifted = cache;
  shifted.rows[1].id = 5;
  CHECK_THROWS_WITH_AS(rebuild_sorted_epochs(plan, shifted),
                       doctest::Contains("does not cover"), DataError);
}
