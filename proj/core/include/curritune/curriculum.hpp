#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "curritune/difficulty.hpp"

namespace curritune {

enum class PolicyKind { random, length, attention, loss };
enum class SortDirection { easy_to_hard, hard_to_easy };

std::string_view policy_kind_name(PolicyKind kind);
PolicyKind parse_policy_kind(std::string_view name);
std::string_view direction_name(SortDirection d);
SortDirection parse_direction(std::string_view name);

/// Which difficulty metric orders the sorted epochs, and which way round.
/// Direction is ignored for random.
struct OrderingPolicy {
  PolicyKind kind = PolicyKind::random;
  SortDirection direction = SortDirection::easy_to_hard;
};

/// Ascending sort key for one scored example. Easy-to-hard maps to ascending
/// length, ascending loss, and descending attention variance (evenly spread
/// attention means a harder prompt, so low variance sorts last);
/// hard-to-easy negates. Random policies key everything identically.
double sort_key(const OrderingPolicy& policy, const DifficultyRecord& record);

/// Fisher-Yates permutation of [0, n) drawn from a fixed, portable generator
/// (std::mt19937_64 over a splitmix64-mixed per-epoch seed), so plans
/// reproduce across platforms and standard libraries.
std::vector<std::int64_t> seeded_permutation(std::size_t n, std::uint64_t seed,
                                             std::uint64_t epoch_index);

/// Per-epoch visit orders. Epoch 1 is the seeded random permutation whatever
/// the policy; sorted policies share one stable difficulty order from epoch
/// 2 on, while the random policy redraws per epoch. Entries are positions
/// into ids (equivalently into the source cache's row list).
struct CurriculumPlan {
  std::int64_t n_examples = 0;
  int n_epochs = 0;
  std::uint64_t seed = 0;
  OrderingPolicy policy;
  std::string cache_digest;
  std::vector<std::int64_t> ids;  // cache row ids, ascending
  std::vector<std::vector<std::int64_t>> epochs;

  /// Every epoch must be a permutation of [0, n_examples).
  void validate() const;

  std::string serialize() const;
  static CurriculumPlan deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static CurriculumPlan load(const std::filesystem::path& path);
  std::string digest() const { return digest_of(serialize()); }
};

/// Builds the plan for a scored dataset. Sorted epochs are a stable sort by
/// sort_key with ties broken by ascending id.
CurriculumPlan build_plan(const ScoreCache& cache, const OrderingPolicy& policy,
                          int n_epochs, std::uint64_t seed);

/// Recomputes epochs >= 2 from a fresh cache (e.g. rescored with
/// post-epoch-1 weights); epoch 1 and the seed are untouched. The fresh
/// cache must cover exactly the plan's id set.
CurriculumPlan rebuild_sorted_epochs(const CurriculumPlan& plan,
                                     const ScoreCache& fresh_cache);

}  // namespace curritune
