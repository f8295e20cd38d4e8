#include "curritune/curriculum.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include <json.hpp>

namespace curritune {

std::string_view policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::random:
      return "random";
    case PolicyKind::length:
      return "length";
    case PolicyKind::attention:
      return "attention";
    case PolicyKind::loss:
      return "loss";
  }
  return "?";
}

PolicyKind parse_policy_kind(std::string_view name) {
  if (name == "random") return PolicyKind::random;
  if (name == "length") return PolicyKind::length;
  if (name == "attention") return PolicyKind::attention;
  if (name == "loss") return PolicyKind::loss;
  throw DataError("unknown ordering policy: " + std::string(name));
}

std::string_view direction_name(SortDirection d) {
  return d == SortDirection::easy_to_hard ? "easy_to_hard" : "hard_to_easy";
}

SortDirection parse_direction(std::string_view name) {
  if (name == "easy_to_hard") return SortDirection::easy_to_hard;
  if (name == "hard_to_easy") return SortDirection::hard_to_easy;
  throw DataError("unknown sort direction: " + std::string(name));
}

double sort_key(const OrderingPolicy& policy, const DifficultyRecord& record) {
  auto need = [&](const std::optional<double>& v, const char* what) -> double {
    if (!v) {
      throw DataError(std::string("score cache has no ") + what + " scores");
    }
    return *v;
  };
  double key = 0.0;
  switch (policy.kind) {
    case PolicyKind::random:
      return 0.0;
    case PolicyKind::length:
      key = need(record.length_score, "length");
      break;
    case PolicyKind::loss:
      key = need(record.loss_score, "loss");
      break;
    case PolicyKind::attention:
      // High variance = concentrated attention = easy, so easy-to-hard
      // descends on the raw score.
      key = -need(record.attention_score, "attention");
      break;
  }
  return policy.direction == SortDirection::easy_to_hard ? key : -key;
}

std::vector<std::int64_t> seeded_permutation(std::size_t n, std::uint64_t seed,
                                             std::uint64_t epoch_index) {
  std::vector<std::int64_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order[i] = static_cast<std::int64_t>(i);
  }
  std::mt19937_64 rng(sub_seed(seed, epoch_index));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(bounded_rand(rng, i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void CurriculumPlan::validate() const {
  if (n_examples < 1 || n_epochs < 1) {
    throw DataError("plan: empty");
  }
  if (static_cast<std::int64_t>(ids.size()) != n_examples ||
      static_cast<int>(epochs.size()) != n_epochs) {
    throw DataError("plan: inconsistent sizes");
  }
  std::vector<std::int64_t> probe;
  for (const auto& epoch : epochs) {
    probe.assign(epoch.begin(), epoch.end());
    std::sort(probe.begin(), probe.end());
    for (std::int64_t i = 0; i < n_examples; ++i) {
      if (probe[static_cast<std::size_t>(i)] != i) {
        throw DataError("plan: epoch order is not a permutation");
      }
    }
  }
}

std::string CurriculumPlan::serialize() const {
  nlohmann::ordered_json hdr;
  hdr["kind"] = "curritune-plan";
  hdr["version"] = 1;
  hdr["policy"] = std::string(policy_kind_name(policy.kind));
  hdr["direction"] = std::string(direction_name(policy.direction));
  hdr["seed"] = seed;
  hdr["n_epochs"] = n_epochs;
  hdr["n_examples"] = n_examples;
  hdr["cache_digest"] = cache_digest;
  std::string out = hdr.dump();
  out.push_back('\n');

  nlohmann::ordered_json ids_line;
  ids_line["ids"] = ids;
  out += ids_line.dump();
  out.push_back('\n');

  for (std::size_t e = 0; e < epochs.size(); ++e) {
    nlohmann::ordered_json line;
    line["epoch"] = e + 1;
    line["order"] = epochs[e];
    out += line.dump();
    out.push_back('\n');
  }
  return out;
}

CurriculumPlan CurriculumPlan::deserialize(std::string_view text) {
  CurriculumPlan plan;
  std::istringstream in{std::string(text)};
  std::string line;
  int stage = 0;  // 0 header, 1 ids, 2+ epochs
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("plan: malformed JSON: ") + e.what());
    }
    if (stage == 0) {
      if (obj.value("kind", "") != "curritune-plan" || obj.value("version", 0) != 1) {
        throw DataError("plan: missing or wrong header");
      }
      plan.policy.kind = parse_policy_kind(obj.at("policy").get<std::string>());
      plan.policy.direction = parse_direction(obj.at("direction").get<std::string>());
      plan.seed = obj.at("seed").get<std::uint64_t>();
      plan.n_epochs = obj.at("n_epochs").get<int>();
      plan.n_examples = obj.at("n_examples").get<std::int64_t>();
      plan.cache_digest = obj.value("cache_digest", "");
      stage = 1;
    } else if (stage == 1) {
      plan.ids = obj.at("ids").get<std::vector<std::int64_t>>();
      stage = 2;
    } else {
      plan.epochs.push_back(obj.at("order").get<std::vector<std::int64_t>>());
    }
  }
  plan.validate();
  return plan;
}

void CurriculumPlan::save(const std::filesystem::path& path) const {
  write_text_file(path, serialize());
}

CurriculumPlan CurriculumPlan::load(const std::filesystem::path& path) {
  return deserialize(read_text_file(path));
}

namespace {

std::vector<std::int64_t> sorted_order(const ScoreCache& cache,
                                       const OrderingPolicy& policy) {
  const std::size_t n = cache.rows.size();
  std::vector<double> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = sort_key(policy, cache.rows[i]);
  }
  std::vector<std::int64_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order[i] = static_cast<std::int64_t>(i);
  }
  // Rows are in ascending-id order, so a stable sort implements the
  // ascending-id tie-break for free.
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
  });
  return order;
}

}  // namespace

CurriculumPlan build_plan(const ScoreCache& cache, const OrderingPolicy& policy,
                          int n_epochs, std::uint64_t seed) {
  if (cache.rows.empty()) {
    throw DataError("cannot build a plan from an empty score cache");
  }
  if (n_epochs < 1) {
    throw DataError("plan needs at least one epoch");
  }
  const std::size_t n = cache.rows.size();

  CurriculumPlan plan;
  plan.n_examples = static_cast<std::int64_t>(n);
  plan.n_epochs = n_epochs;
  plan.seed = seed;
  plan.policy = policy;
  plan.cache_digest = cache.digest();
  plan.ids.reserve(n);
  for (const DifficultyRecord& row : cache.rows) {
    plan.ids.push_back(row.id);
  }

  plan.epochs.reserve(static_cast<std::size_t>(n_epochs));
  plan.epochs.push_back(seeded_permutation(n, seed, 0));
  if (n_epochs > 1) {
    if (policy.kind == PolicyKind::random) {
      for (int e = 1; e < n_epochs; ++e) {
        plan.epochs.push_back(seeded_permutation(n, seed, static_cast<std::uint64_t>(e)));
      }
    } else {
      const std::vector<std::int64_t> order = sorted_order(cache, policy);
      for (int e = 1; e < n_epochs; ++e) {
        plan.epochs.push_back(order);
      }
    }
  }
  plan.validate();
  return plan;
}

CurriculumPlan rebuild_sorted_epochs(const CurriculumPlan& plan,
                                     const ScoreCache& fresh_cache) {
  plan.validate();
  if (fresh_cache.rows.size() != plan.ids.size()) {
    throw DataError("rescore cache does not cover the plan's id set");
  }
  for (std::size_t i = 0; i < plan.ids.size(); ++i) {
    if (fresh_cache.rows[i].id != plan.ids[i]) {
      throw DataError("rescore cache does not cover the plan's id set (id " +
                      std::to_string(plan.ids[i]) + " missing)");
    }
  }

  CurriculumPlan out = plan;
  out.cache_digest = fresh_cache.digest();
  if (plan.policy.kind != PolicyKind::random && plan.n_epochs > 1) {
    const std::vector<std::int64_t> order = sorted_order(fresh_cache, plan.policy);
    for (int e = 1; e < plan.n_epochs; ++e) {
      out.epochs[static_cast<std::size_t>(e)] = order;
    }
  }
  out.validate();
  return out;
}

}  // namespace curritune
