#include "curritune/difficulty.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace curritune {

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::length:
      return "length";
    case Metric::attention:
      return "attention";
    case Metric::loss:
      return "loss";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  if (name == "length") return Metric::length;
  if (name == "attention") return Metric::attention;
  if (name == "loss") return Metric::loss;
  throw DataError("unknown metric: " + std::string(name));
}

MetricSet parse_metric_set(std::string_view csv) {
  MetricSet set{false, false, false};
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = csv.find(',', start);
    const std::string_view item =
        csv.substr(start, comma == std::string_view::npos ? csv.size() - start
                                                          : comma - start);
    if (!item.empty()) {
      switch (parse_metric(item)) {
        case Metric::length:
          set.length = true;
          break;
        case Metric::attention:
          set.attention = true;
          break;
        case Metric::loss:
          set.loss = true;
          break;
      }
    }
    if (comma == std::string_view::npos) {
      break;
    }
    start = comma + 1;
  }
  if (!set.any()) {
    throw DataError("metric set is empty");
  }
  return set;
}

double score_length(const TokenizedExample& example) {
  return static_cast<double>(example.length());
}

double score_attention(const AttentionCapture& capture, std::int32_t answer_start) {
  const int T = capture.seq_len;
  if (answer_start < 0 || answer_start >= T) {
    throw DataError("attention score: no query positions at or after answer start");
  }
  double layer_sum = 0.0;
  for (int l = 0; l < capture.n_layers; ++l) {
    // Population variance of the pooled causal-support entries of this layer.
    double sum = 0.0, sum_sq = 0.0;
    std::int64_t count = 0;
    for (int h = 0; h < capture.n_heads; ++h) {
      for (int q = answer_start; q < T; ++q) {
        for (int k = 0; k <= q; ++k) {
          const double a = capture.at(l, h, q, k);
          sum += a;
          sum_sq += a * a;
          ++count;
        }
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sum_sq / static_cast<double>(count) - mean * mean;
    layer_sum += std::max(0.0, var);  // clamp the tiny negatives of cancellation
  }
  return layer_sum / static_cast<double>(capture.n_layers);
}

double score_loss(const ForwardResult& result, std::int32_t answer_start,
                  Reduction reduction) {
  return masked_loss(result, answer_start, reduction);
}

// ---------------------------------------------------------------------------
// ScoreCache

void ScoreCache::validate() const {
  std::int64_t prev = -1;
  for (const DifficultyRecord& row : rows) {
    if (row.id <= prev) {
      throw DataError("score cache: ids not strictly increasing at id " +
                      std::to_string(row.id));
    }
    prev = row.id;
    auto check = [&](const std::optional<double>& v, bool wanted, const char* what) {
      if (wanted != v.has_value()) {
        throw DataError(std::string("score cache: row ") + std::to_string(row.id) +
                        (wanted ? " missing " : " has unexpected ") + what + " score");
      }
      if (v && (!std::isfinite(*v) || *v < 0.0)) {
        throw DataError(std::string("score cache: row ") + std::to_string(row.id) +
                        " has invalid " + what + " score");
      }
    };
    check(row.length_score, header.metrics.length, "length");
    check(row.attention_score, header.metrics.attention, "attention");
    check(row.loss_score, header.metrics.loss, "loss");
  }
}

void ScoreCache::expect_fingerprint(const std::string& model_fingerprint) const {
  if (!header.model_fingerprint.empty() &&
      header.model_fingerprint != model_fingerprint) {
    throw DataError("score cache was produced by a different model checkpoint (cache " +
                    header.model_fingerprint + ", expected " + model_fingerprint + ")");
  }
}

const DifficultyRecord& ScoreCache::row_for(std::int64_t id) const {
  // Rows are sorted by id, so binary search.
  auto it = std::lower_bound(
      rows.begin(), rows.end(), id,
      [](const DifficultyRecord& r, std::int64_t v) { return r.id < v; });
  if (it == rows.end() || it->id != id) {
    throw DataError("score cache has no row for id " + std::to_string(id));
  }
  return *it;
}

std::string ScoreCache::serialize() const {
  nlohmann::ordered_json hdr;
  hdr["kind"] = "curritune-score-cache";
  hdr["version"] = 1;
  hdr["tool_version"] = header.tool_version;
  hdr["tokenizer_digest"] = header.tokenizer_digest;
  hdr["template_digest"] = header.template_digest;
  hdr["model_fingerprint"] = header.model_fingerprint;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::array();
  if (header.metrics.length) metrics.push_back("length");
  if (header.metrics.attention) metrics.push_back("attention");
  if (header.metrics.loss) metrics.push_back("loss");
  hdr["metrics"] = metrics;
  hdr["loss_reduction"] = std::string(reduction_name(header.loss_reduction));
  hdr["length_includes_answer"] = header.length_includes_answer;

  // Rows are hand-formatted so doubles always carry 17 significant digits.
  std::string out = hdr.dump();
  out.push_back('\n');
  for (const DifficultyRecord& row : rows) {
    out += "{\"id\":" + std::to_string(row.id);
    if (row.length_score) {
      out += ",\"length\":" + format_g17(*row.length_score);
    }
    if (row.attention_score) {
      out += ",\"attention\":" + format_g17(*row.attention_score);
    }
    if (row.loss_score) {
      out += ",\"loss\":" + format_g17(*row.loss_score);
    }
    out += "}\n";
  }
  return out;
}

ScoreCache ScoreCache::deserialize(std::string_view text) {
  ScoreCache cache;
  std::istringstream in{std::string(text)};
  std::string line;
  std::int64_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("score cache line " + std::to_string(line_no) +
                      ": malformed JSON: " + e.what());
    }
    if (!have_header) {
      if (obj.value("kind", "") != "curritune-score-cache") {
        throw DataError("score cache: missing or wrong header kind");
      }
      if (obj.value("version", 0) != 1) {
        throw DataError("score cache: unsupported version");
      }
      cache.header.tool_version = obj.value("tool_version", "");
      cache.header.tokenizer_digest = obj.value("tokenizer_digest", "");
      cache.header.template_digest = obj.value("template_digest", "");
      cache.header.model_fingerprint = obj.value("model_fingerprint", "");
      cache.header.metrics = MetricSet{false, false, false};
      for (const auto& m : obj.at("metrics")) {
        switch (parse_metric(m.get<std::string>())) {
          case Metric::length:
            cache.header.metrics.length = true;
            break;
          case Metric::attention:
            cache.header.metrics.attention = true;
            break;
          case Metric::loss:
            cache.header.metrics.loss = true;
            break;
        }
      }
      cache.header.loss_reduction =
          parse_reduction(obj.value("loss_reduction", "sum"));
      cache.header.length_includes_answer = obj.value("length_includes_answer", true);
      have_header = true;
      continue;
    }
    DifficultyRecord row;
    row.id = obj.at("id").get<std::int64_t>();
    if (obj.contains("length")) row.length_score = obj["length"].get<double>();
    if (obj.contains("attention")) row.attention_score = obj["attention"].get<double>();
    if (obj.contains("loss")) row.loss_score = obj["loss"].get<double>();
    row.model_fingerprint = cache.header.model_fingerprint;
    cache.rows.push_back(std::move(row));
  }
  if (!have_header) {
    throw DataError("score cache: empty file");
  }
  cache.validate();
  return cache;
}

void ScoreCache::save(const std::filesystem::path& path) const {
  write_text_file(path, serialize());
}

ScoreCache ScoreCache::load(const std::filesystem::path& path) {
  return deserialize(read_text_file(path));
}

// ---------------------------------------------------------------------------
// score_dataset

ScoreCache score_dataset(const std::vector<TokenizedExample>& examples,
                         const Model* model, const ScoreOptions& options,
                         std::vector<std::string>* skip_log) {
  if (!options.metrics.any()) {
    throw DataError("metric set is empty");
  }
  if (options.metrics.needs_model() && model == nullptr) {
    if (options.metrics.attention) {
      throw DataError("attention scoring requires a model");
    }
    throw DataError("loss scoring requires a model");
  }

  const std::size_t n = examples.size();
  std::vector<DifficultyRecord> slots(n);
  std::vector<std::string> errors(n);

  const std::string fingerprint =
      options.metrics.needs_model() ? model->fingerprint() : std::string();

  auto score_one = [&](std::size_t i) {
    const TokenizedExample& ex = examples[i];
    DifficultyRecord& row = slots[i];
    row.id = ex.id;
    row.model_fingerprint = fingerprint;
    try {
      if (options.metrics.length) {
        row.length_score = score_length(ex);
      }
      if (options.metrics.needs_model()) {
        const ForwardResult result =
            model->forward(ex.tokens, options.metrics.attention);
        if (options.metrics.attention) {
          row.attention_score = score_attention(*result.capture, ex.answer_start);
        }
        if (options.metrics.loss) {
          row.loss_score =
              score_loss(result, ex.answer_start, options.loss_reduction);
        }
      }
    } catch (const std::exception& e) {
      errors[i] = "example " + std::to_string(ex.id) + ": " + e.what();
    }
  };

  const int jobs = std::max(1, options.jobs);
  if (jobs == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) {
      score_one(i);
    }
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        score_one(i);
      }
    };
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back(worker);
    }
    for (std::thread& t : pool) {
      t.join();
    }
  }

  ScoreCache cache;
  cache.header.tokenizer_digest = options.tokenizer_digest;
  cache.header.template_digest = options.template_digest;
  cache.header.model_fingerprint = fingerprint;
  cache.header.metrics = options.metrics;
  cache.header.loss_reduction = options.loss_reduction;
  cache.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) {
      if (options.on_error == ScoreErrorPolicy::abort) {
        throw DataError("scoring failed: " + errors[i]);
      }
      if (skip_log != nullptr) {
        skip_log->push_back(errors[i]);
      }
      continue;
    }
    cache.rows.push_back(std::move(slots[i]));
  }
  cache.validate();
  return cache;
}

}  // namespace curritune
