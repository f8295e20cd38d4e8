#include "curritune/synthdata.hpp"

#include <random>
#include <set>
#include <string>

#include <json.hpp>

namespace curritune {

namespace {

constexpr std::string_view kCopyInstruction = "Repeat the input exactly.";
constexpr std::string_view kModAddInstruction = "Add the two numbers modulo 10.";
constexpr std::string_view kCopyAlphabet = "abcdefgh";
constexpr int kCopyMinLen = 2;
constexpr int kCopyMaxLen = 10;

// The tokenizer is trained on the training split alone, so that split must
// contain every byte the evaluation tasks can emit. Eleven fixed anchor
// records guarantee it: one copy record spelling out the whole copy alphabet
// and the ten (d, d) addition pairs, which cover every digit and the modadd
// instruction text.
constexpr int kNumAnchorRecords = 11;

std::string random_copy_input(std::mt19937_64& rng) {
  const int len = kCopyMinLen + static_cast<int>(bounded_rand(
                                    rng, kCopyMaxLen - kCopyMinLen + 1));
  std::string s;
  s.reserve(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) {
    s.push_back(kCopyAlphabet[bounded_rand(rng, kCopyAlphabet.size())]);
  }
  return s;
}

// Draws distinct copy inputs, skipping anything already claimed.
std::vector<std::string> draw_copy_inputs(std::mt19937_64& rng, int count,
                                          std::set<std::string>& claimed) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    std::string s = random_copy_input(rng);
    if (claimed.insert(s).second) {
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<InstructionRecord> copy_records(const std::vector<std::string>& inputs) {
  std::vector<InstructionRecord> records;
  records.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    InstructionRecord r;
    r.id = static_cast<std::int64_t>(i);
    r.instruction = kCopyInstruction;
    r.input = inputs[i];
    r.output = inputs[i];
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace

SynthBundle generate_bundle(const SynthConfig& config) {
  if (config.n_train < kNumAnchorRecords + 1) {
    throw DataError("synthetic corpus: n_train must be at least " +
                    std::to_string(kNumAnchorRecords + 1) +
                    " to fit the alphabet anchor records");
  }
  if (config.n_heldout < 1 || config.n_task_items < 1) {
    throw DataError("synthetic corpus: all sizes must be >= 1");
  }
  if (config.n_task_items > 90) {
    throw DataError(
        "synthetic corpus: only 90 distinct modadd items exist outside the "
        "anchor pairs");
  }
  SynthBundle bundle;
  std::set<std::string> claimed;
  claimed.insert(std::string(kCopyAlphabet));  // reserved for the anchor record

  std::mt19937_64 rng(sub_seed(config.seed, 0));
  bundle.train = copy_records(
      draw_copy_inputs(rng, config.n_train - kNumAnchorRecords, claimed));
  {
    InstructionRecord anchor;
    anchor.id = static_cast<std::int64_t>(bundle.train.size());
    anchor.instruction = kCopyInstruction;
    anchor.input = kCopyAlphabet;
    anchor.output = kCopyAlphabet;
    bundle.train.push_back(std::move(anchor));
  }
  for (int d = 0; d < 10; ++d) {
    InstructionRecord r;
    r.id = static_cast<std::int64_t>(bundle.train.size());
    r.instruction = kModAddInstruction;
    r.input = std::to_string(d) + " " + std::to_string(d);
    r.output = std::to_string((2 * d) % 10);
    bundle.train.push_back(std::move(r));
  }

  bundle.heldout = copy_records(draw_copy_inputs(rng, config.n_heldout, claimed));

  TaskSet copy_task;
  copy_task.name = "copy";
  copy_task.items = copy_records(draw_copy_inputs(rng, config.n_task_items, claimed));
  bundle.tasks.push_back(std::move(copy_task));

  TaskSet modadd;
  modadd.name = "modadd";
  std::mt19937_64 mod_rng(sub_seed(config.seed, 1));
  // The diagonal pairs are anchor training records; task items skip them so
  // accuracy measures more than recall of a training line.
  std::set<std::pair<int, int>> pairs;
  for (int d = 0; d < 10; ++d) {
    pairs.insert({d, d});
  }
  while (static_cast<int>(modadd.items.size()) < config.n_task_items) {
    const int a = static_cast<int>(bounded_rand(mod_rng, 10));
    const int b = static_cast<int>(bounded_rand(mod_rng, 10));
    if (!pairs.insert({a, b}).second) {
      continue;
    }
    InstructionRecord r;
    r.id = static_cast<std::int64_t>(modadd.items.size());
    r.instruction = kModAddInstruction;
    r.input = std::to_string(a) + " " + std::to_string(b);
    r.output = std::to_string((a + b) % 10);
    modadd.items.push_back(std::move(r));
  }
  bundle.tasks.push_back(std::move(modadd));
  return bundle;
}

void save_records_jsonl(const std::filesystem::path& path,
                        const std::vector<InstructionRecord>& records) {
  std::string out;
  for (const InstructionRecord& r : records) {
    nlohmann::ordered_json obj;
    obj["instruction"] = r.instruction;
    obj["input"] = r.input;
    obj["output"] = r.output;
    out += obj.dump();
    out.push_back('\n');
  }
  write_text_file(path, out);
}

}  // namespace curritune
