#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "curritune/evalreport.hpp"

namespace curritune {

/// Sizes and seed for the bundled synthetic corpus. Everything the toolkit
/// demonstrates runs offline on this data.
struct SynthConfig {
  int n_train = 512;
  int n_heldout = 64;
  int n_task_items = 32;
  std::uint64_t seed = 1;
};

struct SynthBundle {
  std::vector<InstructionRecord> train;
  std::vector<InstructionRecord> heldout;
  std::vector<TaskSet> tasks;  // "copy" and "modadd"
};

/// Copy-task corpus (echo a short random string) with two evaluation task
/// sets: copying and single-digit modular addition. Train, held-out and
/// copy-task inputs are mutually distinct, so content disjointness holds by
/// construction. The training split ends with a few fixed anchor records
/// covering every byte the task sets can emit, so a tokenizer trained on it
/// always encodes the evaluation items. Deterministic in the seed.
SynthBundle generate_bundle(const SynthConfig& config);

/// JSON Lines with fields instruction/input/output, one record per line;
/// readable back with load_dataset.
void save_records_jsonl(const std::filesystem::path& path,
                        const std::vector<InstructionRecord>& records);

}  // namespace curritune
