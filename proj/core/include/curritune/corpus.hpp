#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "curritune/tokenizer.hpp"

namespace curritune {

/// One instruction/input/output triple. Ids equal the zero-based position in
/// the source file; records with an empty output are rejected at load.
struct InstructionRecord {
  std::int64_t id = 0;
  std::string instruction;
  std::string input;  // may be empty
  std::string output;
};

/// Three-header prompt layout. The response header must be non-empty and, to
/// keep the answer boundary recoverable, must occur exactly once in every
/// rendered prompt; rendering rejects records that embed it in their text.
struct PromptTemplate {
  std::string preamble;
  std::string instruction_header;
  std::string input_header;
  std::string response_header;

  void validate() const;
  std::string digest() const;
};

/// Alpaca-style default layout.
PromptTemplate default_template();

struct RenderedPrompt {
  std::string text;                // full prompt including the answer
  std::size_t answer_char_offset;  // first character of the answer
};

/// Token sequence for one record: encoded context, encoded answer, then
/// <eos>. answer_start indexes the first answer token; 0 < answer_start <
/// tokens.size() always holds.
struct TokenizedExample {
  std::int64_t id = 0;
  std::vector<std::int32_t> tokens;
  std::int32_t answer_start = 0;

  std::int32_t length() const { return static_cast<std::int32_t>(tokens.size()); }
  /// Number of scored positions: answer tokens plus the <eos>.
  std::int32_t answer_span() const { return length() - answer_start; }
};

/// Reads a JSON Lines dataset (objects with string fields "instruction",
/// "input", "output"). Blank lines are ignored; any other malformed line is
/// an error naming the line number.
std::vector<InstructionRecord> load_dataset(const std::filesystem::path& path,
                                            std::optional<std::int64_t> limit = {});

RenderedPrompt render_prompt(const InstructionRecord& record,
                             const PromptTemplate& tmpl);

/// Full rendered text of every record, in order. This is the tokenizer
/// training corpus, so header strings land inside the alphabet.
std::vector<std::string> rendered_corpus(const std::vector<InstructionRecord>& records,
                                         const PromptTemplate& tmpl);

Tokenizer train_tokenizer(const std::vector<InstructionRecord>& records, int vocab_size,
                          std::uint64_t seed,
                          const PromptTemplate& tmpl = default_template());

/// Encodes one record. The context and answer halves are tokenized
/// separately so the answer boundary always falls on a token edge. Sequences
/// over max_len lose context tokens from the left only; an answer span that
/// cannot fit next to at least one context token is an error.
TokenizedExample encode_example(const InstructionRecord& record,
                                const PromptTemplate& tmpl, const Tokenizer& tokenizer,
                                int max_len);

std::vector<TokenizedExample> encode_dataset(const std::vector<InstructionRecord>& records,
                                             const PromptTemplate& tmpl,
                                             const Tokenizer& tokenizer, int max_len);

}  // namespace curritune
