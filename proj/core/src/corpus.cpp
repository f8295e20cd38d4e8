#include "curritune/corpus.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace curritune {

using nlohmann::json;

void PromptTemplate::validate() const {
  if (response_header.empty()) {
    throw DataError("prompt template: response_header must be non-empty");
  }
}

std::string PromptTemplate::digest() const {
  // Length-prefixed concatenation so field boundaries cannot alias.
  std::ostringstream out;
  for (const auto* field : {&preamble, &instruction_header, &input_header, &response_header}) {
    out << field->size() << ":" << *field;
  }
  return digest_of(std::move(out).str());
}

PromptTemplate default_template() {
  return PromptTemplate{
      .preamble = "Below is an instruction that describes a task. "
                  "Write a response that completes the request.\n\n",
      .instruction_header = "### Instruction:\n",
      .input_header = "\n### Input:\n",
      .response_header = "\n### Response:\n",
  };
}

std::vector<InstructionRecord> load_dataset(const std::filesystem::path& path,
                                            std::optional<std::int64_t> limit) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open dataset: " + path.string());
  }

  std::vector<InstructionRecord> records;
  std::string line;
  std::int64_t line_no = 0;
  std::int64_t next_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    if (limit && next_id >= *limit) {
      break;
    }

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) {
      throw DataError("line " + std::to_string(line_no) + ": expected a JSON object");
    }

    auto field = [&](const char* name) -> std::string {
      if (!obj.contains(name)) {
        return {};
      }
      if (!obj[name].is_string()) {
        throw DataError("line " + std::to_string(line_no) + ": field \"" +
                        name + "\" must be a string");
      }
      return obj[name].get<std::string>();
    };

    InstructionRecord rec;
    rec.id = next_id;
    rec.instruction = field("instruction");
    rec.input = field("input");
    rec.output = field("output");
    if (rec.output.empty()) {
      throw DataError("record " + std::to_string(rec.id) + ": empty or missing output");
    }
    records.push_back(std::move(rec));
    ++next_id;
  }
  return records;
}

RenderedPrompt render_prompt(const InstructionRecord& record, const PromptTemplate& tmpl) {
  tmpl.validate();

  std::string context = tmpl.preamble + tmpl.instruction_header + record.instruction;
  if (!record.input.empty()) {
    context += tmpl.input_header + record.input;
  }
  context += tmpl.response_header;

  RenderedPrompt out;
  out.answer_char_offset = context.size();
  out.text = std::move(context) + record.output;

  // The answer boundary is recovered from the response header downstream;
  // a second occurrence would make it ambiguous.
  std::size_t hits = 0;
  for (std::size_t pos = out.text.find(tmpl.response_header); pos != std::string::npos;
       pos = out.text.find(tmpl.response_header, pos + 1)) {
    ++hits;
  }
  if (hits != 1) {
    throw DataError("record " + std::to_string(record.id) +
                    ": response header occurs " + std::to_string(hits) +
                    " times in rendered prompt");
  }
  return out;
}

std::vector<std::string> rendered_corpus(const std::vector<InstructionRecord>& records,
                                         const PromptTemplate& tmpl) {
  std::vector<std::string> texts;
  texts.reserve(records.size());
  for (const auto& rec : records) {
    texts.push_back(render_prompt(rec, tmpl).text);
  }
  return texts;
}

Tokenizer train_tokenizer(const std::vector<InstructionRecord>& records, int vocab_size,
                          std::uint64_t seed, const PromptTemplate& tmpl) {
  return Tokenizer::train(rendered_corpus(records, tmpl), vocab_size, seed);
}

TokenizedExample encode_example(const InstructionRecord& record, const PromptTemplate& tmpl,
                                const Tokenizer& tokenizer, int max_len) {
  const RenderedPrompt rendered = render_prompt(record, tmpl);
  const std::string_view text = rendered.text;

  std::vector<std::int32_t> context =
      tokenizer.encode(text.substr(0, rendered.answer_char_offset));
  std::vector<std::int32_t> answer =
      tokenizer.encode(text.substr(rendered.answer_char_offset));

  // answer plus <eos> must leave room for at least one context token.
  const auto answer_span = static_cast<int>(answer.size()) + 1;
  if (answer_span > max_len - 1) {
    throw DataError("record " + std::to_string(record.id) + ": answer exceeds context window");
  }
  const int context_budget = max_len - answer_span;
  if (static_cast<int>(context.size()) > context_budget) {
    context.erase(context.begin(),
                  context.end() - context_budget);  // keep the rightmost tokens
  }
  if (context.empty()) {
    throw DataError("record " + std::to_string(record.id) + ": context vanished");
  }

  TokenizedExample ex;
  ex.id = record.id;
  ex.answer_start = static_cast<std::int32_t>(context.size());
  ex.tokens = std::move(context);
  ex.tokens.insert(ex.tokens.end(), answer.begin(), answer.end());
  ex.tokens.push_back(tokenizer.eos_id());
  return ex;
}

std::vector<TokenizedExample> encode_dataset(const std::vector<InstructionRecord>& records,
                                             const PromptTemplate& tmpl,
                                             const Tokenizer& tokenizer, int max_len) {
  std::vector<TokenizedExample> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    out.push_back(encode_example(rec, tmpl, tokenizer, max_len));
  }
  return out;
}

}  // namespace curritune
