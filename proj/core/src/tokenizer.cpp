#include "curritune/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace curritune {

namespace {

constexpr std::array<std::string_view, 3> kSpecialNames = {"<bos>", "<eos>", "<pad>"};

struct PairHash {
  std::size_t operator()(const std::pair<std::int32_t, std::int32_t>& p) const {
    return (static_cast<std::size_t>(static_cast<std::uint32_t>(p.first)) << 32) |
           static_cast<std::uint32_t>(p.second);
  }
};

std::string hex_encode(std::string_view bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

std::string hex_decode(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) {
    throw DataError("tokenizer file: odd-length hex token");
  }
  std::string out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    const int hi = nibble(hex[i]);
    const int lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0) {
      throw DataError("tokenizer file: invalid hex token");
    }
    out.push_back(static_cast<char>((hi << 4) | lo));
  }
  return out;
}

// Replaces every non-overlapping (left, right) occurrence with merged,
// scanning left to right.
void apply_merge(std::vector<std::int32_t>& seq, std::int32_t left, std::int32_t right,
                 std::int32_t merged) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < seq.size();) {
    if (r + 1 < seq.size() && seq[r] == left && seq[r + 1] == right) {
      seq[w++] = merged;
      r += 2;
    } else {
      seq[w++] = seq[r++];
    }
  }
  seq.resize(w);
}

}  // namespace

Tokenizer Tokenizer::train(const std::vector<std::string>& texts, int vocab_size,
                           std::uint64_t seed) {
  Tokenizer tok;
  tok.seed_ = seed;

  bool present[256] = {};
  for (const auto& text : texts) {
    for (unsigned char c : text) {
      present[c] = true;
    }
  }
  int alphabet = 0;
  for (bool p : present) {
    alphabet += p ? 1 : 0;
  }
  if (vocab_size < alphabet + kNumSpecials) {
    throw DataError("vocab_size " + std::to_string(vocab_size) +
                    " too small: corpus alphabet " + std::to_string(alphabet) +
                    " plus " + std::to_string(kNumSpecials) + " special tokens");
  }

  for (auto name : kSpecialNames) {
    (void)name;
    tok.vocab_.emplace_back();  // specials carry no bytes
  }
  for (int c = 0; c < 256; ++c) {
    if (present[c]) {
      tok.vocab_.push_back(std::string(1, static_cast<char>(c)));
    }
  }
  tok.rebuild_lookup();

  std::vector<std::vector<std::int32_t>> seqs;
  seqs.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<std::int32_t> seq;
    seq.reserve(text.size());
    for (unsigned char c : text) {
      seq.push_back(tok.byte_to_id_[c]);
    }
    seqs.push_back(std::move(seq));
  }

  // Greedy merge loop. Pair counts are rebuilt each round; at corpus sizes
  // this artifact targets that is cheaper than maintaining them incrementally
  // and is trivially deterministic.
  while (static_cast<int>(tok.vocab_.size()) < vocab_size) {
    std::unordered_map<std::pair<std::int32_t, std::int32_t>, std::int64_t, PairHash> counts;
    for (const auto& seq : seqs) {
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        ++counts[{seq[i], seq[i + 1]}];
      }
    }

    std::int64_t best_count = 0;
    std::pair<std::int32_t, std::int32_t> best{-1, -1};
    for (const auto& [pair, count] : counts) {
      if (count < 2) {
        continue;
      }
      if (count > best_count) {
        best_count = count;
        best = pair;
      } else if (count == best_count) {
        // Frequency tie: lexicographically smallest (left, right) token pair.
        const auto& bl = tok.vocab_[best.first];
        const auto& br = tok.vocab_[best.second];
        const auto& cl = tok.vocab_[pair.first];
        const auto& cr = tok.vocab_[pair.second];
        if (std::tie(cl, cr) < std::tie(bl, br)) {
          best = pair;
        }
      }
    }
    if (best_count < 2) {
      break;  // nothing left worth a vocabulary slot
    }

    const auto merged_id = static_cast<std::int32_t>(tok.vocab_.size());
    tok.vocab_.push_back(tok.vocab_[best.first] + tok.vocab_[best.second]);
    tok.merges_.push_back({best.first, best.second});
    tok.merge_rank_[{best.first, best.second}] =
        static_cast<std::int32_t>(tok.merges_.size()) - 1;
    for (auto& seq : seqs) {
      apply_merge(seq, best.first, best.second, merged_id);
    }
  }

  return tok;
}

void Tokenizer::rebuild_lookup() {
  byte_to_id_.assign(256, -1);
  for (std::size_t id = kNumSpecials; id < vocab_.size(); ++id) {
    if (vocab_[id].size() == 1) {
      byte_to_id_[static_cast<unsigned char>(vocab_[id][0])] =
          static_cast<std::int32_t>(id);
    }
  }
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::int32_t> seq;
  seq.reserve(text.size());
  for (unsigned char c : text) {
    const std::int32_t id = byte_to_id_[c];
    if (id < 0) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "byte 0x%02x outside tokenizer alphabet", c);
      throw DataError(buf);
    }
    seq.push_back(id);
  }

  // Apply the earliest-learned merge present until none applies. The product
  // of merge rank r sits at id base + r, where base = vocab size before any
  // merge was learned.
  const auto base = static_cast<std::int32_t>(vocab_.size() - merges_.size());
  while (seq.size() >= 2) {
    std::int32_t best_rank = std::numeric_limits<std::int32_t>::max();
    std::pair<std::int32_t, std::int32_t> best{-1, -1};
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      const auto it = merge_rank_.find({seq[i], seq[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = it->first;
      }
    }
    if (best.first < 0) {
      break;
    }
    apply_merge(seq, best.first, best.second, base + best_rank);
  }
  return seq;
}

std::string Tokenizer::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (std::int32_t id : ids) {
    out += token(id);
  }
  return out;
}

const std::string& Tokenizer::token(std::int32_t id) const {
  if (id < 0 || id >= vocab_size()) {
    throw DataError("token id " + std::to_string(id) + " out of range");
  }
  return vocab_[static_cast<std::size_t>(id)];
}

std::string Tokenizer::serialize() const {
  std::ostringstream out;
  out << "curritune-tokenizer v1\n";
  out << "seed " << seed_ << "\n";
  out << "specials " << kBosId << " " << kEosId << " " << kPadId << "\n";
  out << "vocab " << vocab_.size() << "\n";
  for (std::size_t id = 0; id < vocab_.size(); ++id) {
    if (id < kNumSpecials) {
      out << kSpecialNames[id] << "\n";
    } else {
      out << hex_encode(vocab_[id]) << "\n";
    }
  }
  out << "merges " << merges_.size() << "\n";
  for (const auto& m : merges_) {
    out << m[0] << " " << m[1] << "\n";
  }
  return std::move(out).str();
}

Tokenizer Tokenizer::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) {
      throw DataError("tokenizer file: unexpected end of file");
    }
    return line;
  };

  if (next_line() != "curritune-tokenizer v1") {
    throw DataError("tokenizer file: bad magic or unsupported version");
  }

  Tokenizer tok;
  std::string word;
  {
    std::istringstream ls(next_line());
    ls >> word >> tok.seed_;
    if (word != "seed" || ls.fail()) {
      throw DataError("tokenizer file: malformed seed line");
    }
  }
  {
    std::istringstream ls(next_line());
    int b = -1, e = -1, p = -1;
    ls >> word >> b >> e >> p;
    if (word != "specials" || b != kBosId || e != kEosId || p != kPadId) {
      throw DataError("tokenizer file: malformed specials line");
    }
  }
  std::size_t n_vocab = 0;
  {
    std::istringstream ls(next_line());
    ls >> word >> n_vocab;
    if (word != "vocab" || ls.fail() || n_vocab < kNumSpecials) {
      throw DataError("tokenizer file: malformed vocab line");
    }
  }
  tok.vocab_.reserve(n_vocab);
  for (std::size_t id = 0; id < n_vocab; ++id) {
    const std::string entry = next_line();
    if (id < kNumSpecials) {
      if (entry != kSpecialNames[id]) {
        throw DataError("tokenizer file: special token mismatch");
      }
      tok.vocab_.emplace_back();
    } else {
      tok.vocab_.push_back(hex_decode(entry));
    }
  }
  std::size_t n_merges = 0;
  {
    std::istringstream ls(next_line());
    ls >> word >> n_merges;
    if (word != "merges" || ls.fail()) {
      throw DataError("tokenizer file: malformed merges line");
    }
  }
  for (std::size_t r = 0; r < n_merges; ++r) {
    std::istringstream ls(next_line());
    std::int32_t left = -1, right = -1;
    ls >> left >> right;
    if (ls.fail() || left < 0 || right < 0 ||
        left >= static_cast<std::int32_t>(n_vocab) ||
        right >= static_cast<std::int32_t>(n_vocab)) {
      throw DataError("tokenizer file: malformed merge entry");
    }
    tok.merges_.push_back({left, right});
    tok.merge_rank_[{left, right}] = static_cast<std::int32_t>(r);
  }
  tok.rebuild_lookup();

  // Sanity: each merge's product must sit at the expected id.
  const std::size_t base = n_vocab - n_merges;
  for (std::size_t r = 0; r < n_merges; ++r) {
    const auto& m = tok.merges_[r];
    const std::string expect = tok.vocab_[m[0]] + tok.vocab_[m[1]];
    if (tok.vocab_[base + r] != expect) {
      throw DataError("tokenizer file: merge table inconsistent with vocab");
    }
  }
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  write_text_file(path, serialize());
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  return deserialize(read_text_file(path));
}

}  // namespace curritune
