#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "curritune/common.hpp"

namespace curritune {

/// Byte-level subword tokenizer trained by greedy pair merging.
///
/// Construction: ids 0..2 are the special tokens <bos>, <eos>, <pad>; the
/// next ids cover every distinct byte of the training corpus in ascending
/// byte order; the remaining budget is filled with merge products, one per
/// learned merge, in learn order. Merge selection is by highest pair
/// frequency, ties broken by the lexicographically smallest
/// (left token string, right token string) pair, so training is fully
/// deterministic. Training stops when the vocabulary budget is exhausted or
/// no adjacent pair occurs at least twice.
///
/// encode() maps text to ids by byte lookup followed by repeated application
/// of the earliest-learned merge present; decode() concatenates token bytes
/// and renders special tokens as empty strings. decode(encode(s)) == s holds
/// for any s over the training alphabet; bytes outside it are an error.
///
/// Serialization is a versioned text format (token bytes hex-encoded) that
/// is byte-stable across runs and platforms; see save()/load().
class Tokenizer {
 public:
  static constexpr std::int32_t kBosId = 0;
  static constexpr std::int32_t kEosId = 1;
  static constexpr std::int32_t kPadId = 2;
  static constexpr int kNumSpecials = 3;

  /// Learns a tokenizer over the given texts. vocab_size bounds the total id
  /// count (specials + alphabet + merges) and must admit at least the
  /// alphabet and the specials.
  static Tokenizer train(const std::vector<std::string>& texts, int vocab_size,
                         std::uint64_t seed);

  std::vector<std::int32_t> encode(std::string_view text) const;
  std::string decode(std::span<const std::int32_t> ids) const;

  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  std::int32_t bos_id() const { return kBosId; }
  std::int32_t eos_id() const { return kEosId; }
  std::int32_t pad_id() const { return kPadId; }
  std::uint64_t seed() const { return seed_; }

  /// Token byte string for an id. Special tokens carry no bytes and return
  /// the empty string, which is also how decode() renders them.
  const std::string& token(std::int32_t id) const;

  std::string serialize() const;
  static Tokenizer deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  /// Digest of the serialized form; identifies the tokenizer in cache and
  /// manifest headers.
  std::string digest() const { return digest_of(serialize()); }

 private:
  Tokenizer() = default;

  std::uint64_t seed_ = 0;
  std::vector<std::string> vocab_;                   // id -> bytes ("" for specials)
  std::vector<std::int32_t> byte_to_id_;             // 256 entries, -1 if absent
  std::vector<std::array<std::int32_t, 2>> merges_;  // rank -> (left, right)
  std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> merge_rank_;

  void rebuild_lookup();
};

}  // namespace curritune
