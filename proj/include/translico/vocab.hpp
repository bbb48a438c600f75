#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "translico/corpus.hpp"

namespace translico {

using TokenId = std::int32_t;

enum class Role : std::uint8_t { Cls, Sep, Pad, Content, Mask };

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<Role> roles;

  std::size_t size() const { return ids.size(); }
  // Positions that are neither [pad] nor past the end.
  std::size_t active_length() const;
  std::size_t content_length() const;
};

// Byte-level BPE vocabulary shared by original and transliterated text.
// Ids 0..4 are [pad] [unk] [cls] [sep] [mask]; ids 5..260 are the 256 single
// bytes, so every input has a tokenization; learned merges follow.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kMask = 4;
  static constexpr TokenId kNumSpecials = 5;
  static constexpr TokenId kFirstByte = kNumSpecials;
  static constexpr std::size_t kBaseSize = kNumSpecials + 256;

  // Specials and byte tokens only.
  Vocab();

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecials; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  std::uint64_t seed() const { return seed_; }

  // Greedy longest-match tokenization of each whitespace-delimited chunk.
  std::vector<TokenId> tokenize(std::string_view text) const;

  // [cls] content [sep] [pad]..., exactly max_len positions (content is
  // truncated to max_len - 2).
  TokenSequence encode(std::string_view text, std::size_t max_len) const;

  // Concatenated bytes of all non-special tokens.
  std::string decode(std::span<const TokenId> ids) const;

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend Vocab train_vocab_on_texts(const std::vector<std::string>& texts, std::size_t target_size,
                                    std::uint64_t seed);

 private:
  void add_token(std::string bytes);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::size_t max_token_bytes_ = 1;
  std::uint64_t seed_ = 0;
};

// Pre-tokenizer: chunks start at a whitespace run that follows non-whitespace;
// concatenating the chunks gives back the input.
std::vector<std::string_view> split_chunks(std::string_view text);

// Learns merges on the given texts until the vocabulary reaches target_size or
// no adjacent pair occurs at least twice. Ties on count go to the
// lexicographically smallest (left, right) pair. Throws InsufficientData if
// target_size does not exceed the base alphabet (specials + 256 bytes).
Vocab train_vocab_on_texts(const std::vector<std::string>& texts, std::size_t target_size,
                           std::uint64_t seed);

// Trains on the union of original texts and transliterations.
Vocab train_vocab(const std::vector<SentencePair>& pairs, std::size_t target_size, std::uint64_t seed);

}  // namespace translico
