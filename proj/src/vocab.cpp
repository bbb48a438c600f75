#include "translico/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "translico/errors.hpp"

namespace translico {

using nlohmann::json;

namespace {

constexpr std::string_view kSpecialNames[] = {"[pad]", "[unk]", "[cls]", "[sep]", "[mask]"};

bool is_space_byte(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

std::string escape_bytes(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (char ch : bytes) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == '\\') {
      out += "\\\\";
    } else if (c >= 0x20 && c < 0x7F) {
      out.push_back(static_cast<char>(c));
    } else {
      out += "\\x";
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xF]);
    }
  }
  return out;
}

std::string unescape_bytes(std::string_view s) {
  auto hex = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 1 < s.size() && s[i + 1] == '\\') {
      out.push_back('\\');
      ++i;
    } else if (i + 3 < s.size() && s[i + 1] == 'x' && hex(s[i + 2]) >= 0 && hex(s[i + 3]) >= 0) {
      out.push_back(static_cast<char>(hex(s[i + 2]) * 16 + hex(s[i + 3])));
      i += 3;
    } else {
      throw FormatError("bad escape in vocab token '" + std::string(s) + "'");
    }
  }
  return out;
}

}  // namespace

std::size_t TokenSequence::active_length() const {
  return static_cast<std::size_t>(std::count_if(roles.begin(), roles.end(), [](Role r) { return r != Role::Pad; }));
}

std::size_t TokenSequence::content_length() const {
  return static_cast<std::size_t>(
      std::count_if(roles.begin(), roles.end(), [](Role r) { return r == Role::Content || r == Role::Mask; }));
}

Vocab::Vocab() {
  for (auto name : kSpecialNames) tokens_.emplace_back(name);
  for (int b = 0; b < 256; ++b) add_token(std::string(1, static_cast<char>(b)));
}

void Vocab::add_token(std::string bytes) {
  const auto id = static_cast<TokenId>(tokens_.size());
  max_token_bytes_ = std::max(max_token_bytes_, bytes.size());
  index_.emplace(bytes, id);
  tokens_.push_back(std::move(bytes));
}

std::vector<std::string_view> split_chunks(std::string_view text) {
  std::vector<std::string_view> chunks;
  std::size_t start = 0;
  for (std::size_t i = 1; i < text.size(); ++i) {
    if (is_space_byte(text[i]) && !is_space_byte(text[i - 1])) {
      chunks.push_back(text.substr(start, i - start));
      start = i;
    }
  }
  if (start < text.size()) chunks.push_back(text.substr(start));
  return chunks;
}

std::vector<TokenId> Vocab::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  for (auto chunk : split_chunks(text)) {
    std::size_t pos = 0;
    while (pos < chunk.size()) {
      std::size_t len = std::min(max_token_bytes_, chunk.size() - pos);
      for (; len > 1; --len) {
        const auto it = index_.find(std::string(chunk.substr(pos, len)));
        if (it != index_.end()) {
          out.push_back(it->second);
          break;
        }
      }
      if (len == 1) out.push_back(kFirstByte + static_cast<unsigned char>(chunk[pos]));
      pos += len;
    }
  }
  return out;
}

TokenSequence Vocab::encode(std::string_view text, std::size_t max_len) const {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  auto content = tokenize(text);
  if (content.size() > max_len - 2) content.resize(max_len - 2);
  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.roles.reserve(max_len);
  seq.ids.push_back(kCls);
  seq.roles.push_back(Role::Cls);
  for (TokenId id : content) {
    seq.ids.push_back(id);
    seq.roles.push_back(Role::Content);
  }
  seq.ids.push_back(kSep);
  seq.roles.push_back(Role::Sep);
  while (seq.ids.size() < max_len) {
    seq.ids.push_back(kPad);
    seq.roles.push_back(Role::Pad);
  }
  return seq;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw IdOutOfRange("token id out of range");
    if (!is_special(id)) out += tokens_[static_cast<std::size_t>(id)];
  }
  return out;
}

json Vocab::to_json() const {
  json j;
  j["version"] = 1;
  j["seed"] = seed_;
  j["specials"] = {{"pad", kPad}, {"unk", kUnk}, {"cls", kCls}, {"sep", kSep}, {"mask", kMask}};
  json tokens = json::array();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    tokens.push_back(i < kNumSpecials ? tokens_[i] : escape_bytes(tokens_[i]));
  }
  j["tokens"] = std::move(tokens);
  json merges = json::array();
  for (const auto& [a, b] : merges_) merges.push_back({escape_bytes(a), escape_bytes(b)});
  j["merges"] = std::move(merges);
  return j;
}

Vocab Vocab::from_json(const json& j) {
  Vocab v;
  try {
    const auto& tokens = j.at("tokens");
    if (tokens.size() < kBaseSize) throw FormatError("vocab has fewer tokens than the byte base");
    for (std::size_t i = 0; i < kBaseSize; ++i) {
      const auto t = tokens[i].get<std::string>();
      if (i < kNumSpecials ? t != kSpecialNames[i] : unescape_bytes(t) != v.tokens_[i]) {
        throw FormatError("vocab base token " + std::to_string(i) + " is not the expected special/byte");
      }
    }
    for (std::size_t i = kBaseSize; i < tokens.size(); ++i) {
      auto bytes = unescape_bytes(tokens[i].get<std::string>());
      if (v.index_.count(bytes)) throw FormatError("duplicate vocab token at id " + std::to_string(i));
      v.add_token(std::move(bytes));
    }
    for (const auto& m : j.at("merges")) {
      v.merges_.emplace_back(unescape_bytes(m.at(0).get<std::string>()),
                             unescape_bytes(m.at(1).get<std::string>()));
    }
    v.seed_ = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed vocab: ") + e.what());
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocab " + path.string());
  out << to_json().dump(1) << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

Vocab train_vocab_on_texts(const std::vector<std::string>& texts, std::size_t target_size,
                           std::uint64_t seed) {
  if (target_size <= Vocab::kBaseSize) {
    throw InsufficientData("target vocabulary size " + std::to_string(target_size) +
                           " must exceed the base alphabet of " + std::to_string(Vocab::kBaseSize));
  }
  Vocab vocab;
  vocab.seed_ = seed;

  std::map<std::string, std::int64_t> chunk_counts;
  for (const auto& t : texts) {
    for (auto chunk : split_chunks(t)) ++chunk_counts[std::string(chunk)];
  }
  struct Word {
    std::vector<TokenId> symbols;
    std::int64_t count;
  };
  std::vector<Word> words;
  words.reserve(chunk_counts.size());
  for (const auto& [chunk, count] : chunk_counts) {
    Word w{{}, count};
    for (char c : chunk) w.symbols.push_back(Vocab::kFirstByte + static_cast<unsigned char>(c));
    words.push_back(std::move(w));
  }

  auto key = [](TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  };
  while (vocab.size() < target_size) {
    std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) pair_counts[key(w.symbols[i], w.symbols[i + 1])] += w.count;
    }
    std::int64_t best_count = 0;
    TokenId best_a = -1, best_b = -1;
    for (const auto& [k, count] : pair_counts) {
      const auto a = static_cast<TokenId>(k >> 32);
      const auto b = static_cast<TokenId>(k & 0xFFFFFFFFu);
      if (count > best_count ||
          (count == best_count && std::tie(vocab.token(a), vocab.token(b)) < std::tie(vocab.token(best_a), vocab.token(best_b)))) {
        best_count = count;
        best_a = a;
        best_b = b;
      }
    }
    if (best_count < 2) break;

    std::string merged = vocab.token(best_a) + vocab.token(best_b);
    vocab.merges_.emplace_back(vocab.token(best_a), vocab.token(best_b));
    TokenId merged_id;
    if (const auto it = vocab.index_.find(merged); it != vocab.index_.end()) {
      merged_id = it->second;
    } else {
      merged_id = static_cast<TokenId>(vocab.size());
      vocab.add_token(std::move(merged));
    }
    for (auto& w : words) {
      std::vector<TokenId> next;
      next.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == best_a && w.symbols[i + 1] == best_b) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(next);
    }
  }
  return vocab;
}

Vocab train_vocab(const std::vector<SentencePair>& pairs, std::size_t target_size, std::uint64_t seed) {
  std::vector<std::string> texts;
  texts.reserve(pairs.size() * 2);
  for (const auto& p : pairs) {
    texts.push_back(p.text);
    if (p.translit) texts.push_back(*p.translit);
  }
  return train_vocab_on_texts(texts, target_size, seed);
}

}  // namespace translico
