#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "translico/romanizer.hpp"

namespace translico {

// One corpus record. On ingest `translit` may be absent; build_pairs fills it.
struct SentencePair {
  std::string id;
  std::string lang;
  ScriptTag script = ScriptTag::Unknown;
  std::string text;
  std::optional<std::string> translit;
};

// JSON Lines with fields id, lang, script, text, translit (null allowed).
std::vector<SentencePair> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<SentencePair>& records);
std::string to_jsonl_line(const SentencePair& record);
SentencePair parse_jsonl_line(std::string_view line);

// Draws ceil(fraction * n) records without replacement from each
// (lang, script) stream. Each stream is shuffled with its own seed-derived
// permutation, so a stream's sample does not depend on other streams, and a
// smaller fraction selects a prefix of the same permutation. Output keeps the
// input order. Throws EmptyCorpus on empty input, ConfigError if fraction is
// outside (0, 1].
std::vector<SentencePair> sample_fraction(const std::vector<SentencePair>& corpus, double fraction,
                                          std::uint64_t seed);

struct BuildPairsOptions {
  bool include_latin = true;
  // Keep the record's declared script instead of the detected one.
  bool keep_declared_script = false;
};

struct BuildPairsStats {
  std::size_t empty_skipped = 0;
  std::size_t latin_excluded = 0;
  std::size_t unmatched_codepoints = 0;
};

// One pair per non-empty sentence with translit = romanize(text). With
// include_latin = false, sentences detected as Latn are dropped.
std::vector<SentencePair> build_pairs(const std::vector<SentencePair>& sentences,
                                      const Romanizer& romanizer, BuildPairsOptions options = {},
                                      BuildPairsStats* stats = nullptr);

// Throws FormatError naming the first record whose translit is missing or
// differs from romanize(text).
void verify_pairs(const std::vector<SentencePair>& pairs, const Romanizer& romanizer);

}  // namespace translico
