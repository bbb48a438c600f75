#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "translico/corpus.hpp"
#include "translico/romanizer.hpp"

namespace translico {

struct SyntheticSpec {
  std::size_t lexicon_size = 200;
  std::size_t count = 2000;
  std::size_t min_words = 4;
  std::size_t max_words = 10;
  // Every sentence is emitted once per listed script: ToyA and ToyB are
  // letter-for-letter ciphers of the Latin sentence, Latn is the plain text.
  std::vector<ScriptTag> scripts = {ScriptTag::ToyA, ScriptTag::Latn};
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

// Lowercase Latin words of 2 to 7 letters, all distinct.
std::vector<std::string> synthetic_lexicon(const SyntheticSpec& spec);

// Maps a-z onto the cipher block of a toy script (ToyA from U+E000, ToyB
// from U+E100) and keeps everything else. Latn returns the input.
std::string encipher(const std::string& latin, ScriptTag script);

// Sentences follow a sparse bigram chain over the lexicon so word order
// carries signal. Records come sentence by sentence with ids
// "syn-<index>-<script>", lang "syn" and no translit. The lexicon and the
// sentence stream use separate seed sub-streams, so a larger count extends a
// smaller one.
std::vector<SentencePair> gen_synthetic(const SyntheticSpec& spec);

}  // namespace translico
