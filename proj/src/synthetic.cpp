#include "translico/synthetic.hpp"

#include <set>

#include "translico/errors.hpp"
#include "translico/rng.hpp"
#include "translico/unicode.hpp"

namespace translico {

namespace {

constexpr std::size_t kSuccessors = 5;
constexpr double kFollowChain = 0.7;

char32_t cipher_base(ScriptTag script) {
  switch (script) {
    case ScriptTag::ToyA: return 0xE000;
    case ScriptTag::ToyB: return 0xE100;
    default: return 0;
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (lexicon_size < 2) throw ConfigError("lexicon size must be >= 2");
  if (count == 0) throw ConfigError("sentence count must be >= 1");
  if (min_words == 0 || max_words < min_words) throw ConfigError("sentence length range is invalid");
  if (scripts.empty()) throw ConfigError("at least one output script is required");
  std::set<ScriptTag> seen;
  for (auto s : scripts) {
    if (s != ScriptTag::Latn && s != ScriptTag::ToyA && s != ScriptTag::ToyB) {
      throw ConfigError("synthetic scripts are limited to Latn, ToyA and ToyB");
    }
    if (!seen.insert(s).second) throw ConfigError("duplicate synthetic script");
  }
}

std::vector<std::string> synthetic_lexicon(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = Rng::stream(spec.seed, "lexicon");
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < spec.lexicon_size) {
    const std::size_t len = 2 + rng.uniform_index(6);
    std::string w;
    for (std::size_t i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + rng.uniform_index(26)));
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

std::string encipher(const std::string& latin, ScriptTag script) {
  const char32_t base = cipher_base(script);
  if (base == 0) return latin;
  std::string out;
  for (char c : latin) {
    if (c >= 'a' && c <= 'z') {
      unicode::append_utf8(out, base + static_cast<char32_t>(c - 'a'));
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::vector<SentencePair> gen_synthetic(const SyntheticSpec& spec) {
  const auto lexicon = synthetic_lexicon(spec);
  const std::size_t v = lexicon.size();

  Rng chain_rng = Rng::stream(spec.seed, "chain");
  std::vector<std::vector<std::size_t>> successors(v);
  for (auto& s : successors) s = chain_rng.sample_without_replacement(v, std::min(kSuccessors, v));

  Rng rng = Rng::stream(spec.seed, "sentences");
  std::vector<SentencePair> out;
  out.reserve(spec.count * spec.scripts.size());
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::size_t words = spec.min_words + rng.uniform_index(spec.max_words - spec.min_words + 1);
    std::size_t w = rng.uniform_index(v);
    std::string sentence = lexicon[w];
    for (std::size_t k = 1; k < words; ++k) {
      if (rng.uniform01() < kFollowChain) {
        w = successors[w][rng.uniform_index(successors[w].size())];
      } else {
        w = rng.uniform_index(v);
      }
      sentence += ' ';
      sentence += lexicon[w];
    }
    for (auto script : spec.scripts) {
      SentencePair p;
      p.id = "syn-" + std::to_string(i) + "-" + std::string(to_string(script));
      p.lang = "syn";
      p.script = script;
      p.text = encipher(sentence, script);
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace translico
