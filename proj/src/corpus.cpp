#include "translico/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "translico/errors.hpp"
#include "translico/rng.hpp"

namespace translico {

using nlohmann::json;

std::string to_jsonl_line(const SentencePair& r) {
  json j;
  j["id"] = r.id;
  j["lang"] = r.lang;
  j["script"] = std::string(to_string(r.script));
  j["text"] = r.text;
  j["translit"] = r.translit ? json(*r.translit) : json(nullptr);
  return j.dump();
}

SentencePair parse_jsonl_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("record is not a JSON object");
  SentencePair r;
  try {
    r.id = j.at("id").get<std::string>();
    r.lang = j.value("lang", std::string("und"));
    r.text = j.at("text").get<std::string>();
    if (j.contains("script") && !j["script"].is_null()) {
      const auto code = j["script"].get<std::string>();
      const auto tag = parse_script_tag(code);
      if (!tag) throw FormatError("unknown script '" + code + "'");
      r.script = *tag;
    }
    if (j.contains("translit") && !j["translit"].is_null()) r.translit = j["translit"].get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad record field: ") + e.what());
  }
  return r;
}

std::vector<SentencePair> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::vector<SentencePair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      out.push_back(parse_jsonl_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<SentencePair>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus " + path.string());
  for (const auto& r : records) out << to_jsonl_line(r) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<SentencePair> sample_fraction(const std::vector<SentencePair>& corpus, double fraction,
                                          std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0, 1]");
  if (corpus.empty()) throw EmptyCorpus("cannot sample from an empty corpus");

  std::map<std::pair<std::string, ScriptTag>, std::vector<std::size_t>> streams;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    streams[{corpus[i].lang, corpus[i].script}].push_back(i);
  }
  std::vector<bool> keep(corpus.size(), false);
  for (auto& [key, idx] : streams) {
    Rng rng = Rng::stream(seed, "sample:" + key.first + "/" + std::string(to_string(key.second)));
    rng.shuffle(idx.begin(), idx.end());
    // Small slack keeps e.g. 0.05 * 100 at exactly 5.
    const auto take = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(idx.size()) - 1e-9));
    for (std::size_t k = 0; k < std::min(take, idx.size()); ++k) keep[idx[k]] = true;
  }
  std::vector<SentencePair> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (keep[i]) out.push_back(corpus[i]);
  }
  return out;
}

std::vector<SentencePair> build_pairs(const std::vector<SentencePair>& sentences,
                                      const Romanizer& romanizer, BuildPairsOptions options,
                                      BuildPairsStats* stats) {
  std::vector<SentencePair> out;
  out.reserve(sentences.size());
  BuildPairsStats local;
  for (const auto& s : sentences) {
    if (s.text.empty()) {
      ++local.empty_skipped;
      continue;
    }
    SentencePair p = s;
    if (!options.keep_declared_script || p.script == ScriptTag::Unknown) {
      p.script = detect_script(p.text, romanizer.ranges());
    }
    if (!options.include_latin && p.script == ScriptTag::Latn) {
      ++local.latin_excluded;
      continue;
    }
    RomanizeStats rs;
    p.translit = romanizer.romanize(p.text, &rs);
    local.unmatched_codepoints += rs.unmatched;
    out.push_back(std::move(p));
  }
  if (stats != nullptr) *stats = local;
  return out;
}

void verify_pairs(const std::vector<SentencePair>& pairs, const Romanizer& romanizer) {
  for (const auto& p : pairs) {
    if (p.text.empty()) throw FormatError("record " + p.id + " has empty text");
    if (!p.translit) throw FormatError("record " + p.id + " has no translit; run build-corpus first");
    if (*p.translit != romanizer.romanize(p.text)) {
      throw FormatError("record " + p.id + ": translit does not match romanize(text)");
    }
  }
}

}  // namespace translico
