#include "translico/romanizer.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "translico/errors.hpp"
#include "translico/unicode.hpp"

namespace translico {

namespace detail {
extern const std::string_view kDefaultRules;
}

namespace {

constexpr std::array<std::string_view, 10> kTagNames = {
    "Latn", "Cyrl", "Grek", "Deva", "Arab", "Hani", "ToyA", "ToyB", "Zyyy", "Unknown"};

constexpr std::size_t kEscapeMaxLength = 9;  // "{u10ffff}"

std::vector<ScriptRange> builtin_ranges() {
  using S = ScriptTag;
  return {
      {0x0000, 0x0040, S::Common}, {0x0041, 0x005A, S::Latn},   {0x005B, 0x0060, S::Common},
      {0x0061, 0x007A, S::Latn},   {0x007B, 0x00BF, S::Common}, {0x00C0, 0x00D6, S::Latn},
      {0x00D7, 0x00D7, S::Common}, {0x00D8, 0x00F6, S::Latn},   {0x00F7, 0x00F7, S::Common},
      {0x00F8, 0x02AF, S::Latn},   {0x02B0, 0x036F, S::Common}, {0x0370, 0x03FF, S::Grek},
      {0x0400, 0x052F, S::Cyrl},   {0x0600, 0x06FF, S::Arab},   {0x0900, 0x097F, S::Deva},
      {0x1AB0, 0x1AFF, S::Common}, {0x1DC0, 0x1DFF, S::Common}, {0x1E00, 0x1EFF, S::Latn},
      {0x1F00, 0x1FFF, S::Grek},   {0x2000, 0x206F, S::Common}, {0x20D0, 0x20FF, S::Common},
      {0x3000, 0x303F, S::Common}, {0x3400, 0x4DBF, S::Hani},   {0x4E00, 0x9FFF, S::Hani},
      {0xE000, 0xE0FF, S::ToyA},   {0xE100, 0xE1FF, S::ToyB},   {0xFE20, 0xFE2F, S::Common},
  };
}

bool is_ascii(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; });
}

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : c; }
char ascii_upper(char c) { return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 32) : c; }

void append_ascii(std::string& out, std::string_view s, bool keep_case) {
  for (char c : s) out.push_back(keep_case ? c : ascii_lower(c));
}

bool matches_at(std::u32string_view text, std::size_t pos, const std::u32string& source) {
  return text.size() - pos >= source.size() && text.compare(pos, source.size(), source) == 0;
}

}  // namespace

std::string_view to_string(ScriptTag tag) { return kTagNames[static_cast<std::size_t>(tag)]; }

std::optional<ScriptTag> parse_script_tag(std::string_view code) {
  for (std::size_t i = 0; i < kTagNames.size(); ++i) {
    if (kTagNames[i] == code) return static_cast<ScriptTag>(i);
  }
  if (code == "Common") return ScriptTag::Common;
  return std::nullopt;
}

ScriptRangeTable::ScriptRangeTable(std::vector<ScriptRange> ranges) : ranges_(std::move(ranges)) {
  for (std::size_t i = 0; i < ranges_.size(); ++i) {
    if (ranges_[i].lo > ranges_[i].hi) throw RuleTableInvalid("script range with lo > hi");
    if (i > 0 && ranges_[i - 1].hi >= ranges_[i].lo) {
      throw RuleTableInvalid("script ranges must be sorted and disjoint");
    }
  }
}

const ScriptRangeTable& ScriptRangeTable::builtin() {
  static const ScriptRangeTable table(builtin_ranges());
  return table;
}

ScriptTag ScriptRangeTable::lookup(char32_t cp) const {
  const auto it = std::upper_bound(ranges_.begin(), ranges_.end(), cp,
                                   [](char32_t c, const ScriptRange& r) { return c < r.lo; });
  if (it == ranges_.begin()) return ScriptTag::Unknown;
  const auto& r = *std::prev(it);
  return cp <= r.hi ? r.tag : ScriptTag::Unknown;
}

ScriptTag detect_script(std::string_view text, const ScriptRangeTable& ranges) {
  // Counts indexed by tag, plus first-seen order for tie-breaking.
  std::array<std::size_t, kTagNames.size()> counts{};
  std::vector<ScriptTag> order;
  bool any_common = false;
  for (char32_t cp : unicode::decode_utf8(text)) {
    const ScriptTag tag = ranges.lookup(cp);
    if (tag == ScriptTag::Unknown) continue;
    if (tag == ScriptTag::Common) {
      any_common = true;
      continue;
    }
    if (counts[static_cast<std::size_t>(tag)]++ == 0) order.push_back(tag);
  }
  if (order.empty()) return any_common ? ScriptTag::Common : ScriptTag::Unknown;
  ScriptTag best = order.front();
  for (ScriptTag tag : order) {
    if (counts[static_cast<std::size_t>(tag)] > counts[static_cast<std::size_t>(best)]) best = tag;
  }
  return best;
}

void RuleTable::add(Rule rule) {
  if (rule.source.empty()) throw RuleTableInvalid("rule with empty source");
  if (!is_ascii(rule.replacement)) {
    throw NonAsciiReplacement("replacement '" + rule.replacement + "' for source '" +
                              unicode::encode_utf8(rule.source) + "' is not ASCII");
  }
  // An ASCII source would rewrite romanizer output and break idempotence.
  if (std::all_of(rule.source.begin(), rule.source.end(), [](char32_t c) { return c < 0x80; })) {
    throw RuleTableInvalid("rule source '" + unicode::encode_utf8(rule.source) + "' is ASCII");
  }
  for (const auto& existing : rules_) {
    if (existing.source == rule.source) {
      throw DuplicateRule("duplicate rule for source '" + unicode::encode_utf8(rule.source) +
                          "' in script " + std::string(to_string(script_)));
    }
  }
  max_replacement_ = std::max(max_replacement_, rule.replacement.size());
  const auto pos = std::upper_bound(rules_.begin(), rules_.end(), rule.source.size(),
                                    [](std::size_t len, const Rule& r) { return len > r.source.size(); });
  rules_.insert(pos, std::move(rule));
  by_first_.clear();
  for (std::size_t i = 0; i < rules_.size(); ++i) by_first_[rules_[i].source.front()].push_back(i);
}

const Rule* RuleTable::match(std::u32string_view text, std::size_t pos) const {
  if (pos >= text.size()) return nullptr;
  const auto it = by_first_.find(text[pos]);
  if (it == by_first_.end()) return nullptr;
  for (std::size_t idx : it->second) {
    if (matches_at(text, pos, rules_[idx].source)) return &rules_[idx];
  }
  return nullptr;
}

RuleSet RuleSet::parse(std::string_view content) {
  RuleSet set;
  RuleTable* current = nullptr;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= content.size()) {
    auto end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') {
      if (end == content.size()) break;
      continue;
    }
    if (line.rfind("@script", 0) == 0) {
      auto code = line.substr(7);
      while (!code.empty() && (code.front() == ' ' || code.front() == '\t')) code.remove_prefix(1);
      while (!code.empty() && (code.back() == ' ' || code.back() == '\t')) code.remove_suffix(1);
      const auto tag = parse_script_tag(code);
      if (!tag || *tag == ScriptTag::Unknown) {
        throw ParseError("unknown script tag '" + std::string(code) + "'", line_no);
      }
      current = &set.tables_.try_emplace(*tag, *tag).first->second;
    } else {
      if (current == nullptr) throw ParseError("rule before any '@script' header", line_no);
      const auto tab = line.find('\t');
      if (tab == std::string_view::npos) throw ParseError("expected '<source>\\t<replacement>'", line_no);
      const auto source = unicode::decode_utf8(line.substr(0, tab));
      if (std::find(source.begin(), source.end(), unicode::kReplacementChar) != source.end()) {
        throw ParseError("rule source is not valid UTF-8", line_no);
      }
      if (source.empty()) throw ParseError("empty rule source", line_no);
      try {
        current->add(Rule{source, std::string(line.substr(tab + 1))});
      } catch (const DuplicateRule& e) {
        throw DuplicateRule("line " + std::to_string(line_no) + ": " + e.what());
      } catch (const NonAsciiReplacement& e) {
        throw NonAsciiReplacement("line " + std::to_string(line_no) + ": " + e.what());
      } catch (const RuleTableInvalid& e) {
        throw ParseError(e.what(), line_no);
      }
    }
    if (end == content.size()) break;
  }
  return set;
}

const RuleSet& RuleSet::builtin() {
  static const RuleSet set = parse(detail::kDefaultRules);
  return set;
}

const RuleTable* RuleSet::find(ScriptTag tag) const {
  const auto it = tables_.find(tag);
  return it == tables_.end() ? nullptr : &it->second;
}

std::size_t RuleSet::max_replacement_length() const {
  std::size_t k = 0;
  for (const auto& [tag, table] : tables_) k = std::max(k, table.max_replacement_length());
  return k;
}

RuleSet load_rule_tables(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open rule file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return RuleSet::parse(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

Romanizer::Romanizer(RuleSet rules, ScriptRangeTable ranges, RomanizeOptions options)
    : rules_(std::move(rules)), ranges_(std::move(ranges)), options_(options) {}

std::size_t Romanizer::expansion_bound() const {
  std::size_t k = std::max<std::size_t>(rules_.max_replacement_length(), 2);
  if (options_.fallback == Fallback::Escape) k = std::max(k, kEscapeMaxLength);
  return k;
}

std::string Romanizer::romanize(std::string_view text, RomanizeStats* stats) const {
  const std::u32string cps = unicode::decode_utf8(text);
  std::u32string folded(cps.size(), 0);
  std::transform(cps.begin(), cps.end(), folded.begin(), unicode::simple_lower);

  const bool keep_case = options_.keep_case;
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < cps.size()) {
    const char32_t cp = cps[i];
    if (const RuleTable* table = rules_.find(ranges_.lookup(cp))) {
      const Rule* rule = table->match(cps, i);
      bool via_fold = false;
      if (rule == nullptr && folded[i] != cp) {
        rule = table->match(folded, i);
        via_fold = rule != nullptr;
      }
      if (rule != nullptr) {
        if (via_fold && keep_case && !rule->replacement.empty()) {
          // Uppercase source: title-case the replacement.
          out.push_back(ascii_upper(rule->replacement.front()));
          out.append(rule->replacement, 1);
        } else {
          append_ascii(out, rule->replacement, keep_case);
        }
        i += rule->source.size();
        continue;
      }
    }
    ++i;
    if (cp < 0x80) {
      out.push_back(keep_case ? static_cast<char>(cp) : ascii_lower(static_cast<char>(cp)));
    } else if (unicode::is_whitespace(cp)) {
      unicode::append_utf8(out, cp);
    } else if (const char* base = unicode::latin_fold(cp)) {
      append_ascii(out, base, keep_case);
    } else if (unicode::is_combining_mark(cp)) {
      // Diacritics and tone marks are dropped.
    } else {
      if (stats != nullptr) {
        ++stats->unmatched;
        if (stats->examples.size() < 8) stats->examples.push_back(cp);
      }
      if (options_.fallback == Fallback::Escape) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "{u%04x}", static_cast<unsigned>(cp));
        out += buf;
      }
    }
  }
  return out;
}

std::string romanize(std::string_view text, const RuleSet& rules, const ScriptRangeTable& ranges,
                     RomanizeOptions options) {
  return Romanizer(rules, ranges, options).romanize(text);
}

}  // namespace translico
