#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace translico {

enum class ScriptTag : std::uint8_t { Latn, Cyrl, Grek, Deva, Arab, Hani, ToyA, ToyB, Common, Unknown };

std::string_view to_string(ScriptTag tag);
// Accepts the ISO-15924-style codes above plus "Zyyy" for Common.
std::optional<ScriptTag> parse_script_tag(std::string_view code);

struct ScriptRange {
  char32_t lo;
  char32_t hi;
  ScriptTag tag;
};

// Sorted, disjoint codepoint ranges used for script detection.
class ScriptRangeTable {
 public:
  // Throws RuleTableInvalid if ranges are unsorted, overlapping, or have lo > hi.
  explicit ScriptRangeTable(std::vector<ScriptRange> ranges);

  static const ScriptRangeTable& builtin();

  // Unknown when no range contains cp.
  ScriptTag lookup(char32_t cp) const;
  const std::vector<ScriptRange>& ranges() const { return ranges_; }

 private:
  std::vector<ScriptRange> ranges_;
};

ScriptTag detect_script(std::string_view text,
                        const ScriptRangeTable& ranges = ScriptRangeTable::builtin());

struct Rule {
  std::u32string source;
  std::string replacement;
};

// Rules for one script, kept longest-source-first so that the first match at a
// position is the longest one.
class RuleTable {
 public:
  explicit RuleTable(ScriptTag script) : script_(script) {}

  // Throws DuplicateRule, NonAsciiReplacement, or RuleTableInvalid.
  void add(Rule rule);

  // Longest rule whose source matches text at pos, or nullptr.
  const Rule* match(std::u32string_view text, std::size_t pos) const;

  ScriptTag script() const { return script_; }
  std::size_t size() const { return rules_.size(); }
  const std::vector<Rule>& rules() const { return rules_; }
  std::size_t max_replacement_length() const { return max_replacement_; }

 private:
  ScriptTag script_;
  std::vector<Rule> rules_;
  std::unordered_map<char32_t, std::vector<std::size_t>> by_first_;
  std::size_t max_replacement_ = 0;
};

class RuleSet {
 public:
  // Parses the rule-file format: '@script <TAG>' headers, '<source>\t<replacement>'
  // rules, '#' comments. Throws ParseError (with line number), DuplicateRule,
  // NonAsciiReplacement.
  static RuleSet parse(std::string_view content);
  static const RuleSet& builtin();

  const RuleTable* find(ScriptTag tag) const;
  const std::map<ScriptTag, RuleTable>& tables() const { return tables_; }
  std::size_t max_replacement_length() const;

 private:
  std::map<ScriptTag, RuleTable> tables_;
};

RuleSet load_rule_tables(const std::filesystem::path& path);

enum class Fallback { Drop, Escape };

struct RomanizeOptions {
  bool keep_case = false;
  Fallback fallback = Fallback::Drop;
};

struct RomanizeStats {
  std::size_t unmatched = 0;
  // First few unmatched codepoints, for diagnostics.
  std::vector<char32_t> examples;
};

// Deterministic romanizer over immutable tables. Safe to share across threads.
class Romanizer {
 public:
  explicit Romanizer(RuleSet rules = RuleSet::builtin(),
                     ScriptRangeTable ranges = ScriptRangeTable::builtin(),
                     RomanizeOptions options = {});

  std::string romanize(std::string_view text, RomanizeStats* stats = nullptr) const;

  // Upper bound K on output codepoints per input codepoint.
  std::size_t expansion_bound() const;

  const RuleSet& rules() const { return rules_; }
  const ScriptRangeTable& ranges() const { return ranges_; }
  const RomanizeOptions& options() const { return options_; }

 private:
  RuleSet rules_;
  ScriptRangeTable ranges_;
  RomanizeOptions options_;
};

std::string romanize(std::string_view text, const RuleSet& rules,
                     const ScriptRangeTable& ranges = ScriptRangeTable::builtin(),
                     RomanizeOptions options = {});

}  // namespace translico
