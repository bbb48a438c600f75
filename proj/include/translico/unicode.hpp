#pragma once

#include <string>
#include <string_view>

namespace translico::unicode {

inline constexpr char32_t kReplacementChar = 0xFFFD;

// Lenient UTF-8 decoding: each invalid or truncated sequence becomes U+FFFD.
std::u32string decode_utf8(std::string_view bytes);
std::string encode_utf8(std::u32string_view cps);
void append_utf8(std::string& out, char32_t cp);

bool is_whitespace(char32_t cp);
bool is_combining_mark(char32_t cp);

// Simple one-to-one case mapping for ASCII, Latin-1, Latin Extended-A,
// Greek and Cyrillic. Other codepoints are returned unchanged.
char32_t simple_lower(char32_t cp);

// Precomposed Latin letter -> ASCII spelling of its base letter(s), or
// nullptr when cp is not a foldable Latin letter.
const char* latin_fold(char32_t cp);

}  // namespace translico::unicode
