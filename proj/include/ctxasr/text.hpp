#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ctxasr/common.hpp"

namespace ctxasr {

// Language codes recognized by the pipeline.
inline const std::vector<std::string>& known_languages() {
  static const std::vector<std::string> langs = {
      "en-us", "en-au", "en-gb", "en-ph", "en-in", "fr", "de", "it",
      "ja",    "ko",    "pt",    "ru",    "es",    "th", "vi"};
  return langs;
}

inline bool is_known_language(std::string_view lang) {
  for (const auto& l : known_languages())
    if (l == lang) return true;
  return false;
}

// Languages without clear word boundaries are handled at character
// granularity (tokenization and CER).
inline bool is_char_level_language(std::string_view lang) {
  return lang == "ja" || lang == "ko" || lang == "th";
}

inline bool is_latin_script_language(std::string_view lang) {
  return lang.substr(0, 2) == "en" || lang == "fr" || lang == "de" || lang == "it" ||
         lang == "pt" || lang == "es" || lang == "vi";
}

// ---------------------------------------------------------------------------
// UTF-8
// ---------------------------------------------------------------------------

inline std::vector<std::uint32_t> decode_utf8(std::string_view s) {
  std::vector<std::uint32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::uint32_t cp = 0;
    std::size_t n = 0;
    if (b0 < 0x80) {
      cp = b0;
      n = 1;
    } else if ((b0 & 0xe0) == 0xc0) {
      cp = b0 & 0x1f;
      n = 2;
    } else if ((b0 & 0xf0) == 0xe0) {
      cp = b0 & 0x0f;
      n = 3;
    } else if ((b0 & 0xf8) == 0xf0) {
      cp = b0 & 0x07;
      n = 4;
    } else {
      throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    if (i + n > s.size()) throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
    for (std::size_t k = 1; k < n; ++k) {
      const auto bk = static_cast<unsigned char>(s[i + k]);
      if ((bk & 0xc0) != 0x80)
        throw DataError("invalid UTF-8 continuation byte at offset " + std::to_string(i + k));
      cp = (cp << 6) | (bk & 0x3f);
    }
    out.push_back(cp);
    i += n;
  }
  return out;
}

inline void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

inline std::string encode_utf8(const std::vector<std::uint32_t>& cps) {
  std::string out;
  for (auto cp : cps) append_utf8(out, cp);
  return out;
}

inline bool is_space_cp(std::uint32_t cp) {
  switch (cp) {
    case 0x09: case 0x0a: case 0x0b: case 0x0c: case 0x0d: case 0x20:
    case 0x85: case 0xa0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202f: case 0x205f: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200a;
  }
}

inline bool is_punct_cp(std::uint32_t cp) {
  if (cp < 0x80) {
    const char c = static_cast<char>(cp);
    return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') ||
           (c >= '{' && c <= '~');
  }
  switch (cp) {
    case 0x3001: case 0x3002: case 0xff01: case 0xff0c: case 0xff1a:
    case 0xff1b: case 0xff1f: case 0x2018: case 0x2019: case 0x201c:
    case 0x201d: case 0x2026: case 0x00bf: case 0x00a1:
      return true;
    default:
      return false;
  }
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

// ASCII + Latin-1 lowercase. Inputs are assumed NFC-normalized; no
// canonical recomposition is attempted here.
inline std::string to_lower(std::string_view s) {
  auto cps = decode_utf8(s);
  for (auto& cp : cps) {
    if (cp >= 'A' && cp <= 'Z') cp += 0x20;
    else if (cp >= 0xc0 && cp <= 0xde && cp != 0xd7) cp += 0x20;
  }
  return encode_utf8(cps);
}

// ---------------------------------------------------------------------------
// Linguistic tokenization (lexicon, hotwords, WER scoring).
// Space-delimited languages: split on Unicode whitespace, strip leading and
// trailing punctuation per token. ja/ko/th: each non-space scalar is a token.
// ---------------------------------------------------------------------------

inline std::string strip_outer_punct(std::string_view token) {
  auto cps = decode_utf8(token);
  std::size_t b = 0, e = cps.size();
  while (b < e && is_punct_cp(cps[b])) ++b;
  while (e > b && is_punct_cp(cps[e - 1])) --e;
  return encode_utf8(std::vector<std::uint32_t>(cps.begin() + b, cps.begin() + e));
}

inline std::vector<std::string> tokenize(std::string_view text, std::string_view lang) {
  std::vector<std::string> out;
  const auto cps = decode_utf8(text);
  if (is_char_level_language(lang)) {
    for (auto cp : cps) {
      if (is_space_cp(cp)) continue;
      std::string t;
      append_utf8(t, cp);
      out.push_back(std::move(t));
    }
    return out;
  }
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      std::string stripped = strip_outer_punct(cur);
      if (!stripped.empty()) out.push_back(std::move(stripped));
      cur.clear();
    }
  };
  for (auto cp : cps) {
    if (is_space_cp(cp)) {
      flush();
    } else {
      append_utf8(cur, cp);
    }
  }
  flush();
  return out;
}

// Joiner used when rendering multi-token phrases for a language.
inline std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin,
                               std::size_t end, std::string_view lang) {
  const bool char_level = is_char_level_language(lang);
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin && !char_level) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace ctxasr
