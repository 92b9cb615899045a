// SPDX-License-Identifier: Apache-2.0
#include "sppl/text.hpp"

#include <cstdint>

#include "sppl/error.hpp"

namespace sppl {

namespace {

[[noreturn]] void bad_utf8(std::string_view context, std::size_t offset) {
  std::string msg;
  if (!context.empty()) {
    msg.append(context);
    msg.append(": ");
  }
  msg += "invalid UTF-8 at byte " + std::to_string(offset);
  throw_data(msg);
}

}  // namespace

std::u32string utf8_decode(std::string_view s, std::string_view context) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<std::uint8_t>(s[i]);
    std::size_t len;
    char32_t cp;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      bad_utf8(context, i);
    }
    if (i + len > s.size()) bad_utf8(context, i);
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<std::uint8_t>(s[i + k]);
      if ((b & 0xC0) != 0x80) bad_utf8(context, i + k);
      cp = (cp << 6) | (b & 0x3F);
    }
    // Reject overlong encodings and surrogate range.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
      bad_utf8(context, i);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

std::string utf8_encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (const char32_t cp : s) out += utf8_encode(cp);
  return out;
}

bool is_space_cp(char32_t cp) {
  switch (cp) {
    case U'\t':
    case U'\n':
    case U'\v':
    case U'\f':
    case U'\r':
    case U' ':
    case 0x0085:  // NEL
    case 0x00A0:  // no-break space
    case 0x1680:
    case 0x2028:
    case 0x2029:
    case 0x202F:
    case 0x205F:
    case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_punct_or_symbol_cp(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
           (cp >= 0x7B && cp <= 0x7E);
  }
  struct Range {
    char32_t lo, hi;
  };
  static constexpr Range ranges[] = {
      {0x00A1, 0x00BF},  // Latin-1 punctuation and symbols
      {0x00D7, 0x00D7},  // multiplication sign
      {0x00F7, 0x00F7},  // division sign
      {0x2010, 0x2027},  // dashes, quotes, daggers, bullet, ellipsis
      {0x2030, 0x205E},  // per mille .. misc punctuation
      {0x2070, 0x2070},
      {0x2190, 0x2BFF},  // arrows, math operators, technical, shapes, dingbats
      {0x2E00, 0x2E7F},  // supplemental punctuation
      {0x3001, 0x303F},  // CJK symbols and punctuation (minus ideographic space)
      {0x20A0, 0x20CF},  // currency symbols
      {0x2100, 0x214F},  // letterlike symbols
      {0xFE30, 0xFE6F},  // CJK compatibility / small form punctuation
      {0xFF01, 0xFF0F},  // fullwidth ASCII punctuation
      {0xFF1A, 0xFF20},
      {0xFF3B, 0xFF40},
      {0xFF5B, 0xFF65},
  };
  for (const auto& r : ranges) {
    if (cp >= r.lo && cp <= r.hi) return true;
  }
  return false;
}

std::vector<std::string> split_spaces(const std::string& line) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) words.push_back(line.substr(i, j - i));
    i = j;
  }
  return words;
}

}  // namespace sppl
