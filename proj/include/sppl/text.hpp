// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sppl {

// Decodes UTF-8 into code points. Throws a data error naming the byte
// offset on malformed input; `context` is prefixed to the message.
std::u32string utf8_decode(std::string_view s, std::string_view context = {});

std::string utf8_encode(std::u32string_view s);
std::string utf8_encode(char32_t cp);

// Whitespace per the preprocessing rules: ASCII whitespace plus the common
// Unicode space separators.
bool is_space_cp(char32_t cp);

// Punctuation and standalone symbols stripped by preprocessing. Compact
// range table covering ASCII, Latin-1, general/supplemental punctuation,
// currency, arrows, math and CJK/fullwidth forms; letters and digits are
// never matched.
bool is_punct_or_symbol_cp(char32_t cp);

// Splits on single ASCII spaces; suited to preprocessed sentences whose
// whitespace is already collapsed.
std::vector<std::string> split_spaces(const std::string& line);

}  // namespace sppl
