#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace docmatch::unicode {

// Strict UTF-8 decode. Throws Error(kInvalidUtf8) on ill-formed input.
std::u32string decode(std::string_view utf8);
std::string encode(std::u32string_view scalars);
void append_utf8(std::string& out, char32_t cp);

bool is_space(char32_t cp) noexcept;
// Letters and digits; unassigned classes above ASCII default to word characters
// unless they fall in a known punctuation or symbol block.
bool is_word(char32_t cp) noexcept;
bool is_upper(char32_t cp) noexcept;
bool is_digit(char32_t cp) noexcept;
char32_t to_lower(char32_t cp) noexcept;

}  // namespace docmatch::unicode
