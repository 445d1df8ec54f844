#include "docmatch/unicode.hpp"

#include "docmatch/error.hpp"

namespace docmatch::unicode {
namespace {

bool in(char32_t cp, char32_t lo, char32_t hi) noexcept { return cp >= lo && cp <= hi; }

// Latin Extended-A alternates case by parity, with the parity flipping in two ranges.
bool latin_ext_a_upper(char32_t cp) noexcept {
  if (in(cp, 0x100, 0x137) || in(cp, 0x14A, 0x177)) return cp % 2 == 0;
  if (in(cp, 0x139, 0x148) || in(cp, 0x179, 0x17E)) return cp % 2 == 1;
  return cp == 0x178;
}

}  // namespace

std::u32string decode(std::string_view utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  std::size_t i = 0;
  const std::size_t n = utf8.size();
  auto fail = [&i]() {
    throw Error(Errc::kInvalidUtf8, "ill-formed UTF-8 at byte " + std::to_string(i));
  };
  while (i < n) {
    const auto b0 = static_cast<unsigned char>(utf8[i]);
    if (b0 < 0x80) {
      out.push_back(b0);
      ++i;
      continue;
    }
    int len = 0;
    char32_t cp = 0;
    char32_t min = 0;
    if ((b0 & 0xE0) == 0xC0) {
      len = 2, cp = b0 & 0x1F, min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3, cp = b0 & 0x0F, min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4, cp = b0 & 0x07, min = 0x10000;
    } else {
      fail();
    }
    if (i + len > n) fail();
    for (int k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(utf8[i + k]);
      if ((b & 0xC0) != 0x80) fail();
      cp = (cp << 6) | (b & 0x3F);
    }
    if (cp < min || cp > 0x10FFFF || in(cp, 0xD800, 0xDFFF)) fail();
    out.push_back(cp);
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
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
}

std::string encode(std::u32string_view scalars) {
  std::string out;
  out.reserve(scalars.size());
  for (char32_t cp : scalars) append_utf8(out, cp);
  return out;
}

bool is_space(char32_t cp) noexcept {
  return in(cp, 0x09, 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
         in(cp, 0x2000, 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F ||
         cp == 0x205F || cp == 0x3000;
}

bool is_digit(char32_t cp) noexcept { return in(cp, '0', '9'); }

bool is_word(char32_t cp) noexcept {
  if (cp < 0x80) return is_digit(cp) || in(cp, 'a', 'z') || in(cp, 'A', 'Z');
  if (is_space(cp)) return false;
  if (in(cp, 0x80, 0x9F)) return false;
  if (in(cp, 0xA1, 0xBF)) return cp == 0xAA || cp == 0xB5 || cp == 0xBA;
  if (cp == 0xD7 || cp == 0xF7) return false;
  if (in(cp, 0x2010, 0x2027) || in(cp, 0x2030, 0x205E) || in(cp, 0x20A0, 0x20CF)) return false;
  if (in(cp, 0x2190, 0x2BFF) || in(cp, 0x3001, 0x303F)) return false;
  if (in(cp, 0xFE30, 0xFE4F) || in(cp, 0xFF01, 0xFF0F) || in(cp, 0xFF1A, 0xFF20)) return false;
  if (in(cp, 0xFF3B, 0xFF40) || in(cp, 0xFF5B, 0xFF65) || in(cp, 0x1F000, 0x1FAFF)) return false;
  return true;
}

bool is_upper(char32_t cp) noexcept {
  if (cp < 0x80) return in(cp, 'A', 'Z');
  if (in(cp, 0xC0, 0xDE)) return cp != 0xD7;
  if (in(cp, 0x100, 0x17F)) return latin_ext_a_upper(cp);
  if (in(cp, 0x391, 0x3A9)) return cp != 0x3A2;
  return in(cp, 0x400, 0x42F);
}

char32_t to_lower(char32_t cp) noexcept {
  if (!is_upper(cp)) return cp;
  if (cp < 0x80 || in(cp, 0xC0, 0xDE) || in(cp, 0x391, 0x3A9) || in(cp, 0x410, 0x42F)) {
    return cp + 0x20;
  }
  if (in(cp, 0x400, 0x40F)) return cp + 0x50;
  if (cp == 0x178) return 0xFF;
  return cp + 1;
}

}  // namespace docmatch::unicode
