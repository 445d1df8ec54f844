#include "docmatch/render.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>

#include "docmatch/error.hpp"
#include "docmatch/unicode.hpp"

namespace docmatch {
namespace {

constexpr Method kAllMethods[] = {Method::kShap, Method::kExtractiveSummary, Method::kCooccurrence,
                                  Method::kSemantic};

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string format_alpha(double alpha) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f", alpha);
  return buf;
}

struct Segment {
  std::size_t start;
  std::size_t end;
  std::optional<std::size_t> span;  // index of the styling span
};

// Splits the document at every span boundary and picks the innermost covering span per piece.
std::vector<Segment> segment(const Document& doc, const HighlightSet& highlights) {
  const auto& spans = highlights.spans;
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > doc.length()) {
      throw Error(Errc::kSpanOutOfRange, "[" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                             ") in document of length " + std::to_string(doc.length()));
    }
  }
  std::set<std::size_t> cuts{0, doc.length()};
  for (const auto& s : spans) {
    cuts.insert(s.start);
    cuts.insert(s.end);
  }
  std::vector<Segment> out;
  for (auto it = cuts.begin(); std::next(it) != cuts.end(); ++it) {
    const std::size_t a = *it, b = *std::next(it);
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < spans.size(); ++k) {
      if (spans[k].start > a || spans[k].end < b) continue;
      if (!best || spans[k].end - spans[k].start <= spans[*best].end - spans[*best].start) best = k;
    }
    if (!out.empty() && out.back().span == best) {
      out.back().end = b;
    } else {
      out.push_back({a, b, best});
    }
  }
  return out;
}

std::vector<bool> nested_flags(const HighlightSet& highlights) {
  const auto& spans = highlights.spans;
  std::vector<bool> nested(spans.size(), false);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    for (std::size_t j = 0; j < spans.size() && !nested[i]; ++j) {
      if (i == j) continue;
      const bool covers = spans[j].start <= spans[i].start && spans[j].end >= spans[i].end;
      const std::size_t outer = spans[j].end - spans[j].start, inner = spans[i].end - spans[i].start;
      // Identical extents: the later span is the overlay.
      nested[i] = covers && (outer > inner || (outer == inner && j < i));
    }
  }
  return nested;
}

}  // namespace

Rgb parse_hex_color(std::string_view hex) {
  if (hex.size() != 7 || hex[0] != '#') throw Error(Errc::kConfig, "expected #rrggbb color, got " + std::string(hex));
  int v[6];
  for (int i = 0; i < 6; ++i) {
    v[i] = hex_digit(hex[static_cast<std::size_t>(i) + 1]);
    if (v[i] < 0) throw Error(Errc::kConfig, "bad hex color " + std::string(hex));
  }
  return {static_cast<std::uint8_t>(v[0] * 16 + v[1]), static_cast<std::uint8_t>(v[2] * 16 + v[3]),
          static_cast<std::uint8_t>(v[4] * 16 + v[5])};
}

std::string to_hex(Rgb color) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", color.r, color.g, color.b);
  return buf;
}

Palette Palette::defaults() {
  Palette p;
  auto rgb = [](std::string_view hex) { return parse_hex_color(hex); };
  p.colors_[Method::kShap] = {rgb("#00ffff"), rgb("#ff69b4")};
  p.colors_[Method::kExtractiveSummary] = {rgb("#ffd54f")};
  const std::vector<Rgb> task = {rgb("#ff8fab"), rgb("#6fa8ff"), rgb("#ffe14d"),
                                 rgb("#7ed957"), rgb("#c39bff"), rgb("#ffb347")};
  p.colors_[Method::kCooccurrence] = task;
  p.colors_[Method::kSemantic] = task;
  return p;
}

void Palette::check() const {
  if (!(alpha_floor_ >= 0.0 && alpha_floor_ <= 1.0)) throw Error(Errc::kConfig, "alpha_floor must be in [0, 1]");
  for (Method m : kAllMethods) {
    const auto it = colors_.find(m);
    if (it == colors_.end() || it->second.empty()) {
      throw Error(Errc::kConfig, "palette has no colors for " + std::string(to_string(m)));
    }
  }
  if (colors_.at(Method::kShap).size() != 2) throw Error(Errc::kConfig, "SHAP palette needs exactly 2 channels");
  for (Method m : {Method::kCooccurrence, Method::kSemantic}) {
    if (colors_.at(m).size() < 3) {
      throw Error(Errc::kConfig, std::string(to_string(m)) + " palette needs at least 3 channels");
    }
  }
}

Palette Palette::from_json(const nlohmann::json& value) {
  Palette p = defaults();
  try {
    for (Method m : kAllMethods) {
      const std::string key(to_string(m));
      if (!value.contains(key)) continue;
      std::vector<Rgb> colors;
      for (const auto& c : value.at(key)) colors.push_back(parse_hex_color(c.get<std::string>()));
      p.colors_[m] = std::move(colors);
    }
    if (value.contains("alpha_floor")) p.alpha_floor_ = value.at("alpha_floor").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kConfig, std::string("bad palette: ") + e.what());
  }
  p.check();
  return p;
}

Palette Palette::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIoError, "cannot open palette " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kConfig, std::string("bad palette: ") + e.what());
  }
}

const std::vector<Rgb>& Palette::colors(Method method) const { return colors_.at(method); }

Rgb Palette::color(Method method, std::size_t channel) const {
  const auto& c = colors(method);
  return c[channel % c.size()];
}

double Palette::alpha(double intensity) const noexcept {
  return alpha_floor_ + (1.0 - alpha_floor_) * std::clamp(intensity, 0.0, 1.0);
}

std::string escape_html(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string render_html(const Document& doc, const HighlightSet& highlights, const Palette& palette) {
  const auto segments = segment(doc, highlights);
  const auto nested = nested_flags(highlights);
  std::string out;
  out.reserve(doc.text().size() * 2);
  for (const auto& seg : segments) {
    const std::string text = escape_html(doc.slice(seg.start, seg.end));
    if (!seg.span) {
      out += text;
      continue;
    }
    const auto& span = highlights.spans[*seg.span];
    const Rgb c = palette.color(highlights.method, span.channel);
    out += "<span class=\"";
    out += nested[*seg.span] ? "hl hl-phrase" : "hl";
    out += "\" data-channel=\"" + std::to_string(span.channel) + "\" style=\"background-color:rgba(";
    out += std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b) + ",";
    out += format_alpha(nested[*seg.span] ? 1.0 : palette.alpha(span.intensity));
    out += ")\">" + text + "</span>";
  }
  return out;
}

nlohmann::ordered_json render_view_model(const Document& doc, const HighlightSet& highlights, const Palette& palette) {
  const auto segments = segment(doc, highlights);
  const auto nested = nested_flags(highlights);
  nlohmann::ordered_json out;
  out["document_id"] = doc.id();
  out["method"] = to_string(highlights.method);
  out["segments"] = nlohmann::ordered_json::array();
  for (const auto& seg : segments) {
    nlohmann::ordered_json item;
    item["start"] = seg.start;
    item["end"] = seg.end;
    item["text"] = doc.slice(seg.start, seg.end);
    if (seg.span) {
      const auto& span = highlights.spans[*seg.span];
      item["channel"] = span.channel;
      item["intensity"] = span.intensity;
      item["color"] = to_hex(palette.color(highlights.method, span.channel));
      item["alpha"] = nested[*seg.span] ? 1.0 : palette.alpha(span.intensity);
      item["phrase"] = static_cast<bool>(nested[*seg.span]);
    }
    out["segments"].push_back(std::move(item));
  }
  return out;
}

std::string strip_highlights(std::string_view html) {
  std::string out;
  out.reserve(html.size());
  std::size_t depth = 0;
  std::size_t i = 0;
  const auto fail = [&i](const std::string& why) {
    return Error(Errc::kMalformedMarkup, why + " at byte " + std::to_string(i));
  };
  while (i < html.size()) {
    const char c = html[i];
    if (c == '<') {
      if (html.substr(i, 7) == "</span>") {
        if (depth == 0) throw fail("unbalanced </span>");
        --depth;
        i += 7;
        continue;
      }
      if (html.substr(i, 6) != "<span " && html.substr(i, 6) != "<span>") throw fail("unexpected tag");
      i += 5;
      // Attributes: name="value" pairs, values without raw quotes.
      while (i < html.size() && html[i] != '>') {
        if (html[i] == '"') {
          const auto close = html.find('"', i + 1);
          if (close == std::string_view::npos) throw fail("unterminated attribute");
          i = close + 1;
        } else if (html[i] == '<') {
          throw fail("'<' inside tag");
        } else {
          ++i;
        }
      }
      if (i == html.size()) throw fail("unterminated tag");
      ++i;
      ++depth;
      continue;
    }
    if (c == '>') throw fail("stray '>'");
    if (c == '&') {
      const auto semi = html.find(';', i);
      if (semi == std::string_view::npos || semi - i > 10) throw fail("unterminated entity");
      const std::string_view name = html.substr(i + 1, semi - i - 1);
      if (name == "amp") {
        out.push_back('&');
      } else if (name == "lt") {
        out.push_back('<');
      } else if (name == "gt") {
        out.push_back('>');
      } else if (name == "quot") {
        out.push_back('"');
      } else if (name.size() > 1 && name[0] == '#') {
        const bool hex = name[1] == 'x' || name[1] == 'X';
        const std::string digits(name.substr(hex ? 2 : 1));
        if (digits.empty()) throw fail("empty numeric entity");
        std::size_t used = 0;
        unsigned long cp = 0;
        try {
          cp = std::stoul(digits, &used, hex ? 16 : 10);
        } catch (const std::exception&) {
          throw fail("bad numeric entity");
        }
        if (used != digits.size() || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) throw fail("bad numeric entity");
        unicode::append_utf8(out, static_cast<char32_t>(cp));
      } else {
        throw fail("unknown entity");
      }
      i = semi + 1;
      continue;
    }
    out.push_back(c);
    ++i;
  }
  if (depth != 0) throw Error(Errc::kMalformedMarkup, "unclosed <span>");
  return out;
}

}  // namespace docmatch
