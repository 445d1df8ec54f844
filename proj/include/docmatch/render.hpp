#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "docmatch/corpus.hpp"
#include "docmatch/highlighters.hpp"

namespace docmatch {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  bool operator==(const Rgb&) const = default;
};

Rgb parse_hex_color(std::string_view hex);
std::string to_hex(Rgb color);

// Base colors per method and channel plus the intensity-to-alpha ramp, which
// is linear from `alpha_floor` at intensity 0 to 1 at intensity 1.
class Palette {
 public:
  static Palette defaults();
  // {"Shap": ["#00ffff", "#ff69b4"], ..., "alpha_floor": 0.25}; missing methods keep defaults.
  static Palette from_json(const nlohmann::json& value);
  static Palette load(const std::filesystem::path& path);

  const std::vector<Rgb>& colors(Method method) const;
  // Channels beyond the palette cycle through it.
  Rgb color(Method method, std::size_t channel) const;
  double alpha(double intensity) const noexcept;
  double alpha_floor() const noexcept { return alpha_floor_; }

 private:
  void check() const;

  std::map<Method, std::vector<Rgb>> colors_;
  double alpha_floor_ = 0.25;
};

std::string escape_html(std::string_view text);

// HTML fragment: escaped document text with <span> runs for highlighted
// segments. Overlapping spans are split at their boundaries and the innermost
// (shortest) span styles each piece; spans nested in a longer span render with
// the phrase class. Throws Error(kSpanOutOfRange) for spans outside the document.
std::string render_html(const Document& doc, const HighlightSet& highlights,
                        const Palette& palette = Palette::defaults());

// Same segmentation as render_html, as plain data for clients that style themselves.
nlohmann::ordered_json render_view_model(const Document& doc, const HighlightSet& highlights,
                                         const Palette& palette = Palette::defaults());

// Inverse of render_html: drops span markup and unescapes entities.
// Throws Error(kMalformedMarkup) on anything render_html would not emit.
std::string strip_highlights(std::string_view html);

}  // namespace docmatch
