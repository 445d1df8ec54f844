#include "docmatch/corpus.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "docmatch/error.hpp"
#include "docmatch/unicode.hpp"

namespace docmatch {

namespace detail {
extern const std::string_view kDefaultAbbreviations;
}

namespace {

bool is_terminal(char32_t cp) noexcept { return cp == U'.' || cp == U'!' || cp == U'?'; }

bool is_closer(char32_t cp) noexcept {
  return cp == U'"' || cp == U'\'' || cp == U')' || cp == U']' || cp == U'}' || cp == 0x201D ||
         cp == 0x2019 || cp == 0xBB;
}

bool is_opener(char32_t cp) noexcept {
  return cp == U'"' || cp == U'\'' || cp == U'(' || cp == U'[' || cp == 0x201C || cp == 0x2018 ||
         cp == 0xAB;
}

std::u32string lowered(std::u32string_view s) {
  std::u32string out(s);
  for (auto& cp : out) cp = unicode::to_lower(cp);
  return out;
}

// A single period closes an abbreviation when the word before it is on the
// allowlist or is a lone uppercase initial ("J. Smith").
bool ends_with_abbreviation(std::u32string_view text, std::size_t period,
                            const AbbreviationList& abbreviations) {
  std::size_t begin = period;
  while (begin > 0 && (unicode::is_word(text[begin - 1]) || text[begin - 1] == U'.')) --begin;
  const std::u32string_view word = text.substr(begin, period - begin);
  if (word.empty()) return false;
  if (word.size() == 1 && unicode::is_upper(word[0])) return true;
  return abbreviations.contains(word);
}

}  // namespace

bool is_word_token(const TokenSpan& token) noexcept {
  if (token.normalized.empty()) return false;
  const auto lead = static_cast<unsigned char>(token.normalized[0]);
  if (lead < 0x80) return unicode::is_word(lead);
  return unicode::is_word(unicode::decode(token.normalized).front());
}

const AbbreviationList& AbbreviationList::defaults() {
  static const AbbreviationList list = parse(detail::kDefaultAbbreviations);
  return list;
}

AbbreviationList AbbreviationList::parse(std::string_view text) {
  AbbreviationList list;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::u32string entry = lowered(unicode::decode(line));
    while (!entry.empty() && (unicode::is_space(entry.back()) || entry.back() == U'.')) entry.pop_back();
    std::size_t lead = 0;
    while (lead < entry.size() && unicode::is_space(entry[lead])) ++lead;
    entry.erase(0, lead);
    if (!entry.empty() && entry[0] != U'#') list.entries_.insert(std::move(entry));
  }
  return list;
}

AbbreviationList AbbreviationList::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot open abbreviation list " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

bool AbbreviationList::contains(std::u32string_view word) const {
  return entries_.contains(lowered(word));
}

std::vector<Sentence> segment_sentences(std::u32string_view text,
                                        const AbbreviationList& abbreviations) {
  std::vector<Sentence> sentences;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n && unicode::is_space(text[i])) ++i;
  if (i == n) return sentences;
  std::size_t start = i;

  while (i < n) {
    if (!is_terminal(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < n && is_terminal(text[j])) ++j;
    const bool lone_period = text[i] == U'.' && j == i + 1;
    while (j < n && is_closer(text[j])) ++j;
    const std::size_t end = j;
    if (j < n && unicode::is_space(text[j])) {
      std::size_t k = j;
      while (k < n && unicode::is_space(text[k])) ++k;
      if (k < n) {
        char32_t next = text[k];
        if (is_opener(next) && k + 1 < n) next = text[k + 1];
        const bool capital = unicode::is_upper(next) || unicode::is_digit(next);
        if (capital && !(lone_period && ends_with_abbreviation(text, i, abbreviations))) {
          sentences.push_back({sentences.size(), start, end});
          start = k;
          i = k;
          continue;
        }
      }
    }
    i = j;
  }

  std::size_t last = n;
  while (last > start && unicode::is_space(text[last - 1])) --last;
  sentences.push_back({sentences.size(), start, last});
  return sentences;
}

std::vector<Sentence> segment_sentences(std::string_view utf8, const AbbreviationList& abbreviations) {
  return segment_sentences(std::u32string_view(unicode::decode(utf8)), abbreviations);
}

std::vector<TokenSpan> tokenize(std::u32string_view text) {
  std::vector<TokenSpan> tokens;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    if (unicode::is_space(text[i])) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (unicode::is_word(text[i])) {
      while (i < n && unicode::is_word(text[i])) ++i;
    } else {
      ++i;
    }
    std::string normalized;
    for (std::size_t k = start; k < i; ++k) unicode::append_utf8(normalized, unicode::to_lower(text[k]));
    tokens.push_back({tokens.size(), start, i, std::move(normalized)});
  }
  return tokens;
}

std::vector<TokenSpan> tokenize(std::string_view utf8) {
  return tokenize(std::u32string_view(unicode::decode(utf8)));
}

Document::Document(std::string id, std::string text, const AbbreviationList& abbreviations)
    : id_(std::move(id)), text_(std::move(text)), scalars_(unicode::decode(text_)) {
  sentences_ = segment_sentences(std::u32string_view(scalars_), abbreviations);
  tokens_ = tokenize(std::u32string_view(scalars_));
  sentence_token_range_.reserve(sentences_.size());
  std::size_t t = 0;
  for (const auto& s : sentences_) {
    while (t < tokens_.size() && tokens_[t].start < s.start) ++t;
    const std::size_t first = t;
    while (t < tokens_.size() && tokens_[t].end <= s.end) ++t;
    sentence_token_range_.emplace_back(first, t);
  }
}

std::string Document::slice(std::size_t start, std::size_t end) const {
  return unicode::encode(std::u32string_view(scalars_).substr(start, end - start));
}

std::string Document::sentence_text(std::size_t sentence) const {
  const auto& s = sentences_.at(sentence);
  return slice(s.start, s.end);
}

std::span<const TokenSpan> Document::sentence_tokens(std::size_t sentence) const {
  const auto [first, last] = sentence_token_range_.at(sentence);
  return std::span<const TokenSpan>(tokens_).subspan(first, last - first);
}

std::vector<std::string> Document::sentence_terms(std::size_t sentence, bool words_only) const {
  std::vector<std::string> out;
  for (const auto& token : sentence_tokens(sentence)) {
    if (!words_only || is_word_token(token)) out.push_back(token.normalized);
  }
  return out;
}

std::vector<std::string> Document::terms(bool words_only) const {
  std::vector<std::string> out;
  out.reserve(tokens_.size());
  for (const auto& token : tokens_) {
    if (!words_only || is_word_token(token)) out.push_back(token.normalized);
  }
  return out;
}

std::string article_id(std::string_view pair_id) { return std::string(pair_id) + "/article"; }
std::string summary_id(std::string_view pair_id) { return std::string(pair_id) + "/summary"; }

Corpus::Corpus(std::vector<CorpusPair> pairs) : pairs_(std::move(pairs)) {
  for (std::size_t i = 0; i < pairs_.size(); ++i) index_.emplace(pairs_[i].id, i);
}

const CorpusPair* Corpus::find(std::string_view pair_id) const {
  const auto it = index_.find(std::string(pair_id));
  return it == index_.end() ? nullptr : &pairs_[it->second];
}

std::size_t Corpus::index_of(std::string_view pair_id) const {
  const auto it = index_.find(std::string(pair_id));
  if (it == index_.end()) throw Error(Errc::kConfig, "unknown pair id " + std::string(pair_id));
  return it->second;
}

Corpus parse_corpus(std::istream& in, const AbbreviationList& abbreviations) {
  std::vector<CorpusPair> pairs;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto malformed = [line_no](const std::string& why) {
      return Error(Errc::kMalformedLine, "line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw malformed(e.what());
    }
    if (!row.is_object()) throw malformed("expected an object");
    for (const char* field : {"id", "article", "summary"}) {
      if (!row.contains(field) || !row[field].is_string()) {
        throw malformed(std::string("missing string field \"") + field + "\"");
      }
    }
    auto id = row["id"].get<std::string>();
    if (!seen.insert(id).second) throw malformed("duplicate id " + id);
    CorpusPair pair{id, Document(article_id(id), row["article"].get<std::string>(), abbreviations),
                    Document(summary_id(id), row["summary"].get<std::string>(), abbreviations)};
    if (pair.article.tokens().empty() || pair.summary.tokens().empty()) {
      throw Error(Errc::kEmptyDocument, "line " + std::to_string(line_no) + ": pair " + id);
    }
    pairs.push_back(std::move(pair));
  }
  return Corpus(std::move(pairs));
}

Corpus load_corpus(const std::filesystem::path& path, const AbbreviationList& abbreviations) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoError, "cannot open corpus " + path.string());
  return parse_corpus(in, abbreviations);
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& pair : corpus.pairs()) {
    nlohmann::ordered_json row;
    row["id"] = pair.id;
    row["article"] = pair.article.text();
    row["summary"] = pair.summary.text();
    out << row.dump() << '\n';
  }
}

}  // namespace docmatch
