#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace docmatch {

// Offsets throughout are in Unicode scalar values, half-open [start, end).
struct Sentence {
  std::size_t index = 0;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const Sentence&) const = default;
};

struct TokenSpan {
  std::size_t index = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string normalized;

  bool operator==(const TokenSpan&) const = default;
};

// True for letter/digit runs, false for standalone punctuation tokens.
bool is_word_token(const TokenSpan& token) noexcept;

class AbbreviationList {
 public:
  // The allowlist shipped in data/abbreviations.txt.
  static const AbbreviationList& defaults();
  static AbbreviationList parse(std::string_view text);
  static AbbreviationList load(const std::filesystem::path& path);

  // `word` is the text before the period, e.g. "Dr" or "U.S"; matching is case-insensitive.
  bool contains(std::u32string_view word) const;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::unordered_set<std::u32string> entries_;
};

std::vector<Sentence> segment_sentences(std::u32string_view text,
                                        const AbbreviationList& abbreviations = AbbreviationList::defaults());
std::vector<Sentence> segment_sentences(std::string_view utf8,
                                        const AbbreviationList& abbreviations = AbbreviationList::defaults());

std::vector<TokenSpan> tokenize(std::u32string_view text);
std::vector<TokenSpan> tokenize(std::string_view utf8);

class Document {
 public:
  Document() = default;
  Document(std::string id, std::string text,
           const AbbreviationList& abbreviations = AbbreviationList::defaults());

  const std::string& id() const noexcept { return id_; }
  const std::string& text() const noexcept { return text_; }
  const std::u32string& scalars() const noexcept { return scalars_; }
  std::size_t length() const noexcept { return scalars_.size(); }
  const std::vector<Sentence>& sentences() const noexcept { return sentences_; }
  const std::vector<TokenSpan>& tokens() const noexcept { return tokens_; }

  std::string slice(std::size_t start, std::size_t end) const;
  std::string sentence_text(std::size_t sentence) const;
  std::span<const TokenSpan> sentence_tokens(std::size_t sentence) const;
  // Normalized forms of the sentence's tokens; `words_only` drops punctuation.
  std::vector<std::string> sentence_terms(std::size_t sentence, bool words_only) const;
  std::vector<std::string> terms(bool words_only) const;

  bool operator==(const Document& other) const {
    return id_ == other.id_ && text_ == other.text_ && sentences_ == other.sentences_ &&
           tokens_ == other.tokens_;
  }

 private:
  std::string id_;
  std::string text_;
  std::u32string scalars_;
  std::vector<Sentence> sentences_;
  std::vector<TokenSpan> tokens_;
  // [first, last) token index per sentence.
  std::vector<std::pair<std::size_t, std::size_t>> sentence_token_range_;
};

struct CorpusPair {
  std::string id;
  Document article;
  Document summary;
};

std::string article_id(std::string_view pair_id);
std::string summary_id(std::string_view pair_id);

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<CorpusPair> pairs);

  const std::vector<CorpusPair>& pairs() const noexcept { return pairs_; }
  std::size_t size() const noexcept { return pairs_.size(); }
  bool empty() const noexcept { return pairs_.empty(); }
  const CorpusPair* find(std::string_view pair_id) const;
  std::size_t index_of(std::string_view pair_id) const;

 private:
  std::vector<CorpusPair> pairs_;
  std::unordered_map<std::string, std::size_t> index_;
};

// JSONL, one {"id","article","summary"} object per line. Blank lines are skipped.
Corpus parse_corpus(std::istream& in, const AbbreviationList& abbreviations = AbbreviationList::defaults());
Corpus load_corpus(const std::filesystem::path& path,
                   const AbbreviationList& abbreviations = AbbreviationList::defaults());
void write_corpus(std::ostream& out, const Corpus& corpus);

}  // namespace docmatch
