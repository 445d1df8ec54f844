#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace docmatch {

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

// ROUGE-L F1 with recall against `a` and precision against `b`:
// P = LCS/|b|, R = LCS/|a|, F1 = 2PR/(P+R); 0 when either side is empty or LCS = 0.
double rouge_l_f1(std::span<const std::string> a, std::span<const std::string> b);

// Half-open token index range.
struct TokenRange {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - start; }
  bool operator==(const TokenRange&) const = default;
};

struct PhraseMatch {
  TokenRange summary;
  TokenRange article;

  bool operator==(const PhraseMatch&) const = default;
};

// Common contiguous runs of length >= min_len, taken greedily longest first;
// positions already used on either side are not reused. Ties go to the
// leftmost article position, then the leftmost summary position.
std::vector<PhraseMatch> exact_phrase_matches(std::span<const std::string> summary_sentence,
                                              std::span<const std::string> article_sentence,
                                              std::size_t min_len);

}  // namespace docmatch
