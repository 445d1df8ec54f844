#include "docmatch/rouge.hpp"

#include <algorithm>

namespace docmatch {

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_f1(std::span<const std::string> a, std::span<const std::string> b) {
  const std::size_t lcs = lcs_length(a, b);
  if (lcs == 0) return 0.0;
  const double l = static_cast<double>(lcs);
  const double precision = l / static_cast<double>(b.size());
  const double recall = l / static_cast<double>(a.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<PhraseMatch> exact_phrase_matches(std::span<const std::string> summary_sentence,
                                              std::span<const std::string> article_sentence,
                                              std::size_t min_len) {
  min_len = std::max<std::size_t>(min_len, 1);
  const std::size_t n = summary_sentence.size();
  const std::size_t m = article_sentence.size();
  std::vector<PhraseMatch> matches;
  std::vector<bool> used_s(n, false), used_a(m, false);
  std::vector<std::size_t> prev(m + 1), cur(m + 1);

  while (true) {
    std::size_t best_len = 0, best_i = 0, best_j = 0;  // end positions (exclusive)
    std::fill(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= n; ++i) {
      cur[0] = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        const bool same = !used_s[i - 1] && !used_a[j - 1] && summary_sentence[i - 1] == article_sentence[j - 1];
        cur[j] = same ? prev[j - 1] + 1 : 0;
        if (cur[j] == 0) continue;
        const std::size_t len = cur[j];
        const std::size_t a_start = j - len, s_start = i - len;
        const bool better = len > best_len ||
                            (len == best_len && (a_start < best_j - best_len ||
                                                 (a_start == best_j - best_len && s_start < best_i - best_len)));
        if (better) best_len = len, best_i = i, best_j = j;
      }
      std::swap(prev, cur);
    }
    if (best_len < min_len) break;
    PhraseMatch match{{best_i - best_len, best_i}, {best_j - best_len, best_j}};
    for (std::size_t k = match.summary.start; k < match.summary.end; ++k) used_s[k] = true;
    for (std::size_t k = match.article.start; k < match.article.end; ++k) used_a[k] = true;
    matches.push_back(match);
  }
  return matches;
}

}  // namespace docmatch
