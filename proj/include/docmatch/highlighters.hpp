#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "docmatch/affinity.hpp"
#include "docmatch/corpus.hpp"
#include "docmatch/random.hpp"

namespace docmatch {

struct Attribution {
  std::size_t token_index = 0;
  double score = 0.0;

  bool operator==(const Attribution&) const = default;
};

// A coalition mask has one byte per token; nonzero keeps the token.
using ScoreFn = std::function<double(std::span<const std::uint8_t>)>;

struct HighlighterConfig {
  std::size_t k = 3;
  // 0 selects 2 * tokens + 2048.
  std::size_t shap_samples = 0;
  std::uint64_t shap_seed = 0;
  std::size_t min_phrase_tokens = 3;
};

std::size_t shap_sample_budget(const HighlighterConfig& config, std::size_t tokens) noexcept;

// Kernel SHAP: Shapley-kernel weighted least squares over sampled coalitions,
// with the empty and full coalitions pinned through the efficiency constraint.
// Coalition sizes are enumerated exhaustively while the budget allows, the
// remainder is sampled (paired with complements) from `config.shap_seed`.
std::vector<Attribution> kernel_shap(const ScoreFn& score_fn, std::size_t features,
                                     const HighlighterConfig& config);
std::vector<Attribution> kernel_shap(const ScoreFn& score_fn, const Document& article,
                                     const HighlighterConfig& config);

// Shapley values by full subset enumeration; at most 14 features.
std::vector<Attribution> exact_shapley(const ScoreFn& score_fn, std::size_t features);
std::vector<Attribution> exact_shapley(const ScoreFn& score_fn, const Document& article);

// Makes the in-order sum of scores equal `target` bit-for-bit. The residual is
// spread proportionally to |score| first, then one entry absorbs the rounding.
// Exact equality is always reachable when |last score| <= |target| / 2; under heavy
// cancellation it may not be, and the function returns false with the sum
// within a few ulps of the largest partial sum.
bool enforce_additivity(std::vector<Attribution>& attributions, double target);

// Affinity between a fixed summary and the article with unmasked tokens only.
// Masked tokens are deleted before vectorization. Reentrant.
class MaskedAffinity {
 public:
  MaskedAffinity(const Vectorizer& vectorizer, const Document& summary, const Document& article);

  double operator()(std::span<const std::uint8_t> mask) const;
  std::size_t features() const noexcept { return token_terms_.size(); }

 private:
  std::vector<std::ptrdiff_t> token_terms_;  // local term per token, -1 when not a term
  std::vector<double> idf_;
  std::vector<double> query_;
  double query_norm_ = 0.0;
  bool sublinear_ = false;
};

// 1-D earth mover's distance between equal-size samples: sorted L1 / n.
double emd_1d(std::span<const double> a, std::span<const double> b);

// One random attribution vector of length n as drawn by attribution_randomness.
std::vector<double> random_attribution_scores(std::size_t n, Rng& rng);

// Mean EMD between min-max normalized attributions and `n_random` normalized
// uniform random vectors, clamped to [0, 1]. Constant attributions give 0.
double attribution_randomness(std::span<const Attribution> attributions, std::size_t n_random = 50,
                              std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Highlight sets

enum class Method { kShap, kExtractiveSummary, kCooccurrence, kSemantic };

std::string_view to_string(Method method) noexcept;
std::optional<Method> parse_method(std::string_view name) noexcept;

struct HighlightSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t channel = 0;
  double intensity = 0.0;

  bool operator==(const HighlightSpan&) const = default;
};

inline constexpr std::size_t kPositiveChannel = 0;
inline constexpr std::size_t kNegativeChannel = 1;

struct HighlightSet {
  Method method = Method::kShap;
  std::string document_id;
  std::vector<HighlightSpan> spans;

  bool operator==(const HighlightSet&) const = default;
};

nlohmann::ordered_json to_json(const HighlightSet& set);
HighlightSet highlight_set_from_json(const nlohmann::json& value);

// Checks spans against the document and the method's channel rules; throws
// Error(kSpanOutOfRange) or Error(kValidation).
void validate(const HighlightSet& set, const Document& doc);

// Positive attributions on the cyan channel, negative on the pink one, with
// intensity |score| / max |score|. Zero scores produce no span.
HighlightSet shap_highlights(const Document& article, std::span<const Attribution> attributions);

// ---------------------------------------------------------------------------
// Extractive summarization

class Summarizer {
 public:
  virtual ~Summarizer() = default;
  // Sentence indices in document order.
  virtual std::vector<std::size_t> select(const Document& article, std::size_t k) const = 0;
};

// Ranks sentences by cosine between their term counts and the whole-article
// term counts; earlier sentences win ties.
class CentroidSummarizer final : public Summarizer {
 public:
  std::vector<std::size_t> select(const Document& article, std::size_t k) const override;
};

// Precomputed selections from JSONL {"article_id", "sentence_indices"}. Articles
// not present fall back to `fallback` when one is supplied.
class FileSummarizer final : public Summarizer {
 public:
  static FileSummarizer load(const std::filesystem::path& path,
                             std::shared_ptr<const Summarizer> fallback = nullptr);
  std::vector<std::size_t> select(const Document& article, std::size_t k) const override;

 private:
  std::unordered_map<std::string, std::vector<std::size_t>> selections_;
  std::shared_ptr<const Summarizer> fallback_;
};

std::vector<std::size_t> extractive_summary(const Document& article, std::size_t k = 3);
HighlightSet extractive_highlights(const Document& article, std::span<const std::size_t> sentences);

// ---------------------------------------------------------------------------
// Task-specific highlights

class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual DocVector embed(const Document& doc, std::size_t sentence) const = 0;
};

class TfidfSentenceEmbedder final : public SentenceEmbedder {
 public:
  explicit TfidfSentenceEmbedder(const Vectorizer& vectorizer) : vectorizer_(vectorizer) {}
  DocVector embed(const Document& doc, std::size_t sentence) const override;

 private:
  const Vectorizer& vectorizer_;
};

// Looks up "<document id>#<sentence index>"; throws Error(kMissingEmbedding).
class TableSentenceEmbedder final : public SentenceEmbedder {
 public:
  explicit TableSentenceEmbedder(const EmbeddingTable& table) : table_(table) {}
  DocVector embed(const Document& doc, std::size_t sentence) const override;

 private:
  const EmbeddingTable& table_;
};

std::string sentence_embedding_key(std::string_view document_id, std::size_t sentence);

// similarity[j][i]: summary sentence j against article sentence i.
using SimilarityMatrix = std::vector<std::vector<double>>;

// Shared selection and coloring: top-K article sentences per summary sentence
// (positive similarity only, earlier position wins ties), each sentence kept
// on the channel where it scores highest, intensity = similarity / channel
// max, plus exact-phrase spans at intensity 1 inside the kept sentences.
HighlightSet sentence_highlights(Method method, const Document& summary, const Document& article,
                                 const SimilarityMatrix& similarity, const HighlighterConfig& config);

HighlightSet cooccurrence_highlights(const Document& summary, const Document& article,
                                     const HighlighterConfig& config);
HighlightSet semantic_highlights(const Document& summary, const Document& article,
                                 const SentenceEmbedder& embedder, const HighlighterConfig& config);

// The summary side of the task-specific views: sentence j on channel j.
HighlightSet summary_channel_highlights(Method method, const Document& summary);

}  // namespace docmatch
