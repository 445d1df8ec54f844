#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "docmatch/affinity.hpp"
#include "docmatch/corpus.hpp"
#include "docmatch/highlighters.hpp"

namespace docmatch {

inline constexpr std::size_t kCandidates = 3;
inline constexpr std::size_t kEasyPerSession = 4;
inline constexpr std::size_t kHardPerSession = 12;
inline constexpr std::size_t kAttentionChecksPerSession = 2;
inline constexpr std::size_t kQuestionsPerSession = kEasyPerSession + kHardPerSession + kAttentionChecksPerSession;

enum class Difficulty { kEasy, kHard };
enum class QuestionKind { kScored, kAttentionCheck, kTutorial };
enum class Condition { kControl, kShap, kBertSum, kCooccurrence, kSemantic };

inline constexpr std::array<Condition, 5> kAllConditions = {Condition::kControl, Condition::kShap, Condition::kBertSum,
                                                            Condition::kCooccurrence, Condition::kSemantic};

std::string_view to_string(Difficulty d) noexcept;
std::string_view to_string(QuestionKind k) noexcept;
std::string_view to_string(Condition c) noexcept;
Difficulty parse_difficulty(std::string_view name);
QuestionKind parse_question_kind(std::string_view name);
Condition parse_condition(std::string_view name);
// The highlight method a condition shows; none for Control.
std::optional<Method> method_for(Condition c) noexcept;

// The fields session assembly and the model-follower statistic need.
struct QuestionLabel {
  std::string id;
  QuestionKind kind = QuestionKind::kScored;
  Difficulty difficulty = Difficulty::kHard;
  bool ambiguous = false;
  std::array<double, kCandidates> scores{};
  std::size_t truth_index = 0;
};

struct QuestionSpec {
  std::string id;
  std::string pair_id;
  QuestionKind kind = QuestionKind::kScored;
  Document summary;
  std::array<Document, kCandidates> candidates;
  std::array<double, kCandidates> scores{};
  std::size_t truth_index = 0;
  Difficulty difficulty = Difficulty::kHard;
  bool ambiguous = false;

  QuestionLabel label() const;
};

struct DifficultyConfig {
  // Fixed gap threshold; when unset it is the `tau_percentile` of the pool's gaps.
  std::optional<double> tau;
  double tau_percentile = 60.0;
  std::optional<double> target_hard_model_accuracy;
};

struct QuestionOptions {
  std::uint64_t seed = 0;
  double ambiguity_threshold = 0.5;
};

// Affinity vectors for every summary and article of a corpus. Uses external
// document embeddings when the table covers every document, tf-idf otherwise.
class AffinityIndex {
 public:
  AffinityIndex(const Corpus& corpus, const Vectorizer& vectorizer, const EmbeddingTable* external = nullptr);

  const Corpus& corpus() const noexcept { return corpus_; }
  const DocVector& summary_vector(std::size_t pair) const { return summaries_.at(pair); }
  const DocVector& article_vector(std::size_t pair) const { return articles_.at(pair); }
  bool uses_external() const noexcept { return external_; }

 private:
  const Corpus& corpus_;
  std::vector<DocVector> summaries_;
  std::vector<DocVector> articles_;
  bool external_ = false;
};

// Ground truth is the pair's own article; distractors are the two other
// articles with the highest affinity to the summary (lower corpus position
// wins ties). Candidate order is shuffled from the seed and the pair id.
QuestionSpec build_question(const AffinityIndex& index, std::string_view pair_id, const QuestionOptions& options = {});
QuestionSpec build_question(const Corpus& corpus, std::string_view pair_id, const Vectorizer& vectorizer,
                            const QuestionOptions& options = {});

// Verbatim copy of the first sentences of the pair's article, against the two
// least similar articles.
QuestionSpec build_attention_check(const AffinityIndex& index, std::string_view pair_id,
                                   const QuestionOptions& options = {});

std::size_t argmax_candidate(const std::array<double, kCandidates>& scores) noexcept;
double score_gap(const std::array<double, kCandidates>& scores, std::size_t truth_index) noexcept;

Difficulty classify_difficulty(const QuestionLabel& question, double tau);
Difficulty classify_difficulty(const QuestionSpec& question, const DifficultyConfig& config);

// Linear-interpolated percentile (p in [0, 100]) of the values.
double percentile(std::vector<double> values, double p);
double resolve_tau(std::span<const QuestionSpec> questions, const DifficultyConfig& config);

// Mean over summary sentences of the best ROUGE-L F1 against any sentence of `doc`.
double summary_coverage(const Document& summary, const Document& doc);
bool detect_ambiguity(const QuestionSpec& question, double threshold);

struct SessionSlot {
  std::string question_id;
  QuestionKind kind = QuestionKind::kScored;

  bool operator==(const SessionSlot&) const = default;
};

struct SessionPlan {
  std::vector<SessionSlot> slots;
  Condition condition = Condition::kControl;
  std::uint64_t seed = 0;

  bool operator==(const SessionPlan&) const = default;
};

nlohmann::ordered_json to_json(const SessionPlan& plan);
SessionPlan session_plan_from_json(const nlohmann::json& value);

// 4 Easy + 12 Hard unambiguous scored questions in seeded order, with 2
// attention checks at seeded positions. Throws Error(kInsufficientPool).
SessionPlan assemble_session(std::span<const QuestionLabel> pool, Condition condition, std::uint64_t seed);

enum class DifficultyFilter { kAll, kEasy, kHard };

// Fraction of scored questions whose highest-affinity candidate is the truth.
// Throws Error(kEmptyFilter).
double model_follower_accuracy(std::span<const QuestionLabel> pool, DifficultyFilter filter);

// Keeps the largest subset of the Hard questions whose model-follower accuracy
// is as close to `target` as a whole-question count allows; returns kept ids.
std::vector<std::string> curate_hard_pool(std::span<const QuestionLabel> pool, double target, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Persisted pool: labels plus precomputed stimuli, documents by id reference.

struct CandidateStimulus {
  std::string document_id;
  std::map<Method, HighlightSet> highlights;
  std::map<Condition, std::string> html;
};

struct PoolQuestion {
  QuestionLabel label;
  std::string pair_id;
  std::string summary_id;
  std::string summary_text;
  std::map<Condition, std::string> summary_html;
  std::array<CandidateStimulus, kCandidates> candidates;
  // Tutorial feedback only.
  std::string justification;
};

nlohmann::ordered_json to_json(const PoolQuestion& question);
PoolQuestion pool_question_from_json(const nlohmann::json& value);
std::vector<PoolQuestion> load_pool(const std::filesystem::path& path);
void write_pool(std::ostream& out, std::span<const PoolQuestion> pool);

}  // namespace docmatch
