#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "docmatch/random.hpp"
#include "docmatch/studygen.hpp"

namespace docmatch {

inline constexpr std::int64_t kQuestionTimeLimitMs = 180000;

struct ResponseRecord {
  std::string participant_id;
  Condition condition = Condition::kControl;
  std::string question_id;
  Difficulty difficulty = Difficulty::kHard;
  // Unset when the question timed out without a choice.
  std::optional<std::size_t> chosen_index;
  bool correct = false;
  std::int64_t elapsed_ms = 0;
  bool timed_out = false;
  bool attention_check = false;
  std::string session_id;
  std::size_t ordinal = 0;

  bool operator==(const ResponseRecord&) const = default;
};

nlohmann::ordered_json to_json(const ResponseRecord& record);
ResponseRecord response_from_json(const nlohmann::json& value);

struct ResponseLog {
  std::vector<ResponseRecord> responses;
  // Participants the service marked as failing an attention check.
  std::set<std::string> non_qualifying;
};

// Reads either a plain responses log or the admin export stream, whose lines
// carry a "record_type" of "response", "participant" or "survey".
ResponseLog parse_responses(std::istream& in);
ResponseLog load_responses(const std::filesystem::path& path);

struct StatsConfig {
  double fwer = 0.05;
  std::size_t comparisons = 4;
  std::size_t n_permutations = 100000;
  std::size_t bootstrap_samples = 10000;
  std::uint64_t seed = 0;
  // Enumerate every relabeling when there are at most this many.
  std::size_t exhaustive_limit = 200000;
  double confidence = 0.95;

  void check() const;
};

enum class PermutationMode { kAuto, kExhaustive, kMonteCarlo };

struct PermutationResult {
  double p_value = 1.0;
  double observed = 0.0;  // mean(a) - mean(b)
  bool exhaustive = false;
  std::size_t permutations = 0;
};

// Two-tailed test on the difference in means. Monte Carlo mode uses the
// add-one estimator (b + 1) / (m + 1). Throws Error(kEmptyGroup).
PermutationResult permutation_test_detailed(std::span<const double> a, std::span<const double> b,
                                            const StatsConfig& config,
                                            PermutationMode mode = PermutationMode::kAuto);
double permutation_test(std::span<const double> a, std::span<const double> b, const StatsConfig& config);

// Number of ways to choose k of n, saturating at SIZE_MAX.
std::size_t choose_saturating(std::size_t n, std::size_t k) noexcept;

double sidak_alpha(double fwer, std::size_t m);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

// Percentile bootstrap of the mean.
Interval bootstrap_ci(std::span<const double> values, std::size_t samples, double confidence, Rng& rng);

enum class PowerMode { kGaussian, kEmpirical };

struct PowerConfig {
  std::size_t n_per_group = 55;
  // Exactly one of these drives the simulated shift.
  std::optional<double> effect_size_d = 0.5;
  std::optional<double> accuracy_delta;
  std::size_t n_simulations = 2000;
  // Defaults to the Sidak-corrected alpha for four comparisons at FWER 0.05.
  std::optional<double> alpha;
  std::uint64_t seed = 0;
  PowerMode mode = PowerMode::kGaussian;
  double control_mean = 0.466;
  double control_sd = 0.2;
  // Empirical mode: control accuracies resampled from this pilot file.
  std::optional<std::filesystem::path> pilot_path;
  std::size_t n_permutations = 10000;
  unsigned threads = 0;  // 0: hardware concurrency
};

std::vector<double> load_pilot_accuracies(const std::filesystem::path& path);

// Fraction of simulated experiments whose permutation p-value is below alpha.
double power_analysis(const PowerConfig& config);

struct PayoutSchedule {
  std::vector<double> thresholds_seconds{30, 60, 90, 120};
  std::vector<double> multipliers{0.5, 0.4, 0.3, 0.2, 0.0};
  // Per question: the participant base payment spread over 16 questions.
  double base_payment = 3.15 / 16.0;

  void check() const;
};

// Brackets are strict upper bounds: 30.000 s pays the second multiplier.
double bonus_multiplier(std::int64_t elapsed_ms, const PayoutSchedule& schedule);
double bonus_payment(const ResponseRecord& record, const PayoutSchedule& schedule);

enum class Scope { kEasy, kHard, kAll };
std::string_view to_string(Scope scope) noexcept;

struct GroupSummary {
  Condition condition = Condition::kControl;
  Scope scope = Scope::kAll;
  std::size_t participants = 0;
  std::size_t responses = 0;
  double mean_accuracy = 0.0;
  Interval accuracy_ci;
  double mean_time_s = 0.0;
  Interval time_ci;
};

struct Comparison {
  Condition treatment = Condition::kControl;
  Scope scope = Scope::kAll;
  std::string metric;  // "accuracy" or "time"
  double difference = 0.0;  // treatment minus control
  double p_value = 1.0;
  bool significant = false;
};

struct ParticipantRow {
  std::string participant_id;
  Condition condition = Condition::kControl;
  Scope scope = Scope::kAll;
  std::size_t responses = 0;
  double accuracy = 0.0;
  double mean_time_s = 0.0;
  double bonus = 0.0;
};

struct StudyReport {
  double alpha = 0.0;
  double confidence = 0.95;
  std::size_t participants = 0;
  std::vector<std::string> excluded;
  std::vector<GroupSummary> groups;
  std::vector<Comparison> comparisons;
  std::vector<ParticipantRow> rows;

  const GroupSummary* find(Condition condition, Scope scope) const;
  const Comparison* find(Condition treatment, Scope scope, std::string_view metric) const;
};

// Participant-level aggregation. Participants failing an attention check, or
// listed in `non_qualifying`, contribute nothing. Throws Error(kNoResponses).
StudyReport aggregate_report(std::span<const ResponseRecord> responses, const StatsConfig& config,
                             const std::set<std::string>& non_qualifying = {},
                             const PayoutSchedule& schedule = {});

nlohmann::ordered_json to_json(const StudyReport& report);
std::string report_table(const StudyReport& report);
void write_participant_csv(std::ostream& out, const StudyReport& report);

}  // namespace docmatch
