#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "docmatch/error.hpp"
#include "docmatch/stats.hpp"
#include "docmatch/studygen.hpp"

namespace docmatch {

enum class SessionStatus { kTutorial, kActive, kSurvey, kDone };
std::string_view to_string(SessionStatus status) noexcept;

// Answers to "most helpful information" in the exit survey.
inline constexpr std::array<std::string_view, 5> kHelpfulInfoChoices{"highlights", "affinity_scores", "article_text",
                                                                     "summary_text", "other"};

struct SurveyResponse {
  std::string session_id;
  // Unset only for Control sessions, which saw no highlights.
  std::optional<int> helpful;
  std::string most_helpful_info;
  std::optional<int> too_many_highlights;
  std::string free_text;
};

SurveyResponse survey_from_json(const nlohmann::json& value);
nlohmann::ordered_json to_json(const SurveyResponse& survey);

struct ServiceConfig {
  std::filesystem::path data_dir = "study-data";
  std::string admin_token;
  std::int64_t time_limit_ms = kQuestionTimeLimitMs;
  std::int64_t grace_ms = 2000;
  std::uint64_t seed = 0;
  // fsync every append before acknowledging it.
  bool sync = true;
};

using Clock = std::function<std::int64_t()>;
std::int64_t system_clock_ms();

// Raised when a question is requested while an unexpired one is outstanding;
// carries that question's payload so a reconnecting client can resume.
class OutstandingQuestionError : public Error {
 public:
  OutstandingQuestionError(const std::string& message, nlohmann::ordered_json payload)
      : Error(Errc::kOutstandingQuestion, message), payload_(std::move(payload)) {}
  const nlohmann::ordered_json& payload() const noexcept { return payload_; }

 private:
  nlohmann::ordered_json payload_;
};

// Single-writer JSONL log; every append is written and synced before return.
class AppendLog {
 public:
  AppendLog(std::filesystem::path path, bool sync);
  ~AppendLog();
  AppendLog(const AppendLog&) = delete;
  AppendLog& operator=(const AppendLog&) = delete;

  void append(const nlohmann::ordered_json& record);
  const std::filesystem::path& path() const noexcept { return path_; }
  // Complete lines only; a torn final line is dropped.
  static std::vector<nlohmann::ordered_json> read(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  bool sync_ = true;
  std::mutex mutex_;
};

class StudyService {
 public:
  explicit StudyService(ServiceConfig config, Clock clock = system_clock_ms);
  ~StudyService();

  // Replaces the question pool; sessions already planned keep their questions.
  void set_pool(std::vector<PoolQuestion> pool);
  void load_pool(const std::filesystem::path& path);
  bool pool_loaded() const;

  nlohmann::ordered_json create_session();
  nlohmann::ordered_json next_question(const std::string& session_id);
  // `choice` unset is the client's timeout marker.
  nlohmann::ordered_json submit_answer(const std::string& session_id, std::size_t ordinal,
                                       std::optional<std::size_t> choice);
  nlohmann::ordered_json submit_survey(const std::string& session_id, const SurveyResponse& survey);
  // Responses, surveys and one qualification line per session, as JSONL.
  std::string export_responses(const std::string& admin_token) const;

  nlohmann::ordered_json session_status(const std::string& session_id) const;
  std::map<Condition, std::size_t> condition_counts() const;
  const ServiceConfig& config() const noexcept { return config_; }

 private:
  struct Outstanding {
    std::size_t ordinal = 0;
    std::int64_t started_ms = 0;
  };
  struct Session {
    std::string id;
    Condition condition = Condition::kControl;
    SessionPlan plan;
    SessionStatus status = SessionStatus::kTutorial;
    std::size_t cursor = 0;  // next ordinal to serve
    std::optional<Outstanding> outstanding;
    std::size_t answered = 0;
    bool failed_attention = false;
    std::mutex mutex;
  };

  void replay();
  std::shared_ptr<Session> find(const std::string& session_id) const;
  const PoolQuestion& question(const std::string& id) const;
  nlohmann::ordered_json payload(const Session& s, const Outstanding& o) const;
  nlohmann::ordered_json tutorial_payload(Condition condition) const;
  // Caller holds the session mutex.
  void record_answer(Session& s, std::optional<std::size_t> choice, std::int64_t now);

  ServiceConfig config_;
  Clock clock_;
  mutable std::shared_mutex pool_mutex_;
  std::vector<PoolQuestion> pool_;
  std::unordered_map<std::string, std::size_t> pool_index_;
  std::vector<QuestionLabel> labels_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::vector<std::string> session_order_;

  std::unique_ptr<AppendLog> session_log_;
  std::unique_ptr<AppendLog> response_log_;
  std::unique_ptr<AppendLog> survey_log_;
};

}  // namespace docmatch
