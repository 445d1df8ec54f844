#include "docmatch/service.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace docmatch {

std::string_view to_string(SessionStatus status) noexcept {
  switch (status) {
    case SessionStatus::kTutorial: return "Tutorial";
    case SessionStatus::kActive: return "Active";
    case SessionStatus::kSurvey: return "Survey";
    case SessionStatus::kDone: return "Done";
  }
  return "?";
}

std::int64_t system_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

// ---------------------------------------------------------------------------
// Survey

namespace {

std::optional<int> likert(const nlohmann::json& v, const char* field) {
  const auto it = v.find(field);
  if (it == v.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) throw Error(Errc::kValidation, std::string(field) + " must be an integer");
  const auto value = it->get<std::int64_t>();
  if (value < 1 || value > 5) throw Error(Errc::kValidation, std::string(field) + " must be in 1..5");
  return static_cast<int>(value);
}

nlohmann::ordered_json optional_json(const std::optional<int>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
}

}  // namespace

SurveyResponse survey_from_json(const nlohmann::json& v) {
  if (!v.is_object()) throw Error(Errc::kValidation, "survey must be a JSON object");
  SurveyResponse s;
  s.session_id = v.value("session_id", std::string());
  s.helpful = likert(v, "helpful");
  s.too_many_highlights = likert(v, "too_many_highlights");
  const auto info = v.find("most_helpful_info");
  if (info == v.end() || !info->is_string()) throw Error(Errc::kValidation, "most_helpful_info is required");
  s.most_helpful_info = info->get<std::string>();
  if (std::find(kHelpfulInfoChoices.begin(), kHelpfulInfoChoices.end(), s.most_helpful_info) ==
      kHelpfulInfoChoices.end())
    throw Error(Errc::kValidation, "unknown most_helpful_info '" + s.most_helpful_info + "'");
  if (const auto t = v.find("free_text"); t != v.end() && !t->is_null()) {
    if (!t->is_string()) throw Error(Errc::kValidation, "free_text must be a string");
    s.free_text = t->get<std::string>();
  }
  return s;
}

nlohmann::ordered_json to_json(const SurveyResponse& s) {
  nlohmann::ordered_json out;
  out["session_id"] = s.session_id;
  out["helpful"] = optional_json(s.helpful);
  out["most_helpful_info"] = s.most_helpful_info;
  out["too_many_highlights"] = optional_json(s.too_many_highlights);
  out["free_text"] = s.free_text;
  return out;
}

// ---------------------------------------------------------------------------
// AppendLog

AppendLog::AppendLog(std::filesystem::path path, bool sync) : path_(std::move(path)), sync_(sync) {
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(Errc::kIoError, "cannot open " + path_.string() + ": " + std::strerror(errno));
  // Cut a torn final line so the next record starts on a fresh line.
  struct stat st {};
  if (::fstat(fd_, &st) == 0 && st.st_size > 0) {
    std::ifstream in(path_, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.back() != '\n') {
      const auto keep = data.find_last_of('\n');
      const off_t size = keep == std::string::npos ? 0 : static_cast<off_t>(keep + 1);
      if (::ftruncate(fd_, size) != 0) throw Error(Errc::kIoError, "cannot truncate " + path_.string());
    }
  }
}

AppendLog::~AppendLog() {
  if (fd_ >= 0) ::close(fd_);
}

void AppendLog::append(const nlohmann::ordered_json& record) {
  const std::string line = record.dump() + "\n";
  std::lock_guard lock(mutex_);
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::kIoError, "write to " + path_.string() + " failed: " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  if (sync_ && ::fdatasync(fd_) != 0)
    throw Error(Errc::kIoError, "sync of " + path_.string() + " failed: " + std::strerror(errno));
}

std::vector<nlohmann::ordered_json> AppendLog::read(const std::filesystem::path& path) {
  std::vector<nlohmann::ordered_json> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  while (pos < data.size()) {
    const auto nl = data.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    const std::string_view line(data.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::ordered_json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::kMalformedLine, path.string() + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// StudyService

namespace {

std::string random_session_id() {
  std::random_device rd;
  char buf[33];
  for (int i = 0; i < 4; ++i) std::snprintf(buf + 8 * i, 9, "%08x", static_cast<unsigned>(rd()));
  return std::string(buf, 32);
}

double display_score(double s) { return std::round(s * 1000.0) / 1000.0; }

bool constant_time_equal(std::string_view a, std::string_view b) {
  unsigned char diff = a.size() == b.size() ? 0 : 1;
  const std::size_t n = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char x = i < a.size() ? static_cast<unsigned char>(a[i]) : 0;
    const unsigned char y = i < b.size() ? static_cast<unsigned char>(b[i]) : 0;
    diff |= static_cast<unsigned char>(x ^ y);
  }
  return diff == 0;
}

}  // namespace

StudyService::StudyService(ServiceConfig config, Clock clock) : config_(std::move(config)), clock_(std::move(clock)) {
  std::error_code ec;
  std::filesystem::create_directories(config_.data_dir, ec);
  if (ec) throw Error(Errc::kIoError, "cannot create " + config_.data_dir.string() + ": " + ec.message());
  replay();
  session_log_ = std::make_unique<AppendLog>(config_.data_dir / "sessions.jsonl", config_.sync);
  response_log_ = std::make_unique<AppendLog>(config_.data_dir / "responses.jsonl", config_.sync);
  survey_log_ = std::make_unique<AppendLog>(config_.data_dir / "surveys.jsonl", config_.sync);
}

StudyService::~StudyService() = default;

void StudyService::replay() {
  for (const auto& e : AppendLog::read(config_.data_dir / "sessions.jsonl")) {
    const std::string event = e.at("event").get<std::string>();
    if (event == "session_created") {
      auto s = std::make_shared<Session>();
      s->id = e.at("session_id").get<std::string>();
      s->plan = session_plan_from_json(e.at("plan"));
      s->condition = s->plan.condition;
      session_order_.push_back(s->id);
      sessions_[s->id] = std::move(s);
    } else if (event == "question_served") {
      auto it = sessions_.find(e.at("session_id").get<std::string>());
      if (it == sessions_.end()) continue;
      Session& s = *it->second;
      const auto ordinal = e.at("ordinal").get<std::size_t>();
      s.outstanding = Outstanding{ordinal, e.at("started_ms").get<std::int64_t>()};
      s.cursor = ordinal + 1;
      s.status = SessionStatus::kActive;
    }
  }
  for (const auto& r : AppendLog::read(config_.data_dir / "responses.jsonl")) {
    const ResponseRecord rec = response_from_json(nlohmann::json(r));
    auto it = sessions_.find(rec.session_id);
    if (it == sessions_.end()) continue;
    Session& s = *it->second;
    if (s.outstanding && s.outstanding->ordinal == rec.ordinal) s.outstanding.reset();
    s.answered = std::max(s.answered, rec.ordinal + 1);
    if (rec.attention_check && !rec.correct) s.failed_attention = true;
    if (s.answered == s.plan.slots.size()) s.status = SessionStatus::kSurvey;
  }
  for (const auto& v : AppendLog::read(config_.data_dir / "surveys.jsonl")) {
    auto it = sessions_.find(v.at("session_id").get<std::string>());
    if (it != sessions_.end()) it->second->status = SessionStatus::kDone;
  }
}

void StudyService::set_pool(std::vector<PoolQuestion> pool) {
  std::unordered_map<std::string, std::size_t> index;
  std::set<std::string> tutorial_pairs;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!index.emplace(pool[i].label.id, i).second)
      throw Error(Errc::kValidation, "duplicate question id " + pool[i].label.id);
    if (pool[i].label.kind == QuestionKind::kTutorial) tutorial_pairs.insert(pool[i].pair_id);
  }
  // A pair shown with its answer in the tutorial is never scored.
  std::vector<QuestionLabel> labels;
  for (const PoolQuestion& q : pool)
    if (q.label.kind != QuestionKind::kScored || !tutorial_pairs.count(q.pair_id)) labels.push_back(q.label);
  std::unique_lock lock(pool_mutex_);
  pool_ = std::move(pool);
  pool_index_ = std::move(index);
  labels_ = std::move(labels);
}

void StudyService::load_pool(const std::filesystem::path& path) { set_pool(docmatch::load_pool(path)); }

bool StudyService::pool_loaded() const {
  std::shared_lock lock(pool_mutex_);
  return !pool_.empty();
}

const PoolQuestion& StudyService::question(const std::string& id) const {
  const auto it = pool_index_.find(id);
  if (it == pool_index_.end()) throw Error(Errc::kPoolUnavailable, "question " + id + " is not in the loaded pool");
  return pool_[it->second];
}

std::shared_ptr<StudyService::Session> StudyService::find(const std::string& session_id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(Errc::kSessionNotFound, "no session " + session_id);
  return it->second;
}

std::map<Condition, std::size_t> StudyService::condition_counts() const {
  std::map<Condition, std::size_t> counts;
  for (Condition c : kAllConditions) counts[c] = 0;
  std::shared_lock lock(sessions_mutex_);
  for (const auto& [id, s] : sessions_) ++counts[s->condition];
  return counts;
}

nlohmann::ordered_json StudyService::tutorial_payload(Condition condition) const {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const PoolQuestion& q : pool_) {
    if (q.label.kind != QuestionKind::kTutorial) continue;
    nlohmann::ordered_json t;
    t["question_id"] = q.label.id;
    t["summary_html"] = q.summary_html.at(condition);
    auto& cands = t["candidates"] = nlohmann::ordered_json::array();
    for (const CandidateStimulus& c : q.candidates) cands.push_back({{"html", c.html.at(condition)}});
    auto& scores = t["scores"] = nlohmann::ordered_json::array();
    for (double s : q.label.scores) scores.push_back(display_score(s));
    // Tutorial questions reveal their answer as feedback.
    t["answer_index"] = q.label.truth_index;
    t["justification"] = q.justification;
    out.push_back(std::move(t));
  }
  return out;
}

nlohmann::ordered_json StudyService::create_session() {
  std::shared_lock pool_lock(pool_mutex_);
  if (pool_.empty()) throw Error(Errc::kPoolUnavailable, "no question pool is loaded");

  std::unique_lock lock(sessions_mutex_);
  std::map<Condition, std::size_t> counts;
  for (Condition c : kAllConditions) counts[c] = 0;
  for (const auto& [id, s] : sessions_) ++counts[s->condition];
  std::size_t least = counts.begin()->second;
  for (const auto& [c, n] : counts) least = std::min(least, n);
  std::vector<Condition> candidates;
  for (const auto& [c, n] : counts)
    if (n == least) candidates.push_back(c);
  Rng rng(derive_seed(config_.seed, "assign/" + std::to_string(sessions_.size())));
  const Condition condition = candidates[rng.below(candidates.size())];

  std::string id;
  do id = random_session_id();
  while (sessions_.count(id));

  auto s = std::make_shared<Session>();
  s->id = id;
  s->condition = condition;
  s->plan = assemble_session(labels_, condition, derive_seed(config_.seed, "session/" + id));

  nlohmann::ordered_json event;
  event["event"] = "session_created";
  event["session_id"] = id;
  event["created_ms"] = clock_();
  event["plan"] = to_json(s->plan);
  session_log_->append(event);
  sessions_[id] = s;
  session_order_.push_back(id);

  nlohmann::ordered_json out;
  out["session_id"] = id;
  out["condition"] = to_string(condition);
  out["total_questions"] = s->plan.slots.size();
  out["time_limit_ms"] = config_.time_limit_ms;
  out["tutorial"] = tutorial_payload(condition);
  return out;
}

nlohmann::ordered_json StudyService::payload(const Session& s, const Outstanding& o) const {
  const PoolQuestion& q = question(s.plan.slots.at(o.ordinal).question_id);
  nlohmann::ordered_json out;
  out["session_id"] = s.id;
  out["ordinal"] = o.ordinal;
  out["total_questions"] = s.plan.slots.size();
  out["question_id"] = q.label.id;
  out["condition"] = to_string(s.condition);
  out["summary_html"] = q.summary_html.at(s.condition);
  auto& cands = out["candidates"] = nlohmann::ordered_json::array();
  auto& scores = out["scores"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < kCandidates; ++i) {
    const double shown = display_score(q.label.scores[i]);
    cands.push_back({{"html", q.candidates[i].html.at(s.condition)}, {"score", shown}});
    scores.push_back(shown);
  }
  out["started_ms"] = o.started_ms;
  out["deadline_ms"] = o.started_ms + config_.time_limit_ms;
  out["time_limit_ms"] = config_.time_limit_ms;
  return out;
}

void StudyService::record_answer(Session& s, std::optional<std::size_t> choice, std::int64_t now) {
  const Outstanding o = *s.outstanding;
  const SessionSlot& slot = s.plan.slots.at(o.ordinal);
  std::shared_lock pool_lock(pool_mutex_);
  const PoolQuestion& q = question(slot.question_id);
  const std::int64_t cap = config_.time_limit_ms + config_.grace_ms;
  const std::int64_t elapsed = std::max<std::int64_t>(0, now - o.started_ms);

  ResponseRecord r;
  r.participant_id = s.id;
  r.session_id = s.id;
  r.condition = s.condition;
  r.question_id = q.label.id;
  r.difficulty = q.label.difficulty;
  r.ordinal = o.ordinal;
  r.attention_check = slot.kind == QuestionKind::kAttentionCheck;
  r.timed_out = !choice || elapsed > cap;
  r.chosen_index = choice;
  r.correct = !r.timed_out && *choice == q.label.truth_index;
  r.elapsed_ms = std::min(elapsed, cap);
  response_log_->append(to_json(r));

  s.outstanding.reset();
  s.answered = o.ordinal + 1;
  if (r.attention_check && !r.correct) s.failed_attention = true;
  if (s.answered == s.plan.slots.size()) s.status = SessionStatus::kSurvey;
}

nlohmann::ordered_json StudyService::next_question(const std::string& session_id) {
  auto session = find(session_id);
  Session& s = *session;
  std::lock_guard lock(s.mutex);
  const std::int64_t now = clock_();
  if (s.outstanding) {
    if (now <= s.outstanding->started_ms + config_.time_limit_ms + config_.grace_ms) {
      std::shared_lock pool_lock(pool_mutex_);
      throw OutstandingQuestionError("question " + std::to_string(s.outstanding->ordinal) + " is still open",
                                     payload(s, *s.outstanding));
    }
    record_answer(s, std::nullopt, now);
  }
  if (s.status == SessionStatus::kSurvey || s.status == SessionStatus::kDone || s.cursor >= s.plan.slots.size())
    throw Error(Errc::kSessionComplete, "all questions have been served");

  std::shared_lock pool_lock(pool_mutex_);
  const Outstanding o{s.cursor, now};
  nlohmann::ordered_json out = payload(s, o);
  nlohmann::ordered_json event;
  event["event"] = "question_served";
  event["session_id"] = s.id;
  event["ordinal"] = o.ordinal;
  event["question_id"] = s.plan.slots[o.ordinal].question_id;
  event["started_ms"] = o.started_ms;
  session_log_->append(event);
  s.outstanding = o;
  s.cursor = o.ordinal + 1;
  s.status = SessionStatus::kActive;
  return out;
}

nlohmann::ordered_json StudyService::submit_answer(const std::string& session_id, std::size_t ordinal,
                                                   std::optional<std::size_t> choice) {
  auto session = find(session_id);
  Session& s = *session;
  std::lock_guard lock(s.mutex);
  if (!s.outstanding || s.outstanding->ordinal != ordinal)
    throw Error(Errc::kStaleOrdinal, "question " + std::to_string(ordinal) + " is not open");
  if (choice && *choice >= kCandidates)
    throw Error(Errc::kInvalidChoice, "choice " + std::to_string(*choice) + " is not in 0..2");
  const std::int64_t now = clock_();
  const bool late = now - s.outstanding->started_ms > config_.time_limit_ms + config_.grace_ms;
  record_answer(s, choice, now);
  nlohmann::ordered_json out;
  out["accepted"] = true;
  out["ordinal"] = ordinal;
  out["timed_out"] = late || !choice;
  out["remaining"] = s.plan.slots.size() - s.answered;
  return out;
}

nlohmann::ordered_json StudyService::submit_survey(const std::string& session_id, const SurveyResponse& survey) {
  auto session = find(session_id);
  Session& s = *session;
  std::lock_guard lock(s.mutex);
  if (s.status == SessionStatus::kDone) throw Error(Errc::kSessionComplete, "survey already submitted");
  if (s.status != SessionStatus::kSurvey)
    throw Error(Errc::kSessionNotReady, std::to_string(s.answered) + " of " + std::to_string(s.plan.slots.size()) +
                                            " questions answered");
  if (s.condition != Condition::kControl && (!survey.helpful || !survey.too_many_highlights))
    throw Error(Errc::kValidation, "helpful and too_many_highlights are required when highlights were shown");
  SurveyResponse stored = survey;
  stored.session_id = s.id;
  nlohmann::ordered_json record = to_json(stored);
  record["condition"] = to_string(s.condition);
  record["submitted_ms"] = clock_();
  survey_log_->append(record);
  s.status = SessionStatus::kDone;
  return {{"accepted", true}, {"status", to_string(s.status)}};
}

nlohmann::ordered_json StudyService::session_status(const std::string& session_id) const {
  auto session = find(session_id);
  Session& s = *session;
  std::lock_guard lock(s.mutex);
  nlohmann::ordered_json out;
  out["session_id"] = s.id;
  out["condition"] = to_string(s.condition);
  out["status"] = to_string(s.status);
  out["answered"] = s.answered;
  out["total_questions"] = s.plan.slots.size();
  out["outstanding"] = s.outstanding ? nlohmann::ordered_json(s.outstanding->ordinal) : nlohmann::ordered_json();
  return out;
}

std::string StudyService::export_responses(const std::string& admin_token) const {
  if (config_.admin_token.empty() || !constant_time_equal(admin_token, config_.admin_token))
    throw Error(Errc::kUnauthorized, "invalid admin token");
  std::ostringstream out;
  for (auto r : AppendLog::read(response_log_->path())) {
    nlohmann::ordered_json line;
    line["record_type"] = "response";
    for (auto& [k, v] : r.items()) line[k] = v;
    out << line.dump() << '\n';
  }
  for (auto v : AppendLog::read(survey_log_->path())) {
    nlohmann::ordered_json line;
    line["record_type"] = "survey";
    for (auto& [k, val] : v.items()) line[k] = val;
    out << line.dump() << '\n';
  }
  std::vector<std::shared_ptr<Session>> sessions;
  {
    std::shared_lock lock(sessions_mutex_);
    for (const auto& id : session_order_) sessions.push_back(sessions_.at(id));
  }
  for (const auto& sp : sessions) {
    std::lock_guard lock(sp->mutex);
    nlohmann::ordered_json line;
    line["record_type"] = "participant";
    line["participant_id"] = sp->id;
    line["session_id"] = sp->id;
    line["condition"] = to_string(sp->condition);
    line["status"] = to_string(sp->status);
    line["answered"] = sp->answered;
    line["qualifying"] = !sp->failed_attention;
    out << line.dump() << '\n';
  }
  return out.str();
}

}  // namespace docmatch
