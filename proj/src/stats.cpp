#include "docmatch/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "docmatch/error.hpp"

namespace docmatch {

// ---------------------------------------------------------------------------
// Records

nlohmann::ordered_json to_json(const ResponseRecord& r) {
  nlohmann::ordered_json out;
  out["participant_id"] = r.participant_id;
  out["session_id"] = r.session_id;
  out["condition"] = to_string(r.condition);
  out["question_id"] = r.question_id;
  out["difficulty"] = to_string(r.difficulty);
  out["ordinal"] = r.ordinal;
  out["chosen_index"] = r.chosen_index ? nlohmann::ordered_json(*r.chosen_index) : nlohmann::ordered_json();
  out["correct"] = r.correct;
  out["elapsed_ms"] = r.elapsed_ms;
  out["timed_out"] = r.timed_out;
  out["attention_check"] = r.attention_check;
  return out;
}

ResponseRecord response_from_json(const nlohmann::json& v) {
  try {
    ResponseRecord r;
    r.participant_id = v.at("participant_id").get<std::string>();
    r.session_id = v.value("session_id", std::string());
    r.condition = parse_condition(v.at("condition").get<std::string>());
    r.question_id = v.at("question_id").get<std::string>();
    r.difficulty = parse_difficulty(v.at("difficulty").get<std::string>());
    r.ordinal = v.value("ordinal", std::size_t{0});
    if (const auto it = v.find("chosen_index"); it != v.end() && !it->is_null())
      r.chosen_index = it->get<std::size_t>();
    r.correct = v.at("correct").get<bool>();
    r.elapsed_ms = v.at("elapsed_ms").get<std::int64_t>();
    r.timed_out = v.value("timed_out", false);
    r.attention_check = v.value("attention_check", false);
    if (r.elapsed_ms < 0) throw Error(Errc::kValidation, "negative elapsed_ms");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kValidation, std::string("response record: ") + e.what());
  }
}

ResponseLog parse_responses(std::istream& in) {
  ResponseLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto v = nlohmann::json::parse(line);
      const std::string type = v.value("record_type", std::string("response"));
      if (type == "response") {
        log.responses.push_back(response_from_json(v));
      } else if (type == "participant") {
        if (!v.at("qualifying").get<bool>()) log.non_qualifying.insert(v.at("participant_id").get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::kMalformedLine, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::kMalformedLine, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

ResponseLog load_responses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIoError, "cannot open " + path.string());
  return parse_responses(in);
}

// ---------------------------------------------------------------------------
// Permutation test

void StatsConfig::check() const {
  if (!(fwer > 0.0 && fwer < 1.0)) throw Error(Errc::kConfig, "fwer must lie in (0, 1)");
  if (comparisons < 1) throw Error(Errc::kConfig, "comparisons must be at least 1");
  if (n_permutations < 1) throw Error(Errc::kConfig, "n_permutations must be at least 1");
  if (!(confidence > 0.0 && confidence < 1.0)) throw Error(Errc::kConfig, "confidence must lie in (0, 1)");
}

std::size_t choose_saturating(std::size_t n, std::size_t k) noexcept {
  if (k > n) return 0;
  k = std::min(k, n - k);
  constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
  std::size_t result = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    // result * (n - k + i) / i stays integral at every step.
    const std::size_t g = std::gcd(result, i);
    const std::size_t r = result / g, d = i / g;
    const std::size_t f = (n - k + i) / d;
    if (f != 0 && r > kMax / f) return kMax;
    result = r * f;
  }
  return result;
}

namespace {

struct Pooled {
  std::vector<double> values;
  std::size_t k = 0;  // size of the relabeled group, the smaller one
  bool k_is_a = true;
  double total = 0.0;
  std::size_t na = 0, nb = 0;

  Pooled(std::span<const double> a, std::span<const double> b) : na(a.size()), nb(b.size()) {
    values.assign(a.begin(), a.end());
    values.insert(values.end(), b.begin(), b.end());
    k_is_a = na <= nb;
    k = k_is_a ? na : nb;
    for (double v : values) total += v;
  }

  // Mean difference (a minus b) given the sum of the relabeled group.
  double diff(double chosen_sum) const {
    const double sa = k_is_a ? chosen_sum : total - chosen_sum;
    return sa / static_cast<double>(na) - (total - sa) / static_cast<double>(nb);
  }
};

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double tie_tolerance(double observed) { return 1e-12 * std::max(1.0, std::abs(observed)); }

std::size_t exhaustive_count(const Pooled& p, double threshold) {
  const std::size_t n = p.values.size(), k = p.k;
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::size_t count = 0;
  while (true) {
    double s = 0.0;
    for (std::size_t i : idx) s += p.values[i];
    if (std::abs(p.diff(s)) >= threshold) ++count;
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return count;
}

// Random relabelings counted until `stop_at` extreme ones are seen; returns
// {extreme count, relabelings drawn}.
std::pair<std::size_t, std::size_t> monte_carlo_count(const Pooled& p, double threshold, std::size_t draws,
                                                      Rng& rng, std::size_t stop_at) {
  std::vector<double> work = p.values;
  const std::size_t n = work.size();
  std::size_t count = 0, drawn = 0;
  while (drawn < draws) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.k; ++i) {
      std::swap(work[i], work[i + rng.below(n - i)]);
      s += work[i];
    }
    ++drawn;
    if (std::abs(p.diff(s)) >= threshold && ++count >= stop_at) break;
  }
  return {count, drawn};
}

}  // namespace

PermutationResult permutation_test_detailed(std::span<const double> a, std::span<const double> b,
                                            const StatsConfig& config, PermutationMode mode) {
  if (a.empty() || b.empty()) throw Error(Errc::kEmptyGroup, "permutation test needs two non-empty groups");
  const Pooled pooled(a, b);
  PermutationResult result;
  result.observed = mean_of(a) - mean_of(b);
  const double threshold = std::abs(result.observed) - tie_tolerance(result.observed);
  const std::size_t total = choose_saturating(a.size() + b.size(), pooled.k);
  const bool exhaustive = mode == PermutationMode::kExhaustive ||
                          (mode == PermutationMode::kAuto && total <= config.exhaustive_limit);
  if (exhaustive) {
    result.exhaustive = true;
    result.permutations = total;
    result.p_value = static_cast<double>(exhaustive_count(pooled, threshold)) / static_cast<double>(total);
  } else {
    Rng rng(derive_seed(config.seed, "permutation"));
    const auto [count, drawn] = monte_carlo_count(pooled, threshold, config.n_permutations, rng,
                                                  std::numeric_limits<std::size_t>::max());
    result.permutations = drawn;
    result.p_value = static_cast<double>(count + 1) / static_cast<double>(drawn + 1);
  }
  return result;
}

double permutation_test(std::span<const double> a, std::span<const double> b, const StatsConfig& config) {
  return permutation_test_detailed(a, b, config).p_value;
}

double sidak_alpha(double fwer, std::size_t m) {
  if (!(fwer > 0.0 && fwer < 1.0)) throw Error(Errc::kConfig, "fwer must lie in (0, 1)");
  if (m < 1) throw Error(Errc::kConfig, "m must be at least 1");
  if (m == 1) return fwer;
  // 1 - (1 - fwer)^(1/m) without cancellation for small fwer.
  return -std::expm1(std::log1p(-fwer) / static_cast<double>(m));
}

Interval bootstrap_ci(std::span<const double> values, std::size_t samples, double confidence, Rng& rng) {
  if (values.empty()) throw Error(Errc::kEmptyGroup, "bootstrap of no values");
  if (samples == 0) {
    const double m = mean_of(values);
    return {m, m};
  }
  const std::size_t n = values.size();
  std::vector<double> means(samples);
  for (double& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  const double tail = 50.0 * (1.0 - confidence);
  std::sort(means.begin(), means.end());
  return {percentile(means, tail), percentile(means, 100.0 - tail)};
}

// ---------------------------------------------------------------------------
// Power

std::vector<double> load_pilot_accuracies(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kMissingPilotData, "cannot open pilot file " + path.string());
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      std::size_t used = 0;
      const double v = std::stod(line.substr(first), &used);
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
      values.push_back(v);
    } catch (const std::exception&) {
      throw Error(Errc::kMalformedLine, "line " + std::to_string(line_no) + ": not a number");
    }
  }
  if (values.size() < 2) throw Error(Errc::kMissingPilotData, "pilot file needs at least two values");
  return values;
}

double power_analysis(const PowerConfig& config) {
  if (config.n_per_group < 2) throw Error(Errc::kConfig, "n_per_group must be at least 2");
  if (config.effect_size_d.has_value() == config.accuracy_delta.has_value())
    throw Error(Errc::kConfig, "set exactly one of effect_size_d and accuracy_delta");
  if (config.n_simulations == 0) throw Error(Errc::kConfig, "n_simulations must be positive");
  const double alpha = config.alpha.value_or(sidak_alpha(0.05, 4));

  std::vector<double> pilot;
  double sd = config.control_sd;
  if (config.mode == PowerMode::kEmpirical) {
    if (!config.pilot_path) throw Error(Errc::kMissingPilotData, "empirical mode needs a pilot file");
    pilot = load_pilot_accuracies(*config.pilot_path);
    const double m = mean_of(pilot);
    double ss = 0.0;
    for (double v : pilot) ss += (v - m) * (v - m);
    sd = std::sqrt(ss / static_cast<double>(pilot.size() - 1));
  }
  const double shift = config.accuracy_delta ? *config.accuracy_delta : *config.effect_size_d * sd;

  StatsConfig test_cfg;
  test_cfg.n_permutations = config.n_permutations;
  const std::size_t n = config.n_per_group;
  const bool exhaustive = choose_saturating(2 * n, n) <= test_cfg.exhaustive_limit;
  // p < alpha with the add-one estimator iff fewer than ceil(alpha (m + 1)) - 1 extreme draws.
  const auto stop_at = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(config.n_permutations + 1)));

  auto simulate = [&](std::size_t sim) {
    Rng rng(derive_seed(config.seed, "power/" + std::to_string(sim)));
    std::vector<double> a(n), b(n);
    auto draw = [&]() {
      if (config.mode == PowerMode::kEmpirical) return pilot[rng.below(pilot.size())];
      return config.control_mean + config.control_sd * rng.normal();
    };
    for (double& v : b) v = draw();
    for (double& v : a) v = draw() + shift;
    if (exhaustive) return permutation_test(a, b, test_cfg) < alpha;
    const Pooled pooled(a, b);
    const double observed = mean_of(a) - mean_of(b);
    const auto [count, drawn] = monte_carlo_count(pooled, std::abs(observed) - tie_tolerance(observed),
                                                  config.n_permutations, rng, std::max<std::size_t>(stop_at, 1));
    return static_cast<double>(count + 1) / static_cast<double>(drawn + 1) < alpha && drawn == config.n_permutations;
  };

  unsigned threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, config.n_simulations));
  std::atomic<std::size_t> rejections{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      std::size_t local = 0;
      for (std::size_t sim = t; sim < config.n_simulations; sim += threads) local += simulate(sim) ? 1 : 0;
      rejections += local;
    });
  }
  for (auto& th : pool) th.join();
  return static_cast<double>(rejections.load()) / static_cast<double>(config.n_simulations);
}

// ---------------------------------------------------------------------------
// Payment

void PayoutSchedule::check() const {
  if (multipliers.size() != thresholds_seconds.size() + 1)
    throw Error(Errc::kConfig, "need one more multiplier than thresholds");
  for (std::size_t i = 1; i < multipliers.size(); ++i)
    if (multipliers[i] > multipliers[i - 1]) throw Error(Errc::kConfig, "multipliers must be non-increasing");
  for (std::size_t i = 1; i < thresholds_seconds.size(); ++i)
    if (!(thresholds_seconds[i] > thresholds_seconds[i - 1]))
      throw Error(Errc::kConfig, "thresholds must be increasing");
}

double bonus_multiplier(std::int64_t elapsed_ms, const PayoutSchedule& schedule) {
  // Compare in integer milliseconds so 30.000 s is exactly on the boundary.
  for (std::size_t i = 0; i < schedule.thresholds_seconds.size(); ++i) {
    const auto limit_ms = static_cast<std::int64_t>(std::llround(schedule.thresholds_seconds[i] * 1000.0));
    if (elapsed_ms < limit_ms) return schedule.multipliers[i];
  }
  return schedule.multipliers.back();
}

double bonus_payment(const ResponseRecord& record, const PayoutSchedule& schedule) {
  if (!record.correct) return 0.0;
  return schedule.base_payment * bonus_multiplier(record.elapsed_ms, schedule);
}

// ---------------------------------------------------------------------------
// Report

std::string_view to_string(Scope scope) noexcept {
  switch (scope) {
    case Scope::kEasy: return "Easy";
    case Scope::kHard: return "Hard";
    case Scope::kAll: return "All";
  }
  return "?";
}

const GroupSummary* StudyReport::find(Condition condition, Scope scope) const {
  for (const auto& g : groups)
    if (g.condition == condition && g.scope == scope) return &g;
  return nullptr;
}

const Comparison* StudyReport::find(Condition treatment, Scope scope, std::string_view metric) const {
  for (const auto& c : comparisons)
    if (c.treatment == treatment && c.scope == scope && c.metric == metric) return &c;
  return nullptr;
}

namespace {

constexpr std::array<Scope, 3> kScopes{Scope::kEasy, Scope::kHard, Scope::kAll};

bool in_scope(Difficulty d, Scope s) {
  return s == Scope::kAll || (s == Scope::kEasy) == (d == Difficulty::kEasy);
}

std::string stage_name(std::string_view kind, Condition c, Scope s, std::string_view metric) {
  return std::string(kind) + "/" + std::string(to_string(c)) + "/" + std::string(to_string(s)) + "/" +
         std::string(metric);
}

}  // namespace

StudyReport aggregate_report(std::span<const ResponseRecord> responses, const StatsConfig& config,
                             const std::set<std::string>& non_qualifying, const PayoutSchedule& schedule) {
  config.check();
  StudyReport report;
  report.alpha = sidak_alpha(config.fwer, config.comparisons);
  report.confidence = config.confidence;

  std::set<std::string> excluded(non_qualifying.begin(), non_qualifying.end());
  std::map<std::string, Condition> condition_of;
  for (const ResponseRecord& r : responses) {
    if (r.attention_check && !r.correct) excluded.insert(r.participant_id);
    const auto [it, inserted] = condition_of.emplace(r.participant_id, r.condition);
    if (!inserted && it->second != r.condition)
      throw Error(Errc::kValidation, "participant " + r.participant_id + " appears under two conditions");
  }

  // participant -> scored responses
  std::map<std::string, std::vector<const ResponseRecord*>> by_participant;
  for (const ResponseRecord& r : responses) {
    if (r.attention_check || excluded.count(r.participant_id)) continue;
    by_participant[r.participant_id].push_back(&r);
  }
  for (const auto& id : excluded)
    if (condition_of.count(id)) report.excluded.push_back(id);
  if (by_participant.empty()) throw Error(Errc::kNoResponses, "no scored responses from qualifying participants");
  report.participants = by_participant.size();

  // (condition, scope) -> per-participant values
  struct Values {
    std::vector<double> accuracy, time;
    std::size_t responses = 0;
  };
  std::map<std::pair<Condition, Scope>, Values> cells;
  for (const auto& [id, records] : by_participant) {
    const Condition cond = condition_of.at(id);
    for (Scope scope : kScopes) {
      ParticipantRow row{id, cond, scope, 0, 0.0, 0.0, 0.0};
      double correct = 0.0, seconds = 0.0;
      for (const ResponseRecord* r : records) {
        if (!in_scope(r->difficulty, scope)) continue;
        ++row.responses;
        correct += r->correct ? 1.0 : 0.0;
        seconds += static_cast<double>(r->elapsed_ms) / 1000.0;
        row.bonus += bonus_payment(*r, schedule);
      }
      if (row.responses == 0) continue;
      row.accuracy = correct / static_cast<double>(row.responses);
      row.mean_time_s = seconds / static_cast<double>(row.responses);
      Values& cell = cells[{cond, scope}];
      cell.accuracy.push_back(row.accuracy);
      cell.time.push_back(row.mean_time_s);
      cell.responses += row.responses;
      report.rows.push_back(std::move(row));
    }
  }

  for (Condition cond : kAllConditions) {
    for (Scope scope : kScopes) {
      const auto it = cells.find({cond, scope});
      if (it == cells.end()) continue;
      const Values& v = it->second;
      GroupSummary g;
      g.condition = cond;
      g.scope = scope;
      g.participants = v.accuracy.size();
      g.responses = v.responses;
      g.mean_accuracy = mean_of(v.accuracy);
      g.mean_time_s = mean_of(v.time);
      Rng acc_rng(derive_seed(config.seed, stage_name("bootstrap", cond, scope, "accuracy")));
      g.accuracy_ci = bootstrap_ci(v.accuracy, config.bootstrap_samples, config.confidence, acc_rng);
      Rng time_rng(derive_seed(config.seed, stage_name("bootstrap", cond, scope, "time")));
      g.time_ci = bootstrap_ci(v.time, config.bootstrap_samples, config.confidence, time_rng);
      report.groups.push_back(g);
    }
  }

  for (Condition cond : kAllConditions) {
    if (cond == Condition::kControl) continue;
    for (Scope scope : kScopes) {
      const auto treat = cells.find({cond, scope});
      const auto control = cells.find({Condition::kControl, scope});
      if (treat == cells.end() || control == cells.end()) continue;
      for (const char* metric : {"accuracy", "time"}) {
        const bool acc = std::string_view(metric) == "accuracy";
        StatsConfig cfg = config;
        cfg.seed = derive_seed(config.seed, stage_name("permutation", cond, scope, metric));
        const auto& a = acc ? treat->second.accuracy : treat->second.time;
        const auto& b = acc ? control->second.accuracy : control->second.time;
        const PermutationResult res = permutation_test_detailed(a, b, cfg);
        report.comparisons.push_back({cond, scope, metric, res.observed, res.p_value, res.p_value < report.alpha});
      }
    }
  }
  return report;
}

nlohmann::ordered_json to_json(const StudyReport& report) {
  nlohmann::ordered_json out;
  out["ci_method"] = "bootstrap percentile";
  out["confidence"] = report.confidence;
  out["alpha"] = report.alpha;
  out["participants"] = report.participants;
  out["excluded"] = report.excluded;
  auto& groups = out["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : report.groups) {
    groups.push_back({{"condition", to_string(g.condition)},
                      {"scope", to_string(g.scope)},
                      {"participants", g.participants},
                      {"responses", g.responses},
                      {"mean_accuracy", g.mean_accuracy},
                      {"accuracy_ci", {g.accuracy_ci.lower, g.accuracy_ci.upper}},
                      {"mean_time_s", g.mean_time_s},
                      {"time_ci", {g.time_ci.lower, g.time_ci.upper}}});
  }
  auto& comps = out["comparisons"] = nlohmann::ordered_json::array();
  for (const auto& c : report.comparisons) {
    comps.push_back({{"treatment", to_string(c.treatment)},
                     {"control", to_string(Condition::kControl)},
                     {"scope", to_string(c.scope)},
                     {"metric", c.metric},
                     {"difference", c.difference},
                     {"p_value", c.p_value},
                     {"significant", c.significant}});
  }
  return out;
}

std::string report_table(const StudyReport& report) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "participants %zu, excluded %zu, alpha %.6f, %.0f%% bootstrap percentile CIs\n\n",
                report.participants, report.excluded.size(), report.alpha, report.confidence * 100.0);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-13s %-5s %4s  %-26s %-30s\n", "condition", "scope", "n", "accuracy [CI]",
                "time s [CI]");
  out << buf;
  for (const auto& g : report.groups) {
    std::snprintf(buf, sizeof buf, "%-13s %-5s %4zu  %.3f [%.3f, %.3f]      %7.2f [%7.2f, %7.2f]\n",
                  std::string(to_string(g.condition)).c_str(), std::string(to_string(g.scope)).c_str(),
                  g.participants, g.mean_accuracy, g.accuracy_ci.lower, g.accuracy_ci.upper, g.mean_time_s,
                  g.time_ci.lower, g.time_ci.upper);
    out << buf;
  }
  out << "\nvs Control\n";
  std::snprintf(buf, sizeof buf, "%-13s %-5s %-8s %10s %10s  %s\n", "treatment", "scope", "metric", "diff",
                "p", "sig");
  out << buf;
  for (const auto& c : report.comparisons) {
    std::snprintf(buf, sizeof buf, "%-13s %-5s %-8s %+10.4f %10.6f  %s\n",
                  std::string(to_string(c.treatment)).c_str(), std::string(to_string(c.scope)).c_str(),
                  c.metric.c_str(), c.difference, c.p_value, c.significant ? "*" : "");
    out << buf;
  }
  return out.str();
}

void write_participant_csv(std::ostream& out, const StudyReport& report) {
  out << "participant_id,condition,scope,responses,accuracy,mean_time_s,bonus\n";
  char buf[128];
  for (const auto& r : report.rows) {
    std::string id = r.participant_id;
    if (id.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : id) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      id = quoted + "\"";
    }
    std::snprintf(buf, sizeof buf, ",%s,%s,%zu,%.6f,%.3f,%.4f\n", std::string(to_string(r.condition)).c_str(),
                  std::string(to_string(r.scope)).c_str(), r.responses, r.accuracy, r.mean_time_s, r.bonus);
    out << id << buf;
  }
}

}  // namespace docmatch
