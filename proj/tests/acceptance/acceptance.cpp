// Acceptance suite: one PASS/FAIL line per criterion. Run with a criterion
// name to check just that one, or with no arguments to run them all.

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>

#include "docmatch/affinity.hpp"
#include "docmatch/error.hpp"
#include "docmatch/highlighters.hpp"
#include "docmatch/render.hpp"
#include "docmatch/rouge.hpp"
#include "docmatch/stats.hpp"
#include "docmatch/studygen.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

extern char** environ;

using namespace docmatch;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

constexpr std::size_t kShapPairs = 200;
constexpr std::size_t kShapMaxArticleTokens = 12;
constexpr double kShapMadFraction = 0.02;
constexpr double kShapSecondsLimit = 120.0;

Outcome shapley_fidelity() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(20240501);
  const std::vector<std::string> vocabulary = {"river", "flood", "town", "rain",  "storm", "bridge", "water",
                                               "road",  "mayor", "crews", "night", "levee", "warning", "homes"};
  auto sentence = [&](std::size_t words) {
    std::string s;
    for (std::size_t i = 0; i < words; ++i) {
      if (i) s += ' ';
      s += vocabulary[rng.below(vocabulary.size())];
    }
    return s + ".";
  };
  std::vector<CorpusPair> pairs;
  for (std::size_t i = 0; i < kShapPairs; ++i) {
    // Words plus the closing period stay within the token limit.
    const std::size_t article_words = 1 + rng.below(kShapMaxArticleTokens - 1);
    const std::string id = "s" + std::to_string(i);
    pairs.push_back({id, Document(article_id(id), sentence(article_words)),
                     Document(summary_id(id), sentence(2 + rng.below(6)))});
  }
  const Corpus corpus(std::move(pairs));
  const Vectorizer vectorizer = build_vectorizer(corpus);

  double worst_ratio = 0.0;
  std::size_t not_additive = 0, degenerate = 0;
  for (const auto& p : corpus.pairs()) {
    if (p.article.tokens().size() > kShapMaxArticleTokens) return {false, "generator exceeded the token limit"};
    const MaskedAffinity f(vectorizer, p.summary, p.article);
    HighlighterConfig cfg;
    cfg.shap_seed = rng.next();
    const auto approx = kernel_shap(std::cref(f), p.article, cfg);
    const auto exact = exact_shapley(std::cref(f), p.article);
    double mad = 0.0, peak = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < exact.size(); ++i) {
      mad += std::abs(approx[i].score - exact[i].score);
      peak = std::max(peak, std::abs(exact[i].score));
      sum += approx[i].score;
    }
    mad /= static_cast<double>(exact.size());
    const std::vector<std::uint8_t> full(exact.size(), 1), empty(exact.size(), 0);
    if (sum != f(full) - f(empty)) ++not_additive;
    if (peak == 0.0) {
      ++degenerate;
      if (mad != 0.0) worst_ratio = INFINITY;
      continue;
    }
    worst_ratio = std::max(worst_ratio, mad / peak);
  }
  const double elapsed = seconds_since(start);
  const bool pass = worst_ratio <= kShapMadFraction && not_additive == 0 && elapsed < kShapSecondsLimit;
  return {pass, fmt("worst MAD/max|phi| %.5f (limit %.2f), %zu non-additive, %zu all-zero games, %.1fs",
                    worst_ratio, kShapMadFraction, not_additive, degenerate, elapsed)};
}

// ---------------------------------------------------------------------------

constexpr std::size_t kRougePairs = 10000;
constexpr std::size_t kRougeMaxLength = 30;

Outcome rouge_oracle() {
  Rng rng(7001);
  std::size_t mismatches = 0;
  for (std::size_t trial = 0; trial < kRougePairs; ++trial) {
    const auto a = synth::random_tokens(rng, rng.below(kRougeMaxLength + 1), 2 + rng.below(12));
    const auto b = synth::random_tokens(rng, rng.below(kRougeMaxLength + 1), 2 + rng.below(12));
    if (lcs_length(a, b) != oracle::lcs_brute(a, b) || rouge_l_f1(a, b) != oracle::rouge_l_f1(a, b)) ++mismatches;
  }
  return {mismatches == 0, fmt("%zu of %zu pairs differ from the brute-force table", mismatches, kRougePairs)};
}

// ---------------------------------------------------------------------------

constexpr double kExhaustiveTolerance = 1e-12;
constexpr double kMonteCarloTolerance = 0.01;
constexpr std::size_t kMonteCarloPermutations = 100000;
constexpr std::size_t kNullSimulations = 1000;
constexpr double kNullRateLimit = 0.06;

Outcome permutation_test_criterion() {
  StatsConfig cfg;
  cfg.n_permutations = kMonteCarloPermutations;
  cfg.seed = 99;
  const std::vector<double> a{1, 1, 1, 1}, b{0, 0, 0, 0};
  const double exhaustive = permutation_test_detailed(a, b, cfg, PermutationMode::kExhaustive).p_value;
  const double mc = permutation_test_detailed(a, b, cfg, PermutationMode::kMonteCarlo).p_value;

  // A less degenerate pair where the exact answer is still enumerable.
  Rng rng(3);
  std::vector<double> x(8), y(8);
  for (auto& v : x) v = rng.normal() + 0.8;
  for (auto& v : y) v = rng.normal();
  const double x_exact = permutation_test_detailed(x, y, cfg, PermutationMode::kExhaustive).p_value;
  const double x_mc = permutation_test_detailed(x, y, cfg, PermutationMode::kMonteCarlo).p_value;

  StatsConfig null_cfg;
  null_cfg.n_permutations = 2000;
  std::size_t rejections = 0;
  for (std::size_t s = 0; s < kNullSimulations; ++s) {
    std::vector<double> u(20), v(20);
    for (auto& e : u) e = rng.normal();
    for (auto& e : v) e = rng.normal();
    null_cfg.seed = s;
    rejections += permutation_test(u, v, null_cfg) < 0.05;
  }
  const double null_rate = static_cast<double>(rejections) / kNullSimulations;

  const bool pass = std::abs(exhaustive - 2.0 / 70.0) <= kExhaustiveTolerance &&
                    std::abs(mc - exhaustive) <= kMonteCarloTolerance &&
                    std::abs(x_mc - x_exact) <= kMonteCarloTolerance && null_rate <= kNullRateLimit;
  return {pass, fmt("exhaustive p %.15f (2/70 = %.15f), Monte Carlo %.5f; second pair %.5f vs %.5f; "
                    "null rejection rate %.3f",
                    exhaustive, 2.0 / 70.0, mc, x_exact, x_mc, null_rate)};
}

// ---------------------------------------------------------------------------

Outcome sidak() {
  const double alpha = sidak_alpha(0.05, 4);
  return {std::abs(alpha - 0.012741) <= 1e-6, fmt("alpha %.9f (expected 0.012741 +- 1e-6)", alpha)};
}

// ---------------------------------------------------------------------------

constexpr double kPowerLow = 0.75;
constexpr double kPowerHigh = 0.88;
constexpr double kPowerSecondsLimit = 300.0;

Outcome power() {
  const auto start = std::chrono::steady_clock::now();
  PowerConfig cfg;
  cfg.n_per_group = 55;
  cfg.effect_size_d = 0.5;
  cfg.n_simulations = 2000;
  cfg.mode = PowerMode::kGaussian;
  cfg.alpha = sidak_alpha(0.05, 4);
  cfg.seed = 1;
  const double value = power_analysis(cfg);
  const double elapsed = seconds_since(start);
  const double analytic = oracle::t_test_power(55, 0.5, *cfg.alpha);
  const bool pass = value >= kPowerLow && value <= kPowerHigh && elapsed < kPowerSecondsLimit;
  return {pass, fmt("simulated power %.4f (target [%.2f, %.2f]); analytic t-test power %.4f; %.1fs", value,
                    kPowerLow, kPowerHigh, analytic, elapsed)};
}

// ---------------------------------------------------------------------------

Outcome payment_schedule() {
  // The published table: strictly under 30/60/90/120 seconds, then nothing.
  auto table = [](std::int64_t ms) {
    if (ms < 30000) return 0.5;
    if (ms < 60000) return 0.4;
    if (ms < 90000) return 0.3;
    if (ms < 120000) return 0.2;
    return 0.0;
  };
  const PayoutSchedule schedule;
  std::size_t mismatches = 0;
  ResponseRecord r;
  for (std::int64_t ms = 0; ms <= kQuestionTimeLimitMs + 2000; ++ms) {
    if (bonus_multiplier(ms, schedule) != table(ms)) ++mismatches;
    if (ms % 250 == 0) {
      r.elapsed_ms = ms;
      r.correct = true;
      if (bonus_payment(r, schedule) != schedule.base_payment * table(ms)) ++mismatches;
      r.correct = false;
      if (bonus_payment(r, schedule) != 0.0) ++mismatches;
    }
  }
  const double best = 16 * schedule.base_payment * (1.0 + 0.5);
  return {mismatches == 0 && std::abs(best - 3.15 * 1.5) < 1e-12,
          fmt("%zu mismatches over every millisecond to %lld ms; all-fast-and-correct total %.4f", mismatches,
              static_cast<long long>(kQuestionTimeLimitMs + 2000), best)};
}

// ---------------------------------------------------------------------------

constexpr std::size_t kPoolQuestions = 1000;
constexpr double kHardTarget = 1.0 / 3.0;
constexpr double kHardTolerance = 0.02;
constexpr double kPositionTolerance = 0.05;

Outcome pool_properties() {
  const Corpus corpus = synth::news_corpus(kPoolQuestions, 2024);
  const Vectorizer vectorizer = build_vectorizer(corpus);
  const AffinityIndex index(corpus, vectorizer);
  std::vector<QuestionSpec> questions;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    questions.push_back(build_question(index, corpus.pairs()[i].id, QuestionOptions{2024, 0.5}));
  const double tau = resolve_tau(questions, DifficultyConfig{});
  std::vector<QuestionLabel> labels;
  std::array<std::size_t, kCandidates> positions{};
  for (QuestionSpec& q : questions) {
    q.difficulty = classify_difficulty(q.label(), tau);
    labels.push_back(q.label());
    ++positions[q.truth_index];
  }
  const double easy = model_follower_accuracy(labels, DifficultyFilter::kEasy);
  const auto kept_ids = curate_hard_pool(labels, kHardTarget, 7);
  const std::set<std::string> kept(kept_ids.begin(), kept_ids.end());
  std::vector<QuestionLabel> curated;
  for (const auto& l : labels)
    if (l.difficulty == Difficulty::kHard && kept.count(l.id)) curated.push_back(l);
  const double hard = model_follower_accuracy(curated, DifficultyFilter::kHard);
  double worst_position = 0.0;
  for (std::size_t n : positions)
    worst_position = std::max(worst_position, std::abs(static_cast<double>(n) / kPoolQuestions - 1.0 / 3.0));
  const bool pass = easy == 1.0 && std::abs(hard - kHardTarget) <= kHardTolerance && worst_position <= kPositionTolerance;
  return {pass, fmt("Easy model-follower accuracy %.4f; curated Hard %.4f over %zu questions; truth positions "
                    "%zu/%zu/%zu",
                    easy, hard, curated.size(), positions[0], positions[1], positions[2])};
}

// ---------------------------------------------------------------------------

constexpr std::size_t kRenderDocuments = 1000;

Outcome render_roundtrip() {
  Rng rng(8080);
  std::size_t failures = 0;
  for (std::size_t trial = 0; trial < kRenderDocuments; ++trial) {
    const Document doc("r" + std::to_string(trial), synth::random_text(rng, rng.below(400)));
    HighlightSet set{trial % 2 ? Method::kShap : Method::kCooccurrence, doc.id(), {}};
    const std::size_t n = doc.length();
    for (std::size_t k = 0; n > 0 && k < rng.below(8); ++k) {
      const std::size_t a = rng.below(n);
      const std::size_t b = a + 1 + rng.below(n - a);
      const std::size_t channel = set.method == Method::kShap ? rng.below(2) : rng.below(5);
      set.spans.push_back({a, b, channel, rng.uniform()});
      if (b - a > 2 && rng.bernoulli(0.5)) {
        const std::size_t pa = a + rng.below(b - a - 1);
        set.spans.push_back({pa, pa + 1 + rng.below(b - pa - 1), channel, 1.0});
      }
    }
    const std::string html = render_html(doc, set);
    if (strip_highlights(html) != doc.text() || !oracle::check_fragment(html).ok) ++failures;
  }
  const std::string dir = std::string(DOCMATCH_FIXTURES) + "/golden/";
  const Document golden_doc("golden/article", slurp(dir + "render_doc.txt"));
  const HighlightSet golden_set = highlight_set_from_json(nlohmann::json::parse(slurp(dir + "render_set.json")));
  const std::string golden = slurp(dir + "render.html");
  const bool stable = render_html(golden_doc, golden_set) == golden && render_html(golden_doc, golden_set) == golden;
  return {failures == 0 && stable,
          fmt("%zu of %zu documents failed the round trip; golden file %s", failures, kRenderDocuments,
              stable ? "matches byte for byte" : "DIFFERS")};
}

// ---------------------------------------------------------------------------

constexpr double kRecoveryTolerance = 0.01;
constexpr std::size_t kRecoveryGroupSize = 5000;
constexpr std::size_t kReplications = 200;
constexpr double kDetectionRate = 0.80;

std::map<Condition, synth::CellRates> planted_rates() {
  // Hard means as reported; easy accuracy sits a little under the model's 1.0.
  return {{Condition::kControl, {0.9, 0.466}},
          {Condition::kSemantic, {0.9, 0.586}},
          {Condition::kShap, {0.9, 0.352}},
          {Condition::kBertSum, {0.9, 0.367}},
          {Condition::kCooccurrence, {0.9, 0.55}}};
}

Outcome cohort_recovery() {
  const auto rates = planted_rates();
  StatsConfig cfg;
  cfg.n_permutations = 200;
  cfg.bootstrap_samples = 200;

  synth::CohortSpec large;
  large.rates = rates;
  large.per_group = kRecoveryGroupSize;
  large.seed = 1;
  const StudyReport big = aggregate_report(synth::cohort(large), cfg);
  double worst_large = 0.0;
  for (const auto& [c, r] : rates)
    worst_large = std::max(worst_large, std::abs(big.find(c, Scope::kHard)->mean_accuracy - r.hard));

  cfg.n_permutations = 5000;
  std::size_t semantic_hits = 0, shap_hits = 0, both = 0, small_within = 0;
  for (std::size_t rep = 0; rep < kReplications; ++rep) {
    synth::CohortSpec spec;
    spec.rates = rates;
    spec.per_group = 55;
    spec.seed = 1000 + rep;
    cfg.seed = rep;
    const StudyReport report = aggregate_report(synth::cohort(spec), cfg);
    const Comparison* sem = report.find(Condition::kSemantic, Scope::kHard, "accuracy");
    const Comparison* shap = report.find(Condition::kShap, Scope::kHard, "accuracy");
    const bool s1 = sem->significant && sem->difference > 0;
    const bool s2 = shap->significant && shap->difference < 0;
    semantic_hits += s1;
    shap_hits += s2;
    both += s1 && s2;
    double worst = 0.0;
    for (const auto& [c, r] : rates)
      worst = std::max(worst, std::abs(report.find(c, Scope::kHard)->mean_accuracy - r.hard));
    small_within += worst <= kRecoveryTolerance;
  }
  const double sem_rate = static_cast<double>(semantic_hits) / kReplications;
  const double shap_rate = static_cast<double>(shap_hits) / kReplications;
  const double both_rate = static_cast<double>(both) / kReplications;
  const bool pass = worst_large <= kRecoveryTolerance && both_rate >= kDetectionRate;
  return {pass, fmt("hard means recovered within %.4f at n=%zu/group; at n=55 Semantic>Control significant in "
                    "%.3f, SHAP<Control in %.3f, both in %.3f of %zu replications; all n=55 means within "
                    "%.2f in %.3f",
                    worst_large, kRecoveryGroupSize, sem_rate, shap_rate, both_rate, kReplications,
                    kRecoveryTolerance, static_cast<double>(small_within) / kReplications)};
}

// ---------------------------------------------------------------------------

constexpr std::size_t kAckedBeforeKill = 100;

struct Server {
  pid_t pid = -1;
  int port = 0;
};

Server start_server(const fs::path& pool, const fs::path& data) {
  int fds[2];
  if (pipe(fds) != 0) throw Error(Errc::kIoError, "pipe failed");
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, fds[0]);
  const std::string cli = DOCMATCH_CLI;
  const std::string pool_s = pool.string(), data_s = data.string();
  std::vector<std::string> args = {cli,       "serve",  "--pool",        pool_s,   "--data-dir",
                                   data_s,    "--bind", "127.0.0.1:0",   "--admin-token", "secret"};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  Server s;
  const int rc = posix_spawn(&s.pid, cli.c_str(), &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(fds[1]);
  if (rc != 0) throw Error(Errc::kIoError, "cannot start " + cli);
  std::string line;
  char ch;
  while (read(fds[0], &ch, 1) == 1 && ch != '\n') line += ch;
  close(fds[0]);
  const auto colon = line.rfind(':');
  if (line.rfind("listening on", 0) != 0 || colon == std::string::npos)
    throw Error(Errc::kIoError, "server did not start: '" + line + "'");
  s.port = std::stoi(line.substr(colon + 1));
  return s;
}

void kill_server(Server& s, int signal) {
  kill(s.pid, signal);
  int status = 0;
  waitpid(s.pid, &status, 0);
}

Outcome service_durability() {
  const fs::path root = fs::temp_directory_path() / "docmatch_acceptance_durability";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream out(root / "pool.jsonl", std::ios::binary);
    const auto pool = synth::service_pool(8, 20, 4);
    write_pool(out, pool);
  }
  std::size_t leaks = 0, bodies = 0;
  auto inspect = [&](const httplib::Result& res) -> nlohmann::json {
    if (!res) throw Error(Errc::kIoError, "request failed");
    ++bodies;
    if (res->body.find("truth_index") != std::string::npos) ++leaks;
    return nlohmann::json::parse(res->body);
  };

  Server server = start_server(root / "pool.jsonl", root / "data");
  std::map<std::pair<std::string, std::size_t>, std::optional<std::size_t>> acked;
  std::vector<std::string> sessions;
  {
    httplib::Client client("127.0.0.1", server.port);
    Rng rng(55);
    while (acked.size() < kAckedBeforeKill) {
      const auto created = inspect(client.Post("/sessions", "", "application/json"));
      const std::string id = created["session_id"];
      sessions.push_back(id);
      for (std::size_t k = 0; k < 18 && acked.size() < kAckedBeforeKill; ++k) {
        const auto q = inspect(client.Get("/sessions/" + id + "/next"));
        const std::size_t ordinal = q["ordinal"];
        const std::optional<std::size_t> choice =
            rng.bernoulli(0.1) ? std::nullopt : std::optional<std::size_t>(rng.below(3));
        nlohmann::json body = {{"ordinal", ordinal}, {"choice", choice ? nlohmann::json(*choice) : nlohmann::json()}};
        const auto ack = inspect(client.Post("/sessions/" + id + "/answers", body.dump(), "application/json"));
        if (ack.value("accepted", false)) acked[{id, ordinal}] = choice;
      }
    }
    // Leave one question open across the crash.
    inspect(client.Get("/sessions/" + sessions.back() + "/next"));
  }
  kill_server(server, SIGKILL);

  server = start_server(root / "pool.jsonl", root / "data");
  std::size_t lost = 0, altered = 0, extra = 0;
  bool resumed = false;
  {
    httplib::Client client("127.0.0.1", server.port);
    const auto res = client.Get("/admin/export", {{"Authorization", "Bearer secret"}});
    if (!res || res->status != 200) throw Error(Errc::kIoError, "export failed");
    std::istringstream in(res->body);
    std::map<std::pair<std::string, std::size_t>, std::optional<std::size_t>> stored;
    for (const auto& r : parse_responses(in).responses) {
      if (!stored.emplace(std::make_pair(r.session_id, r.ordinal), r.chosen_index).second) ++extra;
    }
    for (const auto& [key, choice] : acked) {
      const auto it = stored.find(key);
      if (it == stored.end())
        ++lost;
      else if (it->second != choice)
        ++altered;
    }
    extra += stored.size() > acked.size() ? stored.size() - acked.size() : 0;
    // The open question comes back as a conflict carrying the same payload.
    const auto again = client.Get("/sessions/" + sessions.back() + "/next");
    resumed = again && again->status == 409 && inspect(again).contains("question");
    for (const auto& id : sessions) inspect(client.Get("/sessions/" + id));
  }
  kill_server(server, SIGTERM);
  fs::remove_all(root);
  const bool pass = lost == 0 && altered == 0 && extra == 0 && leaks == 0 && resumed;
  return {pass, fmt("%zu acked answers across %zu sessions: %zu lost, %zu altered, %zu unexpected after SIGKILL "
                    "and restart; open question resumed: %s; %zu of %zu payloads mention truth_index",
                    acked.size(), sessions.size(), lost, altered, extra, resumed ? "yes" : "no", leaks, bodies)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"shapley_fidelity", shapley_fidelity},
      {"rouge_oracle", rouge_oracle},
      {"permutation_test", permutation_test_criterion},
      {"sidak", sidak},
      {"power", power},
      {"payment_schedule", payment_schedule},
      {"pool_properties", pool_properties},
      {"render_roundtrip", render_roundtrip},
      {"cohort_recovery", cohort_recovery},
      {"service_durability", service_durability},
  };
  std::set<std::string> wanted(argv + 1, argv + argc);
  for (const auto& name : wanted) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
      std::fprintf(stderr, "unknown criterion '%s'\n", name.c_str());
      return 2;
    }
  }
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    Outcome outcome;
    try {
      outcome = run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %s: %s\n", outcome.pass ? "PASS" : "FAIL", name.c_str(), outcome.detail.c_str());
    std::fflush(stdout);
    failed += outcome.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
