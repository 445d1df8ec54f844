#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "docmatch/error.hpp"
#include "docmatch/stats.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace docmatch;

namespace {

Errc code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::kValidation;
}

ResponseRecord response(std::string participant, Condition c, Difficulty d, bool correct, std::int64_t ms,
                        bool check = false) {
  ResponseRecord r;
  r.participant_id = participant;
  r.session_id = participant;
  r.condition = c;
  r.question_id = "q";
  r.difficulty = d;
  r.correct = correct;
  r.chosen_index = correct ? 0 : 1;
  r.elapsed_ms = ms;
  r.attention_check = check;
  return r;
}

std::vector<double> draw(Rng& rng, std::size_t n, double shift = 0.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() + shift;
  return v;
}

}  // namespace

TEST_CASE("exhaustive permutation p-values") {
  StatsConfig cfg;
  const std::vector<double> ones{1, 1, 1, 1}, zeros{0, 0, 0, 0};
  const auto r = permutation_test_detailed(ones, zeros, cfg);
  CHECK(r.exhaustive);
  CHECK(r.permutations == 70);
  CHECK(r.p_value == doctest::Approx(2.0 / 70.0).epsilon(1e-12));
  CHECK(r.observed == 1.0);
  const std::vector<double> c{0.3, 0.3, 0.3};
  CHECK(permutation_test(c, c, cfg) == 1.0);

  Rng rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = draw(rng, 1 + rng.below(8), rng.uniform());
    auto b = draw(rng, 1 + rng.below(8));
    if (trial % 5 == 0) b[0] = a[0];
    CHECK(permutation_test(a, b, cfg) == doctest::Approx(oracle::exact_permutation_p(a, b)).epsilon(1e-12));
  }
  CHECK(code_of([&] { permutation_test(std::vector<double>{}, c, cfg); }) == Errc::kEmptyGroup);
}

TEST_CASE("Monte Carlo agrees with enumeration") {
  Rng rng(72);
  StatsConfig cfg;
  cfg.n_permutations = 100000;
  for (int trial = 0; trial < 6; ++trial) {
    const auto a = draw(rng, 7, 0.5 * trial / 5.0);
    const auto b = draw(rng, 7);
    cfg.seed = static_cast<std::uint64_t>(trial);
    const auto mc = permutation_test_detailed(a, b, cfg, PermutationMode::kMonteCarlo);
    const auto ex = permutation_test_detailed(a, b, cfg, PermutationMode::kExhaustive);
    CHECK_FALSE(mc.exhaustive);
    CHECK(mc.p_value > 0.0);
    CHECK(std::abs(mc.p_value - ex.p_value) <= 0.01);
    CHECK(mc.p_value == permutation_test_detailed(a, b, cfg, PermutationMode::kMonteCarlo).p_value);
  }
  // Large groups switch to Monte Carlo on their own.
  const auto a = draw(rng, 30), b = draw(rng, 30);
  cfg.n_permutations = 2000;
  const auto r = permutation_test_detailed(a, b, cfg);
  CHECK_FALSE(r.exhaustive);
  CHECK(r.permutations == 2000);
  CHECK(r.p_value >= 1.0 / 2001.0);
  CHECK(choose_saturating(8, 4) == 70);
  CHECK(choose_saturating(200, 100) == SIZE_MAX);
  CHECK(choose_saturating(3, 5) == 0);
}

TEST_CASE("property: null p-values are super-uniform") {
  Rng rng(73);
  StatsConfig cfg;
  std::size_t below = 0;
  const int sims = 1000;
  for (int s = 0; s < sims; ++s) {
    const auto pooled = draw(rng, 12);
    const std::vector<double> a(pooled.begin(), pooled.begin() + 6), b(pooled.begin() + 6, pooled.end());
    below += permutation_test(a, b, cfg) < 0.05;
  }
  CHECK(static_cast<double>(below) / sims <= 0.06);
}

TEST_CASE("Sidak correction") {
  CHECK(sidak_alpha(0.05, 1) == 0.05);
  CHECK(sidak_alpha(0.05, 4) == doctest::Approx(oracle::sidak(0.05, 4)).epsilon(1e-12));
  CHECK(std::abs(sidak_alpha(0.05, 4) - 0.012741) <= 1e-6);
  CHECK(std::abs(sidak_alpha(1e-6, 4) / (1e-6 / 4) - 1.0) <= 1e-6);
  for (double f = 0.01; f < 0.5; f += 0.01) {
    CHECK(sidak_alpha(f + 0.01, 4) > sidak_alpha(f, 4));
    for (std::size_t m = 1; m < 10; ++m) CHECK(sidak_alpha(f, m + 1) < sidak_alpha(f, m));
  }
}

TEST_CASE("bootstrap percentile interval") {
  Rng rng(74);
  const std::vector<double> same(10, 1.0);
  const Interval degenerate = bootstrap_ci(same, 1000, 0.95, rng);
  CHECK(degenerate.lower == 1.0);
  CHECK(degenerate.upper == 1.0);
  // Coverage of the true mean over repeated samples is near nominal.
  std::size_t covered = 0;
  for (int s = 0; s < 300; ++s) {
    const auto v = draw(rng, 40);
    const Interval ci = bootstrap_ci(v, 1000, 0.95, rng);
    CHECK(ci.lower <= ci.upper);
    covered += ci.lower <= 0.0 && 0.0 <= ci.upper;
  }
  CHECK(covered >= 264);
  const auto v = draw(rng, 20);
  Rng r1(5), r2(5);
  const Interval i1 = bootstrap_ci(v, 500, 0.9, r1), i2 = bootstrap_ci(v, 500, 0.9, r2);
  CHECK(i1.lower == i2.lower);
  CHECK(i1.upper == i2.upper);
}

TEST_CASE("power analysis") {
  PowerConfig cfg;
  cfg.n_permutations = 2000;
  cfg.threads = 2;

  SUBCASE("null calibration") {
    cfg.n_per_group = 20;
    cfg.effect_size_d = 0.0;
    cfg.n_simulations = 2000;
    const double alpha = sidak_alpha(0.05, 4);
    CHECK(std::abs(power_analysis(cfg) - alpha) <= 0.02);
  }
  SUBCASE("matches the noncentral t power at moderate n") {
    cfg.n_per_group = 20;
    cfg.effect_size_d = 0.8;
    cfg.alpha = 0.05;
    cfg.n_simulations = 1500;
    const double want = oracle::t_test_power(20, 0.8, 0.05);
    CHECK(std::abs(power_analysis(cfg) - want) <= 0.04);
  }
  SUBCASE("at the study's size the corrected test has about 54% power") {
    cfg.n_simulations = 1000;
    const double want = oracle::t_test_power(55, 0.5, sidak_alpha(0.05, 4));
    CHECK(want == doctest::Approx(0.537).epsilon(0.01));
    CHECK(std::abs(power_analysis(cfg) - want) <= 0.05);
  }
  SUBCASE("huge samples are certain") {
    cfg.n_per_group = 5000;
    cfg.n_simulations = 40;
    cfg.n_permutations = 1000;
    CHECK(power_analysis(cfg) >= 0.999);
  }
  SUBCASE("deterministic per seed, independent of threads") {
    cfg.n_per_group = 15;
    cfg.n_simulations = 200;
    const double one = power_analysis(cfg);
    cfg.threads = 1;
    CHECK(power_analysis(cfg) == one);
  }
  SUBCASE("configuration errors") {
    cfg.accuracy_delta = 0.1;
    CHECK(code_of([&] { power_analysis(cfg); }) == Errc::kConfig);
    cfg.accuracy_delta.reset();
    cfg.n_per_group = 1;
    CHECK(code_of([&] { power_analysis(cfg); }) == Errc::kConfig);
    cfg.n_per_group = 10;
    cfg.mode = PowerMode::kEmpirical;
    CHECK(code_of([&] { power_analysis(cfg); }) == Errc::kMissingPilotData);
  }
}

TEST_CASE("pilot data") {
  const auto dir = std::filesystem::temp_directory_path() / "docmatch_pilot_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "pilot.txt";
  {
    std::ofstream out(path);
    out << "# pilot accuracies\n0.5\n\n0.25 \n0.75\n";
  }
  CHECK(load_pilot_accuracies(path) == std::vector<double>{0.5, 0.25, 0.75});
  PowerConfig cfg;
  cfg.mode = PowerMode::kEmpirical;
  cfg.pilot_path = path;
  cfg.effect_size_d.reset();
  cfg.accuracy_delta = 0.0;
  cfg.n_per_group = 10;
  cfg.n_simulations = 300;
  cfg.n_permutations = 500;
  cfg.alpha = 0.05;
  CHECK(power_analysis(cfg) <= 0.1);
  {
    std::ofstream out(path);
    out << "0.5\n";
  }
  CHECK(code_of([&] { load_pilot_accuracies(path); }) == Errc::kMissingPilotData);
  {
    std::ofstream out(path);
    out << "0.5\nabc\n";
  }
  CHECK(code_of([&] { load_pilot_accuracies(path); }) == Errc::kMalformedLine);
  CHECK(code_of([&] { load_pilot_accuracies(dir / "none.txt"); }) == Errc::kMissingPilotData);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bonus schedule") {
  const PayoutSchedule s;
  const double base = 3.15 / 16.0;
  CHECK(bonus_payment(response("p", Condition::kShap, Difficulty::kHard, true, 25000), s) == base * 0.5);
  CHECK(bonus_payment(response("p", Condition::kShap, Difficulty::kHard, true, 150000), s) == 0.0);
  CHECK(bonus_payment(response("p", Condition::kShap, Difficulty::kHard, false, 10000), s) == 0.0);
  CHECK(bonus_multiplier(29999, s) == 0.5);
  CHECK(bonus_multiplier(30000, s) == 0.4);
  CHECK(bonus_multiplier(59999, s) == 0.4);
  CHECK(bonus_multiplier(60000, s) == 0.3);
  CHECK(bonus_multiplier(90000, s) == 0.2);
  CHECK(bonus_multiplier(119999, s) == 0.2);
  CHECK(bonus_multiplier(120000, s) == 0.0);
  double prev = 1.0;
  for (std::int64_t ms = 0; ms <= 200000; ms += 250) {
    const double pay = bonus_payment(response("p", Condition::kShap, Difficulty::kHard, true, ms), s);
    CHECK(pay <= prev);
    prev = pay;
  }
  PayoutSchedule bad;
  bad.multipliers = {0.5, 0.6, 0.3, 0.2, 0.0};
  CHECK(code_of([&] { bad.check(); }) == Errc::kConfig);
  bad.multipliers = {0.5, 0.0};
  CHECK(code_of([&] { bad.check(); }) == Errc::kConfig);
}

TEST_CASE("response records") {
  ResponseRecord r = response("p1", Condition::kSemantic, Difficulty::kEasy, true, 1234);
  r.ordinal = 7;
  CHECK(response_from_json(to_json(r)) == r);
  r.chosen_index.reset();
  r.timed_out = true;
  r.correct = false;
  CHECK(response_from_json(to_json(r)) == r);

  std::istringstream mixed(
      to_json(r).dump() + "\n\n" +
      R"({"record_type":"survey","session_id":"s","helpful":4})" + "\n" +
      R"({"record_type":"participant","participant_id":"p2","qualifying":false})" + "\n" +
      R"({"record_type":"participant","participant_id":"p3","qualifying":true})" + "\n");
  const ResponseLog log = parse_responses(mixed);
  CHECK(log.responses.size() == 1);
  CHECK(log.non_qualifying == std::set<std::string>{"p2"});
  std::istringstream bad("{\"participant_id\": 3}\n");
  CHECK(code_of([&] { parse_responses(bad); }) == Errc::kMalformedLine);
}

TEST_CASE("aggregate report basics") {
  StatsConfig cfg;
  cfg.bootstrap_samples = 500;
  cfg.n_permutations = 2000;

  SUBCASE("single perfect participant") {
    const std::vector<ResponseRecord> rs{response("a", Condition::kControl, Difficulty::kEasy, true, 1000),
                                         response("a", Condition::kControl, Difficulty::kHard, true, 3000)};
    const StudyReport report = aggregate_report(rs, cfg);
    const GroupSummary* g = report.find(Condition::kControl, Scope::kAll);
    REQUIRE(g);
    CHECK(g->mean_accuracy == 1.0);
    CHECK(g->accuracy_ci.lower == 1.0);
    CHECK(g->accuracy_ci.upper == 1.0);
    CHECK(g->mean_time_s == 2.0);
    CHECK(report.comparisons.empty());
  }
  SUBCASE("identical conditions give p = 1") {
    std::vector<ResponseRecord> rs;
    for (Condition c : {Condition::kControl, Condition::kSemantic}) {
      for (int p = 0; p < 4; ++p) {
        const std::string id = std::string(to_string(c)) + std::to_string(p);
        rs.push_back(response(id, c, Difficulty::kHard, p % 2 == 0, 1000 * (p + 1)));
      }
    }
    const StudyReport report = aggregate_report(rs, cfg);
    const Comparison* cmp = report.find(Condition::kSemantic, Scope::kHard, "accuracy");
    REQUIRE(cmp);
    CHECK(cmp->p_value == 1.0);
    CHECK(cmp->difference == 0.0);
    CHECK_FALSE(cmp->significant);
  }
  SUBCASE("exclusions and errors") {
    std::vector<ResponseRecord> rs{response("ok", Condition::kControl, Difficulty::kHard, true, 1000),
                                   response("bad", Condition::kControl, Difficulty::kHard, true, 1000),
                                   response("bad", Condition::kControl, Difficulty::kEasy, false, 1000, true),
                                   response("flagged", Condition::kControl, Difficulty::kHard, false, 1000)};
    const StudyReport report = aggregate_report(rs, cfg, {"flagged"});
    CHECK(report.participants == 1);
    CHECK(report.excluded == std::vector<std::string>{"bad", "flagged"});
    for (const auto& row : report.rows) CHECK(row.participant_id == "ok");
    CHECK(code_of([&] { aggregate_report(std::span<const ResponseRecord>{}, cfg); }) == Errc::kNoResponses);
    rs.push_back(response("ok", Condition::kShap, Difficulty::kHard, true, 1000));
    CHECK(code_of([&] { aggregate_report(rs, cfg); }) == Errc::kValidation);
    cfg.fwer = 1.5;
    CHECK(code_of([&] { aggregate_report(rs, cfg); }) == Errc::kConfig);
  }
}

TEST_CASE("cohort means, bonuses and outputs") {
  synth::CohortSpec spec;
  spec.rates = {{Condition::kControl, {0.9, 0.466}}, {Condition::kSemantic, {0.9, 0.586}}};
  spec.per_group = 30;
  spec.attention_failures = 2;
  spec.seed = 3;
  const auto rs = synth::cohort(spec);
  StatsConfig cfg;
  cfg.bootstrap_samples = 300;
  cfg.n_permutations = 3000;
  const StudyReport report = aggregate_report(rs, cfg);
  CHECK(report.excluded.size() == 4);
  CHECK(report.participants == 56);

  // Independent participant-level recomputation.
  for (Condition c : {Condition::kControl, Condition::kSemantic}) {
    std::map<std::string, std::pair<double, double>> per;
    std::set<std::string> failed;
    for (const auto& r : rs)
      if (r.attention_check && !r.correct) failed.insert(r.participant_id);
    for (const auto& r : rs) {
      if (r.condition != c || r.attention_check || failed.count(r.participant_id) || r.difficulty != Difficulty::kHard)
        continue;
      per[r.participant_id].first += r.correct;
      per[r.participant_id].second += 1;
    }
    double total = 0.0;
    for (const auto& [id, v] : per) total += v.first / v.second;
    const GroupSummary* g = report.find(c, Scope::kHard);
    REQUIRE(g);
    CHECK(g->participants == per.size());
    CHECK(g->mean_accuracy == doctest::Approx(total / per.size()).epsilon(1e-12));
    CHECK(g->accuracy_ci.lower <= g->mean_accuracy);
    CHECK(g->mean_accuracy <= g->accuracy_ci.upper);
  }
  for (const auto& row : report.rows) {
    double bonus = 0.0;
    for (const auto& r : rs) {
      if (r.participant_id != row.participant_id || r.attention_check) continue;
      if (row.scope == Scope::kAll || (row.scope == Scope::kEasy) == (r.difficulty == Difficulty::kEasy))
        bonus += bonus_payment(r, PayoutSchedule{});
    }
    CHECK(row.bonus == doctest::Approx(bonus).epsilon(1e-12));
  }

  const auto json = to_json(report);
  CHECK(json["ci_method"] == "bootstrap percentile");
  CHECK(json["alpha"].get<double>() == sidak_alpha(0.05, 4));
  CHECK(report_table(report).find("Semantic") != std::string::npos);
  std::ostringstream csv;
  write_participant_csv(csv, report);
  const std::string text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(report.rows.size() + 1));

  // Same inputs and seed give a byte-identical report.
  CHECK(to_json(aggregate_report(rs, cfg)).dump() == json.dump());
}
