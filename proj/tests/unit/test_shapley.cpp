#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "docmatch/error.hpp"
#include "docmatch/highlighters.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace docmatch;

namespace {

// Random set function with pairwise interactions.
struct RandomGame {
  std::vector<double> unary;
  std::vector<std::vector<double>> pair;
  double base = 0.0;

  RandomGame(std::size_t n, Rng& rng) : unary(n), pair(n, std::vector<double>(n, 0.0)) {
    base = rng.normal();
    for (auto& u : unary) u = rng.normal();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pair[i][j] = 0.3 * rng.normal();
  }
  template <typename Mask>
  double operator()(const Mask& m) const {
    double v = base;
    for (std::size_t i = 0; i < unary.size(); ++i) {
      if (!m[i]) continue;
      v += unary[i];
      for (std::size_t j = i + 1; j < unary.size(); ++j)
        if (m[j]) v += pair[i][j];
    }
    return v;
  }
};

double in_order_sum(const std::vector<Attribution>& a) {
  double s = 0.0;
  for (const auto& x : a) s += x.score;
  return s;
}

TEST_CASE("exact_shapley equals the permutation definition") {
  Rng rng(31);
  for (std::size_t n = 1; n <= 7; ++n) {
    const RandomGame g(n, rng);
    const auto exact = exact_shapley([&](std::span<const std::uint8_t> m) { return g(m); }, n);
    const auto want = oracle::shapley_by_permutations([&](const std::vector<bool>& m) { return g(m); }, n);
    for (std::size_t i = 0; i < n; ++i) CHECK(exact[i].score == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("additive games: Shapley values are the weights") {
  const std::vector<double> w{0.5, -1.0, 2.0, 0.0, 0.25};
  auto f = [&](std::span<const std::uint8_t> m) {
    double v = 3.0;
    for (std::size_t i = 0; i < w.size(); ++i) v += m[i] ? w[i] : 0.0;
    return v;
  };
  const auto exact = exact_shapley(f, w.size());
  HighlighterConfig cfg;
  cfg.shap_samples = 12;
  const auto kernel = kernel_shap(f, w.size(), cfg);
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(exact[i].score == doctest::Approx(w[i]));
    CHECK(kernel[i].score == doctest::Approx(w[i]).epsilon(1e-9));
    CHECK(kernel[i].token_index == i);
  }
}

TEST_CASE("kernel SHAP is exact once every coalition fits the budget") {
  Rng rng(32);
  for (std::size_t n = 2; n <= 10; ++n) {
    const RandomGame g(n, rng);
    auto f = [&](std::span<const std::uint8_t> m) { return g(m); };
    HighlighterConfig cfg;
    cfg.shap_samples = (std::size_t{1} << n) + 2;
    const auto kernel = kernel_shap(f, n, cfg);
    const auto exact = exact_shapley(f, n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(kernel[i].score - exact[i].score) < 1e-9);
  }
}

TEST_CASE("kernel SHAP with sampling stays close to exact") {
  Rng rng(33);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 12;
    const RandomGame g(n, rng);
    auto f = [&](std::span<const std::uint8_t> m) { return g(m); };
    HighlighterConfig cfg;
    cfg.shap_samples = 600;
    cfg.shap_seed = static_cast<std::uint64_t>(trial);
    const auto kernel = kernel_shap(f, n, cfg);
    const auto exact = exact_shapley(f, n);
    double mad = 0.0, maxabs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mad += std::abs(kernel[i].score - exact[i].score) / n;
      maxabs = std::max(maxabs, std::abs(exact[i].score));
    }
    CHECK(mad <= 0.05 * maxabs);
  }
}

// Exact in-order equality is guaranteed when the last entry is small next to
// the target; otherwise the last addition may be too coarse to land on it.
void check_additive(const std::vector<Attribution>& phi, double target) {
  double max_partial = 0.0, s = 0.0;
  for (const auto& a : phi) max_partial = std::max(max_partial, std::abs(s += a.score));
  if (std::abs(phi.back().score) <= std::abs(target) / 2) {
    CHECK(in_order_sum(phi) == target);
  } else {
    CHECK(std::abs(in_order_sum(phi) - target) <= 8 * std::numeric_limits<double>::epsilon() * max_partial);
  }
}

}  // namespace

TEST_CASE("property: efficiency holds bit-exactly") {
  Rng rng(34);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.below(20);
    const RandomGame g(n, rng);
    auto f = [&](std::span<const std::uint8_t> m) { return g(m); };
    HighlighterConfig cfg;
    cfg.shap_seed = static_cast<std::uint64_t>(trial);
    cfg.shap_samples = 2 * n + 2 + rng.below(200);
    const auto phi = kernel_shap(f, n, cfg);
    const std::vector<std::uint8_t> full(n, 1), empty(n, 0);
    check_additive(phi, f(full) - f(empty));
  }
}

TEST_CASE("enforce_additivity lands exactly on awkward targets") {
  Rng rng(35);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Attribution> a(1 + rng.below(40));
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = {i, rng.normal() * std::pow(10.0, rng.below(6) - 3.0)};
    const double target = rng.normal() * 0.1 + 1e-17;
    const bool exact = enforce_additivity(a, target);
    CHECK(exact == (in_order_sum(a) == target));
    check_additive(a, target);
  }
  std::vector<Attribution> zeros(4);
  CHECK(enforce_additivity(zeros, 1.0));
  CHECK(in_order_sum(zeros) == 1.0);

  // Realistic masked-affinity attributions always land exactly.
  const Corpus c = synth::news_corpus(6, 3, 3);
  const Vectorizer v = build_vectorizer(c);
  for (const auto& p : c.pairs()) {
    for (const auto& q : c.pairs()) {
      const MaskedAffinity f(v, p.summary, q.article);
      const auto phi = kernel_shap(std::cref(f), f.features(), HighlighterConfig{});
      const std::vector<std::uint8_t> full(f.features(), 1), empty(f.features(), 0);
      CHECK(in_order_sum(phi) == f(full) - f(empty));
    }
  }
}

TEST_CASE("kernel SHAP is deterministic per seed and checks its budget") {
  Rng rng(36);
  const RandomGame g(14, rng);
  auto f = [&](std::span<const std::uint8_t> m) { return g(m); };
  HighlighterConfig cfg;
  cfg.shap_seed = 9;
  CHECK(kernel_shap(f, 14, cfg) == kernel_shap(f, 14, cfg));
  cfg.shap_samples = 2 * 14 + 1;
  try {
    kernel_shap(f, 14, cfg);
    FAIL("expected InsufficientSamples");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kInsufficientSamples);
  }
  try {
    exact_shapley(f, 15);
    FAIL("expected TooManyTokens");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kTooManyTokens);
  }
  HighlighterConfig defaults;
  CHECK(shap_sample_budget(defaults, 100) == 2248);
}

TEST_CASE("masked affinity matches re-vectorizing with tokens deleted") {
  const Corpus c = synth::news_corpus(12, 7);
  const Vectorizer v = build_vectorizer(c);
  const Document& summary = c.pairs()[0].summary;
  const Document& article = c.pairs()[0].article;
  const MaskedAffinity f(v, summary, article);
  REQUIRE(f.features() == article.tokens().size());
  std::vector<std::uint8_t> mask(f.features(), 1);
  CHECK(f(mask) == doctest::Approx(affinity_score(v.embed(summary), v.embed(article))).epsilon(1e-14));
  Rng rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = rng.bernoulli(0.6) ? 1 : 0;
      if (mask[i] && is_word_token(article.tokens()[i])) kept.push_back(article.tokens()[i].normalized);
    }
    CHECK(f(mask) == doctest::Approx(affinity_score(v.embed(summary), v.embed_terms(kept))).epsilon(1e-14));
  }
  std::fill(mask.begin(), mask.end(), 0);
  CHECK(f(mask) == 0.0);
}

TEST_CASE("EMD equals CDF integration") {
  Rng rng(38);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.uniform() * 3.0;
    CHECK(emd_1d(a, b) == doctest::Approx(oracle::emd_cdf(a, b)).epsilon(1e-12));
  }
  const double x[] = {0.0, 1.0};
  const double y[] = {1.0};
  CHECK_THROWS_AS(emd_1d(x, y), Error);
}

TEST_CASE("attribution randomness diagnostic") {
  std::vector<Attribution> constant{{0, 0.2}, {1, 0.2}, {2, 0.2}};
  CHECK(attribution_randomness(constant) == 0.0);

  // Scores drawn like the random references sit close to them; a spike does not.
  Rng rng(39);
  const auto noise = random_attribution_scores(200, rng);
  std::vector<Attribution> noisy, spike;
  for (std::size_t i = 0; i < noise.size(); ++i) {
    noisy.push_back({i, noise[i]});
    spike.push_back({i, i == 7 ? 1.0 : 0.0});
  }
  const double d_noise = attribution_randomness(noisy, 50, 1);
  const double d_spike = attribution_randomness(spike, 50, 1);
  CHECK(d_noise < 0.1);
  CHECK(d_spike > 0.4);
  CHECK(d_spike <= 1.0);
  CHECK(attribution_randomness(spike, 50, 1) == d_spike);

  // Independent recomputation of the mean normalized EMD.
  Rng ref(1);
  double total = 0.0;
  std::vector<double> s;
  for (const auto& a : spike) s.push_back(a.score);
  for (int r = 0; r < 50; ++r) {
    auto u = random_attribution_scores(s.size(), ref);
    const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
    const double l = *lo, h = *hi;
    for (auto& x : u) x = (x - l) / (h - l);
    total += oracle::emd_cdf(s, u);
  }
  CHECK(d_spike == doctest::Approx(total / 50.0).epsilon(1e-12));
}
