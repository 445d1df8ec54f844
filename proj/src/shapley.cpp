#include "docmatch/highlighters.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "docmatch/error.hpp"

namespace docmatch {
namespace {

constexpr std::size_t kMaxExactFeatures = 14;

double binomial(std::size_t n, std::size_t k) noexcept {
  k = std::min(k, n - k);
  double result = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    result = result * static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return result;
}

// Advances `idx` (sorted, size s) to the next s-combination of [0, n). Returns false at the end.
bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
  const std::size_t s = idx.size();
  std::size_t i = s;
  while (i > 0) {
    --i;
    if (idx[i] < n - s + i) {
      ++idx[i];
      for (std::size_t j = i + 1; j < s; ++j) idx[j] = idx[j - 1] + 1;
      return true;
    }
  }
  return false;
}

class CoalitionSet {
 public:
  explicit CoalitionSet(std::size_t features) : features_(features) {}

  // Adds a new coalition or bumps the weight of an existing one; returns true when new.
  bool add(std::vector<std::uint8_t> mask, double weight) {
    std::string key(mask.begin(), mask.end());
    const auto [it, inserted] = index_.try_emplace(std::move(key), masks_.size());
    if (!inserted) {
      weights_[it->second] += weight;
      return false;
    }
    masks_.push_back(std::move(mask));
    weights_.push_back(weight);
    return true;
  }

  std::size_t size() const noexcept { return masks_.size(); }
  std::size_t features() const noexcept { return features_; }
  const std::vector<std::vector<std::uint8_t>>& masks() const noexcept { return masks_; }
  std::vector<double>& weights() noexcept { return weights_; }

 private:
  std::size_t features_;
  std::vector<std::vector<std::uint8_t>> masks_;
  std::vector<double> weights_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::vector<std::uint8_t> complement(const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint8_t> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 0 : 1;
  return out;
}

// Fills `coalitions` following the Shapley-kernel allocation: whole subset
// sizes are enumerated from the outside in while the budget covers them.
void sample_coalitions(CoalitionSet& coalitions, std::size_t budget, Rng& rng) {
  const std::size_t m = coalitions.features();
  const std::size_t num_sizes = m / 2;              // ceil((m - 1) / 2)
  const std::size_t num_paired = (m - 1) / 2;       // floor((m - 1) / 2)

  std::vector<double> weight(num_sizes);
  for (std::size_t s = 1; s <= num_sizes; ++s) {
    weight[s - 1] = static_cast<double>(m - 1) / static_cast<double>(s * (m - s));
    if (s <= num_paired) weight[s - 1] *= 2.0;
  }
  const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
  for (auto& w : weight) w /= total;

  std::vector<double> remaining = weight;
  double samples_left = static_cast<double>(budget);
  std::size_t full_sizes = 0;
  for (std::size_t s = 1; s <= num_sizes; ++s) {
    const bool paired = s <= num_paired;
    const double subsets = binomial(m, s) * (paired ? 2.0 : 1.0);
    if (samples_left * remaining[s - 1] / subsets < 1.0 - 1e-8) break;
    ++full_sizes;
    samples_left -= subsets;
    if (remaining[s - 1] < 1.0) {
      const double scale = 1.0 - remaining[s - 1];
      for (auto& r : remaining) r /= scale;
    }
    double w = weight[s - 1] / binomial(m, s);
    if (paired) w /= 2.0;
    std::vector<std::size_t> idx(s);
    std::iota(idx.begin(), idx.end(), 0);
    do {
      std::vector<std::uint8_t> mask(m, 0);
      for (std::size_t i : idx) mask[i] = 1;
      if (paired) coalitions.add(complement(mask), w);
      coalitions.add(std::move(mask), w);
    } while (next_combination(idx, m));
  }

  const std::size_t fixed = coalitions.size();
  auto left = static_cast<std::size_t>(std::max(0.0, samples_left));
  if (full_sizes == num_sizes || left == 0) return;

  std::vector<double> draw(weight.begin() + static_cast<std::ptrdiff_t>(full_sizes), weight.end());
  for (std::size_t i = 0; i < draw.size(); ++i) {
    if (full_sizes + i + 1 <= num_paired) draw[i] /= 2.0;
  }
  std::partial_sum(draw.begin(), draw.end(), draw.begin());
  const double draw_total = draw.back();

  std::vector<std::size_t> order(m);
  const std::size_t max_draws = 4 * left;
  for (std::size_t attempt = 0; attempt < max_draws && left > 0; ++attempt) {
    const double u = rng.uniform() * draw_total;
    const auto pick = static_cast<std::size_t>(
        std::upper_bound(draw.begin(), draw.end(), u) - draw.begin());
    const std::size_t size = full_sizes + std::min(pick, draw.size() - 1) + 1;
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < size; ++i) std::swap(order[i], order[i + rng.below(m - i)]);
    std::vector<std::uint8_t> mask(m, 0);
    for (std::size_t i = 0; i < size; ++i) mask[order[i]] = 1;
    const bool paired = size <= num_paired;
    auto other = complement(mask);
    if (coalitions.add(std::move(mask), 1.0)) --left;
    if (paired && left > 0) {
      if (coalitions.add(std::move(other), 1.0)) --left;
    }
  }

  // Sampled coalitions share the kernel mass of the sizes that were not enumerated.
  const double mass = std::accumulate(weight.begin() + static_cast<std::ptrdiff_t>(full_sizes), weight.end(), 0.0);
  auto& w = coalitions.weights();
  const double sampled = std::accumulate(w.begin() + static_cast<std::ptrdiff_t>(fixed), w.end(), 0.0);
  if (sampled > 0.0) {
    for (std::size_t i = fixed; i < w.size(); ++i) w[i] *= mass / sampled;
  }
}

}  // namespace

std::size_t shap_sample_budget(const HighlighterConfig& config, std::size_t tokens) noexcept {
  return config.shap_samples == 0 ? 2 * tokens + 2048 : config.shap_samples;
}

bool enforce_additivity(std::vector<Attribution>& attributions, double target) {
  if (attributions.empty()) return target == 0.0;
  auto in_order_sum = [&attributions]() {
    double s = 0.0;
    for (const auto& a : attributions) s += a.score;
    return s;
  };
  const double residual = target - in_order_sum();
  if (residual != 0.0) {
    double total_abs = 0.0;
    for (const auto& a : attributions) total_abs += std::abs(a.score);
    for (auto& a : attributions) {
      a.score += total_abs > 0.0 ? residual * std::abs(a.score) / total_abs
                                 : residual / static_cast<double>(attributions.size());
    }
  }
  if (in_order_sum() == target) return true;
  // Rounding cleanup. The in-order sum is monotone in every entry, so a bisection
  // over one entry's ordered bit pattern finds a value hitting `target` when one
  // exists. Heavy cancellation can make that impossible for a given entry; the
  // last entry is tried first, then the others by decreasing position.
  auto ordered = [](double v) {
    const auto bits = std::bit_cast<std::int64_t>(v);
    return bits < 0 ? std::numeric_limits<std::int64_t>::min() - bits : bits;
  };
  auto from_ordered = [](std::int64_t k) {
    return std::bit_cast<double>(k < 0 ? std::numeric_limits<std::int64_t>::min() - k : k);
  };
  const double scale = std::max(std::abs(target), std::abs(in_order_sum())) + 1.0;
  // Closest state seen so far, kept when no entry can hit the target.
  std::size_t best_pick = attributions.size() - 1;
  double best_value = attributions[best_pick].score;
  double best_error = std::abs(in_order_sum() - target);
  auto consider = [&](std::size_t pick) {
    const double error = std::abs(in_order_sum() - target);
    if (error < best_error) {
      best_error = error;
      best_pick = pick;
      best_value = attributions[pick].score;
    }
    return error == 0.0;
  };
  for (std::size_t pick = attributions.size(); pick-- > 0;) {
    double& x = attributions[pick].score;
    const double original = x;
    x += target - in_order_sum();
    if (consider(pick)) return true;
    std::int64_t lo = ordered(x - 4.0 * scale * std::numeric_limits<double>::epsilon() - 1e-300);
    std::int64_t hi = ordered(x + 4.0 * scale * std::numeric_limits<double>::epsilon() + 1e-300);
    // Smallest value whose sum reaches the target, and its predecessor.
    while (lo < hi) {
      const std::int64_t mid = lo + (hi - lo) / 2;
      x = from_ordered(mid);
      if (in_order_sum() < target) lo = mid + 1;
      else hi = mid;
    }
    x = from_ordered(lo);
    if (consider(pick)) return true;
    x = from_ordered(lo - 1);
    consider(pick);
    x = original;
  }
  attributions[best_pick].score = best_value;
  return false;
}

std::vector<Attribution> kernel_shap(const ScoreFn& score_fn, std::size_t m, const HighlighterConfig& config) {
  if (m == 0) throw Error(Errc::kValidation, "kernel_shap needs at least one token");
  const std::size_t budget = shap_sample_budget(config, m);
  if (budget < 2 * m + 2) {
    throw Error(Errc::kInsufficientSamples, std::to_string(budget) + " samples for " + std::to_string(m) +
                                                " tokens; need at least " + std::to_string(2 * m + 2));
  }
  const std::vector<std::uint8_t> full(m, 1), empty(m, 0);
  const double f_full = score_fn(full);
  const double f_empty = score_fn(empty);
  const double target = f_full - f_empty;
  if (m == 1) return {{0, target}};

  // Budget covers the pinned empty and full coalitions too.
  std::size_t free_budget = budget - 2;
  if (m < 63) free_budget = std::min<std::size_t>(free_budget, (std::size_t{1} << m) - 2);

  CoalitionSet coalitions(m);
  Rng rng(config.shap_seed);
  sample_coalitions(coalitions, free_budget, rng);

  const std::size_t rows = coalitions.size();
  const std::size_t cols = m - 1;
  Eigen::MatrixXd x(rows, cols);
  Eigen::VectorXd y(rows);
  Eigen::VectorXd w(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& mask = coalitions.masks()[r];
    const double last = mask[m - 1] ? 1.0 : 0.0;
    for (std::size_t c = 0; c < cols; ++c) x(r, c) = (mask[c] ? 1.0 : 0.0) - last;
    y(r) = score_fn(mask) - f_empty - last * target;
    w(r) = coalitions.weights()[r];
  }
  const Eigen::MatrixXd xtw = x.transpose() * w.asDiagonal();
  const Eigen::MatrixXd gram = xtw * x;
  const Eigen::VectorXd rhs = xtw * y;
  Eigen::VectorXd phi;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  bool solved = false;
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    phi = ldlt.solve(rhs);
    solved = phi.allFinite() && (gram * phi - rhs).norm() <= 1e-9 * std::max(1.0, rhs.norm());
  }
  if (!solved) phi = gram.completeOrthogonalDecomposition().solve(rhs);

  std::vector<Attribution> out(m);
  double partial = 0.0;
  for (std::size_t i = 0; i < cols; ++i) {
    out[i] = {i, phi(static_cast<Eigen::Index>(i))};
    partial += out[i].score;
  }
  out[m - 1] = {m - 1, target - partial};
  enforce_additivity(out, target);
  return out;
}

std::vector<Attribution> kernel_shap(const ScoreFn& score_fn, const Document& article,
                                     const HighlighterConfig& config) {
  return kernel_shap(score_fn, article.tokens().size(), config);
}

std::vector<Attribution> exact_shapley(const ScoreFn& score_fn, std::size_t n) {
  if (n == 0) throw Error(Errc::kValidation, "exact_shapley needs at least one token");
  if (n > kMaxExactFeatures) {
    throw Error(Errc::kTooManyTokens, std::to_string(n) + " tokens; exact enumeration supports at most " +
                                          std::to_string(kMaxExactFeatures));
  }
  const std::size_t subsets = std::size_t{1} << n;
  std::vector<double> value(subsets);
  std::vector<std::uint8_t> mask(n);
  for (std::size_t s = 0; s < subsets; ++s) {
    for (std::size_t i = 0; i < n; ++i) mask[i] = (s >> i) & 1U;
    value[s] = score_fn(mask);
  }
  // |S|! (n - |S| - 1)! / n!
  std::vector<double> coalition_weight(n);
  for (std::size_t k = 0; k < n; ++k) coalition_weight[k] = 1.0 / (static_cast<double>(n) * binomial(n - 1, k));

  std::vector<Attribution> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    double phi = 0.0;
    for (std::size_t s = 0; s < subsets; ++s) {
      if (s & bit) continue;
      phi += coalition_weight[static_cast<std::size_t>(std::popcount(s))] * (value[s | bit] - value[s]);
    }
    out[i] = {i, phi};
  }
  return out;
}

std::vector<Attribution> exact_shapley(const ScoreFn& score_fn, const Document& article) {
  return exact_shapley(score_fn, article.tokens().size());
}

MaskedAffinity::MaskedAffinity(const Vectorizer& vectorizer, const Document& summary, const Document& article)
    : sublinear_(vectorizer.config().sublinear_tf) {
  const DocVector query = vectorizer.embed(summary);
  query_norm_ = query.norm();
  // Local terms are ordered by vocabulary dimension so sums match DocVector's order.
  std::vector<std::size_t> dims;
  std::vector<std::ptrdiff_t> token_dims;
  for (const auto& token : article.tokens()) {
    std::ptrdiff_t dim = -1;
    if (is_word_token(token)) {
      if (const auto d = vectorizer.dimension_of(token.normalized)) {
        dim = static_cast<std::ptrdiff_t>(*d);
        dims.push_back(*d);
      }
    }
    token_dims.push_back(dim);
  }
  std::sort(dims.begin(), dims.end());
  dims.erase(std::unique(dims.begin(), dims.end()), dims.end());
  for (std::size_t d : dims) {
    idf_.push_back(vectorizer.idf(d));
    query_.push_back(query.weight(d));
  }
  token_terms_.reserve(token_dims.size());
  for (auto dim : token_dims) {
    if (dim < 0) {
      token_terms_.push_back(-1);
      continue;
    }
    const auto it = std::lower_bound(dims.begin(), dims.end(), static_cast<std::size_t>(dim));
    token_terms_.push_back(it - dims.begin());
  }
}

double MaskedAffinity::operator()(std::span<const std::uint8_t> mask) const {
  if (query_norm_ == 0.0) return 0.0;
  std::vector<double> counts(idf_.size(), 0.0);
  for (std::size_t t = 0; t < token_terms_.size(); ++t) {
    if (mask[t] && token_terms_[t] >= 0) counts[static_cast<std::size_t>(token_terms_[t])] += 1.0;
  }
  double dot = 0.0, sq = 0.0;
  for (std::size_t u = 0; u < counts.size(); ++u) {
    if (counts[u] == 0.0) continue;
    const double tf = sublinear_ ? 1.0 + std::log(counts[u]) : counts[u];
    const double weight = tf * idf_[u];
    if (weight == 0.0) continue;
    sq += weight * weight;
    if (query_[u] != 0.0) dot += query_[u] * weight;
  }
  if (sq == 0.0) return 0.0;
  return std::clamp(dot / (query_norm_ * std::sqrt(sq)), -1.0, 1.0);
}

double emd_1d(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::kValidation, "emd_1d needs equal-size samples");
  if (a.empty()) return 0.0;
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += std::abs(x[i] - y[i]);
  return total / static_cast<double>(x.size());
}

namespace {

// Min-max scaling to [0, 1]; returns false when the values are all equal.
bool min_max_normalize(std::vector<double>& values) {
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo, max = *hi;
  if (!(max > min)) return false;
  for (auto& v : values) v = (v - min) / (max - min);
  return true;
}

}  // namespace

std::vector<double> random_attribution_scores(std::size_t n, Rng& rng) {
  std::vector<double> out(n);
  for (auto& v : out) v = rng.uniform();
  return out;
}

double attribution_randomness(std::span<const Attribution> attributions, std::size_t n_random,
                              std::uint64_t seed) {
  if (attributions.size() < 2) throw Error(Errc::kValidation, "attribution_randomness needs at least 2 scores");
  if (n_random == 0) throw Error(Errc::kValidation, "n_random must be positive");
  std::vector<double> scores;
  scores.reserve(attributions.size());
  for (const auto& a : attributions) scores.push_back(a.score);
  if (!min_max_normalize(scores)) return 0.0;

  Rng rng(seed);
  double total = 0.0;
  for (std::size_t r = 0; r < n_random; ++r) {
    auto random = random_attribution_scores(scores.size(), rng);
    if (!min_max_normalize(random)) std::fill(random.begin(), random.end(), 0.0);
    total += emd_1d(scores, random);
  }
  return std::clamp(total / static_cast<double>(n_random), 0.0, 1.0);
}

}  // namespace docmatch
