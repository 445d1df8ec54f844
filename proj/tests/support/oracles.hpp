#pragma once

// Reference implementations written independently of the library, used as
// test oracles. They favor obviousness over speed.

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace oracle {

// Full (n+1) x (m+1) LCS table.
std::size_t lcs_brute(const std::vector<std::string>& a, const std::vector<std::string>& b);
double rouge_l_f1(const std::vector<std::string>& a, const std::vector<std::string>& b);

// 1-D Wasserstein-1 between the empirical distributions, by integrating the
// absolute CDF difference over the merged support.
double emd_cdf(std::vector<double> a, std::vector<double> b);

// Shapley values as average marginal contributions over all n! orderings.
std::vector<double> shapley_by_permutations(const std::function<double(const std::vector<bool>&)>& value,
                                            std::size_t n);

// tf-idf cosine with idf = ln((1 + N) / (1 + df)) + 1 and raw counts.
double tfidf_cosine(const std::vector<std::vector<std::string>>& idf_docs, const std::vector<std::string>& a,
                    const std::vector<std::string>& b);

double sidak(double fwer, double m);

// Two-tailed exact permutation p-value by scanning all 2^n label masks.
double exact_permutation_p(const std::vector<double>& a, const std::vector<double>& b);

double normal_cdf(double x);
// Two-sided two-sample t-test power (equal n, unit variance) from the
// noncentral t distribution, by numerical integration over the chi-square.
double t_test_power(std::size_t n_per_group, double d, double alpha);

struct FragmentCheck {
  bool ok = false;
  std::string reason;
  std::string text;  // unescaped character data
};
// Accepts only text, the five entities render emits, and well-formed
// <span class="hl..." data-channel="N" style="background-color:rgba(...)"> runs.
FragmentCheck check_fragment(std::string_view html);

// Type-7 percentile, written from the textbook definition.
double percentile(std::vector<double> v, double p);

}  // namespace oracle
