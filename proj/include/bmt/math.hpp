#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace bmt {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

// log(sum_i exp(x[i])); -inf for an empty span or all -inf entries.
double log_sum_exp(std::span<const double> x);
double log_sum_exp(double a, double b);

// log Beta(a, b) via lgamma.
inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Poisson pmf renormalized over a finite support set. Returns -inf when k is
// outside the support. The e^{-lambda} factor cancels between numerator and
// normalizer, so only k*log(lambda) - log(k!) terms are needed.
double log_trunc_poisson(int k, double lambda, std::span<const int> support);

// Convenience overload for contiguous support {0, 1, ..., max_k}.
double log_trunc_poisson(int k, double lambda, int max_k);

// Smallest count c >= 1 such that c/n >= threshold (up to a tiny tolerance
// that keeps e.g. 0.1 * 30 from rounding up to 4).
long min_support_count(double threshold, long n);

// Equal-tailed weighted percentile: smallest x[i] (after sorting by value)
// whose cumulative weight reaches q * total_weight. Weights must be
// nonnegative with a positive sum.
double weighted_percentile(std::span<const double> values,
                           std::span<const double> weights, double q);

// SplitMix64-style mixer; used to derive independent per-stream seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace bmt
