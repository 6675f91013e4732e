#include "bmt/math.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace bmt {

double log_sum_exp(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;  // empty, all -inf, or an inf/nan present
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

double log_sum_exp(double a, double b) {
  const double arr[2] = {a, b};
  return log_sum_exp(std::span<const double>(arr, 2));
}

double log_trunc_poisson(int k, double lambda, std::span<const int> support) {
  if (lambda <= 0.0) throw std::invalid_argument("log_trunc_poisson: lambda must be > 0");
  bool in_support = std::find(support.begin(), support.end(), k) != support.end();
  if (!in_support) return kNegInf;
  const double ll = std::log(lambda);
  std::vector<double> terms;
  terms.reserve(support.size());
  for (int j : support) terms.push_back(j * ll - std::lgamma(j + 1.0));
  return k * ll - std::lgamma(k + 1.0) - log_sum_exp(terms);
}

double log_trunc_poisson(int k, double lambda, int max_k) {
  std::vector<int> support(static_cast<std::size_t>(max_k) + 1);
  std::iota(support.begin(), support.end(), 0);
  return log_trunc_poisson(k, lambda, support);
}

long min_support_count(double threshold, long n) {
  long c = static_cast<long>(std::ceil(threshold * static_cast<double>(n) - 1e-9));
  return std::max<long>(1, c);
}

double weighted_percentile(std::span<const double> values,
                           std::span<const double> weights, double q) {
  if (values.empty() || values.size() != weights.size())
    throw std::invalid_argument("weighted_percentile: bad input sizes");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("weighted_percentile: zero total weight");
  const double target = q * total;
  double cum = 0.0;
  for (std::size_t i : order) {
    cum += weights[i];
    if (cum >= target - 1e-15 * total) return values[i];
  }
  return values[order.back()];
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix64(base ^ mix64(stream + 0x1234567898765431ULL));
}

}  // namespace bmt
