#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace coagent {

/// Wilson-Hilferty approximation of the chi-square quantile. Accurate to a
/// few percent for df >= 1, which is enough for the fixed-seed goodness of
/// fit tests used here.
inline double chi_square_quantile(int df, double z_upper) {
  const double d = static_cast<double>(df);
  const double c = 2.0 / (9.0 * d);
  const double t = 1.0 - c + z_upper * std::sqrt(c);
  return d * t * t * t;
}

/// z for two-sided confidence 0.999.
inline constexpr double kZ999 = 3.290526731491926;
/// z for one-sided upper tail 0.999 (chi-square tests).
inline constexpr double kZUpper999 = 3.090232306167814;

/// Pearson chi-square statistic for observed counts against expected
/// probabilities; cells with zero expectation must have zero counts.
inline double chi_square_statistic(std::span<const long> counts, std::span<const double> probs,
                                   long total) {
  double stat = 0.0;
  for (size_t k = 0; k < counts.size(); ++k) {
    const double expected = probs[k] * static_cast<double>(total);
    if (expected <= 0.0) continue;
    const double d = static_cast<double>(counts[k]) - expected;
    stat += d * d / expected;
  }
  return stat;
}

/// Streaming mean/variance accumulator (Welford).
struct RunningStats {
  long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stderr_of_mean() const {
    return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
  }
};

}  // namespace coagent
