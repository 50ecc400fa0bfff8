#pragma once

#include <cstddef>
#include <span>

namespace defletter {

double mean(std::span<const double> xs);
/// Unbiased sample variance; 0 for fewer than two values.
double sample_variance(std::span<const double> xs);

/// Pearson correlation of paired samples; NaN when either side is constant.
double pearson(std::span<const double> xs, std::span<const double> ys);
/// One-sided p-value for H1: rho > 0 (Student t with n-2 degrees of freedom).
double pearson_p_value_positive(double r, size_t n);

struct WelchResult {
  double t = 0;
  double df = 0;
  /// One-sided p-value for H1: mean(a) > mean(b).
  double p_value = 1;
};
WelchResult welch_t_test_greater(std::span<const double> a, std::span<const double> b);

}  // namespace defletter
