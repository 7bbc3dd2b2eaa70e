#pragma once

#include <cstddef>
#include <vector>

namespace mrtlab {

// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
double gamma_p(double a, double x);
// Upper tail Q(a, x) = 1 - P(a, x).
double gamma_q(double a, double x);

// Regularized incomplete beta I_x(a, b), a, b > 0, x in [0, 1].
double incomplete_beta(double a, double b, double x);

// Survival function of the chi-squared distribution with k dof: P(X > x).
double chi2_sf(double x, double k);

// Pearson correlation of two equal-length samples. Throws ValidationError
// if the lengths differ, n < 2, or either sample has zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Two-sided p-value for the null r = 0 using the t approximation
// t = r * sqrt((n - 2) / (1 - r^2)) with n - 2 dof. n must be >= 3.
double pearson_p_value(double r, std::size_t n);

}  // namespace mrtlab
