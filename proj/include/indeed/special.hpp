#pragma once

#include <cmath>

namespace indeed {

/// ln Gamma(x), x > 0.
double log_gamma(double x);

/// Digamma psi(x) = d/dx ln Gamma(x), x > 0.
double digamma(double x);

/// Regularized lower incomplete gamma P(a, x) = gamma(a, x) / Gamma(a).
/// Equals the CDF at x of a Gamma(shape=a, rate=1) variable.
double reg_lower_inc_gamma(double a, double x);

/// CDF of Gamma(shape=alpha, rate=beta) at x.
double gamma_cdf(double alpha, double beta, double x);

} // namespace indeed
