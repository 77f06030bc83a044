#pragma once

#include "lop/common.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace lop::special {

// Gaussian quadrature rules, computed at runtime from the symmetric
// tridiagonal recurrence matrices (eigenvalues give nodes, squared first
// eigenvector components give weights).
//
// gauss_legendre: weight 1 on [-1, 1].
// gauss_laguerre: weight e^{-x} on [0, inf).
std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n);
std::pair<std::vector<double>, std::vector<double>> gauss_laguerre(int n);

// Adaptive integration of f over [a, b] using an embedded 7/15-point Gauss
// pair with interval bisection. `tol` is an absolute target for the whole
// interval. Throws errc::numeric if refinement stalls.
double integrate(const std::function<double(double)>& f, double a, double b, double tol);

// Modified Bessel function of the first kind, real order. Power series for
// z <= 20, large-argument asymptotic expansion beyond. Intended for moderate
// orders (|nu| up to a few); order -1 and below must be integer (reflection).
double bessel_i(double nu, double z);

// Exponentially scaled variant e^{-z} I_nu(z). Stays finite for arguments
// where bessel_i itself would overflow (z beyond ~709), so products of the
// form e^{-c} I_nu(z) can be evaluated as e^{z - c} * bessel_i_scaled(nu, z).
double bessel_i_scaled(double nu, double z);

// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
double gamma_p(double a, double x);

// Standard normal distribution function.
double norm_cdf(double x);

}  // namespace lop::special
