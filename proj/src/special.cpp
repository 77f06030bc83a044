#include "lop/special.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace lop::special {

namespace {

// Nodes and weights from the Jacobi matrix of the orthogonal-polynomial
// three-term recurrence; weights are mu0 * (first row of eigenvectors)^2.
std::pair<std::vector<double>, std::vector<double>> from_jacobi(const Vector& diag,
                                                                const Vector& offdiag,
                                                                double mu0) {
  Index n = diag.size();
  Matrix J = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) J(i, i) = diag[i];
  for (Index i = 0; i + 1 < n; ++i) {
    J(i, i + 1) = offdiag[i];
    J(i + 1, i) = offdiag[i];
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(J);
  require(es.info() == Eigen::Success, errc::numeric, "quadrature eigen decomposition failed");
  std::vector<double> x(n), w(n);
  for (Index i = 0; i < n; ++i) {
    x[i] = es.eigenvalues()[i];
    double v = es.eigenvectors()(0, i);
    w[i] = mu0 * v * v;
  }
  return {std::move(x), std::move(w)};
}

struct GaussPair {
  std::vector<double> x7, w7, x15, w15;
  GaussPair() {
    std::tie(x7, w7) = gauss_legendre(7);
    std::tie(x15, w15) = gauss_legendre(15);
  }
};

const GaussPair& pair_rule() {
  static const GaussPair p;
  return p;
}

struct Segment {
  double a, b, coarse, fine, err;
};

Segment evaluate(const std::function<double(double)>& f, double a, double b) {
  const GaussPair& p = pair_rule();
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s7 = 0, s15 = 0;
  for (std::size_t i = 0; i < p.x7.size(); ++i) s7 += p.w7[i] * f(mid + half * p.x7[i]);
  for (std::size_t i = 0; i < p.x15.size(); ++i) s15 += p.w15[i] * f(mid + half * p.x15[i]);
  s7 *= half;
  s15 *= half;
  return {a, b, s7, s15, std::abs(s15 - s7)};
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  require(n >= 1, errc::invalid, "quadrature order must be positive");
  Vector diag = Vector::Zero(n), off(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) off[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
  return from_jacobi(diag, off, 2.0);
}

std::pair<std::vector<double>, std::vector<double>> gauss_laguerre(int n) {
  require(n >= 1, errc::invalid, "quadrature order must be positive");
  Vector diag(n), off(std::max(n - 1, 0));
  for (int k = 0; k < n; ++k) diag[k] = 2.0 * k + 1.0;
  for (int k = 1; k < n; ++k) off[k - 1] = k;
  auto [x, w] = from_jacobi(diag, off, 1.0);
  // The eigenvector first components behind the largest nodes drop below the
  // eigensolver's noise floor (~1e-14 absolute), so their squares come out as
  // squared noise instead of the true, vastly smaller weights.  Recompute every
  // weight from the polynomial recurrence, w_i = x_i / ((n+1) L_{n+1}(x_i))^2,
  // which only involves magnitudes well inside double range.
  for (int i = 0; i < n; ++i) {
    double lm = 1.0, lk = 1.0 - x[i];
    for (int k = 1; k <= n; ++k) {
      double next = ((2.0 * k + 1.0 - x[i]) * lk - k * lm) / (k + 1.0);
      lm = lk;
      lk = next;
    }
    double d = (n + 1.0) * lk;
    w[i] = x[i] / (d * d);
  }
  return {std::move(x), std::move(w)};
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
  require(std::isfinite(a) && std::isfinite(b), errc::invalid, "integration bounds not finite");
  require(tol > 0, errc::invalid, "integration tolerance must be positive");
  if (a == b) return 0.0;
  double sign = 1.0;
  if (a > b) {
    std::swap(a, b);
    sign = -1.0;
  }

  // Start from several uniform panels rather than one: a single top-level
  // Gauss pair can straddle a narrow peak with no node near it, report a tiny
  // error estimate, and accept a wrong value without ever refining.
  const int initial = 8;
  std::vector<Segment> stack;
  stack.reserve(initial);
  for (int i = 0; i < initial; ++i) {
    double lo = a + (b - a) * i / initial;
    double hi = (i + 1 == initial) ? b : a + (b - a) * (i + 1) / initial;
    stack.push_back(evaluate(f, lo, hi));
  }
  double total = 0.0;
  int evaluations = initial;
  const int max_segments = 20000;
  while (!stack.empty()) {
    Segment s = stack.back();
    stack.pop_back();
    double local_tol = tol * (s.b - s.a) / (b - a);
    if (s.err <= std::max(local_tol, 1e-14 * std::abs(s.fine)) ||
        (s.b - s.a) < 1e-14 * (b - a)) {
      total += s.fine;
      continue;
    }
    require(evaluations < max_segments, errc::numeric, "adaptive integration failed to converge");
    double mid = 0.5 * (s.a + s.b);
    stack.push_back(evaluate(f, s.a, mid));
    stack.push_back(evaluate(f, mid, s.b));
    evaluations += 2;
  }
  return sign * total;
}

namespace {

// Core evaluation returning e^{-z} I_nu(z); both public entry points wrap it.
double bessel_i_core(double nu, double z) {
  require(z >= 0, errc::invalid, "bessel_i requires nonnegative argument");
  // Negative integer orders coincide with their positive counterparts.
  if (nu < -0.75 && std::abs(nu - std::llround(nu)) < 1e-9) nu = -nu;
  if (z == 0.0) {
    if (nu == 0.0) return 1.0;
    require(nu > 0, errc::invalid, "bessel_i diverges at zero for negative order");
    return 0.0;
  }

  if (z <= 20.0) {
    // Ascending series sum_k (z/2)^{nu+2k} / (k! Gamma(nu+k+1)).
    double t = std::pow(0.5 * z, nu) / std::tgamma(nu + 1.0);
    double sum = t;
    double q = 0.25 * z * z;
    for (int k = 0; k < 60; ++k) {
      t *= q / ((k + 1.0) * (nu + k + 1.0));
      sum += t;
      if (std::abs(t) < std::numeric_limits<double>::epsilon() * std::abs(sum)) break;
    }
    require(std::isfinite(sum), errc::numeric, "bessel_i series overflowed");
    return std::exp(-z) * sum;
  }

  // Large-argument expansion e^z / sqrt(2 pi z) * sum_k (-1)^k c_k with the
  // usual descending coefficients; truncate at the smallest term.
  double c = 1.0, sum = 1.0, prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 30; ++k) {
    c *= (4.0 * nu * nu - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (8.0 * k * z);
    if (std::abs(c) >= prev) break;  // divergent tail reached
    prev = std::abs(c);
    sum += (k % 2 ? -c : c);
    if (std::abs(c) < std::numeric_limits<double>::epsilon() * std::abs(sum)) break;
  }
  return sum / std::sqrt(2.0 * M_PI * z);
}

}  // namespace

double bessel_i(double nu, double z) { return std::exp(z) * bessel_i_core(nu, z); }

double bessel_i_scaled(double nu, double z) { return bessel_i_core(nu, z); }

double gamma_p(double a, double x) {
  require(a > 0, errc::invalid, "gamma_p requires positive shape");
  require(x >= 0, errc::invalid, "gamma_p requires nonnegative argument");
  if (x == 0.0) return 0.0;
  double log_prefix = -x + a * std::log(x) - std::lgamma(a);

  if (x < a + 1.0) {
    // Ascending series for P.
    double term = 1.0 / a, sum = term;
    for (int n = 1; n < 500; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-16) {
        return std::min(1.0, std::exp(log_prefix) * sum);
      }
    }
    throw error(errc::numeric, "gamma_p series failed to converge");
  }

  // Continued fraction for Q via modified Lentz.
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) {
      double q = std::exp(log_prefix) * h;
      return std::max(0.0, 1.0 - q);
    }
  }
  throw error(errc::numeric, "gamma_p continued fraction failed to converge");
}

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace lop::special
