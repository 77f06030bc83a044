#pragma once

#include "lop/common.hpp"
#include "lop/generator.hpp"
#include "lop/lift.hpp"

#include <array>
#include <functional>
#include <utility>

namespace lop::moment {

// First-order deformation of the rate matrix by a path accumulator: the
// running term lands on the diagonal, the jump term multiplies each rate by
// its accumulator increment. Off-diagonal support never exceeds that of q.
// This is the eps-derivative at zero of the tilted family bridge_moments
// differentiates; its Dyson integral against the propagator is the bridge
// first moment.
Matrix deformation_potential(const generator::Generator& gen, const lift::PathFunctional& f,
                             double t = 0.0);

// Per-bridge raw accumulator moments over horizon T. Entry (y1, y2) of m_k
// holds E[I^k ; y_T = y2 | y_0 = y1] -- unnormalized, so dividing by the
// bridge probability u(y1, y2) conditions on the endpoint. Only the moments
// up to `orders` are filled; the rest stay empty. The bivariate variant fills
// m1b/m2b for the second accumulator and the mixed moment m11.
struct MomentSet {
  Matrix u;            // undeformed propagator (bridge weights)
  Matrix m1, m2, m3;   // first accumulator
  Matrix m1b, m2b;     // second accumulator (bivariate only)
  Matrix m11;          // mixed first moment (bivariate only)
  double horizon = 0.0;
};

// Moments by central differences of the tilted propagator family around
// eps = 0: the running term shifts the diagonal by eps * phi, every
// transition rate is multiplied by exp(eps * increment). The tilt's first
// derivative is deformation_potential; keeping the full exponential (rather
// than stopping at the linear term) means second moments of jump
// accumulators retain their same-jump quadratic-variation contribution.
// The base step follows the size of the deformation (1e-4 / (T max|V|)),
// shrunk further if it would destabilize the elementary time step; third
// differences use a tenfold larger step because their noise amplification
// grows like eps^-3. Every requested stencil is evaluated twice, at eps and
// eps/2, and a relative disagreement beyond 1e-3 between the two raises
// errc::numeric (the step cannot be trusted); the measured disagreement is
// recorded under audit key "dyson_richardson". `extra_doublings` passes
// through to the propagator time step, for studies comparing against
// continuum-limit formulas; orders == 1 then keeps the gate off the noisier
// second-difference stencil entirely.
MomentSet bridge_moments(const generator::Generator& gen, const lift::PathFunctional& f, double T,
                         int orders = 2, int extra_doublings = 0);
MomentSet bridge_moments_bivariate(const generator::Generator& gen, const lift::PathFunctional& fa,
                                   const lift::PathFunctional& fb, double T,
                                   int extra_doublings = 0);

// Entrywise raw / u where u > 1e-12, zero elsewhere.
Matrix conditional(const Matrix& raw, const Matrix& u);

// --- Two- and three-moment distribution matchers ---------------------------
//
// Each matcher inverts the first raw moments of a named family exactly and
// verifies its own round trip to 1e-10 before returning. Inadmissible moment
// sets (nonpositive mean, zero or negative variance, zero skew for the
// shifted gamma) are refused with errc::invalid.

struct ChiSquareFit {
  double a = 0.0;      // degrees of freedom
  double scale = 0.0;  // X = scale * Y, Y ~ chi-square(a)
};

struct LogNormalFit {
  double mu = 0.0;
  double sigma = 0.0;  // log X ~ N(mu, sigma^2)
};

// Shifted gamma: X = a + b * G with G ~ Gamma(p, 1). b carries the sign of
// the skew.
struct PearsonFit {
  double a = 0.0;
  double b = 0.0;
  double p = 0.0;
};

struct BiLogNormalFit {
  double mu1 = 0.0, sigma1 = 0.0;
  double mu2 = 0.0, sigma2 = 0.0;
  double rho = 0.0;
};

ChiSquareFit match_chi_square(double m1, double m2);
LogNormalFit match_lognormal(double m1, double m2);
PearsonFit match_pearson3(double m1, double m2, double m3);

// Joint fit from both marginals' first two raw moments plus the mixed first
// moment. Marginal log-variances within -1e-6 of zero clamp to zero (exactly
// flat accumulators measure a tiny negative variance through differentiation
// noise); a degenerate marginal then forces rho = 0 and requires the mixed
// moment to factorize. |rho| may overshoot 1 by at most 1e-9 and is clamped.
BiLogNormalFit match_bilognormal(double m1a, double m2a, double m1b, double m2b, double m11);

// Raw moments of a fitted family, for round-trip verification.
std::array<double, 2> raw_moments(const ChiSquareFit& d);
std::array<double, 2> raw_moments(const LogNormalFit& d);
std::array<double, 3> raw_moments(const PearsonFit& d);

// --- Capped expectations ----------------------------------------------------

// E[min(X, cap)] in closed form (regularized incomplete gamma / normal
// distribution function). cap = +inf returns the plain mean.
double capped_mean(const ChiSquareFit& d, double cap);
double capped_mean(const LogNormalFit& d, double cap);
double capped_mean(const PearsonFit& d, double cap);  // requires b > 0

// E[min(sqrt(X), cap_root)], the volatility-swap leg.
double capped_root_mean(const ChiSquareFit& d, double cap_root);
double capped_root_mean(const LogNormalFit& d, double cap_root);

// The ratio X1 / X2 of a joint lognormal pair is again lognormal; this is the
// exact law used to cross-validate the quadrature below.
LogNormalFit ratio_distribution(const BiLogNormalFit& d);

double ratio_mean(const BiLogNormalFit& d);
double ratio_second_moment(const BiLogNormalFit& d);

// E[min(X1 / X2, cap)] by nested quadrature over the joint density:
// Gauss-Legendre panels across the conditional law of X1 inside a
// Gauss-Laguerre rule over X2. Degenerate marginals (sigma below 1e-6) and
// |rho| at 1 collapse to the one-dimensional closed form.
double capped_ratio_mean(const BiLogNormalFit& d, double cap);

// --- Variance products ------------------------------------------------------

// Expected squared log-price move per unit time, split by destination:
// v(y1, y2) = q(y1, y2) * log^2(price(y2) / price(y1)). States priced at zero
// are excluded from accrual (rows and columns zeroed; the count is recorded
// under audit key "variance_excluded_states"). Negative prices are refused.
Matrix instantaneous_variance(const generator::Generator& gen,
                              const std::function<double(double)>& price, double t = 0.0);

// Whole-range realized variance as a running accumulator: the rate-weighted
// expected squared log-price move per unit time, accrued along the path
// (the row sums of instantaneous_variance as a clock).
lift::PathFunctional realized_variance_functional(const generator::Generator& gen,
                                                  const std::function<double(double)>& price);

// Corridor pair for conditional variance swaps: first the running variance
// rate gated to states priced inside (low, high), then the corridor
// occupation clock. Both are running-term accumulators.
std::pair<lift::PathFunctional, lift::PathFunctional> corridor_variance_pair(
    const generator::Generator& gen, const std::function<double(double)>& price, double low,
    double high);

enum class Matcher {
  chi_square,
  log_normal,
};

// A price plus the total bridge weight that had to be dropped because its
// conditional moments admitted no fit (also recorded under audit key
// "swap_excluded_weight").
struct SwapQuote {
  double price = 0.0;
  double excluded_weight = 0.0;
};

// Expected min(I_T, cap_factor * swap_rate^2) - swap_rate^2 from the start
// state y0, each bridge matched to the chosen family and integrated in closed
// form. Bridges with (numerically) zero accumulator variance contribute their
// deterministic value directly.
SwapQuote price_variance_swap(const MomentSet& ms, Index y0, double swap_rate, double cap_factor,
                              Matcher matcher);

// Expected min(sqrt(I_T), sqrt(cap_factor) * swap_rate) - swap_rate.
SwapQuote price_volatility_swap(const MomentSet& ms, Index y0, double swap_rate, double cap_factor,
                                Matcher matcher);

// Expected min(I1 / I2, cv_max) - swap_rate^2 for a bivariate moment set
// (corridor variance over corridor time). Bridges whose expected corridor
// time falls below 1e-9 of the horizon are excluded and their weight
// reported.
SwapQuote price_conditional_variance_swap(const MomentSet& ms, Index y0, double swap_rate,
                                          double cv_max);

}  // namespace lop::moment
