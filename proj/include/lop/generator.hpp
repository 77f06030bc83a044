#pragma once

#include "lop/common.hpp"
#include "lop/lattice.hpp"

#include <complex>
#include <functional>
#include <utility>
#include <vector>

namespace lop::generator {

// Markov rate matrix tied to the lattice it lives on. Off-diagonals are
// nonnegative; rows sum to zero except structurally-zero absorbing rows.
struct Generator {
  Matrix q;
  lattice::Lattice lat;
};

// Space-time drift and volatility fields.
struct CoefficientField {
  std::function<double(double, double)> mu;     // (x, t)
  std::function<double(double, double)> sigma;  // (x, t)
};

// (y, y_to, t) -> positive factor applied to the rate y -> y_to.
using MeasureChangeField = std::function<double(double, double, double)>;

// Laplace exponents of increasing processes, used to inject jumps through
// functional calculus.
class BernsteinFunction {
 public:
  enum class Kind { Poisson, Stable, Gamma, Linear };

  static BernsteinFunction poisson(double c);
  static BernsteinFunction stable(double alpha);
  static BernsteinFunction gamma(double nu);
  static BernsteinFunction linear();

  std::complex<double> operator()(std::complex<double> lambda) const;
  double operator()(double lambda) const { return (*this)(std::complex<double>(lambda)).real(); }
  Kind kind() const { return kind_; }

 private:
  BernsteinFunction(Kind k, double p) : kind_(k), param_(p) {}
  Kind kind_;
  double param_;
};

// A generator valid on [t0, t1); schedules are contiguous lists of these.
struct TimeSlice {
  Generator gen;
  double t0 = 0.0;
  double t1 = 0.0;
};

// q = mu * centered-first-difference + (sigma^2 / 2) * second-difference,
// boundary rows per the lattice's boundary kind. Requires the grid Peclet
// bound sigma^2 > |mu| h pointwise so off-diagonals stay positive; the error
// message names the first offending point.
Generator build_diffusion_generator(const lattice::Lattice& lat, const CoefficientField& coeff,
                                    double t);

// sum_y q(x, y) e^{i p (y - x)} for an interior row; vanishes at p = 0.
std::complex<double> symbol(const Generator& gen, Index row, double p);

// Off-diagonals scale by G(y, y', t) / G(y, y, t); the diagonal is rebuilt so
// row sums stay zero. Structurally-zero rows are preserved. G must be
// strictly positive wherever the rate is positive.
Generator apply_measure_change(const Generator& gen, const MeasureChangeField& G, double t);

// Drift change mu -> mu_bar through the multiplicative factor
// G(y, y') = exp(a(y) (y' - y)) with a = (mu_bar - mu) / sigma^2 evaluated at
// the source state. Returns the transformed generator and the field itself.
std::pair<Generator, MeasureChangeField> girsanov_drift_change(
    const Generator& gen, const CoefficientField& coeff,
    const std::function<double(double)>& mu_bar, double t = 0.0);

// Conjugation q' = g^{-1} q g + g^{-1} dg/dt, applied per slice at the
// slice's start time. g must be positive and satisfy dg/dt + q g = 0 within
// 1e-8 at every slice knot (so the output keeps zero row sums).
std::vector<TimeSlice> apply_numeraire_change(const std::vector<TimeSlice>& schedule,
                                              const std::function<double(double, double)>& g);

// Jump injection q' = -phi(-q) via the eigendecomposition. Loud failure on
// ill-conditioned spectra. Off-diagonals in [-1e-10, 0) from round-off are
// clipped with the diagonal rebalanced; anything more negative is an error.
Generator subordinate(const Generator& gen, const BernsteinFunction& phi);

// Directional variant: moves that raise price_map take their rate from the
// phi_up-subordinated generator, moves that lower it from phi_down; the
// diagonal restores zero row sums.
Generator subordinate_asymmetric(const Generator& gen, const BernsteinFunction& phi_up,
                                 const BernsteinFunction& phi_down,
                                 const std::function<double(double)>& price_map);

// Validates off-diagonal nonnegativity and zero row sums (structurally-zero
// rows exempt from the row-sum check). Throws errc::numeric on violation.
void check_rate_matrix(const Matrix& q, double offdiag_tol = 1e-12, double rowsum_tol = 1e-10);

}  // namespace lop::generator
