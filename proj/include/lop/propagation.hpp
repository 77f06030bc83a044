#pragma once

#include "lop/common.hpp"
#include "lop/generator.hpp"

#include <complex>
#include <functional>
#include <optional>
#include <vector>

namespace lop::propagation {

// Step size and doubling count for repeated squaring of (I + dt q):
//   FE1: every diagonal of the elementary step stays >= 1/2,
//   FE2: t = dt * 2^{n_doublings} exactly.
struct FastExpPlan {
  double dt = 0.0;
  int n_doublings = 0;
  double t = 0.0;
};

struct Propagator {
  Matrix u;
  double t0 = 0.0;
  double t1 = 0.0;
};

// Right eigenvectors, eigenvalues, and the inverse eigenvector matrix of a
// rate matrix, with residual guarantees checked at construction.
struct SpectralDecomposition {
  CMatrix vectors;
  CVector values;
  CMatrix inverse;
};

FastExpPlan plan_fast_exp(const generator::Generator& gen, double t);

// Shared cleanup for every propagator matrix produced by the library: audit
// the raw entry negativity and row sums (keys "propagator_negativity" and
// "propagator_rowsum"), clip tiny negatives, renormalize rows on
// non-absorbing lattices only, and refuse larger defects with errc::numeric.
void audit_propagator_rows(Matrix& u, const lattice::Lattice& lat);

// (I + dt q)^{2^n} by repeated squaring. t = 0 returns the identity.
// `extra_doublings` halves the step that many times beyond the stability
// minimum, for studies that need the step error driven far down. The raw
// product's row sums and entry negativity are audited before cleanup: tiny
// negative entries (>= -1e-12) clip to zero, rows renormalize only on
// non-absorbing lattices, and larger defects raise errc::numeric.
Propagator fast_exponentiate(const generator::Generator& gen, double t, int extra_doublings = 0);

// Time-ordered product over contiguous slices, each slice fast-exponentiated,
// with an optional row-stochastic mapping operator applied after each slice.
Propagator path_ordered_exponential(
    const std::vector<generator::TimeSlice>& schedule,
    const std::vector<std::optional<Matrix>>& map_after = {}, int extra_doublings = 0);

// Truncated time-ordered series sum_{q<=order} of nested integrals of the
// slice rates, later times rightmost. Slice rates are constant in time, so
// the nested integrands are matrix polynomials in s and the per-slice
// quadrature is closed in exact form (composite Simpson reproduces it
// identically on polynomials of this degree). Refuses when the leading
// remainder bound (M t)^{order+1}/(order+1)! reaches 1.
Matrix dyson_truncated(const std::vector<generator::TimeSlice>& schedule, int order);

SpectralDecomposition spectral_decompose(const Matrix& q);

// sum_n psi(lambda_n) u_n v_n^T, returned as the real part after checking the
// imaginary residue is below 1e-8.
Matrix apply_function(const SpectralDecomposition& dec,
                      const std::function<std::complex<double>(std::complex<double>)>& psi);

}  // namespace lop::propagation
