#pragma once

#include "lop/common.hpp"
#include "lop/generator.hpp"
#include "lop/propagation.hpp"

#include <complex>
#include <functional>
#include <variant>
#include <vector>

namespace lop::lift {

// Path accumulator definition: along a trajectory the scalar I_t grows by the
// running term phi(y, t) dt between transitions and by the jump term
// chi(y_from, y_to, t) * (psi(y_to, t) - psi(y_from, t)) at each transition.
// Null members count as identically zero.
struct PathFunctional {
  std::function<double(double, double)> phi;          // (y, t)
  std::function<double(double, double, double)> chi;  // (y_from, y_to, t)
  std::function<double(double, double)> psi;          // (y, t)
};

// Evenly spaced accumulator bins, cyclic modulo `bins`.
struct UniformPathGrid {
  double bin_width = 0.0;
  Index bins = 0;
};

// Geometrically spaced rung levels omega0 * ratio^(k+1) with a fixed mean
// accrual `step` per application; ratio > 1 keeps the rung-transition
// eigenvalues well separated.
struct GeometricPathGrid {
  double omega0 = 0.0;
  double ratio = 0.0;
  Index rungs = 0;
  double step = 0.0;
};

using PathGrid = std::variant<UniformPathGrid, GeometricPathGrid>;

// One Fourier component of the lifted dynamics: a dense complex matrix on the
// base states for accumulator mode p.
struct LiftedBlock {
  double p = 0.0;
  CMatrix block;
};

// Upward-moving rung chain: from rung k the state advances to k + 1 with
// probability probs[k], else stays. The top rung is absorbing (probs back
// there would break row stochasticity), so probs[rungs-1] == 0.
struct ShiftLadder {
  Vector omega;  // rung levels
  Vector probs;  // advance probabilities per rung
  Matrix shift;  // the rung-transition matrix
};

// Fourier component of the lifted generator at accumulator mode p, with the
// functional evaluated at time t: the diagonal picks up -i p phi(y) and every
// off-diagonal rate y1 -> y2 the phase exp(-i p chi(y1,y2) (psi(y2)-psi(y1))).
// At p = 0 this returns the generator unchanged.
LiftedBlock characteristic_block(const generator::Generator& gen, const PathFunctional& f,
                                 double p, double t);

// Two accumulators tracked at once: phases multiply entrywise and both
// running terms rotate the diagonal. Reduces to characteristic_block when
// either mode is zero or either functional is null.
LiftedBlock double_characteristic_block(const generator::Generator& gen, const PathFunctional& fa,
                                        const PathFunctional& fb, double pa, double pb, double t);

// Explicit lifted rate matrix on (state, bin) pairs, bins cyclic mod K, state
// major (flat index = state * bins + bin). Jump increments are rounded to the
// nearest bin count (ties away from zero); the running term becomes a Poisson
// counter at rate phi / bin_width ticking the bin up by one, with the rate
// subtracted on the diagonal so rows still sum to zero. `coords` supplies the
// coordinate of each row/column of q. phi must be nonnegative.
Matrix lifted_generator(const Matrix& q, const Vector& coords, const PathFunctional& f,
                        const UniformPathGrid& grid, double t);
Matrix lifted_generator(const generator::Generator& gen, const PathFunctional& f,
                        const UniformPathGrid& grid, double t = 0.0);

// Fast exponentiation of the full lifted rate matrix on a cyclic auxiliary
// frame; the direct (and expensive) evaluation of the joint transition law,
// kept as the reference the Fourier route is tested against. state * bins
// layout as in lifted_generator. Requires n * bins <= 4096.
Matrix brute_force_lifted(const generator::Generator& gen, const PathFunctional& f,
                          const UniformPathGrid& grid, double T);

// Joint law of (final state, accumulator bin) started from lattice index x0
// with zero accrual, over horizon T: one complex fast exponentiation per
// Fourier mode, inverted by the discrete transform. The functional is
// sampled at t = 0 (time-homogeneous evolution). The computation runs at
// twice the requested bin count to measure how much mass falls outside the
// best window of `bins` consecutive bins; more than 1e-6 of spill is refused
// as invalid. The bin marginal must reproduce the unlifted propagator row
// within 1e-8 (audit key "lift_marginal") and the inverse transform must be
// real to 1e-10, else errc::numeric.
Matrix bridge_distribution(const generator::Generator& gen, const PathFunctional& f,
                           const UniformPathGrid& grid, double T, Index x0);

// Double-accumulator variant: returns an n x (bins_a * bins_b) matrix with
// flat bin index (bin_a * bins_b + bin_b). No spill measurement; the caller
// sizes the grids (capped at 64 x 64 bins).
Matrix double_bridge_distribution(const generator::Generator& gen, const PathFunctional& fa,
                                  const PathFunctional& fb, const UniformPathGrid& grid_a,
                                  const UniformPathGrid& grid_b, double T, Index x0);

// Discrete-time lifting of one period propagator: every entry picks up the
// phase exp(-i p psi(y1, y2)). The input rows must be stochastic.
LiftedBlock discrete_lift_block(const propagation::Propagator& step, const lattice::Lattice& lat,
                                const std::function<double(double, double)>& psi, double p);

// Joint law of (final state, accumulator bin) for a sum collected once per
// period: ordered product of the phase-twisted period propagators per mode,
// inverted by the discrete transform. Exact when the per-period summands are
// whole multiples of the bin width. Same realness (1e-10) and marginal
// (1e-8, audit key "lift_marginal") guarantees as bridge_distribution.
Matrix discrete_bridge_distribution(const std::vector<propagation::Propagator>& steps,
                                    const std::vector<std::function<double(double, double)>>& psis,
                                    const lattice::Lattice& lat, const UniformPathGrid& grid,
                                    Index x0);

// Lifted rate matrix tracking the running record level k of chi(y) / alpha:
// whenever chi(y) exceeds alpha * k the pair (y, k) jumps at the given rate
// to (y, nearest-integer(chi(y) / alpha)), clamped to the top level. Flat
// index = state * levels + level. Probability never flows to a lower level.
Matrix max_process_lift(const generator::Generator& gen, const std::function<double(double)>& chi,
                        double alpha, double rate, Index levels);

// Rung chain on levels omega0 * ratio^(k+1), k = 0..rungs-1, with advance
// probabilities chosen so every rung below the cap gains `step` in expected
// level per application. Requires ratio (ratio - 1) > step / omega0 (this is
// exactly what keeps the first probability below one) and refuses ladders
// whose eigenvalues come within 1e-6 of each other.
ShiftLadder build_nonresonant_ladder(double omega0, double ratio, Index rungs, double step);

// Fractional application of the rung chain: for accrual a >= 0 in rung units,
// the convex mix (floor(a)+1-a) * R^floor(a) + (a-floor(a)) * R^(floor(a)+1).
// Row-stochastic; collapses to a plain power at whole a.
Matrix interpolated_shift_kernel(const ShiftLadder& ladder, double accrual);

// Condition number (largest over smallest singular value) of the unit-column
// eigenvector matrix of m; the price of diagonalizing in that basis.
double diagonalizer_condition(const Matrix& m);

// (I + dt b)^(2^n) with the step geometry supplied by the caller, for the
// complex Fourier components whose stability follows the real generator they
// were built from.
CMatrix fast_exponentiate_block(const CMatrix& block, const propagation::FastExpPlan& plan);

}  // namespace lop::lift
