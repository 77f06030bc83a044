#pragma once

#include "lop/common.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace lop::block {

// Some path-dependent payoffs (rolling coupons, barrier-observation windows)
// do not commute with the state dynamics, so the joint propagator over
// (state, register) cannot be block-diagonalized. It can still be written as
// a deterministic relabeling of the register composed with the plain state
// propagator acting identically on every register column, which keeps the
// backward induction at one n x n by n x K product per period plus a gather.

// Deterministic relabeling of the joint (state, register) index space: every
// source pair (y, k) reads its value from exactly one target pair. Applied to
// a value grid this is a gather, v'(y, k) = v(target(y, k)).
struct PermutationMap {
  std::function<std::pair<Index, Index>(Index y, Index k)> target;
};

// Backward induction over a payment schedule, right to left: for each period
// multiply the period propagator into the value grid (all register columns at
// once), gather through the period's relabeling, then optionally take the
// entrywise max against an exercise grid. `terminal` is n states by K
// register values; the result is the start-of-schedule grid of the same
// shape. Propagator and relabeling lists must align; shapes must agree.
Matrix backward_induct(const std::vector<Matrix>& propagators,
                       const std::vector<PermutationMap>& relabelings, Matrix terminal,
                       const Matrix* exercise = nullptr);

// Register-dependent variant: column k advances under its own propagator
// (a direct sum over the register), so each period costs K matrix-vector
// products instead of one matrix-matrix product. `propagators[i]` holds the
// K per-register matrices for period i.
Matrix backward_induct_state_dependent(const std::vector<std::vector<Matrix>>& propagators,
                                       const std::vector<PermutationMap>& relabelings,
                                       Matrix terminal, const Matrix* exercise = nullptr);

// Rolling-coupon register map: register k holds the previous coupon in units
// of dC, and the next coupon is f * (previous) + phi(state), re-discretized
// by rounding. Targets land in [0, K); rounds that fall outside are clamped
// and counted under audit key "coupon_register_clamped" (a sized register
// should record zero clamps).
PermutationMap snowball_permutation(double f, double dC, std::function<double(Index)> phi,
                                    Index K);

// Barrier-observation window map: the register is a `window`-bit word whose
// bit j holds the (j+1)-th oldest observation; each period drops the oldest
// bit, shifts, and appends the current observation sigma(state) in {0, 1} as
// the newest (top) bit. The register space is 2^window columns; window is
// capped at 12 bits.
PermutationMap softcall_permutation(std::function<int(Index)> sigma, int window);

}  // namespace lop::block
