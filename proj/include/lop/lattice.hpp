#pragma once

#include "lop/common.hpp"

namespace lop::lattice {

enum class Boundary { Absorbing, Reflecting, Periodic };
enum class Stencil { Nabla, Delta };

// Uniform 1-d grid. `h` is fixed by the span and the point count, so the
// rightmost point is exactly x0 + extent.
struct Lattice {
  Index n = 0;
  double x0 = 0.0;
  double h = 0.0;
  Boundary boundary = Boundary::Absorbing;

  double point(Index i) const { return x0 + static_cast<double>(i) * h; }
  double extent() const { return h * static_cast<double>(n - 1); }
  // Half-period of the ring the periodic grid tiles; momentum spacing is
  // pi / half_period().
  double half_period() const { return 0.5 * static_cast<double>(n) * h; }
};

struct DiscreteOperator {
  Matrix matrix;
  Stencil kind;
};

Lattice build_lattice(double x0, double extent, Index n_points, Boundary boundary);

// Centered first (Nabla) and second (Delta) difference operators with
// boundary rows per the lattice's boundary kind:
//   Absorbing  - boundary rows are identically zero,
//   Reflecting - diagonal keeps the interior value and the remaining stencil
//                mass folds onto the nearest interior neighbour,
//   Periodic   - indices wrap.
DiscreteOperator derivative_operator(const Lattice& lat, Stencil kind);

// Momenta p_k = (k - floor(n/2)) * pi / half_period, k = 0..n-1. Periodic
// lattices only.
Vector brillouin_modes(const Lattice& lat);

// Forward transform fhat(p) = h * sum_x f(x) e^{-i p x} over lattice points,
// one coefficient per Brillouin mode; idft inverts it exactly (up to
// roundoff) for any origin. Direct O(n^2) evaluation, n capped at 4096.
CVector dft(const Lattice& lat, const CVector& f);
CVector dft(const Lattice& lat, const Vector& f);
CVector idft(const Lattice& lat, const CVector& fhat);

}  // namespace lop::lattice
