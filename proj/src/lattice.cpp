#include "lop/lattice.hpp"

#include <cmath>
#include <complex>

namespace lop::lattice {

namespace {
constexpr Index kMaxTransform = 4096;

void check_periodic(const Lattice& lat, const char* who) {
  require(lat.boundary == Boundary::Periodic, errc::invalid,
          std::string(who) + " requires a periodic lattice");
}
}  // namespace

Lattice build_lattice(double x0, double extent, Index n_points, Boundary boundary) {
  require(extent > 0.0 && std::isfinite(extent), errc::invalid,
          "lattice extent must be positive");
  require(std::isfinite(x0), errc::invalid, "lattice origin must be finite");
  require(n_points >= 3, errc::invalid, "lattice needs at least 3 points");
  Lattice lat;
  lat.n = n_points;
  lat.x0 = x0;
  lat.h = extent / static_cast<double>(n_points - 1);
  lat.boundary = boundary;
  return lat;
}

DiscreteOperator derivative_operator(const Lattice& lat, Stencil kind) {
  require(lat.n >= 3 && lat.h > 0, errc::invalid, "invalid lattice");
  const Index n = lat.n;
  const double inv2h = 1.0 / (2.0 * lat.h);
  const double invh2 = 1.0 / (lat.h * lat.h);
  Matrix m = Matrix::Zero(n, n);

  auto fill_row = [&](Index i, Index left, Index right) {
    if (kind == Stencil::Nabla) {
      m(i, right) += inv2h;
      m(i, left) -= inv2h;
    } else {
      m(i, right) += invh2;
      m(i, left) += invh2;
      m(i, i) += -2.0 * invh2;
    }
  };

  for (Index i = 1; i + 1 < n; ++i) fill_row(i, i - 1, i + 1);

  switch (lat.boundary) {
    case Boundary::Periodic:
      fill_row(0, n - 1, 1);
      fill_row(n - 1, n - 2, 0);
      break;
    case Boundary::Absorbing:
      // rows stay zero
      break;
    case Boundary::Reflecting: {
      // Keep the interior diagonal; send both neighbour contributions to the
      // single interior neighbour so conservative stencils stay conservative.
      if (kind == Stencil::Delta) {
        m(0, 0) = -2.0 * invh2;
        m(0, 1) = 2.0 * invh2;
        m(n - 1, n - 1) = -2.0 * invh2;
        m(n - 1, n - 2) = 2.0 * invh2;
      }
      // Nabla: interior diagonal is 0 and the folded pair (+1/2h, -1/2h)
      // cancels, leaving a zero row.
      break;
    }
  }
  return {std::move(m), kind};
}

Vector brillouin_modes(const Lattice& lat) {
  check_periodic(lat, "brillouin_modes");
  const Index n = lat.n;
  const double spacing = M_PI / lat.half_period();
  Vector modes(n);
  for (Index k = 0; k < n; ++k) {
    modes[k] = spacing * static_cast<double>(k - n / 2);
  }
  return modes;
}

CVector dft(const Lattice& lat, const CVector& f) {
  check_periodic(lat, "dft");
  require(f.size() == lat.n, errc::invalid, "dft input length mismatch");
  require(lat.n <= kMaxTransform, errc::invalid, "transform size exceeds supported maximum");
  Vector modes = brillouin_modes(lat);
  CVector out(lat.n);
  parallel_for(lat.n, [&](Index lo, Index hi) {
    for (Index k = lo; k < hi; ++k) {
      std::complex<double> acc = 0.0;
      for (Index i = 0; i < lat.n; ++i) {
        acc += f[i] * std::exp(std::complex<double>(0.0, -modes[k] * lat.point(i)));
      }
      out[k] = lat.h * acc;
    }
  });
  return out;
}

CVector dft(const Lattice& lat, const Vector& f) {
  CVector g(f.size());
  for (Index i = 0; i < f.size(); ++i) g[i] = f[i];
  return dft(lat, g);
}

CVector idft(const Lattice& lat, const CVector& fhat) {
  check_periodic(lat, "idft");
  require(fhat.size() == lat.n, errc::invalid, "idft input length mismatch");
  require(lat.n <= kMaxTransform, errc::invalid, "transform size exceeds supported maximum");
  Vector modes = brillouin_modes(lat);
  const double norm = 1.0 / (static_cast<double>(lat.n) * lat.h);
  CVector out(lat.n);
  parallel_for(lat.n, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) {
      std::complex<double> acc = 0.0;
      for (Index k = 0; k < lat.n; ++k) {
        acc += fhat[k] * std::exp(std::complex<double>(0.0, modes[k] * lat.point(i)));
      }
      out[i] = norm * acc;
    }
  });
  return out;
}

}  // namespace lop::lattice
