#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lop/lattice.hpp"

#include <cmath>
#include <complex>
#include <random>

using namespace lop;
using namespace lop::lattice;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST_CASE("build_lattice fixes spacing from extent and count") {
  Lattice a = build_lattice(0.0, 1.0, 5, Boundary::Periodic);
  CHECK(a.h == doctest::Approx(0.25).epsilon(1e-15));
  for (Index i = 0; i < 5; ++i) CHECK(a.point(i) == doctest::Approx(0.25 * i).epsilon(1e-15));

  Lattice b = build_lattice(-1.0, 2.0, 3, Boundary::Absorbing);
  CHECK(b.h == 1.0);
  CHECK(b.point(0) == -1.0);
  CHECK(b.point(1) == 0.0);
  CHECK(b.point(2) == 1.0);

  CHECK_THROWS_AS(build_lattice(0.0, 1.0, 2, Boundary::Periodic), error);
  CHECK_THROWS_AS(build_lattice(0.0, -1.0, 5, Boundary::Periodic), error);
  CHECK_THROWS_AS(build_lattice(0.0, 0.0, 5, Boundary::Periodic), error);
}

TEST_CASE("derivative stencils on interior rows") {
  Lattice lat = build_lattice(0.0, 4.0, 5, Boundary::Absorbing);  // h = 1
  DiscreteOperator d2 = derivative_operator(lat, Stencil::Delta);
  CHECK(d2.kind == Stencil::Delta);
  CHECK(d2.matrix(2, 1) == doctest::Approx(1.0));
  CHECK(d2.matrix(2, 2) == doctest::Approx(-2.0));
  CHECK(d2.matrix(2, 3) == doctest::Approx(1.0));
  CHECK(d2.matrix.row(2).sum() == doctest::Approx(0.0));

  Lattice half = build_lattice(0.0, 2.0, 5, Boundary::Absorbing);  // h = 0.5
  DiscreteOperator d1 = derivative_operator(half, Stencil::Nabla);
  CHECK(d1.matrix(2, 1) == doctest::Approx(-1.0));
  CHECK(d1.matrix(2, 2) == doctest::Approx(0.0));
  CHECK(d1.matrix(2, 3) == doctest::Approx(1.0));
}

TEST_CASE("boundary rows by boundary kind") {
  // Periodic: wrap-around stencil.
  Lattice ring = build_lattice(0.0, 2.0, 3, Boundary::Periodic);  // h = 1
  Matrix wrap = derivative_operator(ring, Stencil::Delta).matrix;
  CHECK(wrap(0, 0) == doctest::Approx(-2.0));
  CHECK(wrap(0, 1) == doctest::Approx(1.0));
  CHECK(wrap(0, 2) == doctest::Approx(1.0));
  CHECK(wrap(2, 0) == doctest::Approx(1.0));

  // Absorbing: boundary rows vanish identically.
  Lattice wall = build_lattice(0.0, 4.0, 5, Boundary::Absorbing);
  Matrix abs2 = derivative_operator(wall, Stencil::Delta).matrix;
  CHECK(abs2.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(abs2.row(4).cwiseAbs().maxCoeff() == 0.0);

  // Reflecting: diagonal keeps the interior value, off-diagonal mass folds
  // onto the nearest interior neighbour, so row sums stay zero.
  Lattice mirror = build_lattice(0.0, 4.0, 5, Boundary::Reflecting);
  Matrix ref2 = derivative_operator(mirror, Stencil::Delta).matrix;
  CHECK(ref2(0, 0) == doctest::Approx(-2.0));
  CHECK(ref2(0, 1) == doctest::Approx(2.0));
  CHECK(ref2.row(0).sum() == doctest::Approx(0.0));
  CHECK(ref2(4, 4) == doctest::Approx(-2.0));
  CHECK(ref2(4, 3) == doctest::Approx(2.0));

  Matrix ref1 = derivative_operator(mirror, Stencil::Nabla).matrix;
  // Interior diagonal of the centered first derivative is zero, so the folded
  // boundary row cancels entirely.
  CHECK(ref1.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ref1.row(4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("brillouin modes: count, spacing, symmetry") {
  // Half-period L = n h / 2 = pi here, so spacing pi / L = 1.
  Lattice ring = build_lattice(0.0, 2.0 * kPi * 3.0 / 4.0, 4, Boundary::Periodic);
  CHECK(ring.half_period() == doctest::Approx(kPi).epsilon(1e-14));
  Vector modes = brillouin_modes(ring);
  REQUIRE(modes.size() == 4);
  for (Index k = 1; k < 4; ++k) {
    CHECK(modes[k] - modes[k - 1] == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK(modes[2] == doctest::Approx(0.0));  // contains the zero mode

  Lattice big = build_lattice(0.0, 1.0, 64, Boundary::Periodic);
  CHECK(brillouin_modes(big).size() == 64);

  Lattice wall = build_lattice(0.0, 1.0, 8, Boundary::Absorbing);
  CHECK_THROWS_AS(brillouin_modes(wall), error);
}

TEST_CASE("dft of a constant concentrates on the zero mode") {
  Lattice ring = build_lattice(0.0, 7.0 / 8.0, 8, Boundary::Periodic);
  Vector ones = Vector::Ones(8);
  CVector hat = dft(ring, ones);
  Vector modes = brillouin_modes(ring);
  for (Index k = 0; k < 8; ++k) {
    if (modes[k] == 0.0) {
      CHECK(hat[k].real() == doctest::Approx(ring.h * 8).epsilon(1e-14));
      CHECK(std::abs(hat[k].imag()) < 1e-14);
    } else {
      CHECK(std::abs(hat[k]) < 1e-13);
    }
  }
}

TEST_CASE("dft/idft roundtrip is the identity") {
  std::mt19937_64 rng(20240811);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Deliberately offset origin: inversion must not depend on x0.
  Lattice ring = build_lattice(-2.35, 1.7, 33, Boundary::Periodic);
  Vector f(33);
  for (Index i = 0; i < 33; ++i) f[i] = u(rng);
  CVector back = idft(ring, dft(ring, f));
  for (Index i = 0; i < 33; ++i) {
    CHECK(back[i].real() == doctest::Approx(f[i]).epsilon(1e-12));
    CHECK(std::abs(back[i].imag()) < 1e-13);
  }

  Vector short_vec = Vector::Ones(5);
  CHECK_THROWS_AS(dft(ring, short_vec), error);
}

TEST_CASE("dft of a pure mode is supported on that mode only") {
  Lattice ring = build_lattice(0.5, 11.0 / 12.0, 12, Boundary::Periodic);
  Vector modes = brillouin_modes(ring);
  Index pick = 9;
  double p1 = modes[pick];
  CVector f(12);
  for (Index i = 0; i < 12; ++i) {
    f[i] = std::exp(std::complex<double>(0.0, p1 * ring.point(i)));
  }
  CVector hat = dft(ring, f);

  // Oracle: direct summation of h * sum_x e^{-ipx} f(x) for every mode.
  for (Index k = 0; k < 12; ++k) {
    std::complex<double> direct = 0.0;
    for (Index i = 0; i < 12; ++i) {
      direct += std::exp(std::complex<double>(0.0, -modes[k] * ring.point(i))) * f[i];
    }
    direct *= ring.h;
    CHECK(std::abs(hat[k] - direct) < 1e-12);
    if (k != pick) {
      CHECK(std::abs(hat[k]) < 1e-12);
    } else {
      CHECK(std::abs(hat[k] - std::complex<double>(ring.h * 12, 0.0)) < 1e-12);
    }
  }
}
