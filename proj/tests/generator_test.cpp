#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lop/generator.hpp"
#include "lop/propagation.hpp"

#include <cmath>
#include <complex>

using namespace lop;
using namespace lop::generator;
using lattice::Boundary;
using lattice::Lattice;
using lattice::build_lattice;

namespace {

CoefficientField constant_field(double mu, double sigma) {
  return {[mu](double, double) { return mu; }, [sigma](double, double) { return sigma; }};
}

// Drift and second moment read off a generator row by direct summation.
double first_moment(const Generator& g, Index i) {
  double m = 0.0;
  for (Index j = 0; j < g.lat.n; ++j) m += g.q(i, j) * (g.lat.point(j) - g.lat.point(i));
  return m;
}
double second_moment(const Generator& g, Index i) {
  double m = 0.0;
  for (Index j = 0; j < g.lat.n; ++j) {
    double d = g.lat.point(j) - g.lat.point(i);
    m += g.q(i, j) * d * d;
  }
  return m;
}

}  // namespace

TEST_CASE("diffusion generator interior rates") {
  Lattice lat = build_lattice(0.0, 4.0, 5, Boundary::Absorbing);  // h = 1
  Generator pure = build_diffusion_generator(lat, constant_field(0.0, std::sqrt(2.0)), 0.0);
  CHECK(pure.q(2, 1) == doctest::Approx(1.0));
  CHECK(pure.q(2, 2) == doctest::Approx(-2.0));
  CHECK(pure.q(2, 3) == doctest::Approx(1.0));

  Generator drifted = build_diffusion_generator(lat, constant_field(1.0, std::sqrt(2.0)), 0.0);
  CHECK(drifted.q(2, 3) == doctest::Approx(1.5));
  CHECK(drifted.q(2, 1) == doctest::Approx(0.5));
  CHECK(drifted.q(2, 2) == doctest::Approx(-2.0));

  // Absorbing boundary rows vanish.
  CHECK(drifted.q.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(drifted.q.row(4).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("drift-dominated grid is rejected with a pointer to the bad point") {
  Lattice lat = build_lattice(0.0, 0.4, 5, Boundary::Absorbing);  // h = 0.1
  try {
    build_diffusion_generator(lat, constant_field(10.0, 0.1), 0.0);
    FAIL("expected rejection");
  } catch (const error& e) {
    CHECK(e.code() == errc::invalid);
    CHECK(std::string(e.what()).find("x = ") != std::string::npos);
  }
}

TEST_CASE("symbol: zero mode, closed form, direct-summation oracle") {
  Lattice lat = build_lattice(0.0, 6.0, 7, Boundary::Absorbing);  // h = 1
  Generator g = build_diffusion_generator(lat, constant_field(0.0, 1.0), 0.0);
  CHECK(std::abs(symbol(g, 3, 0.0)) < 1e-14);
  CHECK(symbol(g, 3, M_PI).real() == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(std::abs(symbol(g, 3, M_PI).imag()) < 1e-12);

  // Space-dependent coefficients vs the analytic diffusion symbol at the row's
  // own (mu, sigma).
  CoefficientField field{[](double x, double) { return 0.1 + 0.02 * std::sin(x); },
                         [](double x, double) { return 0.8 + 0.1 * std::cos(0.7 * x); }};
  Lattice fine = build_lattice(-1.0, 2.0, 21, Boundary::Absorbing);
  Generator gv = build_diffusion_generator(fine, field, 0.0);
  for (Index i : {1, 7, 13, 19}) {
    double x = fine.point(i);
    double mu = field.mu(x, 0.0), s2 = field.sigma(x, 0.0) * field.sigma(x, 0.0);
    for (double p : {0.3, 1.0, 2.5}) {
      std::complex<double> expected(s2 * (std::cos(p * fine.h) - 1.0) / (fine.h * fine.h),
                                    mu * std::sin(p * fine.h) / fine.h);
      CHECK(std::abs(symbol(gv, i, p) - expected) < 1e-12);
    }
  }

  CHECK_THROWS_AS(symbol(gv, 0, 1.0), error);  // boundary row not interior
}

TEST_CASE("measure change: identity, constant scale, exponential tilt") {
  Lattice lat = build_lattice(0.0, 4.0, 5, Boundary::Reflecting);
  Generator g = build_diffusion_generator(lat, constant_field(0.0, 1.0), 0.0);

  Generator same = apply_measure_change(g, [](double, double, double) { return 1.0; }, 0.0);
  CHECK((same.q - g.q).cwiseAbs().maxCoeff() < 1e-15);

  Generator scaled = apply_measure_change(g, [](double, double, double) { return 7.3; }, 0.0);
  CHECK((scaled.q - g.q).cwiseAbs().maxCoeff() < 1e-14);

  double a = 0.4;
  Generator tilted = apply_measure_change(
      g, [a](double y, double y_to, double) { return std::exp(a * (y_to - y)); }, 0.0);
  double base = 0.5 / (lat.h * lat.h);
  CHECK(tilted.q(2, 3) == doctest::Approx(base * std::exp(a * lat.h)).epsilon(1e-14));
  CHECK(tilted.q(2, 1) == doctest::Approx(base * std::exp(-a * lat.h)).epsilon(1e-14));
  CHECK(tilted.q.row(2).sum() == doctest::Approx(0.0));

  // Support is preserved in both directions.
  for (Index i = 0; i < 5; ++i) {
    for (Index j = 0; j < 5; ++j) {
      if (i == j) continue;
      CHECK((tilted.q(i, j) > 0.0) == (g.q(i, j) > 0.0));
    }
  }

  CHECK_THROWS_AS(apply_measure_change(g, [](double, double, double) { return 0.0; }, 0.0),
                  error);
}

TEST_CASE("drift change: identity, round trip, moment convergence") {
  auto drift_sup_error = [](Index n) {
    Lattice lat = build_lattice(0.0, 4.0, n, Boundary::Reflecting);
    CoefficientField field = constant_field(0.0, 1.0);
    Generator g = build_diffusion_generator(lat, field, 0.0);
    auto mu_bar = [](double) { return 0.5; };
    auto [changed, G] = girsanov_drift_change(g, field, mu_bar);
    double worst = 0.0;
    for (Index i = 1; i + 1 < n; ++i) {
      worst = std::max(worst, std::abs(first_moment(changed, i) - 0.5));
    }
    return worst;
  };
  double e_coarse = drift_sup_error(17), e_fine = drift_sup_error(33);
  CHECK(e_fine <= 0.6 * e_coarse);

  Lattice lat = build_lattice(0.0, 4.0, 17, Boundary::Reflecting);
  CoefficientField field = constant_field(0.0, 1.0);
  Generator g = build_diffusion_generator(lat, field, 0.0);

  auto [same, G0] = girsanov_drift_change(g, field, [&field](double x) { return field.mu(x, 0.0); });
  CHECK((same.q - g.q).cwiseAbs().maxCoeff() < 1e-14);

  // Forward to a state-dependent target, then back, using the transformed
  // process's own coefficient field.
  auto mu_bar = [](double x) { return 0.3 + 0.1 * std::sin(x); };
  auto [fwd, G1] = girsanov_drift_change(g, field, mu_bar);
  CoefficientField fwd_field{[mu_bar](double x, double) { return mu_bar(x); },
                             field.sigma};
  auto [back, G2] = girsanov_drift_change(fwd, fwd_field, [](double) { return 0.0; });
  CHECK((back.q - g.q).cwiseAbs().maxCoeff() < 1e-10);

  // Second moment stays sigma^2 up to a vanishing error.
  auto m2_err = [&](Index n) {
    Lattice l = build_lattice(0.0, 4.0, n, Boundary::Reflecting);
    Generator base = build_diffusion_generator(l, field, 0.0);
    auto [ch, Gc] = girsanov_drift_change(base, field, mu_bar);
    double worst = 0.0;
    for (Index i = 1; i + 1 < n; ++i) worst = std::max(worst, std::abs(second_moment(ch, i) - 1.0));
    return worst;
  };
  CHECK(m2_err(33) <= 0.6 * m2_err(17));

  CoefficientField degenerate{[](double, double) { return 0.0; },
                              [](double, double) { return 0.0; }};
  Lattice tiny = build_lattice(0.0, 2.0, 3, Boundary::Absorbing);
  Generator flat{Matrix::Zero(3, 3), tiny};
  CHECK_THROWS_AS(girsanov_drift_change(flat, degenerate, [](double) { return 1.0; }),
                  error);
}

TEST_CASE("generator drift/curvature action converges on smooth functions") {
  CoefficientField field{[](double x, double) { return 0.1 + 0.05 * std::cos(x); },
                         [](double x, double) { return 1.0 + 0.2 * std::sin(0.5 * x); }};
  auto phi = [](double x) { return std::sin(1.1 * x + 0.3); };
  auto dphi = [](double x) { return 1.1 * std::cos(1.1 * x + 0.3); };
  auto ddphi = [](double x) { return -1.21 * std::sin(1.1 * x + 0.3); };
  auto action_err = [&](Index n) {
    Lattice lat = build_lattice(0.0, 4.0, n, Boundary::Absorbing);
    Generator g = build_diffusion_generator(lat, field, 0.0);
    double worst = 0.0;
    for (Index i = 1; i + 1 < n; ++i) {
      double x = lat.point(i);
      double acting = 0.0;
      for (Index j = 0; j < n; ++j) acting += g.q(i, j) * (phi(lat.point(j)) - phi(x));
      double target = field.mu(x, 0.0) * dphi(x) +
                      0.5 * field.sigma(x, 0.0) * field.sigma(x, 0.0) * ddphi(x);
      worst = std::max(worst, std::abs(acting - target));
    }
    return worst;
  };
  CHECK(action_err(41) <= 0.6 * action_err(21));
}

TEST_CASE("numeraire change: identity, eigenfunction, violation") {
  Lattice lat = build_lattice(0.0, 4.0, 9, Boundary::Absorbing);
  Generator g = build_diffusion_generator(lat, constant_field(0.05, 0.9), 0.0);
  std::vector<TimeSlice> sched{{g, 0.0, 1.0}};

  auto flat = apply_numeraire_change(sched, [](double, double) { return 1.0; });
  CHECK((flat[0].gen.q - g.q).cwiseAbs().maxCoeff() < 1e-12);

  // Principal eigenfunction of the interior block extends to a strictly
  // positive space-time harmonic numeraire (boundary values are epsilon
  // placeholders on killed states).
  Matrix interior = g.q.block(1, 1, 7, 7);
  propagation::SpectralDecomposition dec = propagation::spectral_decompose(interior);
  Index lead = 0;
  for (Index i = 1; i < 7; ++i) {
    if (dec.values[i].real() > dec.values[lead].real()) lead = i;
  }
  double rho = dec.values[lead].real();
  CHECK(rho < 0.0);
  Vector u = dec.vectors.col(lead).real();
  if (u[0] < 0) u = -u;
  for (Index i = 0; i < 7; ++i) CHECK(u[i] > 0.0);

  auto numeraire = [&, rho](double x, double t) {
    Index i = static_cast<Index>(std::llround((x - 0.0) / 0.5));
    double ux = (i >= 1 && i <= 7) ? u[i - 1] : 1e-250;
    return std::exp(-rho * t) * ux;
  };
  auto changed = apply_numeraire_change(sched, numeraire);
  for (Index i = 1; i + 1 < 9; ++i) {
    CHECK(std::abs(changed[0].gen.q.row(i).sum()) < 1e-12);
    for (Index j = 0; j < 9; ++j) {
      if (i != j) CHECK(changed[0].gen.q(i, j) >= 0.0);
    }
  }

  CHECK_THROWS_AS(apply_numeraire_change(sched, [](double, double t) { return 1.0 + t; }),
                  error);
}

TEST_CASE("subordination: identity, gamma and stable closed forms, zero mode") {
  Matrix q2(2, 2);
  q2 << -1.0, 1.0, 1.0, -1.0;
  lattice::Lattice frame2;
  frame2.n = 2;
  frame2.x0 = 0.0;
  frame2.h = 1.0;
  frame2.boundary = Boundary::Reflecting;
  Generator gen2{q2, frame2};

  Generator lin = subordinate(gen2, BernsteinFunction::linear());
  CHECK((lin.q - q2).cwiseAbs().maxCoeff() < 1e-10);

  Generator gam = subordinate(gen2, BernsteinFunction::gamma(1.0));
  double c = 0.5 * std::log(3.0);
  CHECK(gam.q(0, 0) == doctest::Approx(-c).epsilon(1e-10));
  CHECK(gam.q(0, 1) == doctest::Approx(c).epsilon(1e-10));
  CHECK(gam.q(1, 0) == doctest::Approx(c).epsilon(1e-10));

  Generator stab = subordinate(gen2, BernsteinFunction::stable(0.5));
  CHECK(stab.q(0, 1) == doctest::Approx(0.5 * std::sqrt(2.0)).epsilon(1e-10));

  // Ring diffusion: subordination keeps conservation (zero eigenvalue).
  Lattice ring = build_lattice(0.0, 1.0, 9, Boundary::Periodic);
  Generator gring = build_diffusion_generator(ring, constant_field(0.0, 0.6), 0.0);
  Generator poissoned = subordinate(gring, BernsteinFunction::poisson(1.0));
  for (Index i = 0; i < 9; ++i) CHECK(std::abs(poissoned.q.row(i).sum()) < 1e-10);
}

TEST_CASE("subordination refuses a defective spectrum") {
  Matrix jordan(4, 4);
  jordan << -1.0, 1.0, 0.0, 0.0,  //
      0.0, -1.0, 1.0, 0.0,        //
      0.0, 0.0, -1.0, 1.0,        //
      0.0, 0.0, 0.0, 0.0;
  lattice::Lattice frame;
  frame.n = 4;
  frame.x0 = 0.0;
  frame.h = 1.0;
  frame.boundary = Boundary::Absorbing;
  Generator g{jordan, frame};
  try {
    subordinate(g, BernsteinFunction::gamma(0.5));
    FAIL("expected pseudo-spectrum failure");
  } catch (const error& e) {
    CHECK(e.code() == errc::numeric);
  }
}

TEST_CASE("bernstein parameter validation") {
  CHECK_THROWS_AS(BernsteinFunction::poisson(-1.0), error);
  CHECK_THROWS_AS(BernsteinFunction::poisson(0.0), error);
  CHECK_THROWS_AS(BernsteinFunction::stable(1e-4), error);
  CHECK_THROWS_AS(BernsteinFunction::stable(0.9999), error);
  CHECK_THROWS_AS(BernsteinFunction::gamma(0.0), error);
  // phi(0) = 0 and monotone on a sample for every family
  for (auto phi : {BernsteinFunction::poisson(0.7), BernsteinFunction::stable(0.4),
                   BernsteinFunction::gamma(2.0), BernsteinFunction::linear()}) {
    CHECK(std::abs(phi(0.0)) < 1e-15);
    double prev = 0.0;
    for (double lam = 0.25; lam < 5.0; lam += 0.25) {
      double val = phi(lam);
      CHECK(val >= prev);
      prev = val;
    }
  }
}

TEST_CASE("asymmetric subordination: symmetric limit and directional mix") {
  Lattice lat = build_lattice(0.0, 4.0, 9, Boundary::Reflecting);
  Generator g = build_diffusion_generator(lat, constant_field(0.0, 0.8), 0.0);
  auto up = BernsteinFunction::gamma(0.5);
  auto down = BernsteinFunction::poisson(2.0);
  auto price = [](double x) { return x; };  // strictly increasing

  Generator sym = subordinate_asymmetric(g, up, up, price);
  Generator ref = subordinate(g, up);
  CHECK((sym.q - ref.q).cwiseAbs().maxCoeff() < 1e-12);

  Generator mixed = subordinate_asymmetric(g, up, down, price);
  Generator a = subordinate(g, up), b = subordinate(g, down);
  for (Index i = 0; i < 9; ++i) {
    CHECK(mixed.q.row(i).sum() == doctest::Approx(0.0).epsilon(1e-15));
    for (Index j = 0; j < 9; ++j) {
      if (i == j) continue;
      CHECK(mixed.q(i, j) >= 0.0);
      CHECK(mixed.q(i, j) == doctest::Approx(j > i ? a.q(i, j) : b.q(i, j)).epsilon(1e-13));
    }
  }
}
