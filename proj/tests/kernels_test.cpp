#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lop/generator.hpp"
#include "lop/kernels.hpp"
#include "lop/special.hpp"

#include <cmath>
#include <complex>
#include <random>

using namespace lop;
using namespace lop::kernels;
using lattice::Boundary;
using lattice::Lattice;
using lattice::build_lattice;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Total mass of a density over [lo, inf), truncating where the tail falls
// below 1e-14.
double mass(const std::function<double(double)>& f, double lo, double hi_hint) {
  double hi = hi_hint;
  while (f(hi) > 1e-14 && hi < 1e6) hi *= 2.0;
  return special::integrate(f, lo, hi, 1e-8);
}

double normal_pdf(double x, double mean, double var) {
  return std::exp(-(x - mean) * (x - mean) / (2.0 * var)) / std::sqrt(2.0 * kPi * var);
}

}  // namespace

TEST_CASE("square-root diffusion density: normalization, limit, composition") {
  Cir flat{2.0, 0.0, 2.0};
  Cir pulled{2.0, -0.5, 2.0};

  CHECK(mass([&](double x) { return density(flat, x, 1.0, 0.5); }, 1e-12, 60.0) ==
        doctest::Approx(1.0).epsilon(1e-6));
  CHECK(mass([&](double x) { return density(pulled, x, 1.0, 0.5); }, 1e-12, 60.0) ==
        doctest::Approx(1.0).epsilon(1e-6));

  // The mean-reverting formula joins the driftless branch continuously.
  for (auto [x, x0, t] : {std::array{0.5, 1.0, 0.5}, {1.5, 0.8, 0.3}, {2.0, 2.0, 1.0}}) {
    double base = density(flat, x, x0, t);
    CHECK(std::abs(density(Cir{2.0, 1e-6, 2.0}, x, x0, t) - base) < 1e-6);
    CHECK(std::abs(density(Cir{2.0, -1e-6, 2.0}, x, x0, t) - base) < 1e-6);
  }

  // Two half-horizon steps compose into the full-horizon density.
  for (double x : {0.5, 1.0, 2.0}) {
    double composed = special::integrate(
        [&](double z) { return density(flat, z, 1.0, 0.25) * density(flat, x, z, 0.25); },
        1e-12, 80.0, 1e-8);
    CHECK(std::abs(composed - density(flat, x, 1.0, 0.5)) < 2e-5);
  }

  CHECK_THROWS_AS(density(Cir{2.0, 0.0, -1.0}, 1.0, 1.0, 1.0), error);
  CHECK_THROWS_AS(density(Cir{-2.0, 0.0, 2.0}, 1.0, 1.0, 1.0), error);
  CHECK_THROWS_AS(density(flat, -1.0, 1.0, 1.0), error);
  CHECK_THROWS_AS(density(flat, 1.0, 1.0, 0.0), error);
}

TEST_CASE("two-root volatility density: normalization and composition") {
  Quadratic q{0.5, 0.0, -1.0};
  CHECK(mass([&](double y) { return density(q, y, 1.0, 1.0); }, 1e-6, 50.0) ==
        doctest::Approx(1.0).epsilon(1e-6));

  for (double y : {0.5, 1.0, 2.0}) {
    double composed = special::integrate(
        [&](double z) { return density(q, z, 1.0, 0.5) * density(q, y, z, 0.5); }, 1e-6,
        200.0, 1e-8);
    CHECK(std::abs(composed - density(q, y, 1.0, 1.0)) < 2e-5);
  }

  CHECK_THROWS_AS(density(Quadratic{0.5, -1.0, 0.0}, 1.0, 1.0, 1.0), error);
  CHECK_THROWS_AS(density(q, -0.5, 1.0, 1.0), error);
}

TEST_CASE("coincident-root density: closed form is the limit of the two-root form") {
  QuadraticDoubleRoot dr{0.5, 0.0};
  CHECK(mass([&](double y) { return density(dr, y, 1.0, 1.0); }, 1e-6, 50.0) ==
        doctest::Approx(1.0).epsilon(1e-6));

  // Push the lower root up against the upper one. The volatility scale in
  // the two-root form is normalized by the root gap, so matching
  // sigma(y) -> sigma0 (y - ybar)^2 requires passing sigma0 * gap.
  double gap = 1e-5;
  Quadratic near{0.5 * gap, 0.0, -gap};
  for (auto [y, y0] : {std::array{1.3, 1.2}, {1.6, 1.4}, {1.2, 1.3}}) {
    CHECK(std::abs(density(near, y, y0, 1.0) - density(dr, y, y0, 1.0)) < 1e-5);
  }

  // First-order limit: halving the gap halves the defect.
  auto defect = [&](double g) {
    return std::abs(density(Quadratic{0.5 * g, 0.0, -g}, 1.3, 1.2, 1.0) -
                    density(dr, 1.3, 1.2, 1.0));
  };
  CHECK(defect(2e-5) / defect(1e-5) == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("exponential-coordinate density: textbook form, median, composition") {
  LogNormal ln{0.2, 0.0};
  // Same density rewritten from the textbook parameterization.
  for (auto [y, y0, t] : {std::array{0.7, 1.0, 1.0}, {1.4, 1.0, 0.5}, {2.0, 1.5, 2.0}}) {
    double s2t = 0.04 * t;
    double textbook = std::exp(-std::pow(std::log(y / y0) + 0.5 * s2t, 2) / (2.0 * s2t)) /
                      (y * std::sqrt(2.0 * kPi * s2t));
    CHECK(density(ln, y, y0, t) == doctest::Approx(textbook).epsilon(1e-13));
  }

  CHECK(mass([&](double y) { return density(ln, y, 1.0, 1.0); }, 1e-8, 50.0) ==
        doctest::Approx(1.0).epsilon(1e-6));

  // Half the mass sits below ybar + (y0 - ybar) e^{-sigma0^2 t / 2}.
  LogNormal shifted{0.25, 0.3};
  double median = 0.3 + 1.2 * std::exp(-0.5 * 0.0625 * 2.0);
  double below = special::integrate([&](double y) { return density(shifted, y, 1.5, 2.0); },
                                    0.3 + 1e-8, median, 1e-8);
  CHECK(below == doctest::Approx(0.5).epsilon(1e-6));

  for (double y : {0.6, 1.0, 1.8}) {
    double composed = special::integrate(
        [&](double z) { return density(ln, z, 1.0, 0.5) * density(ln, y, z, 0.5); }, 1e-8,
        100.0, 1e-8);
    CHECK(std::abs(composed - density(ln, y, 1.0, 1.0)) < 2e-5);
  }

  CHECK_THROWS_AS(density(ln, -0.1, 1.0, 1.0), error);
  CHECK_THROWS_AS(density(LogNormal{0.0, 0.0}, 1.0, 1.0, 1.0), error);
}

TEST_CASE("power-volatility density: normalization across elasticities") {
  for (double theta : {1.0, -1.0, -2.0}) {
    Cev k{0.3, theta, 0.0};
    CHECK(mass([&](double y) { return density(k, y, 1.0, 1.0); }, 1e-10, 30.0) ==
          doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(density(Cev{0.3, -0.25, 0.0}, 1.0, 1.0, 1.0), error);
  CHECK_THROWS_AS(density(Cev{0.3, 1.0, 0.0}, -0.5, 1.0, 1.0), error);
}

TEST_CASE("elasticity -1 collapses to the reflected half-space density") {
  Cev unit{0.3, -1.0, 0.2};
  ReflectedWiener wall{0.3, 0.2};
  for (double y : {0.21, 0.4, 0.8, 1.3, 2.5})
    for (double y0 : {0.25, 0.9, 1.7}) {
      CHECK(std::abs(density(unit, y, y0, 0.7) - density(wall, y, y0, 0.7)) < 1e-10);
    }
  CHECK(mass([&](double y) { return density(wall, y, 1.0, 1.0); }, 0.2, 30.0) ==
        doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("every density is nonnegative and finite across random samples") {
  std::mt19937_64 rng(20240817u);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto pick = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };
  for (int i = 0; i < 10000; ++i) {
    double t = pick(0.05, 2.0);
    KernelSpec spec;
    double y, y0;
    switch (i % 6) {
      case 0:
        // Keep the implied Bessel order moderate (here within [-0.9, 5]);
        // that is the regime the order-dependent branches are built for.
        spec = Cir{pick(0.5, 3.0), pick(-1.0, 1.0), pick(1.0, 3.0)};
        y = pick(0.01, 6.0);
        y0 = pick(0.01, 6.0);
        break;
      case 1:
        spec = Quadratic{pick(0.1, 1.0), 0.0, -pick(0.2, 3.0)};
        y = pick(0.01, 6.0);
        y0 = pick(0.01, 6.0);
        break;
      case 2:
        spec = QuadraticDoubleRoot{pick(0.1, 1.0), 0.0};
        y = pick(0.01, 6.0);
        y0 = pick(0.01, 6.0);
        break;
      case 3:
        spec = LogNormal{pick(0.05, 0.8), 0.0};
        y = pick(0.01, 6.0);
        y0 = pick(0.01, 6.0);
        break;
      case 4: {
        double theta = (unif(rng) < 0.5) ? pick(0.2, 2.0) : -pick(0.5, 2.5);
        spec = Cev{pick(0.1, 1.0), theta, 0.0};
        y = pick(0.05, 4.0);
        y0 = pick(0.05, 4.0);
        break;
      }
      default:
        spec = ReflectedWiener{pick(0.1, 1.0), 0.0};
        y = pick(0.0, 6.0);
        y0 = pick(0.0, 6.0);
        break;
    }
    double u = density(spec, y, y0, t);
    REQUIRE(std::isfinite(u));
    REQUIRE(u >= 0.0);
  }
}

TEST_CASE("mode-sum propagator: identity, symmetry, row mass") {
  audit::reset();
  Lattice lat = build_lattice(-1.0, 2.0 * 31.0 / 32.0, 32, Boundary::Periodic);

  auto id = brownian_fourier_kernel(lat, 0.05, 0.2, 0.0);
  CHECK((id.u - Matrix::Identity(32, 32)).cwiseAbs().maxCoeff() < 1e-12);

  auto sym = brownian_fourier_kernel(lat, 0.0, 0.2, 1.0);
  CHECK((sym.u - sym.u.transpose()).cwiseAbs().maxCoeff() < 1e-14);

  auto drift = brownian_fourier_kernel(lat, 0.05, 0.2, 1.0);
  for (Index i = 0; i < 32; ++i) {
    CHECK(drift.u.row(i).sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(drift.u.row(i).minCoeff() >= 0.0);
  }
  CHECK(audit::peak("propagator_rowsum") < 1e-10);

  // Two half-horizon propagators compose exactly (shared mode basis).
  auto half = brownian_fourier_kernel(lat, 0.05, 0.2, 0.5);
  CHECK((half.u * half.u - drift.u).cwiseAbs().maxCoeff() < 1e-12);

  Lattice refl = build_lattice(-1.0, 2.0, 32, Boundary::Reflecting);
  CHECK_THROWS_AS(brownian_fourier_kernel(refl, 0.0, 0.2, 1.0), error);
  CHECK_THROWS_AS(brownian_fourier_kernel(lat, 10.0, 0.2, 1.0), error);  // drift vs grid
}

TEST_CASE("mode-sum propagator approaches the free-space gaussian") {
  const Index n = 256;
  Lattice lat = build_lattice(-1.0, 2.0 * (n - 1.0) / n, n, Boundary::Periodic);
  double mu = 0.05, sigma = 0.2, T = 0.5;
  auto u = brownian_fourier_kernel(lat, mu, sigma, T);
  Index mid = n / 2;
  double x0 = lat.point(mid);
  double worst = 0.0;
  for (Index j = 0; j < n; ++j) {
    double pdf = normal_pdf(lat.point(j), x0 + mu * T, sigma * sigma * T);
    worst = std::max(worst, std::abs(u.u(mid, j) / lat.h - pdf));
  }
  CHECK(worst < 2e-3);
}

TEST_CASE("mode-sum and stepped propagators agree on the same stepped product") {
  const Index n = 64;
  Lattice lat = build_lattice(-1.0, 2.0 * (n - 1.0) / n, n, Boundary::Periodic);
  double mu = 0.05, sigma = 0.2, T = 1.0;
  generator::CoefficientField field{[mu](double, double) { return mu; },
                                    [sigma](double, double) { return sigma; }};
  generator::Generator gen = generator::build_diffusion_generator(lat, field, 0.0);

  // Evaluate (I + dt q)^{2^k} in the mode basis: the generator is circulant,
  // so each mode evolves by the scalar power of (1 + dt lhat(p)).
  propagation::FastExpPlan plan = propagation::plan_fast_exp(gen, T);
  Vector modes = lattice::brillouin_modes(lat);
  CVector stepped(n);
  for (Index k = 0; k < n; ++k) {
    double ph = modes[k] * lat.h;
    std::complex<double> symbol(sigma * sigma * (std::cos(ph) - 1.0) / (lat.h * lat.h),
                                -mu * std::sin(ph) / lat.h);
    std::complex<double> z = 1.0 + plan.dt * symbol;
    for (int s = 0; s < plan.n_doublings; ++s) z *= z;
    stepped[k] = z;
  }
  Matrix by_modes(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      std::complex<double> acc(0.0, 0.0);
      for (Index k = 0; k < n; ++k) {
        double angle = modes[k] * lat.h * static_cast<double>(j - i);
        acc += stepped[k] * std::complex<double>(std::cos(angle), std::sin(angle));
      }
      by_modes(i, j) = acc.real() / static_cast<double>(n);
    }

  propagation::Propagator by_squaring = propagation::fast_exponentiate(gen, T);
  CHECK((by_modes - by_squaring.u).cwiseAbs().maxCoeff() < 1e-9);

  // Against the exact mode sum the stepped product carries a first-order
  // step error: halving the step halves the gap.
  Matrix exact = brownian_fourier_kernel(lat, mu, sigma, T).u;
  double e2 = (propagation::fast_exponentiate(gen, T, 2).u - exact).cwiseAbs().maxCoeff();
  double e3 = (propagation::fast_exponentiate(gen, T, 3).u - exact).cwiseAbs().maxCoeff();
  CHECK(e3 < 1e-4);
  CHECK(e2 / e3 == doctest::Approx(2.0).epsilon(0.15));
}
