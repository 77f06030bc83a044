#include "lop/kernels.hpp"

#include "lop/generator.hpp"
#include "lop/special.hpp"

#include <cmath>
#include <complex>

namespace lop::kernels {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_horizon(double t) {
  require(t > 0.0 && std::isfinite(t), errc::invalid, "horizon must be positive");
}

double gauss_norm(double sigma0, double t) { return 1.0 / (sigma0 * std::sqrt(2.0 * kPi * t)); }

}  // namespace

double density(const Cir& k, double x, double x0, double t) {
  require(k.nu0 > 0.0, errc::invalid, "diffusion scale must be positive");
  require(k.lambda0 > 0.0, errc::invalid, "inward drift at the origin must be positive");
  require(x > 0.0 && x0 > 0.0, errc::invalid, "state must be positive");
  require_horizon(t);
  double nu = 2.0 * k.lambda0 / (k.nu0 * k.nu0) - 1.0;
  // Fold exp(-(x + x0')/s) into the Bessel factor through the scaled variant:
  // the combined exponent is -(sqrt(x) - sqrt(x0'))^2 / s, which never
  // overflows, while the two factors separately can reach 0 * inf.
  if (k.lambda1 == 0.0) {
    double s = k.nu0 * k.nu0 * t / 2.0;
    double d = std::sqrt(x) - std::sqrt(x0);
    return std::pow(x / x0, 0.5 * nu) * std::exp(-d * d / s) / s *
           special::bessel_i_scaled(nu, 2.0 * std::sqrt(x * x0) / s);
  }
  double growth = std::exp(k.lambda1 * t);
  double ct = 2.0 * k.lambda1 / (k.nu0 * k.nu0 * (growth - 1.0));
  double d = std::sqrt(x0 * growth) - std::sqrt(x);
  return ct * std::pow(x / (growth * x0), 0.5 * nu) * std::exp(-ct * d * d) *
         special::bessel_i_scaled(nu, 2.0 * ct * std::sqrt(x * x0 * growth));
}

double density(const Quadratic& k, double y, double y0, double t) {
  require(k.sigma0 > 0.0, errc::invalid, "volatility scale must be positive");
  require(k.ybar > k.ybarbar, errc::invalid, "roots must be ordered ybar > ybarbar");
  require(y > k.ybar && y0 > k.ybar, errc::invalid, "state must lie above the upper root");
  require_horizon(t);
  double s2t = k.sigma0 * k.sigma0 * t;
  auto phi = [&](double w) { return std::log((w - k.ybarbar) / (w - k.ybar)); };
  double p = phi(y), p0 = phi(y0);
  double sig_y = k.sigma0 * (y - k.ybar) * (y - k.ybarbar) / (k.ybar - k.ybarbar);
  // exp(-(p^2+p0^2)/2s) * 2 sinh(p p0 / s) written as a difference of
  // Gaussians so nearly-coincident large exponents cannot overflow.
  double body = std::exp(-(p - p0) * (p - p0) / (2.0 * s2t)) -
                std::exp(-(p + p0) * (p + p0) / (2.0 * s2t));
  return std::exp(-s2t / 8.0) / (sig_y * std::sqrt(2.0 * kPi * t)) *
         std::sqrt((y0 - k.ybar) * (y0 - k.ybarbar) / ((y - k.ybar) * (y - k.ybarbar))) * body;
}

double density(const QuadraticDoubleRoot& k, double y, double y0, double t) {
  require(k.sigma0 > 0.0, errc::invalid, "volatility scale must be positive");
  require(y > k.ybar && y0 > k.ybar, errc::invalid, "state must lie above the root");
  require_horizon(t);
  double s2t = k.sigma0 * k.sigma0 * t;
  double u = 1.0 / (y - k.ybar), v = 1.0 / (y0 - k.ybar);
  return gauss_norm(k.sigma0, t) * (y0 - k.ybar) / std::pow(y - k.ybar, 3) *
         (std::exp(-(u - v) * (u - v) / (2.0 * s2t)) -
          std::exp(-(u + v) * (u + v) / (2.0 * s2t)));
}

double density(const LogNormal& k, double y, double y0, double t) {
  require(k.sigma0 > 0.0, errc::invalid, "volatility scale must be positive");
  require(y > k.ybar && y0 > k.ybar, errc::invalid, "state must lie above the floor");
  require_horizon(t);
  double s2t = k.sigma0 * k.sigma0 * t;
  double z = std::log((y0 - k.ybar) / (y - k.ybar)) - 0.5 * s2t;
  return gauss_norm(k.sigma0, t) / (y - k.ybar) * std::exp(-z * z / (2.0 * s2t));
}

double density(const Cev& k, double y, double y0, double t) {
  require(k.sigma0 > 0.0, errc::invalid, "volatility scale must be positive");
  require(k.theta > 0.0 || k.theta <= -0.5, errc::invalid,
          "elasticity in (-1/2, 0) is not supported: non-integrable endpoint");
  require(y > k.ybar && y0 > k.ybar, errc::invalid, "state must lie above the floor");
  require_horizon(t);
  double s2t = k.sigma0 * k.sigma0 * t;
  // Same scaled-Bessel trick as the square-root family: the net exponent is
  // -(sa - sb)^2 / (2 s2t) with sa, sb the half-power transforms of the two
  // states, bounded even when each factor alone would under/overflow.
  double sa = std::pow(y - k.ybar, -k.theta);
  double sb = std::pow(y0 - k.ybar, -k.theta);
  return std::abs(k.theta) / s2t * std::sqrt(y0 - k.ybar) /
         std::pow(y - k.ybar, 1.5 + 2.0 * k.theta) *
         std::exp(-(sa - sb) * (sa - sb) / (2.0 * s2t)) *
         special::bessel_i_scaled(1.0 / (2.0 * k.theta), sa * sb / s2t);
}

double density(const ReflectedWiener& k, double y, double y0, double t) {
  require(k.sigma0 > 0.0, errc::invalid, "volatility scale must be positive");
  require(y >= k.ybar && y0 >= k.ybar, errc::invalid, "state must lie above the wall");
  require_horizon(t);
  double s2t = k.sigma0 * k.sigma0 * t;
  double d = y - y0, m = y + y0 - 2.0 * k.ybar;
  return gauss_norm(k.sigma0, t) *
         (std::exp(-d * d / (2.0 * s2t)) + std::exp(-m * m / (2.0 * s2t)));
}

double density(const KernelSpec& k, double y, double y0, double t) {
  return std::visit([&](const auto& m) { return density(m, y, y0, t); }, k);
}

double support_origin(const KernelSpec& k) {
  return std::visit(
      [](const auto& m) {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Cir>)
          return 0.0;
        else
          return m.ybar;
      },
      k);
}

propagation::Propagator brownian_fourier_kernel(const lattice::Lattice& lat, double mu,
                                                double sigma, double T) {
  require(lat.boundary == lattice::Boundary::Periodic, errc::invalid,
          "mode-sum propagator needs a periodic lattice");
  require(sigma > 0.0 && std::isfinite(sigma) && std::isfinite(mu), errc::invalid,
          "coefficients must be finite with positive volatility");
  require(T >= 0.0 && std::isfinite(T), errc::invalid, "horizon must be nonnegative");
  require(sigma * sigma > std::abs(mu) * lat.h, errc::invalid,
          "drift too strong for the grid");
  const Index n = lat.n;
  Vector modes = lattice::brillouin_modes(lat);
  CVector weights(n);
  for (Index k = 0; k < n; ++k) {
    double ph = modes[k] * lat.h;
    std::complex<double> symbol(sigma * sigma * (std::cos(ph) - 1.0) / (lat.h * lat.h),
                                -mu * std::sin(ph) / lat.h);
    weights[k] = std::exp(T * symbol);
  }
  // The propagator depends on states only through (j - i) mod n.
  CVector ring(n);
  parallel_for(n, [&](Index begin, Index end) {
    for (Index d = begin; d < end; ++d) {
      std::complex<double> acc(0.0, 0.0);
      for (Index k = 0; k < n; ++k) {
        double angle = modes[k] * lat.h * static_cast<double>(d);
        acc += weights[k] * std::complex<double>(std::cos(angle), std::sin(angle));
      }
      ring[d] = acc / static_cast<double>(n);
    }
  });
  double residue = ring.imag().cwiseAbs().maxCoeff();
  require(residue <= 1e-12, errc::numeric, "mode sum left an imaginary residue");
  Matrix u(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) u(i, j) = ring[(j - i + n) % n].real();
  propagation::audit_propagator_rows(u, lat);
  return {std::move(u), 0.0, T};
}

}  // namespace lop::kernels
