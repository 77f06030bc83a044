#pragma once

#include "lop/common.hpp"
#include "lop/lattice.hpp"
#include "lop/propagation.hpp"

#include <variant>

namespace lop::kernels {

// Closed-form transition densities for a family of solvable one-factor
// models. Each struct carries the model parameters; `density` evaluates the
// forward transition density u(y, t | y0) and validates its domain.

// dx = (lambda0 + lambda1 x) dt + nu0 sqrt(x) dW on x > 0.
struct Cir {
  double lambda0;
  double lambda1;
  double nu0;
};

// sigma(y) = sigma0 (y - ybar)(y - ybarbar) / (ybar - ybarbar), y > ybar.
struct Quadratic {
  double sigma0;
  double ybar;
  double ybarbar;
};

// sigma(y) = sigma0 (y - ybar)^2, the coincident-root case, y > ybar.
struct QuadraticDoubleRoot {
  double sigma0;
  double ybar;
};

// sigma(y) = sigma0 (y - ybar), y > ybar.
struct LogNormal {
  double sigma0;
  double ybar;
};

// sigma(y) = (sigma0/|theta|)(y - ybar)^{1+theta}, y > ybar. theta in
// (-1/2, 0) is rejected: the density would have a non-integrable endpoint.
struct Cev {
  double sigma0;
  double theta;
  double ybar;
};

// Driftless diffusion reflected at ybar.
struct ReflectedWiener {
  double sigma0;
  double ybar;
};

double density(const Cir& k, double x, double x0, double t);
double density(const Quadratic& k, double y, double y0, double t);
double density(const QuadraticDoubleRoot& k, double y, double y0, double t);
double density(const LogNormal& k, double y, double y0, double t);
double density(const Cev& k, double y, double y0, double t);
double density(const ReflectedWiener& k, double y, double y0, double t);

using KernelSpec =
    std::variant<Cir, Quadratic, QuadraticDoubleRoot, LogNormal, Cev, ReflectedWiener>;

double density(const KernelSpec& k, double y, double y0, double t);

// Lower edge of the state domain (start of the support in y).
double support_origin(const KernelSpec& k);

// Exact propagator of the periodic constant-coefficient diffusion, evaluated
// mode by mode: U(x,y) = (1/n) sum_p exp(T lhat(p)) e^{ip(y-x)} with
// lhat(p) = -i mu sin(hp)/h + sigma^2 (cos(hp) - 1)/h^2. This is the matrix
// exponential of the discrete generator evaluated in closed form, so it
// shares the row audit of the stepped propagators.
propagation::Propagator brownian_fourier_kernel(const lattice::Lattice& lat, double mu,
                                                double sigma, double T);

}  // namespace lop::kernels
