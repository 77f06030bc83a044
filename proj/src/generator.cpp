#include "lop/generator.hpp"

#include "lop/propagation.hpp"

#include <cmath>
#include <sstream>

namespace lop::generator {

namespace {

bool structurally_zero_row(const Matrix& q, Index i) {
  return q.row(i).cwiseAbs().maxCoeff() == 0.0;
}

// Rebuild the diagonal so every non-void row sums to zero exactly.
void rebalance_diagonal(Matrix& q) {
  for (Index i = 0; i < q.rows(); ++i) {
    if (structurally_zero_row(q, i)) continue;
    double off = 0.0;
    for (Index j = 0; j < q.cols(); ++j) {
      if (j != i) off += q(i, j);
    }
    q(i, i) = -off;
  }
}

// Shared cleanup for generators produced by functional calculus: zero rows
// stay zero, round-off negativity in off-diagonals is clipped within the
// stated window, and the diagonal is rebuilt.
Matrix scrub_functional_output(const Matrix& reference, Matrix m) {
  const Index n = m.rows();
  for (Index i = 0; i < n; ++i) {
    if (structurally_zero_row(reference, i)) {
      m.row(i).setZero();
      continue;
    }
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      if (m(i, j) < 0.0) {
        require(m(i, j) >= -1e-10, errc::numeric,
                "subordination produced a significantly negative rate");
        m(i, j) = 0.0;
      }
    }
  }
  rebalance_diagonal(m);
  return m;
}

}  // namespace

void check_rate_matrix(const Matrix& q, double offdiag_tol, double rowsum_tol) {
  require(q.rows() == q.cols(), errc::invalid, "rate matrix must be square");
  for (Index i = 0; i < q.rows(); ++i) {
    if (structurally_zero_row(q, i)) continue;
    double sum = 0.0;
    for (Index j = 0; j < q.cols(); ++j) {
      sum += q(i, j);
      require(i == j || q(i, j) >= -offdiag_tol, errc::numeric,
              "negative off-diagonal rate");
    }
    require(std::abs(sum) <= rowsum_tol, errc::numeric, "rate matrix row sum not zero");
  }
}

Generator build_diffusion_generator(const lattice::Lattice& lat, const CoefficientField& coeff,
                                    double t) {
  require(static_cast<bool>(coeff.mu) && static_cast<bool>(coeff.sigma), errc::invalid,
          "coefficient field callbacks must be set");
  const Index n = lat.n;
  Vector mu(n), half_sig2(n);
  for (Index i = 0; i < n; ++i) {
    double x = lat.point(i);
    mu[i] = coeff.mu(x, t);
    double s = coeff.sigma(x, t);
    half_sig2[i] = 0.5 * s * s;
  }

  // Grid Peclet bound sigma^2 > |mu| h keeps the stencil off-diagonals
  // positive. Boundary rows only enter for periodic wrap.
  Index lo = lat.boundary == lattice::Boundary::Periodic ? 0 : 1;
  Index hi = lat.boundary == lattice::Boundary::Periodic ? n : n - 1;
  for (Index i = lo; i < hi; ++i) {
    double s2 = 2.0 * half_sig2[i];
    if (!(s2 > std::abs(mu[i]) * lat.h)) {
      std::ostringstream msg;
      msg << "drift too strong for the grid at x = " << lat.point(i) << " (sigma^2 = " << s2
          << " must exceed |mu| h = " << std::abs(mu[i]) * lat.h
          << "); refine the lattice";
      throw error(errc::invalid, msg.str());
    }
  }

  Matrix nabla = lattice::derivative_operator(lat, lattice::Stencil::Nabla).matrix;
  Matrix delta = lattice::derivative_operator(lat, lattice::Stencil::Delta).matrix;
  Matrix q = mu.asDiagonal() * nabla + half_sig2.asDiagonal() * delta;
  check_rate_matrix(q);
  return {std::move(q), lat};
}

std::complex<double> symbol(const Generator& gen, Index row, double p) {
  const Index n = gen.lat.n;
  require(row >= 0 && row < n, errc::invalid, "symbol row out of range");
  if (gen.lat.boundary != lattice::Boundary::Periodic) {
    require(row > 0 && row + 1 < n, errc::invalid, "symbol requires an interior row");
  }
  std::complex<double> acc = 0.0;
  double x = gen.lat.point(row);
  for (Index j = 0; j < n; ++j) {
    acc += gen.q(row, j) * std::exp(std::complex<double>(0.0, p * (gen.lat.point(j) - x)));
  }
  return acc;
}

Generator apply_measure_change(const Generator& gen, const MeasureChangeField& G, double t) {
  require(static_cast<bool>(G), errc::invalid, "measure change callback must be set");
  const Index n = gen.lat.n;
  Matrix q = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    if (structurally_zero_row(gen.q, i)) continue;
    double y = gen.lat.point(i);
    double diag_ref = G(y, y, t);
    require(diag_ref >= 1e-300, errc::invalid,
            "measure change must be strictly positive at the diagonal");
    for (Index j = 0; j < n; ++j) {
      if (i == j || gen.q(i, j) == 0.0) continue;
      double g = G(y, gen.lat.point(j), t);
      require(g >= 1e-300, errc::invalid,
              "measure change must be strictly positive on the rate support");
      q(i, j) = gen.q(i, j) * g / diag_ref;
    }
  }
  rebalance_diagonal(q);
  check_rate_matrix(q);
  return {std::move(q), gen.lat};
}

std::pair<Generator, MeasureChangeField> girsanov_drift_change(
    const Generator& gen, const CoefficientField& coeff,
    const std::function<double(double)>& mu_bar, double t) {
  require(static_cast<bool>(mu_bar), errc::invalid, "target drift callback must be set");
  for (Index i = 0; i < gen.lat.n; ++i) {
    double s = coeff.sigma(gen.lat.point(i), t);
    require(s * s >= 1e-300, errc::invalid, "zero volatility in drift change");
  }
  auto a = [coeff, mu_bar, t](double y) {
    double s = coeff.sigma(y, t);
    require(s * s >= 1e-300, errc::invalid, "zero volatility in drift change");
    return (mu_bar(y) - coeff.mu(y, t)) / (s * s);
  };
  MeasureChangeField G = [a](double y, double y_to, double) {
    return std::exp(a(y) * (y_to - y));
  };
  return {apply_measure_change(gen, G, t), G};
}

std::vector<TimeSlice> apply_numeraire_change(const std::vector<TimeSlice>& schedule,
                                              const std::function<double(double, double)>& g) {
  require(!schedule.empty(), errc::invalid, "numeraire change needs a nonempty schedule");
  require(static_cast<bool>(g), errc::invalid, "numeraire callback must be set");

  auto sample = [&](const lattice::Lattice& lat, double t) {
    Vector v(lat.n);
    for (Index i = 0; i < lat.n; ++i) {
      v[i] = g(lat.point(i), t);
      require(v[i] >= 1e-300, errc::invalid, "numeraire must be strictly positive");
    }
    return v;
  };
  auto time_derivative = [&](const lattice::Lattice& lat, double t) {
    double dt = 1e-6 * std::max(1.0, std::abs(t));
    Vector hiv = sample(lat, t + dt), lov = sample(lat, t - dt);
    return Vector(((hiv - lov) / (2.0 * dt)).eval());
  };
  auto check_harmonic = [&](const Generator& gen, double t) {
    Vector gv = sample(gen.lat, t);
    Vector residual = time_derivative(gen.lat, t) + gen.q * gv;
    double tol = 1e-8 * std::max(1.0, gv.cwiseAbs().maxCoeff());
    for (Index i = 0; i < gen.lat.n; ++i) {
      if (structurally_zero_row(gen.q, i)) continue;
      require(std::abs(residual[i]) <= tol, errc::invalid,
              "numeraire is not space-time harmonic for the generator");
    }
  };

  std::vector<TimeSlice> out;
  out.reserve(schedule.size());
  for (const TimeSlice& slice : schedule) {
    check_harmonic(slice.gen, slice.t0);
    Vector gv = sample(slice.gen.lat, slice.t0);
    Vector dgdt = time_derivative(slice.gen.lat, slice.t0);
    const Index n = slice.gen.lat.n;
    Matrix q = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
      if (structurally_zero_row(slice.gen.q, i)) continue;
      for (Index j = 0; j < n; ++j) {
        q(i, j) = slice.gen.q(i, j) * gv[j] / gv[i];
      }
      q(i, i) += dgdt[i] / gv[i];
    }
    // The harmonicity check bounds the raw row sums; rebalancing removes the
    // residual exactly.
    rebalance_diagonal(q);
    check_rate_matrix(q);
    out.push_back({{std::move(q), slice.gen.lat}, slice.t0, slice.t1});
  }
  check_harmonic(schedule.back().gen, schedule.back().t1);
  return out;
}

BernsteinFunction BernsteinFunction::poisson(double c) {
  require(c > 0, errc::invalid, "poisson intensity must be positive");
  return {Kind::Poisson, c};
}
BernsteinFunction BernsteinFunction::stable(double alpha) {
  require(alpha >= 1e-3 && alpha <= 1.0 - 1e-3, errc::invalid,
          "stable exponent must lie in (0, 1), away from the endpoints");
  return {Kind::Stable, alpha};
}
BernsteinFunction BernsteinFunction::gamma(double nu) {
  require(nu > 0, errc::invalid, "gamma variance rate must be positive");
  return {Kind::Gamma, nu};
}
BernsteinFunction BernsteinFunction::linear() { return {Kind::Linear, 0.0}; }

std::complex<double> BernsteinFunction::operator()(std::complex<double> lambda) const {
  switch (kind_) {
    case Kind::Poisson:
      return param_ * (1.0 - std::exp(-lambda));
    case Kind::Stable:
      return lambda == 0.0 ? 0.0 : std::pow(lambda, param_);
    case Kind::Gamma:
      return std::log(1.0 + param_ * lambda) / param_;
    case Kind::Linear:
      return lambda;
  }
  return lambda;
}

Generator subordinate(const Generator& gen, const BernsteinFunction& phi) {
  propagation::SpectralDecomposition dec = propagation::spectral_decompose(gen.q);
  Matrix m = propagation::apply_function(
      dec, [&phi](std::complex<double> lambda) { return -phi(-lambda); });
  Matrix q = scrub_functional_output(gen.q, std::move(m));
  check_rate_matrix(q, 1e-12, 1e-8);
  return {std::move(q), gen.lat};
}

Generator subordinate_asymmetric(const Generator& gen, const BernsteinFunction& phi_up,
                                 const BernsteinFunction& phi_down,
                                 const std::function<double(double)>& price_map) {
  require(static_cast<bool>(price_map), errc::invalid, "price map callback must be set");
  Generator up = subordinate(gen, phi_up);
  Generator down = subordinate(gen, phi_down);
  const Index n = gen.lat.n;
  Matrix q = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    if (structurally_zero_row(gen.q, i)) continue;
    double fi = price_map(gen.lat.point(i));
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      q(i, j) = price_map(gen.lat.point(j)) > fi ? up.q(i, j) : down.q(i, j);
    }
  }
  rebalance_diagonal(q);
  check_rate_matrix(q, 1e-12, 1e-8);
  return {std::move(q), gen.lat};
}

}  // namespace lop::generator
