#include "lop/moment.hpp"

#include "lop/propagation.hpp"
#include "lop/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace lop::moment {

namespace {

constexpr double kWeightFloor = 1e-12;  // below this a bridge carries no usable conditioning

// Raw repeated squaring of (I + dt m). Deformed matrices are not rate
// matrices (rows do not sum to zero), so the audited propagator entry points
// cannot be used; the step geometry still comes from the undeformed plan.
Matrix powered(const Matrix& m, const propagation::FastExpPlan& plan) {
  const Index n = m.rows();
  Matrix step = Matrix::Identity(n, n) + plan.dt * m;
  for (int k = 0; k < plan.n_doublings; ++k) step = step * step;
  return step;
}

// Same step refinement fast_exponentiate applies, so moments and the audited
// bridge weights live on the identical time grid.
propagation::FastExpPlan refined_plan(const generator::Generator& gen, double t, int extra) {
  require(extra >= 0 && extra <= 60, errc::invalid, "extra step halvings must lie in [0, 60]");
  propagation::FastExpPlan plan = propagation::plan_fast_exp(gen, t);
  plan.n_doublings += extra;
  require(plan.n_doublings <= 60, errc::numeric, "step doubling exceeded supported depth");
  plan.dt = t / std::ldexp(1.0, plan.n_doublings);
  return plan;
}

// The deformed family the stencils differentiate. The running term shifts
// the diagonal linearly; each transition rate is tilted by the exponential of
// its accumulator increment, so that repeated derivatives at zero generate
// the full moment hierarchy -- including the same-jump quadratic-variation
// terms a linearized deformation would drop. The first derivative of the
// family is exactly deformation_potential.
struct Deformation {
  Vector phi;    // running term per state
  Matrix incr;   // accumulator increment per transition (chi * delta psi)
  double vmax = 0.0;  // sup norm of the first-order potential
};

Deformation build_deformation(const generator::Generator& gen, const lift::PathFunctional& f,
                              const Matrix& v) {
  const Index n = gen.q.rows();
  Deformation d;
  d.phi = Vector::Zero(n);
  if (f.phi)
    for (Index i = 0; i < n; ++i) d.phi(i) = f.phi(gen.lat.point(i), 0.0);
  d.incr = Matrix::Zero(n, n);
  if (f.chi && f.psi)
    for (Index i = 0; i < n; ++i) {
      const double yi = gen.lat.point(i);
      const double psi_i = f.psi(yi, 0.0);
      for (Index j = 0; j < n; ++j) {
        if (j == i || gen.q(i, j) == 0.0) continue;
        d.incr(i, j) = f.chi(yi, gen.lat.point(j), 0.0) * (f.psi(gen.lat.point(j), 0.0) - psi_i);
      }
    }
  d.vmax = v.cwiseAbs().maxCoeff();
  return d;
}

Matrix tilted(const Matrix& q, const Deformation& da, const Deformation& db, double ea,
              double eb) {
  Matrix m = q.cwiseProduct((ea * da.incr + eb * db.incr).array().exp().matrix());
  m.diagonal() += ea * da.phi + eb * db.phi;
  return m;
}

// Largest step (starting from eps0) for which every probed tilt keeps the
// elementary step diagonal at a stability margin and the rate tilts within
// floating-point range. Off-diagonals stay nonnegative by construction.
// `probes` lists the multiplier pairs (sa, sb) the stencils will use.
double admissible_step(const Matrix& q, const Deformation& da, const Deformation& db,
                       const std::vector<std::pair<double, double>>& probes, double dt,
                       double eps0) {
  const double incr_max =
      std::max(da.incr.cwiseAbs().maxCoeff(), db.incr.cwiseAbs().maxCoeff());
  double eps = eps0;
  for (int halvings = 0; halvings < 200; ++halvings) {
    bool ok = true;
    for (const auto& [sa, sb] : probes) {
      const double reach = std::max(std::abs(sa), std::abs(sb)) * eps;
      if (reach * incr_max > 100.0) {
        ok = false;
        break;
      }
      const Vector diag = q.diagonal() + (sa * eps) * da.phi + (sb * eps) * db.phi;
      for (Index i = 0; i < diag.size(); ++i)
        if (1.0 + dt * diag(i) < 0.25) {
          ok = false;
          break;
        }
      if (!ok) break;
    }
    if (ok) return eps;
    eps /= 2.0;
  }
  throw error(errc::numeric, "no admissible differentiation step for this deformation");
}

// Sup-norm disagreement of two stencil estimates, relative to the larger
// overall scale. Zero against zero counts as perfect agreement.
double relative_gap(const Matrix& coarse, const Matrix& fine) {
  const double scale = std::max(coarse.cwiseAbs().maxCoeff(), fine.cwiseAbs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (coarse - fine).cwiseAbs().maxCoeff() / scale;
}

void gate_richardson(double gap) {
  audit::note("dyson_richardson", gap);
  // Second-difference stencils lose roughly one digit per propagator doubling
  // to rounding, so deep refinements sit on a noise floor near 1e-4 relative.
  require(gap <= 1e-3, errc::numeric,
          "differentiation step unstable: halved-step estimate disagrees beyond 1e-3; "
          "retry with a smaller deformation or shorter horizon");
}

// Conditioned second moments can never undercut the squared first moment in
// the continuum limit. Two finite-precision effects eat into that inequality:
// the family differentiated here produces factorial moments of the step
// count, which lowers a running clock's second moment by up to dt * max(phi)
// per unit of first moment (a sizable fraction of m1^2 on a coarse plan), and
// the second-difference stencil carries rounding noise whose measured size is
// the coarse-versus-fine disagreement `stencil_noise`. Violations beyond both
// allowances mean the differentiation went bad.
void check_bridge_variance(const Matrix& u, const Matrix& m1, const Matrix& m2,
                           double stencil_noise, double dt, double horizon, double phimax) {
  const double m2scale = (m2.cwiseProduct(u)).cwiseAbs().maxCoeff();
  for (Index i = 0; i < u.rows(); ++i)
    for (Index j = 0; j < u.cols(); ++j) {
      if (u(i, j) <= 1e-10) continue;
      const double lhs = m2(i, j) * u(i, j);
      const double rhs = m1(i, j) * m1(i, j);
      const double bias =
          3.0 * dt * phimax * (std::abs(m1(i, j)) + horizon * phimax * u(i, j)) * u(i, j);
      const double noise = 2.0 * stencil_noise * u(i, j);
      const double slack =
          1e-8 * std::max(std::abs(lhs), rhs) + 1e-12 * m2scale + bias + noise + 1e-300;
      require(lhs >= rhs - slack, errc::numeric,
              "bridge variance fell below zero beyond noise tolerance");
    }
}

double round_trip_gap(double back, double target) {
  return std::abs(back - target) / std::max(std::abs(target), 1e-300);
}

double norm_cdf(double x) { return special::norm_cdf(x); }

}  // namespace

Matrix deformation_potential(const generator::Generator& gen, const lift::PathFunctional& f,
                             double t) {
  const Index n = gen.q.rows();
  Matrix v = Matrix::Zero(n, n);
  if (f.phi)
    for (Index i = 0; i < n; ++i) v(i, i) = f.phi(gen.lat.point(i), t);
  if (f.chi && f.psi)
    for (Index i = 0; i < n; ++i) {
      const double yi = gen.lat.point(i);
      const double psi_i = f.psi(yi, t);
      for (Index j = 0; j < n; ++j) {
        if (j == i || gen.q(i, j) == 0.0) continue;
        const double yj = gen.lat.point(j);
        v(i, j) = gen.q(i, j) * f.chi(yi, yj, t) * (f.psi(yj, t) - psi_i);
      }
    }
  return v;
}

MomentSet bridge_moments(const generator::Generator& gen, const lift::PathFunctional& f, double T,
                         int orders, int extra_doublings) {
  require(T > 0.0, errc::invalid, "horizon must be positive");
  require(orders >= 1 && orders <= 3, errc::invalid, "moment orders supported: 1 through 3");

  const Index n = gen.q.rows();
  MomentSet ms;
  ms.horizon = T;
  ms.u = propagation::fast_exponentiate(gen, T, extra_doublings).u;
  ms.m1 = Matrix::Zero(n, n);
  if (orders >= 2) ms.m2 = Matrix::Zero(n, n);
  if (orders == 3) ms.m3 = Matrix::Zero(n, n);

  const Matrix v = deformation_potential(gen, f, 0.0);
  const Deformation defo = build_deformation(gen, f, v);
  if (defo.vmax == 0.0) return ms;  // null accumulator: all moments vanish

  const propagation::FastExpPlan plan = refined_plan(gen, T, extra_doublings);
  const Deformation none{Vector::Zero(n), Matrix::Zero(n, n), 0.0};
  std::vector<std::pair<double, double>> probes = {{1.0, 0.0}, {-1.0, 0.0}};
  if (orders == 3) probes.insert(probes.end(), {{20.0, 0.0}, {-20.0, 0.0}});
  const double eps =
      admissible_step(gen.q, defo, none, probes, plan.dt, 1e-4 / (T * defo.vmax));

  const Matrix f0 = powered(gen.q, plan);
  auto at = [&](double e) { return powered(tilted(gen.q, defo, none, e, 0.0), plan); };

  const Matrix fp = at(eps), fm = at(-eps);
  const Matrix fph = at(eps / 2.0), fmh = at(-eps / 2.0);
  const Matrix m1c = (fp - fm) / (2.0 * eps);
  const Matrix m1f = (fph - fmh) / eps;
  double gap = relative_gap(m1c, m1f);
  ms.m1 = m1f;

  double m2_noise = 0.0;
  if (orders >= 2) {
    const Matrix m2c = (fp - 2.0 * f0 + fm) / (eps * eps);
    const Matrix m2f = (fph - 2.0 * f0 + fmh) / (eps * eps / 4.0);
    gap = std::max(gap, relative_gap(m2c, m2f));
    m2_noise = (m2c - m2f).cwiseAbs().maxCoeff();
    ms.m2 = m2f;
  }

  if (orders == 3) {
    // Third differences amplify rounding like eps^-3, so they run on a
    // tenfold larger step: truncation stays ~1e-6 while the noise floor
    // drops by three orders of magnitude.
    const double e3 = 10.0 * eps;
    const Matrix g2p = at(2.0 * e3), g1p = at(e3), g1m = at(-e3), g2m = at(-2.0 * e3);
    const Matrix h1p = at(e3 / 2.0), h1m = at(-e3 / 2.0);
    const Matrix m3c = (g2p - 2.0 * g1p + 2.0 * g1m - g2m) / (2.0 * e3 * e3 * e3);
    const Matrix m3f = (g1p - 2.0 * h1p + 2.0 * h1m - g1m) / (e3 * e3 * e3 / 4.0);
    gap = std::max(gap, relative_gap(m3c, m3f));
    ms.m3 = m3f;
  }

  gate_richardson(gap);
  if (orders >= 2) {
    const double phimax = defo.phi.size() ? defo.phi.cwiseAbs().maxCoeff() : 0.0;
    check_bridge_variance(ms.u, ms.m1, ms.m2, m2_noise, plan.dt, T, phimax);
  }
  return ms;
}

MomentSet bridge_moments_bivariate(const generator::Generator& gen, const lift::PathFunctional& fa,
                                   const lift::PathFunctional& fb, double T,
                                   int extra_doublings) {
  require(T > 0.0, errc::invalid, "horizon must be positive");

  const Index n = gen.q.rows();
  MomentSet ms;
  ms.horizon = T;
  ms.u = propagation::fast_exponentiate(gen, T, extra_doublings).u;
  ms.m1 = ms.m2 = ms.m1b = ms.m2b = ms.m11 = Matrix::Zero(n, n);

  const Matrix va = deformation_potential(gen, fa, 0.0);
  const Matrix vb = deformation_potential(gen, fb, 0.0);
  const Deformation da = build_deformation(gen, fa, va);
  const Deformation db = build_deformation(gen, fb, vb);

  // A null accumulator zeroes its own moments and the mixed one; the other
  // marginal still runs through the univariate engine.
  if (da.vmax == 0.0 || db.vmax == 0.0) {
    if (da.vmax > 0.0) {
      MomentSet side = bridge_moments(gen, fa, T, 2, extra_doublings);
      ms.m1 = side.m1;
      ms.m2 = side.m2;
    }
    if (db.vmax > 0.0) {
      MomentSet side = bridge_moments(gen, fb, T, 2, extra_doublings);
      ms.m1b = side.m1;
      ms.m2b = side.m2;
    }
    return ms;
  }

  const propagation::FastExpPlan plan = refined_plan(gen, T, extra_doublings);
  const std::vector<std::pair<double, double>> probes = {
      {1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0},
      {1.0, 1.0}, {1.0, -1.0}, {-1.0, 1.0}, {-1.0, -1.0}};
  // One shared shrink factor keeps the cross stencil inside the admissible
  // box for both deformations at once.
  Deformation ua = da, ub = db;  // unit-scaled copies probed jointly
  ua.phi *= 1e-4 / (T * da.vmax);
  ua.incr *= 1e-4 / (T * da.vmax);
  ub.phi *= 1e-4 / (T * db.vmax);
  ub.incr *= 1e-4 / (T * db.vmax);
  const double shrink = admissible_step(gen.q, ua, ub, probes, plan.dt, 1.0);
  const double ea = shrink * 1e-4 / (T * da.vmax);
  const double eb = shrink * 1e-4 / (T * db.vmax);

  const Matrix f0 = powered(gen.q, plan);
  auto at = [&](double sa, double sb) { return powered(tilted(gen.q, da, db, sa, sb), plan); };

  auto marginal = [&](const Matrix& fp, const Matrix& fm, const Matrix& fph, const Matrix& fmh,
                      double e, Matrix& m1, Matrix& m2, double& noise) {
    const Matrix m1c = (fp - fm) / (2.0 * e);
    const Matrix m1f = (fph - fmh) / e;
    const Matrix m2c = (fp - 2.0 * f0 + fm) / (e * e);
    const Matrix m2f = (fph - 2.0 * f0 + fmh) / (e * e / 4.0);
    m1 = m1f;
    m2 = m2f;
    noise = (m2c - m2f).cwiseAbs().maxCoeff();
    return std::max(relative_gap(m1c, m1f), relative_gap(m2c, m2f));
  };

  double noise_a = 0.0, noise_b = 0.0;
  double gap = marginal(at(ea, 0.0), at(-ea, 0.0), at(ea / 2.0, 0.0), at(-ea / 2.0, 0.0), ea,
                        ms.m1, ms.m2, noise_a);
  gap = std::max(gap, marginal(at(0.0, eb), at(0.0, -eb), at(0.0, eb / 2.0), at(0.0, -eb / 2.0),
                               eb, ms.m1b, ms.m2b, noise_b));

  const Matrix cpp = at(ea, eb), cpm = at(ea, -eb), cmp = at(-ea, eb), cmm = at(-ea, -eb);
  const Matrix hpp = at(ea / 2.0, eb / 2.0), hpm = at(ea / 2.0, -eb / 2.0),
               hmp = at(-ea / 2.0, eb / 2.0), hmm = at(-ea / 2.0, -eb / 2.0);
  const Matrix m11c = (cpp - cpm - cmp + cmm) / (4.0 * ea * eb);
  const Matrix m11f = (hpp - hpm - hmp + hmm) / (ea * eb);
  gap = std::max(gap, relative_gap(m11c, m11f));
  ms.m11 = m11f;

  gate_richardson(gap);
  const double pa = da.phi.cwiseAbs().maxCoeff(), pb = db.phi.cwiseAbs().maxCoeff();
  check_bridge_variance(ms.u, ms.m1, ms.m2, noise_a, plan.dt, T, pa);
  check_bridge_variance(ms.u, ms.m1b, ms.m2b, noise_b, plan.dt, T, pb);
  return ms;
}

Matrix conditional(const Matrix& raw, const Matrix& u) {
  require(raw.rows() == u.rows() && raw.cols() == u.cols(), errc::invalid,
          "moment and weight matrices must agree in shape");
  Matrix out = Matrix::Zero(raw.rows(), raw.cols());
  for (Index i = 0; i < raw.rows(); ++i)
    for (Index j = 0; j < raw.cols(); ++j)
      if (u(i, j) > kWeightFloor) out(i, j) = raw(i, j) / u(i, j);
  return out;
}

// --- Matchers ---------------------------------------------------------------

ChiSquareFit match_chi_square(double m1, double m2) {
  require(std::isfinite(m1) && std::isfinite(m2), errc::invalid, "moments must be finite");
  require(m1 > 0.0, errc::invalid, "chi-square fit needs a positive first moment");
  const double var = m2 - m1 * m1;
  require(var > 0.0, errc::invalid, "chi-square fit needs strictly positive variance");
  ChiSquareFit d;
  d.a = 2.0 * m1 * m1 / var;
  d.scale = var / (2.0 * m1);
  const auto back = raw_moments(d);
  require(round_trip_gap(back[0], m1) <= 1e-10 && round_trip_gap(back[1], m2) <= 1e-10,
          errc::numeric, "chi-square matcher round trip drifted");
  return d;
}

LogNormalFit match_lognormal(double m1, double m2) {
  require(std::isfinite(m1) && std::isfinite(m2), errc::invalid, "moments must be finite");
  require(m1 > 0.0, errc::invalid, "lognormal fit needs a positive first moment");
  require(m2 > m1 * m1, errc::invalid, "lognormal fit needs strictly positive variance");
  LogNormalFit d;
  const double s2 = std::log(m2 / (m1 * m1));
  d.sigma = std::sqrt(s2);
  d.mu = std::log(m1) - s2 / 2.0;
  const auto back = raw_moments(d);
  require(round_trip_gap(back[0], m1) <= 1e-10 && round_trip_gap(back[1], m2) <= 1e-10,
          errc::numeric, "lognormal matcher round trip drifted");
  return d;
}

PearsonFit match_pearson3(double m1, double m2, double m3) {
  require(std::isfinite(m1) && std::isfinite(m2) && std::isfinite(m3), errc::invalid,
          "moments must be finite");
  const double var = m2 - m1 * m1;
  require(var > 0.0, errc::invalid, "shifted-gamma fit needs strictly positive variance");
  const double mu3 = m3 - 3.0 * m1 * m2 + 2.0 * m1 * m1 * m1;
  require(mu3 != 0.0, errc::invalid, "shifted-gamma fit needs nonzero skew");
  PearsonFit d;
  d.b = mu3 / (2.0 * var);
  d.p = 4.0 * var * var * var / (mu3 * mu3);
  d.a = m1 - 2.0 * var * var / mu3;
  const auto back = raw_moments(d);
  require(round_trip_gap(back[0], m1) <= 1e-10 && round_trip_gap(back[1], m2) <= 1e-10 &&
              round_trip_gap(back[2], m3) <= 1e-10,
          errc::numeric, "shifted-gamma matcher round trip drifted");
  return d;
}

BiLogNormalFit match_bilognormal(double m1a, double m2a, double m1b, double m2b, double m11) {
  require(std::isfinite(m1a) && std::isfinite(m2a) && std::isfinite(m1b) &&
              std::isfinite(m2b) && std::isfinite(m11),
          errc::invalid, "moments must be finite");
  require(m1a > 0.0 && m1b > 0.0 && m11 > 0.0, errc::invalid,
          "joint lognormal fit needs positive first and mixed moments");
  require(m2a > 0.0 && m2b > 0.0, errc::invalid,
          "joint lognormal fit needs positive second moments");

  auto log_variance = [](double m1, double m2) {
    const double s2 = std::log(m2 / (m1 * m1));
    // Exactly flat accumulators measure a tiny negative variance through
    // differentiation noise; clamp that to the degenerate marginal.
    require(s2 > -1e-6, errc::invalid, "second moment undercuts the squared mean");
    return std::max(s2, 0.0);
  };

  BiLogNormalFit d;
  const double s1sq = log_variance(m1a, m2a);
  const double s2sq = log_variance(m1b, m2b);
  d.sigma1 = std::sqrt(s1sq);
  d.sigma2 = std::sqrt(s2sq);
  d.mu1 = std::log(m1a) - s1sq / 2.0;
  d.mu2 = std::log(m1b) - s2sq / 2.0;

  const double cross = std::log(m11 / (m1a * m1b));
  const double denom = d.sigma1 * d.sigma2;
  bool rho_clamped = false;
  if (denom < 1e-14) {
    require(std::abs(cross) <= 1e-6, errc::invalid,
            "mixed moment inconsistent with a flat marginal");
    d.rho = 0.0;
  } else {
    d.rho = cross / denom;
    require(std::abs(d.rho) <= 1.0 + 1e-9, errc::invalid, "implied correlation beyond unity");
    rho_clamped = std::abs(d.rho) > 1.0;
    d.rho = std::clamp(d.rho, -1.0, 1.0);
  }

  // Round trip: first moments are exact by construction; second moments only
  // when the log-variance was not clamped away, the mixed moment only when
  // rho survived unclamped.
  require(round_trip_gap(std::exp(d.mu1 + s1sq / 2.0), m1a) <= 1e-10 &&
              round_trip_gap(std::exp(d.mu2 + s2sq / 2.0), m1b) <= 1e-10,
          errc::numeric, "joint matcher round trip drifted");
  if (s1sq > 0.0)
    require(round_trip_gap(std::exp(2.0 * d.mu1 + 2.0 * s1sq), m2a) <= 1e-10, errc::numeric,
            "joint matcher round trip drifted");
  if (s2sq > 0.0)
    require(round_trip_gap(std::exp(2.0 * d.mu2 + 2.0 * s2sq), m2b) <= 1e-10, errc::numeric,
            "joint matcher round trip drifted");
  if (denom >= 1e-14 && !rho_clamped)
    require(round_trip_gap(m1a * m1b * std::exp(d.rho * denom), m11) <= 1e-10, errc::numeric,
            "joint matcher round trip drifted");
  return d;
}

std::array<double, 2> raw_moments(const ChiSquareFit& d) {
  return {d.scale * d.a, d.scale * d.scale * d.a * (d.a + 2.0)};
}

std::array<double, 2> raw_moments(const LogNormalFit& d) {
  const double s2 = d.sigma * d.sigma;
  return {std::exp(d.mu + s2 / 2.0), std::exp(2.0 * d.mu + 2.0 * s2)};
}

std::array<double, 3> raw_moments(const PearsonFit& d) {
  const double r1 = d.a + d.b * d.p;
  const double b2p = d.b * d.b * d.p;
  return {r1, r1 * r1 + b2p, r1 * r1 * r1 + 3.0 * b2p * r1 + 2.0 * d.b * b2p};
}

// --- Capped expectations ----------------------------------------------------

double capped_mean(const ChiSquareFit& d, double cap) {
  require(cap > 0.0, errc::invalid, "cap must be positive");
  if (!std::isfinite(cap)) return d.a * d.scale;
  const double k = cap / d.scale;  // cap in chi-square units
  const double f_a = special::gamma_p(d.a / 2.0, k / 2.0);
  const double f_a2 = special::gamma_p(d.a / 2.0 + 1.0, k / 2.0);
  return d.scale * (k * (1.0 - f_a) + d.a * f_a2);
}

double capped_mean(const LogNormalFit& d, double cap) {
  require(cap > 0.0, errc::invalid, "cap must be positive");
  const double s = d.sigma;
  if (s <= 0.0) return std::min(std::exp(d.mu), cap);  // point mass
  if (!std::isfinite(cap)) return std::exp(d.mu + s * s / 2.0);
  const double lc = std::log(cap);
  return std::exp(d.mu + s * s / 2.0) * norm_cdf((lc - d.mu - s * s) / s) +
         cap * (1.0 - norm_cdf((lc - d.mu) / s));
}

double capped_mean(const PearsonFit& d, double cap) {
  require(std::isfinite(cap), errc::invalid, "cap must be finite");
  require(d.b > 0.0, errc::invalid, "capped shifted-gamma expectation requires positive skew");
  const double z = (cap - d.a) / d.b;
  if (z <= 0.0) return cap;  // the support starts above the cap
  // Grouped as body + capped tail so a huge cap multiplies a clean zero
  // instead of cancelling against itself at its own rounding granularity.
  const double f_p = special::gamma_p(d.p, z);
  const double f_p1 = special::gamma_p(d.p + 1.0, z);
  return d.a * f_p + d.b * d.p * f_p1 + cap * (1.0 - f_p);
}

double capped_root_mean(const ChiSquareFit& d, double cap_root) {
  require(cap_root > 0.0, errc::invalid, "cap must be positive");
  const double mean_root = std::sqrt(2.0 * d.scale) *
                           std::exp(std::lgamma((d.a + 1.0) / 2.0) - std::lgamma(d.a / 2.0));
  if (!std::isfinite(cap_root)) return mean_root;
  const double k = cap_root * cap_root / d.scale;
  const double f_a = special::gamma_p(d.a / 2.0, k / 2.0);
  const double body = mean_root * special::gamma_p((d.a + 1.0) / 2.0, k / 2.0);
  return body + cap_root * (1.0 - f_a);
}

double capped_root_mean(const LogNormalFit& d, double cap_root) {
  // sqrt(X) is lognormal with both parameters halved.
  return capped_mean(LogNormalFit{d.mu / 2.0, d.sigma / 2.0}, cap_root);
}

LogNormalFit ratio_distribution(const BiLogNormalFit& d) {
  const double s2 = d.sigma1 * d.sigma1 + d.sigma2 * d.sigma2 -
                    2.0 * d.rho * d.sigma1 * d.sigma2;
  return LogNormalFit{d.mu1 - d.mu2, std::sqrt(std::max(s2, 0.0))};
}

double ratio_mean(const BiLogNormalFit& d) { return raw_moments(ratio_distribution(d))[0]; }

double ratio_second_moment(const BiLogNormalFit& d) {
  return raw_moments(ratio_distribution(d))[1];
}

double capped_ratio_mean(const BiLogNormalFit& d, double cap) {
  require(cap > 0.0, errc::invalid, "cap must be positive");
  if (!std::isfinite(cap)) return ratio_mean(d);
  if (d.sigma1 < 1e-6 || d.sigma2 < 1e-6 || std::abs(d.rho) > 1.0 - 1e-12)
    return capped_mean(ratio_distribution(d), cap);

  // E[min(X1/X2, cap)] = cap + integral of (x1/x2 - cap) over x1 < cap * x2:
  // Gauss-Legendre panels across the conditional law of x1 inside a
  // Gauss-Laguerre rule over x2 (scaled to the median of X2). The lognormal
  // tail decays slower than the Laguerre weight, so the outer rule converges
  // slowly; 128 nodes hold the error near 1e-6 for log-sd down to ~0.3.
  static const auto outer = special::gauss_laguerre(128);
  static const auto inner = special::gauss_legendre(16);

  const double s1 = d.sigma1, s2 = d.sigma2, rho = d.rho;
  const double om = 1.0 - rho * rho;
  const double lognorm = -std::log(2.0 * M_PI * s1 * s2 * std::sqrt(om));
  const double scale2 = std::exp(d.mu2);

  double acc = 0.0;
  for (std::size_t i = 0; i < outer.first.size(); ++i) {
    const double x2 = scale2 * outer.first[i];
    const double w2 = outer.second[i] * std::exp(outer.first[i]) * scale2;
    const double u2 = (std::log(x2) - d.mu2) / s2;
    const double mc = d.mu1 + rho * s1 * u2;  // conditional location of log x1
    const double sc = s1 * std::sqrt(om);
    const double c = cap * x2;

    std::vector<double> edges = {0.0};
    for (double k : {-6.0, -3.0, -1.5, -0.5, 0.5, 1.5, 3.0, 6.0}) {
      const double e = std::exp(mc + k * sc);
      if (e < c) edges.push_back(e);
    }
    edges.push_back(c);
    std::sort(edges.begin(), edges.end());

    double part = 0.0;
    for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
      const double lo = edges[e], hi = edges[e + 1];
      if (hi <= lo) continue;
      for (std::size_t k = 0; k < inner.first.size(); ++k) {
        const double x1 = 0.5 * (hi - lo) * inner.first[k] + 0.5 * (hi + lo);
        const double w1 = 0.5 * (hi - lo) * inner.second[k];
        const double u1 = (std::log(x1) - d.mu1) / s1;
        const double quad = (u1 * u1 - 2.0 * rho * u1 * u2 + u2 * u2) / om;
        const double dens =
            std::exp(lognorm - 0.5 * quad - std::log(x1) - std::log(x2));
        part += w1 * (x1 / x2 - cap) * dens;
      }
    }
    acc += w2 * part;
  }
  return cap + acc;
}

// --- Variance products ------------------------------------------------------

Matrix instantaneous_variance(const generator::Generator& gen,
                              const std::function<double(double)>& price, double t) {
  (void)t;
  const Index n = gen.q.rows();
  Vector s(n);
  Index excluded = 0;
  for (Index i = 0; i < n; ++i) {
    s(i) = price(gen.lat.point(i));
    require(s(i) >= 0.0, errc::invalid, "price must be nonnegative on every lattice state");
    if (s(i) == 0.0) ++excluded;
  }
  if (excluded > 0) audit::note("variance_excluded_states", static_cast<double>(excluded));
  Matrix v = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    if (s(i) == 0.0) continue;
    for (Index j = 0; j < n; ++j) {
      if (j == i || gen.q(i, j) == 0.0 || s(j) == 0.0) continue;
      const double move = std::log(s(j) / s(i));
      v(i, j) = gen.q(i, j) * move * move;
    }
  }
  return v;
}

lift::PathFunctional realized_variance_functional(const generator::Generator& gen,
                                                  const std::function<double(double)>& price) {
  const Matrix v = instantaneous_variance(gen, price);
  std::vector<double> rate(v.rows());
  for (Index i = 0; i < v.rows(); ++i) rate[i] = v.row(i).sum();
  const lattice::Lattice lat = gen.lat;
  lift::PathFunctional f;
  f.phi = [rate, lat](double y, double) {
    const Index i = std::clamp<Index>(round_half_away((y - lat.x0) / lat.h), 0, lat.n - 1);
    return rate[static_cast<std::size_t>(i)];
  };
  return f;
}

std::pair<lift::PathFunctional, lift::PathFunctional> corridor_variance_pair(
    const generator::Generator& gen, const std::function<double(double)>& price, double low,
    double high) {
  require(low < high, errc::invalid, "corridor bounds must satisfy low < high");
  const Matrix v = instantaneous_variance(gen, price);
  std::vector<double> rate(v.rows());
  for (Index i = 0; i < v.rows(); ++i) rate[i] = v.row(i).sum();

  const lattice::Lattice lat = gen.lat;
  auto inside = [price, low, high](double y) {
    const double s = price(y);
    return s > low && s < high;
  };
  lift::PathFunctional fa, fb;
  fa.phi = [rate, lat, inside](double y, double) {
    if (!inside(y)) return 0.0;
    const Index i = std::clamp<Index>(round_half_away((y - lat.x0) / lat.h), 0, lat.n - 1);
    return rate[static_cast<std::size_t>(i)];
  };
  fb.phi = [inside](double y, double) { return inside(y) ? 1.0 : 0.0; };
  return {fa, fb};
}

// --- Swap pricing -----------------------------------------------------------

namespace {

// Shared aggregation: walk the bridges of row y0, price each conditional law
// with `leg`, and fold in the weights. Bridges whose moments admit no fit are
// dropped and their weight accumulated.
template <typename Leg>
SwapQuote aggregate(const MomentSet& ms, Index y0, Leg leg, double strike_leg) {
  require(y0 >= 0 && y0 < ms.u.rows(), errc::invalid, "start state out of range");
  SwapQuote quote;
  for (Index y2 = 0; y2 < ms.u.cols(); ++y2) {
    const double w = ms.u(y0, y2);
    if (w <= kWeightFloor) continue;
    try {
      quote.price += w * leg(y0, y2, w);
    } catch (const error&) {
      quote.excluded_weight += w;
    }
  }
  quote.price -= strike_leg;
  audit::note("swap_excluded_weight", quote.excluded_weight);
  return quote;
}

constexpr double kFlatVarianceTol = 1e-10;  // relative variance below this is deterministic

// Corridor occupancy with relative variance below this prices as a fixed time
// fraction. Two effects force a nonzero threshold: the finite-step clock's
// second moment carries a downward counting bias (and stencil noise) of order
// 1e-4 relative, and the bivariate quadrature cannot resolve lognormal factors
// narrower than log-sd ~ 0.1, which this threshold equals at the boundary.
// Genuinely stochastic corridor occupancy sits orders of magnitude above it.
constexpr double kOccupancyFlatTol = 1e-2;

}  // namespace

SwapQuote price_variance_swap(const MomentSet& ms, Index y0, double swap_rate, double cap_factor,
                              Matcher matcher) {
  require(ms.m1.size() > 0 && ms.m2.size() > 0, errc::invalid,
          "moment set lacks first and second moments");
  require(swap_rate > 0.0 && cap_factor > 0.0, errc::invalid,
          "swap rate and cap factor must be positive");
  const double cap = cap_factor * swap_rate * swap_rate;
  auto leg = [&](Index i, Index j, double w) {
    const double m1 = ms.m1(i, j) / w;
    const double m2 = ms.m2(i, j) / w;
    const double var = m2 - m1 * m1;
    if (m1 <= 0.0 || var <= kFlatVarianceTol * m1 * m1)
      return std::min(std::max(m1, 0.0), cap);
    return matcher == Matcher::chi_square ? capped_mean(match_chi_square(m1, m2), cap)
                                          : capped_mean(match_lognormal(m1, m2), cap);
  };
  return aggregate(ms, y0, leg, swap_rate * swap_rate);
}

SwapQuote price_volatility_swap(const MomentSet& ms, Index y0, double swap_rate,
                                double cap_factor, Matcher matcher) {
  require(ms.m1.size() > 0 && ms.m2.size() > 0, errc::invalid,
          "moment set lacks first and second moments");
  require(swap_rate > 0.0 && cap_factor > 0.0, errc::invalid,
          "swap rate and cap factor must be positive");
  const double cap_root = std::sqrt(cap_factor) * swap_rate;
  auto leg = [&](Index i, Index j, double w) {
    const double m1 = ms.m1(i, j) / w;
    const double m2 = ms.m2(i, j) / w;
    const double var = m2 - m1 * m1;
    if (m1 <= 0.0 || var <= kFlatVarianceTol * m1 * m1)
      return std::min(std::sqrt(std::max(m1, 0.0)), cap_root);
    return matcher == Matcher::chi_square
               ? capped_root_mean(match_chi_square(m1, m2), cap_root)
               : capped_root_mean(match_lognormal(m1, m2), cap_root);
  };
  return aggregate(ms, y0, leg, swap_rate);
}

SwapQuote price_conditional_variance_swap(const MomentSet& ms, Index y0, double swap_rate,
                                          double cv_max) {
  require(ms.m11.size() > 0, errc::invalid,
          "conditional swap needs a bivariate moment set (corridor variance and clock)");
  require(swap_rate > 0.0 && cv_max > 0.0, errc::invalid,
          "swap rate and cap must be positive");
  const double occupation_floor = 1e-9 * ms.horizon;
  auto leg = [&](Index i, Index j, double w) {
    const double m10 = ms.m1(i, j) / w, m20 = ms.m2(i, j) / w;
    const double m01 = ms.m1b(i, j) / w, m02 = ms.m2b(i, j) / w;
    const double m11 = ms.m11(i, j) / w;
    require(m01 > occupation_floor, errc::invalid,
            "bridge spends no time in the corridor");
    const double var2 = m02 - m01 * m01;
    if (var2 <= kOccupancyFlatTol * m01 * m01) {
      const double mean = m10 / m01;
      const double m2s = m20 / (m01 * m01);
      if (mean <= 0.0 || m2s - mean * mean <= kFlatVarianceTol * mean * mean)
        return std::min(std::max(mean, 0.0), cv_max);
      return capped_mean(match_lognormal(mean, m2s), cv_max);
    }
    return capped_ratio_mean(match_bilognormal(m10, m20, m01, m02, m11), cv_max);
  };
  return aggregate(ms, y0, leg, swap_rate * swap_rate);
}

}  // namespace lop::moment
