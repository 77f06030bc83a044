#include "lop/propagation.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <cmath>

namespace lop::propagation {

namespace {

bool absorbing(const lattice::Lattice& lat) {
  return lat.boundary == lattice::Boundary::Absorbing;
}

}  // namespace

// The audit records pre-cleanup deviations so downstream checks see the true
// numerical quality, not the cleaned result.
void audit_propagator_rows(Matrix& u, const lattice::Lattice& lat) {
  double min_entry = u.minCoeff();
  if (min_entry < 0.0) {
    audit::note("propagator_negativity", -min_entry);
    require(min_entry >= -1e-12, errc::numeric, "propagator entry significantly negative");
    u = u.cwiseMax(0.0);
  }
  for (Index i = 0; i < u.rows(); ++i) {
    double sum = u.row(i).sum();
    if (absorbing(lat)) {
      audit::note("propagator_rowsum", std::max(0.0, sum - 1.0));
      require(sum <= 1.0 + 1e-10, errc::numeric, "absorbing propagator row exceeds unit mass");
    } else {
      audit::note("propagator_rowsum", std::abs(sum - 1.0));
      require(std::abs(sum - 1.0) <= 1e-10, errc::numeric,
              "propagator row mass drifted from 1");
      u.row(i) /= sum;
    }
  }
}

FastExpPlan plan_fast_exp(const generator::Generator& gen, double t) {
  require(t > 0.0 && std::isfinite(t), errc::invalid, "horizon must be positive");
  double worst = 0.0;
  for (Index i = 0; i < gen.q.rows(); ++i) worst = std::max(worst, -gen.q(i, i));
  FastExpPlan plan;
  plan.t = t;
  plan.n_doublings = 0;
  plan.dt = t;
  // Smallest doubling count with 1 - dt * worst >= 1/2.
  while (plan.dt * worst > 0.5) {
    require(plan.n_doublings < 60, errc::numeric, "step doubling exceeded supported depth");
    ++plan.n_doublings;
    plan.dt = t / std::ldexp(1.0, plan.n_doublings);
  }
  return plan;
}

Propagator fast_exponentiate(const generator::Generator& gen, double t, int extra_doublings) {
  require(t >= 0.0 && std::isfinite(t), errc::invalid, "horizon must be nonnegative");
  require(extra_doublings >= 0 && extra_doublings <= 60, errc::invalid,
          "extra step halvings out of range");
  const Index n = gen.q.rows();
  if (t == 0.0) return {Matrix::Identity(n, n), 0.0, 0.0};
  FastExpPlan plan = plan_fast_exp(gen, t);
  plan.n_doublings += extra_doublings;
  require(plan.n_doublings <= 60, errc::numeric, "step doubling exceeded supported depth");
  plan.dt = t / std::ldexp(1.0, plan.n_doublings);
  Matrix u = Matrix::Identity(n, n) + plan.dt * gen.q;
  for (int k = 0; k < plan.n_doublings; ++k) u = u * u;
  audit_propagator_rows(u, gen.lat);
  return {std::move(u), 0.0, t};
}

Propagator path_ordered_exponential(const std::vector<generator::TimeSlice>& schedule,
                                    const std::vector<std::optional<Matrix>>& map_after,
                                    int extra_doublings) {
  require(!schedule.empty(), errc::invalid, "schedule must be nonempty");
  require(map_after.empty() || map_after.size() == schedule.size(), errc::invalid,
          "one optional mapping per slice");
  const Index n = schedule.front().gen.q.rows();
  Matrix u = Matrix::Identity(n, n);
  double prev_end = schedule.front().t0;
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    const generator::TimeSlice& slice = schedule[s];
    require(slice.gen.q.rows() == n, errc::invalid, "schedule mixes state-space sizes");
    require(std::abs(slice.t0 - prev_end) <= 1e-12 * std::max(1.0, std::abs(prev_end)),
            errc::invalid, "schedule intervals must be contiguous");
    require(slice.t1 >= slice.t0, errc::invalid, "schedule interval reversed");
    if (slice.t1 > slice.t0) {
      u = u * fast_exponentiate(slice.gen, slice.t1 - slice.t0, extra_doublings).u;
    }
    if (!map_after.empty() && map_after[s]) {
      const Matrix& m = *map_after[s];
      require(m.rows() == n && m.cols() == n, errc::invalid, "mapping operator shape mismatch");
      for (Index i = 0; i < n; ++i) {
        double sum = m.row(i).sum();
        require(m.row(i).minCoeff() >= -1e-12 && std::abs(sum - 1.0) <= 1e-10, errc::invalid,
                "mapping operator must be row-stochastic");
      }
      u = u * m;
    }
    prev_end = slice.t1;
  }
  audit_propagator_rows(u, schedule.front().gen.lat);
  return {std::move(u), schedule.front().t0, schedule.back().t1};
}

Matrix dyson_truncated(const std::vector<generator::TimeSlice>& schedule, int order) {
  require(order >= 1 && order <= 3, errc::invalid, "series order must be 1, 2, or 3");
  require(!schedule.empty(), errc::invalid, "schedule must be nonempty");
  const Index n = schedule.front().gen.q.rows();

  double t_total = 0.0, rate_bound = 0.0;
  double prev_end = schedule.front().t0;
  for (const generator::TimeSlice& slice : schedule) {
    require(std::abs(slice.t0 - prev_end) <= 1e-12 * std::max(1.0, std::abs(prev_end)),
            errc::invalid, "schedule intervals must be contiguous");
    require(slice.t1 >= slice.t0, errc::invalid, "schedule interval reversed");
    t_total += slice.t1 - slice.t0;
    rate_bound = std::max(rate_bound, slice.gen.q.cwiseAbs().rowwise().sum().maxCoeff());
    prev_end = slice.t1;
  }
  // Leading remainder scale (M t)^{order+1} / (order+1)!; past 1 the
  // truncation is meaningless.
  double factorial[5] = {1, 1, 2, 6, 24};
  double remainder = std::pow(rate_bound * t_total, order + 1) / factorial[order + 1];
  require(remainder < 1.0, errc::numeric,
          "truncated series remainder bound reached 1; horizon too long for this order");

  // Cumulative first and second nested integrals at the slice boundary, then
  // per-slice closed-form increments (the integrands are matrix polynomials
  // in time because each slice's rate matrix is constant).
  Matrix cum1 = Matrix::Zero(n, n);  // int_0^s L
  Matrix cum2 = Matrix::Zero(n, n);  // int_0^s (int L) L
  Matrix term2 = Matrix::Zero(n, n), term3 = Matrix::Zero(n, n);
  for (const generator::TimeSlice& slice : schedule) {
    const Matrix& L = slice.gen.q;
    double d = slice.t1 - slice.t0;
    if (d == 0.0) continue;
    Matrix Ld = L * d;
    if (order >= 2) term2 += (cum1 * d + 0.5 * d * Ld) * L;
    if (order >= 3) {
      term3 += (cum2 * d + 0.5 * d * (cum1 * Ld) + (d * d / 6.0) * (Ld * L)) * L;
      cum2 += cum1 * Ld + 0.5 * (Ld * Ld);
    }
    cum1 += Ld;
  }
  Matrix u = Matrix::Identity(n, n) + cum1;
  if (order >= 2) u += term2;
  if (order >= 3) u += term3;
  return u;
}

SpectralDecomposition spectral_decompose(const Matrix& q) {
  require(q.rows() == q.cols() && q.rows() > 0, errc::invalid, "matrix must be square");
  Eigen::EigenSolver<Matrix> es(q);
  require(es.info() == Eigen::Success, errc::numeric, "eigenvalue iteration failed");
  SpectralDecomposition dec;
  dec.vectors = es.eigenvectors();
  dec.values = es.eigenvalues();
  dec.inverse = dec.vectors.partialPivLu().solve(CMatrix::Identity(q.rows(), q.cols()));

  double basis_residual =
      (dec.vectors * dec.inverse - CMatrix::Identity(q.rows(), q.cols())).cwiseAbs().maxCoeff();
  double eig_residual =
      (q * dec.vectors - dec.vectors * dec.values.asDiagonal()).cwiseAbs().maxCoeff();
  require(eig_residual <= 1e-6 && basis_residual <= 1e-8, errc::numeric,
          "spectrum is numerically unreliable (pseudo-spectrum); refusing functional calculus");
  return dec;
}

Matrix apply_function(const SpectralDecomposition& dec,
                      const std::function<std::complex<double>(std::complex<double>)>& psi) {
  require(static_cast<bool>(psi), errc::invalid, "function callback must be set");
  CVector mapped(dec.values.size());
  for (Index i = 0; i < dec.values.size(); ++i) mapped[i] = psi(dec.values[i]);
  CMatrix m = dec.vectors * mapped.asDiagonal() * dec.inverse;
  double scale = std::max(1.0, m.real().cwiseAbs().maxCoeff());
  require(m.imag().cwiseAbs().maxCoeff() <= 1e-8 * scale, errc::numeric,
          "functional calculus left a complex residue on a real operator");
  return m.real();
}

}  // namespace lop::propagation
