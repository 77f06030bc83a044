#include "lop/lift.hpp"

#include "lop/lattice.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <complex>
#include <utility>

namespace lop::lift {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::complex<double> kImag(0.0, 1.0);

double running_term(const PathFunctional& f, double y, double t) {
  return f.phi ? f.phi(y, t) : 0.0;
}

// Amount added to the accumulator when the state jumps y1 -> y2.
double jump_term(const PathFunctional& f, double y1, double y2, double t) {
  if (!f.chi || !f.psi) return 0.0;
  return f.chi(y1, y2, t) * (f.psi(y2, t) - f.psi(y1, t));
}

void check_grid(const UniformPathGrid& grid) {
  require(grid.bin_width > 0.0 && std::isfinite(grid.bin_width), errc::invalid,
          "accumulator bin width must be positive");
  require(grid.bins >= 2, errc::invalid, "need at least two accumulator bins");
}

Vector lattice_coords(const lattice::Lattice& lat) {
  Vector coords(lat.n);
  for (Index i = 0; i < lat.n; ++i) coords[i] = lat.point(i);
  return coords;
}

// Auxiliary frame for exponentiating lifted rate matrices: the bins are
// cyclic, so every lifted row conserves mass and the cleanup may renormalize.
generator::Generator lifted_frame(Matrix q) {
  Index n = q.rows();
  return {std::move(q),
          lattice::build_lattice(0.0, static_cast<double>(n - 1), n, lattice::Boundary::Periodic)};
}

Matrix matrix_power(const Matrix& base, long long e) {
  Matrix result = Matrix::Identity(base.rows(), base.cols());
  Matrix square = base;
  while (e > 0) {
    if (e & 1) result = result * square;
    square = square * square;
    e >>= 1;
  }
  return result;
}

// Fourier frequencies of an m-bin cyclic grid, each taken as the alias
// closest to zero. With this choice the blocks at modes j and m - j are
// exact complex conjugates, so the inverse transform is real by
// construction rather than by cancellation of discretization error.
std::vector<double> centered_modes(Index m, double bin_width) {
  std::vector<double> modes(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) {
    Index jj = (2 * j <= m) ? j : j - m;
    modes[static_cast<std::size_t>(j)] =
        2.0 * kPi * static_cast<double>(jj) / (static_cast<double>(m) * bin_width);
  }
  return modes;
}

// Split off the state-independent midpoint of the running integrand. The
// midpoint commutes with the whole block, so callers apply its phase
// exp(-i p mid T) exactly after powering; only the spread around the
// midpoint rides through the finite time step. Uniform clocks are thereby
// handled without any time-discretization error.
double extract_uniform_clock(PathFunctional& f, const lattice::Lattice& lat, double t) {
  if (!f.phi) return 0.0;
  double lo = f.phi(lat.point(0), t);
  double hi = lo;
  for (Index i = 1; i < lat.n; ++i) {
    double v = f.phi(lat.point(i), t);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double mid = 0.5 * (lo + hi);
  if (mid == 0.0) return 0.0;
  auto base = f.phi;
  f.phi = [base, mid](double y, double s) { return base(y, s) - mid; };
  return mid;
}

// Exponentiate the lifted block at every listed mode and keep the x0 row.
CMatrix mode_rows(const generator::Generator& gen, const std::function<CMatrix(double)>& block_at,
                  const std::vector<double>& modes, const propagation::FastExpPlan& plan,
                  Index x0) {
  const Index n = gen.q.rows();
  const Index m = static_cast<Index>(modes.size());
  CMatrix rows(m, n);
  parallel_for(m, [&](Index begin, Index end) {
    for (Index j = begin; j < end; ++j) {
      CMatrix e = fast_exponentiate_block(block_at(modes[static_cast<std::size_t>(j)]), plan);
      rows.row(j) = e.row(x0);
    }
  });
  return rows;
}

Matrix real_part_checked(const CMatrix& joint) {
  double residue = joint.imag().cwiseAbs().maxCoeff();
  require(residue <= 1e-10, errc::numeric, "accumulator transform left an imaginary residue");
  return joint.real();
}

void check_marginal(const Matrix& joint, const Vector& base_row) {
  double worst = 0.0;
  for (Index y = 0; y < joint.rows(); ++y)
    worst = std::max(worst, std::abs(joint.row(y).sum() - base_row[y]));
  audit::note("lift_marginal", worst);
  require(worst <= 1e-8, errc::numeric, "lifted joint lost marginal consistency");
}

}  // namespace

LiftedBlock characteristic_block(const generator::Generator& gen, const PathFunctional& f,
                                 double p, double t) {
  const Index n = gen.q.rows();
  CMatrix b = gen.q.cast<std::complex<double>>();
  for (Index i = 0; i < n; ++i) {
    double yi = gen.lat.point(i);
    if (p != 0.0) {
      for (Index j = 0; j < n; ++j) {
        if (i == j || gen.q(i, j) == 0.0) continue;
        double v = jump_term(f, yi, gen.lat.point(j), t);
        if (v != 0.0) b(i, j) *= std::exp(-kImag * (p * v));
      }
    }
    b(i, i) -= kImag * (p * running_term(f, yi, t));
  }
  return {p, std::move(b)};
}

LiftedBlock double_characteristic_block(const generator::Generator& gen, const PathFunctional& fa,
                                        const PathFunctional& fb, double pa, double pb, double t) {
  const Index n = gen.q.rows();
  CMatrix b = gen.q.cast<std::complex<double>>();
  for (Index i = 0; i < n; ++i) {
    double yi = gen.lat.point(i);
    for (Index j = 0; j < n; ++j) {
      if (i == j || gen.q(i, j) == 0.0) continue;
      double yj = gen.lat.point(j);
      double phase = pa * jump_term(fa, yi, yj, t) + pb * jump_term(fb, yi, yj, t);
      if (phase != 0.0) b(i, j) *= std::exp(-kImag * phase);
    }
    b(i, i) -= kImag * (pa * running_term(fa, yi, t) + pb * running_term(fb, yi, t));
  }
  return {pa, std::move(b)};
}

Matrix lifted_generator(const Matrix& q, const Vector& coords, const PathFunctional& f,
                        const UniformPathGrid& grid, double t) {
  check_grid(grid);
  const Index n = q.rows();
  require(q.cols() == n && coords.size() == n, errc::invalid,
          "rate matrix and coordinate list disagree");
  const Index bins = grid.bins;
  require(n * bins <= 4096, errc::invalid, "lifted state space exceeds the 4096-state cap");
  Matrix out = Matrix::Zero(n * bins, n * bins);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (q(i, j) == 0.0) continue;
      long long r = 0;
      if (i != j) r = round_half_away(jump_term(f, coords[i], coords[j], t) / grid.bin_width);
      Index shift = static_cast<Index>(((r % bins) + bins) % bins);
      for (Index m = 0; m < bins; ++m)
        out(i * bins + m, j * bins + (m + shift) % bins) += q(i, j);
    }
    double clock = running_term(f, coords[i], t);
    require(clock >= 0.0, errc::invalid,
            "running integrand must be nonnegative to lift as a counting rate");
    if (clock > 0.0) {
      double c = clock / grid.bin_width;
      for (Index m = 0; m < bins; ++m) {
        out(i * bins + m, i * bins + (m + 1) % bins) += c;
        out(i * bins + m, i * bins + m) -= c;
      }
    }
  }
  return out;
}

Matrix lifted_generator(const generator::Generator& gen, const PathFunctional& f,
                        const UniformPathGrid& grid, double t) {
  return lifted_generator(gen.q, lattice_coords(gen.lat), f, grid, t);
}

Matrix brute_force_lifted(const generator::Generator& gen, const PathFunctional& f,
                          const UniformPathGrid& grid, double T) {
  generator::Generator lifted = lifted_frame(lifted_generator(gen, f, grid, 0.0));
  return propagation::fast_exponentiate(lifted, T).u;
}

Matrix bridge_distribution(const generator::Generator& gen, const PathFunctional& f,
                           const UniformPathGrid& grid, double T, Index x0) {
  check_grid(grid);
  const Index n = gen.q.rows();
  require(x0 >= 0 && x0 < n, errc::invalid, "start index out of range");
  require(T > 0.0 && std::isfinite(T), errc::invalid, "horizon must be positive");
  const Index bins = grid.bins;
  const Index fine_bins = 2 * bins;
  propagation::FastExpPlan plan = propagation::plan_fast_exp(gen, T);

  PathFunctional reduced = f;
  double clock_mid = extract_uniform_clock(reduced, gen.lat, 0.0);
  std::vector<double> modes = centered_modes(fine_bins, grid.bin_width);
  CMatrix rows = mode_rows(
      gen, [&](double p) { return characteristic_block(gen, reduced, p, 0.0).block; }, modes, plan,
      x0);
  if (clock_mid != 0.0)
    for (Index j = 0; j < fine_bins; ++j)
      rows.row(j) *= std::exp(-kImag * (modes[static_cast<std::size_t>(j)] * clock_mid * T));

  // Inverse transform on the doubled grid.
  CMatrix fine(n, fine_bins);
  for (Index m = 0; m < fine_bins; ++m) {
    for (Index y = 0; y < n; ++y) {
      std::complex<double> acc(0.0, 0.0);
      for (Index j = 0; j < fine_bins; ++j) {
        double angle = 2.0 * kPi * static_cast<double>(j * m) / static_cast<double>(fine_bins);
        acc += rows(j, y) * std::complex<double>(std::cos(angle), std::sin(angle));
      }
      fine(y, m) = acc / static_cast<double>(fine_bins);
    }
  }
  Matrix fine_real = real_part_checked(fine);

  // Spill: mass that no window of `bins` consecutive fine bins can hold.
  Vector mass = fine_real.colwise().sum();
  double total = mass.sum();
  double window = mass.head(bins).sum();
  double best = window;
  for (Index s = 1; s < fine_bins; ++s) {
    window += mass[(s + bins - 1) % fine_bins] - mass[s - 1];
    best = std::max(best, window);
  }
  double spill = total - best;
  require(spill < 1e-6, errc::invalid,
          "path grid too small for the accumulator range; spilled mass = " + format_g17(spill));

  // Folding the doubled grid in half is identical to inverting on the
  // requested grid (only the even modes survive the fold).
  Matrix joint(n, bins);
  for (Index y = 0; y < n; ++y)
    for (Index m = 0; m < bins; ++m) joint(y, m) = fine_real(y, m) + fine_real(y, m + bins);

  Matrix base = propagation::fast_exponentiate(gen, T).u;
  check_marginal(joint, base.row(x0));
  return joint;
}

Matrix double_bridge_distribution(const generator::Generator& gen, const PathFunctional& fa,
                                  const PathFunctional& fb, const UniformPathGrid& grid_a,
                                  const UniformPathGrid& grid_b, double T, Index x0) {
  check_grid(grid_a);
  check_grid(grid_b);
  const Index n = gen.q.rows();
  require(x0 >= 0 && x0 < n, errc::invalid, "start index out of range");
  require(T > 0.0 && std::isfinite(T), errc::invalid, "horizon must be positive");
  const Index ka = grid_a.bins, kb = grid_b.bins;
  require(ka <= 64 && kb <= 64, errc::invalid, "double lift capped at 64 x 64 bins");
  propagation::FastExpPlan plan = propagation::plan_fast_exp(gen, T);

  PathFunctional ra = fa, rb = fb;
  double mid_a = extract_uniform_clock(ra, gen.lat, 0.0);
  double mid_b = extract_uniform_clock(rb, gen.lat, 0.0);
  std::vector<double> modes_a = centered_modes(ka, grid_a.bin_width);
  std::vector<double> modes_b = centered_modes(kb, grid_b.bin_width);

  CMatrix rows(ka * kb, n);
  parallel_for(ka * kb, [&](Index begin, Index end) {
    for (Index j = begin; j < end; ++j) {
      double pa = modes_a[static_cast<std::size_t>(j / kb)];
      double pb = modes_b[static_cast<std::size_t>(j % kb)];
      CMatrix e = fast_exponentiate_block(
          double_characteristic_block(gen, ra, rb, pa, pb, 0.0).block, plan);
      rows.row(j) = e.row(x0) * std::exp(-kImag * ((pa * mid_a + pb * mid_b) * T));
    }
  });

  CMatrix joint_c(n, ka * kb);
  for (Index ma = 0; ma < ka; ++ma) {
    for (Index mb = 0; mb < kb; ++mb) {
      for (Index y = 0; y < n; ++y) {
        std::complex<double> acc(0.0, 0.0);
        for (Index j = 0; j < ka * kb; ++j) {
          double angle = 2.0 * kPi * (static_cast<double>((j / kb) * ma) / static_cast<double>(ka) +
                                      static_cast<double>((j % kb) * mb) / static_cast<double>(kb));
          acc += rows(j, y) * std::complex<double>(std::cos(angle), std::sin(angle));
        }
        joint_c(y, ma * kb + mb) = acc / static_cast<double>(ka * kb);
      }
    }
  }
  Matrix joint = real_part_checked(joint_c);
  Matrix base = propagation::fast_exponentiate(gen, T).u;
  check_marginal(joint, base.row(x0));
  return joint;
}

LiftedBlock discrete_lift_block(const propagation::Propagator& step, const lattice::Lattice& lat,
                                const std::function<double(double, double)>& psi, double p) {
  const Index n = step.u.rows();
  require(step.u.cols() == n && lat.n == n, errc::invalid,
          "period propagator does not match the lattice");
  for (Index i = 0; i < n; ++i) {
    require(step.u.row(i).minCoeff() >= -1e-12, errc::invalid,
            "period propagator has negative mass");
    require(std::abs(step.u.row(i).sum() - 1.0) <= 1e-10, errc::invalid,
            "period propagator rows must sum to one");
  }
  CMatrix b = step.u.cast<std::complex<double>>();
  if (p != 0.0 && psi) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        if (step.u(i, j) == 0.0) continue;
        double v = psi(lat.point(i), lat.point(j));
        if (v != 0.0) b(i, j) *= std::exp(-kImag * (p * v));
      }
    }
  }
  return {p, std::move(b)};
}

Matrix discrete_bridge_distribution(const std::vector<propagation::Propagator>& steps,
                                    const std::vector<std::function<double(double, double)>>& psis,
                                    const lattice::Lattice& lat, const UniformPathGrid& grid,
                                    Index x0) {
  check_grid(grid);
  require(!steps.empty(), errc::invalid, "need at least one period");
  require(steps.size() == psis.size(), errc::invalid, "one potential per period");
  const Index n = lat.n;
  require(x0 >= 0 && x0 < n, errc::invalid, "start index out of range");
  const Index bins = grid.bins;

  std::vector<double> modes = centered_modes(bins, grid.bin_width);
  CMatrix rows(bins, n);
  parallel_for(bins, [&](Index begin, Index end) {
    for (Index j = begin; j < end; ++j) {
      double p = modes[static_cast<std::size_t>(j)];
      CMatrix prod = CMatrix::Identity(n, n);
      for (std::size_t i = 0; i < steps.size(); ++i)
        prod = prod * discrete_lift_block(steps[i], lat, psis[i], p).block;
      rows.row(j) = prod.row(x0);
    }
  });

  CMatrix joint_c(n, bins);
  for (Index m = 0; m < bins; ++m) {
    for (Index y = 0; y < n; ++y) {
      std::complex<double> acc(0.0, 0.0);
      for (Index j = 0; j < bins; ++j) {
        double angle = 2.0 * kPi * static_cast<double>(j * m) / static_cast<double>(bins);
        acc += rows(j, y) * std::complex<double>(std::cos(angle), std::sin(angle));
      }
      joint_c(y, m) = acc / static_cast<double>(bins);
    }
  }
  Matrix joint = real_part_checked(joint_c);

  Matrix base = steps.front().u;
  for (std::size_t i = 1; i < steps.size(); ++i) base = base * steps[i].u;
  check_marginal(joint, base.row(x0));
  return joint;
}

Matrix max_process_lift(const generator::Generator& gen, const std::function<double(double)>& chi,
                        double alpha, double rate, Index levels) {
  require(static_cast<bool>(chi), errc::invalid, "record functional required");
  require(alpha > 0.0 && std::isfinite(alpha), errc::invalid, "level spacing must be positive");
  require(rate > 0.0 && std::isfinite(rate), errc::invalid,
          "record update rate must be positive");
  require(levels >= 2, errc::invalid, "need at least two record levels");
  const Index n = gen.q.rows();
  require(n * levels <= 4096, errc::invalid, "lifted state space exceeds the 4096-state cap");
  Matrix out = Matrix::Zero(n * levels, n * levels);
  for (Index i = 0; i < n; ++i) {
    double c = chi(gen.lat.point(i));
    long long raw = round_half_away(c / alpha);
    Index target = static_cast<Index>(std::max<long long>(0, std::min<long long>(raw, levels - 1)));
    for (Index k = 0; k < levels; ++k) {
      for (Index j = 0; j < n; ++j)
        if (gen.q(i, j) != 0.0) out(i * levels + k, j * levels + k) += gen.q(i, j);
      if (c > alpha * static_cast<double>(k) && target != k) {
        out(i * levels + k, i * levels + target) += rate;
        out(i * levels + k, i * levels + k) -= rate;
      }
    }
  }
  return out;
}

ShiftLadder build_nonresonant_ladder(double omega0, double ratio, Index rungs, double step) {
  require(omega0 > 0.0 && std::isfinite(omega0), errc::invalid, "base level must be positive");
  require(ratio > 1.0 && std::isfinite(ratio), errc::invalid, "level ratio must exceed one");
  require(rungs >= 2, errc::invalid, "need at least two rungs");
  require(step > 0.0 && std::isfinite(step), errc::invalid, "mean accrual must be positive");
  require(ratio * (ratio - 1.0) > step / omega0, errc::invalid,
          "inadmissible ladder: ratio * (ratio - 1) must exceed step / base");

  ShiftLadder ladder;
  ladder.omega.resize(rungs);
  ladder.probs = Vector::Zero(rungs);
  for (Index k = 0; k < rungs; ++k)
    ladder.omega[k] = omega0 * std::pow(ratio, static_cast<double>(k + 1));
  for (Index k = 0; k + 1 < rungs; ++k) {
    ladder.probs[k] = step / (ladder.omega[k] * (ratio - 1.0));
    require(ladder.probs[k] > 0.0 && ladder.probs[k] < 1.0, errc::invalid,
            "ladder advance probability escaped (0, 1)");
  }
  // Eigenvalues are 1 - probs[k] (the absorbing cap contributes probs = 0);
  // refuse near-degenerate spectra before anyone tries to diagonalize.
  for (Index a = 0; a < rungs; ++a)
    for (Index b = a + 1; b < rungs; ++b)
      require(std::abs(ladder.probs[a] - ladder.probs[b]) >= 1e-6, errc::invalid,
              "resonant ladder: eigenvalues closer than 1e-6");

  ladder.shift = Matrix::Zero(rungs, rungs);
  for (Index k = 0; k + 1 < rungs; ++k) {
    ladder.shift(k, k) = 1.0 - ladder.probs[k];
    ladder.shift(k, k + 1) = ladder.probs[k];
  }
  ladder.shift(rungs - 1, rungs - 1) = 1.0;
  return ladder;
}

Matrix interpolated_shift_kernel(const ShiftLadder& ladder, double accrual) {
  require(accrual >= 0.0 && std::isfinite(accrual), errc::invalid,
          "accrual must be nonnegative");
  require(accrual < 1e6, errc::invalid, "accrual too large to apply");
  long long lo = static_cast<long long>(std::floor(accrual));
  double frac = accrual - static_cast<double>(lo);
  Matrix low_power = matrix_power(ladder.shift, lo);
  if (frac == 0.0) return low_power;
  return (1.0 - frac) * low_power + frac * (low_power * ladder.shift);
}

double diagonalizer_condition(const Matrix& m) {
  require(m.rows() == m.cols() && m.rows() >= 1, errc::invalid, "need a square matrix");
  Eigen::EigenSolver<Matrix> es(m);
  require(es.info() == Eigen::Success, errc::numeric, "eigen decomposition failed");
  Eigen::JacobiSVD<CMatrix> svd(es.eigenvectors());
  double smallest = svd.singularValues()(svd.singularValues().size() - 1);
  require(smallest > 0.0, errc::numeric, "diagonalizer is singular");
  return svd.singularValues()(0) / smallest;
}

CMatrix fast_exponentiate_block(const CMatrix& block, const propagation::FastExpPlan& plan) {
  const Index n = block.rows();
  require(block.cols() == n, errc::invalid, "block must be square");
  CMatrix step = CMatrix::Identity(n, n) + plan.dt * block;
  for (int k = 0; k < plan.n_doublings; ++k) step = step * step;
  return step;
}

}  // namespace lop::lift
