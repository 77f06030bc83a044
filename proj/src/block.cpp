#include "lop/block.hpp"

#include <memory>

namespace lop::block {

namespace {

// Shared shape / alignment checks and the per-period step loop. `advance`
// maps (period index, value grid) to the propagated grid before the gather.
template <class Advance>
Matrix induct(std::size_t periods, const std::vector<PermutationMap>& relabelings,
              Matrix terminal, const Matrix* exercise, Advance&& advance) {
  const Index n = terminal.rows();
  const Index regs = terminal.cols();
  require(n > 0 && regs > 0, errc::invalid, "terminal grid must be non-empty");
  require(periods == relabelings.size(), errc::invalid,
          "propagator and relabeling schedules must have equal length");
  if (exercise != nullptr)
    require(exercise->rows() == n && exercise->cols() == regs, errc::invalid,
            "exercise grid shape must match the value grid");

  Matrix v = std::move(terminal);
  Matrix gathered(n, regs);
  for (std::size_t i = periods; i-- > 0;) {
    const auto& target = relabelings[i].target;
    require(static_cast<bool>(target), errc::invalid, "relabeling must be callable");
    Matrix w = advance(i, v);
    for (Index y = 0; y < n; ++y)
      for (Index k = 0; k < regs; ++k) {
        const auto [ty, tk] = target(y, k);
        require(ty >= 0 && ty < n && tk >= 0 && tk < regs, errc::invalid,
                "relabeling target outside the value grid");
        gathered(y, k) = w(ty, tk);
      }
    if (exercise != nullptr)
      v = gathered.cwiseMax(*exercise);
    else
      v = gathered;
  }
  return v;
}

}  // namespace

Matrix backward_induct(const std::vector<Matrix>& propagators,
                       const std::vector<PermutationMap>& relabelings, Matrix terminal,
                       const Matrix* exercise) {
  const Index n = terminal.rows();
  for (const Matrix& u : propagators)
    require(u.rows() == n && u.cols() == n, errc::invalid,
            "period propagator must be square over the state space");
  return induct(propagators.size(), relabelings, std::move(terminal), exercise,
                [&](std::size_t i, const Matrix& v) -> Matrix { return propagators[i] * v; });
}

Matrix backward_induct_state_dependent(const std::vector<std::vector<Matrix>>& propagators,
                                       const std::vector<PermutationMap>& relabelings,
                                       Matrix terminal, const Matrix* exercise) {
  const Index n = terminal.rows();
  const Index regs = terminal.cols();
  for (const auto& period : propagators) {
    require(static_cast<Index>(period.size()) == regs, errc::invalid,
            "each period needs one propagator per register value");
    for (const Matrix& u : period)
      require(u.rows() == n && u.cols() == n, errc::invalid,
              "period propagator must be square over the state space");
  }
  return induct(propagators.size(), relabelings, std::move(terminal), exercise,
                [&](std::size_t i, const Matrix& v) -> Matrix {
                  Matrix w(v.rows(), v.cols());
                  for (Index k = 0; k < v.cols(); ++k) w.col(k) = propagators[i][k] * v.col(k);
                  return w;
                });
}

PermutationMap snowball_permutation(double f, double dC, std::function<double(Index)> phi,
                                    Index K) {
  require(dC > 0.0, errc::invalid, "coupon increment must be positive");
  require(K >= 2, errc::invalid, "coupon register needs at least two levels");
  require(static_cast<bool>(phi), errc::invalid, "coupon offset must be callable");
  // The counter lives in the closure so repeated applications of one map
  // accumulate; the audit note keeps the running total visible as the peak.
  auto clamps = std::make_shared<long long>(0);
  PermutationMap map;
  map.target = [f, dC, phi = std::move(phi), K, clamps](Index y, Index k) {
    const long long raw = round_half_away((f * dC * static_cast<double>(k) + phi(y)) / dC);
    long long next = raw;
    if (next < 0) next = 0;
    if (next > static_cast<long long>(K) - 1) next = static_cast<long long>(K) - 1;
    if (next != raw) audit::note("coupon_register_clamped", static_cast<double>(++*clamps));
    return std::pair<Index, Index>(y, static_cast<Index>(next));
  };
  return map;
}

PermutationMap softcall_permutation(std::function<int(Index)> sigma, int window) {
  require(window >= 1 && window <= 12, errc::invalid,
          "observation window must hold between 1 and 12 bits");
  require(static_cast<bool>(sigma), errc::invalid, "barrier observation must be callable");
  const Index top = Index{1} << (window - 1);
  PermutationMap map;
  map.target = [sigma = std::move(sigma), top](Index y, Index k) {
    const int s = sigma(y);
    require(s == 0 || s == 1, errc::invalid, "barrier observation must be 0 or 1");
    return std::pair<Index, Index>(y, (k >> 1) | (s != 0 ? top : Index{0}));
  };
  return map;
}

}  // namespace lop::block
