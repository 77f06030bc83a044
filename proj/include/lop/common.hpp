#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace lop {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Index = Eigen::Index;

// Failure taxonomy. `invalid` covers bad user input (rejected up front),
// `numeric` covers conditions detected while computing (instability,
// ill-conditioning, tolerance violations). The C API and the CLI map these
// onto distinct status / exit codes.
enum class errc {
  ok = 0,
  invalid,
  io,
  numeric,
};

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

inline void require(bool cond, errc code, const std::string& what) {
  if (!cond) throw error(code, what);
}

// Round to nearest integer, ties away from zero.
inline long long round_half_away(double x) { return static_cast<long long>(std::llround(x)); }

// --- Threading -------------------------------------------------------------
//
// A process-wide worker budget. Work is split into contiguous index ranges, so
// results are bitwise independent of the number of workers as long as each
// index writes disjoint output.

void set_thread_budget(int n);       // n <= 0 resets to hardware default
int thread_budget();

void parallel_for(Index n, const std::function<void(Index begin, Index end)>& body);

// --- Numerical audit trail -------------------------------------------------
//
// Some routines clean up tiny floating-point residue (for example restoring
// conservation after a transform round trip). Before doing so they record the
// worst raw deviation here so that tests can assert the residue really was
// tiny rather than silently absorbing a genuine defect.

namespace audit {
void note(const std::string& key, double value);  // keeps the running max
double peak(const std::string& key);              // 0 if never noted
void reset();
}  // namespace audit

// --- Small utilities -------------------------------------------------------

// Shortest round-trippable decimal text for a double (printf %.17g).
std::string format_g17(double x);

// FNV-1a over a byte string; used to fingerprint configuration payloads.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace lop
