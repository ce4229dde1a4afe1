#pragma once

// The diagonal operator (P u)(s) = sum_i u(phi_i s), diagonal traces
// u_n(s) = K_n(s,s), finiteness verdicts, Lyapunov certificates, blow-up
// witnesses, level-set counts and tail bounds.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kt/certificate.hpp"
#include "kt/kernel.hpp"
#include "kt/models.hpp"
#include "kt/point_space.hpp"
#include "kt/tower.hpp"

namespace kt {

using PointFunction = std::function<double(Point)>;

PointFunction apply_P(PointFunction u, BranchSystemPtr system);

// u_0(s) = K(s,s)
PointFunction diagonal_of(KernelPtr K);

// d_0(s) = (L K - K)(s,s)
PointFunction defect_diagonal_of(KernelPtr K, BranchSystemPtr system);

enum class Verdict { converging, diverging, inconclusive };
std::string_view to_string(Verdict v) noexcept;

struct BlowupQuery {
  std::function<bool(Point)> region;  // empty means every point
  double epsilon = 1.0;
  double rho = 2.0;
  std::vector<std::size_t> levels;
};

struct BlowupWitness {
  BlowupQuery query;
  std::vector<std::uint64_t> counts;  // one per requested level
  bool found = false;
  std::optional<std::size_t> first_short_level;
};

// Counts words w with phi_w(s) in Y and u_0(phi_w s) >= epsilon at each
// level; found iff every count reaches rho^level.
BlowupWitness blowup_detect(KernelPtr K, BranchSystemPtr system, Point s, const BlowupQuery& query,
                            const Limits& limits = {});

struct DiagonalOptions {
  double ceiling = kDefaultCeiling;
  std::optional<double> trace_eps;            // default 1e-10 * u_0(s)
  const TailCertificate* certificate = nullptr;
  std::optional<BlowupQuery> witness;         // searched for the diverging verdict
  TowerOptions tower;
};

struct DiagonalTrace {
  Point point;
  std::string label;
  std::vector<double> values;       // u_0 .. u_N from the tower
  std::vector<double> word_values;  // the same by word sums over W_n
  double path_residual = 0.0;       // max relative gap between the two
  Verdict verdict = Verdict::inconclusive;
  std::string reason;
  std::optional<BlowupWitness> witness;

  double envelope_lower_bound() const { return values.back(); }
};

// Verdict: diverging if u_N > ceiling or the witness query succeeds;
// converging if a certificate covers s or the last increment is below
// trace_eps (or zero); otherwise inconclusive.
DiagonalTrace diagonal_trace(KernelPtr K, BranchSystemPtr system, Point s, std::size_t N,
                             const DiagonalOptions& options = {});

struct LyapunovRefutation {
  Point point;
  std::string label;
  std::string premise;  // "u0 <= C r", "d0 <= C r" or "P r <= beta r"
  double lhs = 0.0;
  double rhs = 0.0;
};

struct LyapunovResult {
  std::optional<TailCertificate> certificate;
  std::optional<LyapunovRefutation> refutation;
  std::size_t checked_points = 0;
  explicit operator bool() const noexcept { return certificate.has_value(); }
};

// Checks the premises of the candidate on domain and its one-step images;
// the certificate records that checked set as its domain. r <= 0 at a
// checked point is an InputError.
LyapunovResult lyapunov_verify(KernelPtr K, BranchSystemPtr system, const LyapunovCandidate& candidate,
                               const std::vector<Point>& domain, double tol = 1e-12);

// #{w : |w| = n, u_0(phi_w s) >= theta}
std::uint64_t level_set_count(KernelPtr K, BranchSystemPtr system, Point s, std::size_t n, double theta,
                              const Limits& limits = {});

struct LayerCake {
  double integral = 0.0;  // exact integral of the level-set step function
  double u_n = 0.0;       // K_n(s,s) from the tower
  double residual = 0.0;  // |integral - u_n| / u_n (absolute when u_n = 0)
};

LayerCake layer_cake_check(KernelPtr K, BranchSystemPtr system, Point s, std::size_t n,
                           const TowerOptions& options = {});

struct TailBound {
  double value = 0.0;
  bool certified = false;
  std::string method;  // "certificate", "oracle" (exact gauge) or "extrapolated"
};

// (C / (1 - beta)) beta^N sqrt(r(s) r(t)); ContractError without a
// certificate or when it does not cover s and t.
double certified_tail_bound(const TailCertificate* certificate, Point s, Point t, std::size_t N);

// Certificate when given; otherwise sqrt((h(s)-u_N(s))(h(t)-u_N(t))) with h
// from the oracle, or from geometric extrapolation of the tower's diagonal
// increments (uncertified). s and t must be tower base points.
TailBound tail_bound(const TowerState& tower, const TailCertificate* certificate, Point s, Point t,
                     std::size_t N, const ClosedForm* oracle = nullptr);

}  // namespace kt
