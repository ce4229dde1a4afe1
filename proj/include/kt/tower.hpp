#pragma once

// The branching operator L, the kernel tower K_n = L^n K with defects
// D_n = K_{n+1} - K_n, word expansions of L^n, the invariant completion
// K_inf with truncation bounds, and the defect feature embedding.

#include <optional>
#include <string>
#include <vector>

#include "kt/certificate.hpp"
#include "kt/kernel.hpp"
#include "kt/point_space.hpp"

namespace kt {

inline constexpr double kDefaultCeiling = 1e12;

struct TowerOptions {
  double tol = kDefaultPsdTol;
  Limits limits;
  // Dense level recursion is used when the orbit closure of the base set
  // is closed under the maps and has at most this many points.
  std::size_t dense_cap = 4096;
  // Upper bound on points used for the subinvariance precondition check.
  std::size_t precheck_points = 256;
  int threads = 1;
};

// (L J)(s,t) = sum_i J(phi_i s, phi_i t). Evaluated on demand and memoized
// per unordered point pair (up to memo_capacity entries).
KernelPtr apply_L(KernelPtr J, BranchSystemPtr system, std::size_t memo_capacity = std::size_t{1} << 20);

// L^n K evaluated by depth-n recursion over the branch tree, no memo.
KernelPtr level_kernel(KernelPtr K, BranchSystemPtr system, std::size_t n, Limits limits = {});

// PSD report of gram(L K - K) on points: PSD certifies L K >= K there.
PsdReport subinvariance_check(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& points,
                              double tol = kDefaultPsdTol);

struct TowerState {
  std::vector<Point> base;
  std::vector<std::string> labels;
  std::size_t horizon = 0;
  std::vector<GramMatrix> levels;         // K_0 .. K_N on base
  std::vector<GramMatrix> defects;        // D_0 .. D_{N-1}, D_n = K_{n+1} - K_n
  std::vector<PsdReport> defect_reports;  // PSD margins of each D_n
  std::vector<double> trace_increments;   // tr D_n
  PsdReport precheck;                     // subinvariance on the precheck set
  std::size_t precheck_size = 0;
  std::string strategy;                   // "dense" or "recursive"
};

// Builds K_0..K_N on base. Throws ModelError if subinvariance fails on the
// precheck set or any D_n Gram is not PSD (naming the level), and
// ResourceError when m^N exceeds the word cap on the recursive path.
TowerState build_tower(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& base,
                       std::size_t horizon, const TowerOptions& options = {});

// L^n K on base by explicit word sums over W_n with phi_w = phi_{i_1} o ... o phi_{i_n}.
GramMatrix level_via_words(const Kernel& K, const BranchSystem& system, const std::vector<Point>& base,
                           std::size_t n, const Limits& limits = {});

// L^n D_0 on base by word sums, D_0 = L K - K.
GramMatrix defect_via_words(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& base,
                            std::size_t n, const Limits& limits = {});

// Max entrywise |K_N - (K_0 + sum_n D_n)| relative to max(max|K_N|, 1).
double telescoping_residual(const TowerState& tower);

struct StoppingRule {
  std::optional<double> trace_eps;  // default 1e-10 * tr K_0
  std::size_t max_level = 40;
  double ceiling = kDefaultCeiling;
};

enum class StopReason { converged, max_level, resource_cap };
std::string_view to_string(StopReason r) noexcept;

struct KInfinityEstimate {
  GramMatrix estimate;           // K_N on base
  Eigen::MatrixXd error_bound;   // per-entry bound on |K_inf - K_N|
  bool certified = false;
  std::vector<Point> certificate_domain;
  std::size_t level = 0;         // N
  StopReason stop = StopReason::max_level;
  std::vector<double> traces;    // tr K_0 .. tr K_N
};

// Iterates the tower until tr K_{n+1} - tr K_n < trace_eps or n = max_level
// (or the word cap stops the recursion). With a certificate covering base,
// attaches the certified geometric bound; otherwise the uncertified
// Cauchy-Schwarz bound from extrapolated diagonal increments. Any diagonal
// above rule.ceiling aborts with a ModelError blow-up report.
KInfinityEstimate estimate_K_infinity(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& base,
                                      const StoppingRule& rule = {},
                                      const TailCertificate* certificate = nullptr,
                                      const TowerOptions& options = {});

// Geometric extrapolation of a diagonal tail sum_{n >= N} d_n from the last
// two increments d_{N-2}, d_{N-1}. Infinity when the ratio is >= 1 or there
// is too little data; zero when the increments vanish.
double extrapolated_tail(const std::vector<double>& increments);

// max over base of |(L Kinf)(s,t) - Kinf(s,t)|.
double invariance_residual(KernelPtr kinf, BranchSystemPtr system, const std::vector<Point>& base);

struct MinimalityReport {
  double invariance_residual = 0.0;  // premise L J = J on base
  double invariance_tolerance = 0.0;
  PsdReport majorant;                // premise J >= K on base
  PsdReport conclusion;              // gram(J) - Kinf_est
  bool premises_hold() const noexcept {
    return invariance_residual <= invariance_tolerance && majorant.psd;
  }
};

MinimalityReport minimality_check(const GramMatrix& kinf_estimate, KernelPtr candidate, KernelPtr K,
                                  BranchSystemPtr system, double tol = kDefaultPsdTol);

// Rows are points, columns the concatenated square-root factors of gram(K)
// and of each gram(D_n): <v(s), v(t)> = K_N(s,t). block_offsets[n] is the
// first column of level n (0 = the K block), with a final end offset.
struct DefectEmbedding {
  Eigen::MatrixXd features;
  std::vector<Eigen::Index> block_offsets;

  Eigen::MatrixXd level_zero_block() const;
  Eigen::MatrixXd gram() const { return features * features.transpose(); }
};

DefectEmbedding defect_embedding(const TowerState& tower, double tol = kDefaultPsdTol);

}  // namespace kt
