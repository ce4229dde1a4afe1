#pragma once

// Doob transform of the branching dynamics by a P-harmonic gauge h:
// transition probabilities p_i(s) = h(phi_i s)/h(s), cylinder measures,
// the Markov operator Q, h-normalized kernels and the normalized operator
// L~, and the truncated boundary feature map.
//
// Words extend by appending: phi^_{w i} = phi_i o phi^_w, so phi^_w applies
// w[0] first (compose_reversed) and p_w(s) = h(phi^_w s)/h(s) factors as the
// product of step probabilities along s_0 = s, s_k = phi_{w[k-1]}(s_{k-1}).

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "kt/diagonal.hpp"
#include "kt/tower.hpp"

namespace kt {

class DoobChain {
 public:
  PointFunction h;
  BranchSystemPtr system;
  std::vector<Point> domain;        // points where harmonicity was validated
  std::vector<Point> excluded;      // requested points with h = 0
  double harmonic_residual = 0.0;   // max |P h - h| / h on domain
  double tolerance = 0.0;
  std::string gauge;                // "oracle" or "computed"

  // h(s); InputError (domain error) unless h(s) > 0.
  double gauge_at(Point s) const;
  double p(int i, Point s) const;
  // p_w(s) = h(phi^_w s)/h(s)
  double p_word(const Word& w, Point s) const;
};

// Points with h = 0 are moved to `excluded`; negative or non-finite h is an
// InputError, as is an empty domain. Harmonicity
// |sum_i h(phi_i s) - h(s)| <= tol h(s) is checked on the rest (ModelError
// naming the worst point).
DoobChain build_doob(PointFunction h, BranchSystemPtr system, const std::vector<Point>& domain, double tol = 1e-12,
                     std::string gauge = "oracle");

// Gauge u_N(s) = (L^N K)(s,s), for models without a closed-form K_inf.
PointFunction computed_gauge(KernelPtr K, BranchSystemPtr system, std::size_t N, const Limits& limits = {});

struct CylinderTable {
  Point anchor;
  std::string anchor_label;
  std::size_t horizon = 0;
  std::vector<std::vector<double>> levels;  // levels[k][j]: j-th word of length k, lexicographic
  double max_level_sum_error = 0.0;         // max_k |sum_j levels[k][j] - 1|
  double max_consistency_error = 0.0;       // max |p_w - sum_i p_{w i}|
  double max_chain_rule_error = 0.0;        // max |p_w - prod of step probabilities|
};

// Each level is filled in parallel over its cylinders.
CylinderTable cylinder_measure(const DoobChain& chain, Point s, std::size_t n, const Limits& limits = {},
                               int threads = 1);

// Columns: anchor_label, word, probability.
void write_cylinder_csv(std::ostream& out, const BranchSystem& system, const std::vector<CylinderTable>& tables);

struct SamplePath {
  Word word;
  std::vector<Point> states;   // s_0 .. s_n
  double probability = 1.0;    // product of the step probabilities
};

// Path `index` of the stream keyed by seed; symbol k+1 is drawn with
// probabilities p_i(s_k).
SamplePath sample_path(const DoobChain& chain, Point s, std::size_t n, std::uint64_t seed, std::uint64_t index = 0);

// (Q f)(s) = sum_i p_i(s) f(phi_i s); branches with p_i(s) = 0 are skipped.
double apply_Q(const DoobChain& chain, const PointFunction& f, Point s);

// Q^n f(s) by recursion over the branch tree.
double apply_Q_power(const DoobChain& chain, const PointFunction& f, Point s, std::size_t n);

struct IntertwiningResiduals {
  double one_step = 0.0;  // |P(h f)(s) - h(s) (Q f)(s)|, relative
  double n_step = 0.0;    // |Q^n f(s) - sum_{|w|=n} p_w(s) f(phi^_w s)|, relative
};

IntertwiningResiduals intertwining_check(const DoobChain& chain, const PointFunction& f, Point s, std::size_t n,
                                         const Limits& limits = {});

// J^(h)(s,t) = J(s,t) / (h(s) h(t)); InputError with the point label when
// h vanishes.
KernelPtr h_normalize(KernelPtr J, const DoobChain& chain);

// (L~ G)(s,t) = sum_i p_i(s) p_i(t) G(phi_i s, phi_i t), memoized per pair;
// terms with zero weight are skipped.
KernelPtr apply_L_tilde(KernelPtr G, const DoobChain& chain, std::size_t memo_capacity = std::size_t{1} << 20);

// max over F of |(L^n J)^(h) - L~^n(J^(h))| relative to max(max |(L^n J)^(h)|, 1).
double normalization_commutes(KernelPtr J, const DoobChain& chain, const std::vector<Point>& F, std::size_t n,
                              const Limits& limits = {});

// sum_{|w|=n} p_w(s) p_w(t) G(phi^_w s, phi^_w t)
double tilde_word_expansion(KernelPtr G, const DoobChain& chain, Point s, Point t, std::size_t n,
                            const Limits& limits = {});

// Per-level cylinder masses nu([w]) for |w| < levels.
struct CylinderWeights {
  std::vector<std::vector<double>> levels;

  // nu([w]) = prod_k q[w_k - 1]
  static CylinderWeights bernoulli(const std::vector<double>& q, std::size_t levels);
};

struct BoundaryGram {
  GramMatrix gram;               // <Psi_N(s), Psi_N(t)> on the tower base
  Eigen::MatrixXd features;      // rows: base points
  std::size_t section_points = 0;
  double residual = 0.0;         // vs sum_{n<N} D_n^(h) from the tower
  double identity_residual = 0.0;  // K_N^(h) - K^(h) - gram
};

// Features Psi_N(s) with (n, w) fiber p_w(s)/sqrt(nu[w]) times the section
// of D_0^(h) at phi^_w s, sections from a square-root factor of gram(D_0^(h))
// on the points phi^_w(s), |w| < N. Coordinates are stored in the isometric
// Euclidean form (fiber scaled by sqrt(nu[w])).
BoundaryGram boundary_feature_gram(KernelPtr K, const TowerState& tower, const DoobChain& chain,
                                   const CylinderWeights& nu, std::size_t N, double tol = kDefaultPsdTol);

}  // namespace kt
