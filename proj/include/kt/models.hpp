#pragma once

// Builtin models with closed-form oracles, and user-defined finite-state
// models.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kt/certificate.hpp"
#include "kt/kernel.hpp"
#include "kt/point_space.hpp"

namespace kt {

// Closed-form tower data. Oracles never run the tower, so tests can use
// them as independent references.
class ClosedForm {
 public:
  virtual ~ClosedForm() = default;
  virtual double K_n(std::size_t n, Point s, Point t) const = 0;
  virtual double D_n(std::size_t n, Point s, Point t) const = 0;
  virtual double K_infinity(Point s, Point t) const = 0;
  // Harmonic gauge h = K_infinity diagonal.
  virtual double h(Point s) const { return K_infinity(s, s); }
};

struct Model {
  std::string name;
  BranchSystemPtr system;
  KernelPtr kernel;
  std::shared_ptr<const ClosedForm> oracle;       // null unless builtin
  std::optional<LyapunovCandidate> certificate;   // declared, not yet verified
  std::vector<Point> default_base;
};

struct WordTreeParams {
  int m = 2;
  double r = 0.5;
  double c = 0.5;
  double eta = 1.0;
};

// Word dynamics on the m-ary tree with prefix maps and
//   J0(u,v) = m^-|u| [u=v],  J1(u,v) = m^-(|u|+|v|)/2,
//   E(u,v)  = c r^|u| m^-|u| [u=v],  J = J0 + eta J1,  K = J - E.
// Then L J = J, L E = r E, so K_n = J - r^n E, D_n = r^n (1-r) E, K_inf = J.
// Kernels and models returned by the accessors share ownership of the
// instance, so it must be held by a shared_ptr (see make_word_tree).
class WordTreeModel final : public ClosedForm,
                            public std::enable_shared_from_this<WordTreeModel> {
 public:
  explicit WordTreeModel(WordTreeParams params);

  const WordTreeParams& params() const noexcept { return params_; }
  std::shared_ptr<const WordTreeSystem> system() const noexcept { return system_; }

  KernelPtr J0() const;
  KernelPtr J1() const;
  KernelPtr E() const;
  KernelPtr J() const;
  KernelPtr K() const;

  double K_n(std::size_t n, Point s, Point t) const override;
  double D_n(std::size_t n, Point s, Point t) const override;
  double K_infinity(Point s, Point t) const override;
  double h(Point s) const override;

  // r(s) = (r/m)^|s|, C = (1-r) c, beta = r: d0 <= C r and P r = beta r.
  LyapunovCandidate defect_certificate() const;

  Model model() const;            // kernel K
  Model invariant_model() const;  // kernel J (fixed point of L)

 private:
  double j0(Point u, Point v) const;
  double j1(Point u, Point v) const;
  double e(Point u, Point v) const;

  WordTreeParams params_;
  std::shared_ptr<const WordTreeSystem> system_;
  std::vector<double> inv_m_pow_;       // m^-k
  std::vector<double> inv_m_half_pow_;  // m^-(k/2), k up to 2*max_length
  std::vector<double> r_pow_;           // r^k
};

std::shared_ptr<const WordTreeModel> make_word_tree(WordTreeParams params);

// K(u,v) = [u=v] on the m-ary word tree. L K - K = (m-1) K and u_n = m^n.
Model make_delta_model(int m);

struct FiniteStateSpec {
  std::vector<std::vector<int>> maps;        // m tables of length S, 0-based
  std::vector<std::vector<double>> kernel;   // S x S symmetric PSD
  std::optional<LyapunovCandidate> certificate;
  std::string name = "finite_state";
};

// Four states, two maps phi_1 = [1,1,2,3], phi_2 = [2,3,3,3]; state 3 is an
// absorbing sink carrying no kernel mass. The kernel is the L-invariant
// table [[2,1,0,0],[1,1,0,0],[0,0,1,0],[0,0,0,0]] minus deficit at (0,0),
// so D_0 = deficit e_0 e_0^T, the tower is constant from level 1 on and
// the harmonic gauge is (2,1,1,0).
FiniteStateSpec sink_chain_spec(double deficit = 0.5);

// Validates map ranges, kernel symmetry and PSD-ness at `tol`.
Model load_finite_state(const FiniteStateSpec& spec, double tol = kDefaultPsdTol);

// Closed-form values; ContractError when the model has no oracle.
double oracle_K_n(const Model& model, std::size_t n, Point s, Point t);
double oracle_defect(const Model& model, std::size_t n, Point s, Point t);

}  // namespace kt
