#pragma once

// Kernel evaluation, Gram matrices and the Loewner (PSD) order.

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kt/point_space.hpp"

namespace kt {

inline constexpr double kDefaultPsdTol = 1e-9;

// Real symmetric kernel on points. Implementations must be safe to call
// concurrently.
class Kernel {
 public:
  virtual ~Kernel() = default;
  virtual double operator()(Point s, Point t) const = 0;
  virtual std::string name() const = 0;
};

using KernelPtr = std::shared_ptr<const Kernel>;

KernelPtr make_kernel(std::string name, std::function<double(Point, Point)> evaluate);
KernelPtr zero_kernel();
KernelPtr sum(KernelPtr a, KernelPtr b);
KernelPtr difference(KernelPtr a, KernelPtr b);
KernelPtr scaled(double factor, KernelPtr k);

struct GramMatrix {
  std::vector<Point> points;
  Eigen::MatrixXd entries;

  std::size_t size() const noexcept { return points.size(); }
  double operator()(std::size_t a, std::size_t b) const { return entries(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)); }
  double trace() const { return entries.trace(); }
};

// entries[a][b] = kernel(x_a, x_b), evaluated once per unordered pair.
// Evaluation errors are rethrown in their original category with the
// offending point labels (taken from `system` when given).
GramMatrix gram(const Kernel& kernel, const std::vector<Point>& points,
                const BranchSystem* system = nullptr);

struct PsdReport {
  double min_eigenvalue = 0.0;
  double scale = 0.0;  // max |diagonal|
  double tolerance = kDefaultPsdTol;
  bool psd = false;

  // -tol * max(scale, 1); psd <=> min_eigenvalue >= threshold().
  double threshold() const noexcept;
};

PsdReport psd_check(const Eigen::MatrixXd& matrix, double tol = kDefaultPsdTol);
PsdReport psd_check(const GramMatrix& g, double tol = kDefaultPsdTol);

// PSD report of upper - lower: verdict PSD means lower <= upper.
PsdReport psd_leq(const GramMatrix& lower, const GramMatrix& upper, double tol = kDefaultPsdTol);

// R with R R^T = matrix. Eigenvalues in [-tol*scale, 0) are clipped to
// zero; anything more negative is a NumericalError naming `what`. If the
// clipped factor fails to reproduce the matrix to 1e-10 relative, one
// retry is made with 1e-12*scale jitter on the diagonal.
Eigen::MatrixXd square_root_factor(const Eigen::MatrixXd& matrix, double tol,
                                   const std::string& what);

double max_abs(const Eigen::MatrixXd& m);
double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace kt
