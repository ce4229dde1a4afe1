#include "kt/kernel.hpp"

#include <algorithm>
#include <cmath>

#include "kt/errors.hpp"

namespace kt {

namespace {

class FunctionKernel final : public Kernel {
 public:
  FunctionKernel(std::string name, std::function<double(Point, Point)> f)
      : name_(std::move(name)), f_(std::move(f)) {}
  double operator()(Point s, Point t) const override { return f_(s, t); }
  std::string name() const override { return name_; }

 private:
  std::string name_;
  std::function<double(Point, Point)> f_;
};

class LinearCombination final : public Kernel {
 public:
  LinearCombination(double a, KernelPtr x, double b, KernelPtr y, std::string name)
      : a_(a), b_(b), x_(std::move(x)), y_(std::move(y)), name_(std::move(name)) {}
  double operator()(Point s, Point t) const override {
    double v = a_ * (*x_)(s, t);
    if (y_) v += b_ * (*y_)(s, t);
    return v;
  }
  std::string name() const override { return name_; }

 private:
  double a_, b_;
  KernelPtr x_, y_;
  std::string name_;
};

std::string point_text(Point p, const BranchSystem* system) {
  return system ? system->label(p) : "#" + std::to_string(p.id);
}

}  // namespace

KernelPtr make_kernel(std::string name, std::function<double(Point, Point)> evaluate) {
  return std::make_shared<FunctionKernel>(std::move(name), std::move(evaluate));
}

KernelPtr zero_kernel() {
  return make_kernel("zero", [](Point, Point) { return 0.0; });
}

KernelPtr sum(KernelPtr a, KernelPtr b) {
  auto name = a->name() + "+" + b->name();
  return std::make_shared<LinearCombination>(1.0, std::move(a), 1.0, std::move(b), std::move(name));
}

KernelPtr difference(KernelPtr a, KernelPtr b) {
  auto name = a->name() + "-" + b->name();
  return std::make_shared<LinearCombination>(1.0, std::move(a), -1.0, std::move(b), std::move(name));
}

KernelPtr scaled(double factor, KernelPtr k) {
  auto name = std::to_string(factor) + "*" + k->name();
  return std::make_shared<LinearCombination>(factor, std::move(k), 0.0, nullptr, std::move(name));
}

GramMatrix gram(const Kernel& kernel, const std::vector<Point>& points, const BranchSystem* system) {
  if (points.empty()) throw InputError("gram: empty point list");
  const auto n = static_cast<Eigen::Index>(points.size());
  GramMatrix g{points, Eigen::MatrixXd(n, n)};
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a; b < n; ++b) {
      const Point s = points[static_cast<std::size_t>(a)];
      const Point t = points[static_cast<std::size_t>(b)];
      double v = 0.0;
      try {
        v = kernel(s, t);
      } catch (const Error& e) {
        rethrow_with_context(e, "evaluating " + kernel.name() + " at (" + point_text(s, system) + ", " +
                                    point_text(t, system) + "): ");
      }
      g.entries(a, b) = v;
      g.entries(b, a) = v;
    }
  }
  return g;
}

double PsdReport::threshold() const noexcept { return -tolerance * std::max(scale, 1.0); }

PsdReport psd_check(const Eigen::MatrixXd& matrix, double tol) {
  if (matrix.rows() != matrix.cols() || matrix.rows() == 0) {
    throw InputError("psd_check: matrix must be square and nonempty");
  }
  if (!matrix.allFinite()) throw InputError("psd_check: non-finite entries");
  PsdReport report;
  report.tolerance = tol;
  report.scale = matrix.diagonal().cwiseAbs().maxCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(matrix, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("psd_check: eigensolver failed");
  report.min_eigenvalue = solver.eigenvalues().minCoeff();
  report.psd = report.min_eigenvalue >= report.threshold();
  return report;
}

PsdReport psd_check(const GramMatrix& g, double tol) { return psd_check(g.entries, tol); }

PsdReport psd_leq(const GramMatrix& lower, const GramMatrix& upper, double tol) {
  if (lower.points != upper.points) throw InputError("psd_leq: point lists differ");
  return psd_check(Eigen::MatrixXd(upper.entries - lower.entries), tol);
}

namespace {

constexpr double kRoundoffEigen = 1e-14;

Eigen::MatrixXd clipped_factor(const Eigen::MatrixXd& matrix, double tol, const std::string& what) {
  const double scale = std::max(matrix.diagonal().cwiseAbs().maxCoeff(), 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(matrix);
  if (solver.info() != Eigen::Success) throw NumericalError(what + ": eigensolver failed");
  Eigen::VectorXd values = solver.eigenvalues();
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    // roundoff-level eigenvalues carry no signal; dropping them keeps exact
    // zero Grams (e.g. defects of an invariant kernel) at an exact zero factor
    if (std::abs(values(k)) <= kRoundoffEigen * scale) {
      values(k) = 0.0;
    } else if (values(k) < 0.0) {
      if (values(k) < -tol * scale) {
        throw NumericalError(what + ": not PSD (eigenvalue " + std::to_string(values(k)) +
                             " below -" + std::to_string(tol) + "*scale)");
      }
      values(k) = 0.0;
    }
  }
  return solver.eigenvectors() * values.cwiseSqrt().asDiagonal();
}

}  // namespace

Eigen::MatrixXd square_root_factor(const Eigen::MatrixXd& matrix, double tol, const std::string& what) {
  if (matrix.rows() != matrix.cols()) throw InputError(what + ": factor of non-square matrix");
  if (matrix.rows() == 0) return matrix;
  if (!matrix.allFinite()) throw NumericalError(what + ": non-finite entries");
  const double scale = std::max(matrix.diagonal().cwiseAbs().maxCoeff(), 1.0);
  Eigen::MatrixXd factor = clipped_factor(matrix, tol, what);
  if (max_abs_diff(factor * factor.transpose(), matrix) <= 1e-10 * scale) return factor;

  Eigen::MatrixXd jittered = matrix;
  jittered.diagonal().array() += 1e-12 * scale;
  factor = clipped_factor(jittered, tol, what);
  if (max_abs_diff(factor * factor.transpose(), matrix) > 1e-10 * scale) {
    throw NumericalError(what + ": square-root factor does not reproduce the matrix");
  }
  return factor;
}

double max_abs(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError("max_abs_diff: shape mismatch");
  return max_abs(a - b);
}

}  // namespace kt
