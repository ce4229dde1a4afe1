#pragma once

// Monte-Carlo realization of the Gaussian defect martingale on a finite
// base set: X_n = F_0 g_0 + sum_{k<n} F_{D_k} g_{k+1} with independent real
// standard normal vectors g_k and square-root factors F of gram(K), gram(D_k).

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kt/diagonal.hpp"
#include "kt/rng.hpp"
#include "kt/tower.hpp"

namespace kt {

inline constexpr double kSigmaThreshold = 5.0;

class GaussianTowerSampler {
 public:
  GaussianTowerSampler(TowerState tower, std::uint64_t seed, double tol = kDefaultPsdTol);

  const TowerState& tower() const noexcept { return tower_; }
  std::uint64_t seed() const noexcept { return stream_.seed(); }
  std::size_t horizon() const noexcept { return tower_.horizon; }
  std::size_t points() const noexcept { return tower_.base.size(); }
  // factors()[0] factors gram(K); factors()[k+1] factors gram(D_k).
  const std::vector<Eigen::MatrixXd>& factors() const noexcept { return factors_; }

  // Writes X_0 .. X_N of one sample into out (level-major, N+1 rows of
  // points()). Depends only on (seed, sample).
  void sample(std::uint64_t index, double* out) const;

 private:
  TowerState tower_;
  NormalStream stream_;
  std::vector<Eigen::MatrixXd> factors_;
};

struct FieldSampleBatch {
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  std::size_t levels = 0;  // N + 1
  std::vector<Point> points;
  std::vector<std::string> labels;
  std::vector<double> values;  // (sample, level, point) row-major

  double operator()(std::size_t sample, std::size_t level, std::size_t point) const {
    return values[(sample * levels + level) * points.size() + point];
  }
  // samples x points matrix of X_level
  Eigen::MatrixXd level(std::size_t n) const;
  // samples x points matrix of X_{n+1} - X_n
  Eigen::MatrixXd increment(std::size_t n) const;
};

FieldSampleBatch sample_fields(const GaussianTowerSampler& sampler, std::size_t nsamples, int threads = 1);

struct CovarianceEstimate {
  GramMatrix estimate;             // (1/n) sum_k x_k x_k^T, no mean subtracted
  Eigen::MatrixXd standard_error;  // sqrt((C(s,s) C(t,t) + C(s,t)^2) / n), plug-in
};

// Rows of `samples` are draws of a centered vector indexed by points.
CovarianceEstimate empirical_covariance(const Eigen::MatrixXd& samples, const std::vector<Point>& points);
CovarianceEstimate empirical_covariance(const FieldSampleBatch& batch, std::size_t level);

// One family of entrywise comparisons |estimate - target| <= k sigma.
struct SigmaCheck {
  std::string name;
  double max_z = 0.0;      // worst |estimate - target| / standard error
  double max_abs_dev = 0.0;
  std::size_t entries = 0;
  bool pass = true;
};

// Deviations up to `floor` count as exact matches; otherwise zero standard
// error fails.
SigmaCheck sigma_check(std::string name, const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& target,
                       const Eigen::MatrixXd& standard_error, double sigmas = kSigmaThreshold,
                       double floor = 0.0);

struct MartingaleReport {
  std::vector<SigmaCheck> checks;  // means, cross-level, per-level quadratic variation
  bool pass() const;
};

// (i) increment means ~ 0, (ii) cross-level increment covariances ~ 0,
// (iii) level-n increment covariance ~ gram(D_n). Needs N >= 1.
MartingaleReport martingale_checks(const FieldSampleBatch& batch, const TowerState& tower,
                                   double sigmas = kSigmaThreshold);

// sqrt(n) * sample mean of every level and point within sigmas of 0.
SigmaCheck centering_check(const FieldSampleBatch& batch, double sigmas = kSigmaThreshold);

struct LimitFields {
  std::vector<Point> points;
  Eigen::MatrixXd Z;  // X_N, surrogate for the level-infinity field
  Eigen::MatrixXd Y;  // level-0 component F_0 g_0
};

// ContractError when tail_bound exceeds tolerance; the default tolerance is
// the statistical resolution min_a K_N(a,a) sqrt(2 / nsamples).
LimitFields limit_fields(const GaussianTowerSampler& sampler, std::size_t nsamples, double tail_bound,
                         std::optional<double> tolerance = std::nullopt, int threads = 1);

struct BoundednessProbe {
  Verdict verdict = Verdict::inconclusive;
  std::string reason;
  Eigen::MatrixXd second_moments;      // (N+1) x points, mean X_n(a)^2
  Eigen::MatrixXd increment_moments;   // N x points, mean (X_{n+1}-X_n)(a)^2
  std::vector<double> growth_ratio;    // per point, last two increment moments
  std::vector<double> growth_ratio_se;
};

struct ProbeOptions {
  double ceiling = kDefaultCeiling;
  double sigmas = kSigmaThreshold;
  int threads = 1;
  TowerOptions tower;
};

// Bounded (converging) when the last increment moments vanish or shrink
// geometrically at the sigma level; unbounded (diverging) above the ceiling
// or when they grow; inconclusive otherwise.
BoundednessProbe boundedness_probe(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& base,
                                   std::size_t nsamples, std::size_t N, std::uint64_t seed,
                                   const ProbeOptions& options = {});

// Columns: seed, sample, level, point_label, value.
void write_batch_csv(std::ostream& out, const FieldSampleBatch& batch);

}  // namespace kt
