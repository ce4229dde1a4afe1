#include "kt/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kt/errors.hpp"
#include "kt/io.hpp"
#include "kt/parallel.hpp"

namespace kt {

GaussianTowerSampler::GaussianTowerSampler(TowerState tower, std::uint64_t seed, double tol)
    : tower_(std::move(tower)), stream_(seed) {
  if (tower_.levels.empty()) throw ContractError("sampler needs a built tower");
  factors_.push_back(square_root_factor(tower_.levels.front().entries, tol, "factor of gram(K)"));
  for (std::size_t n = 0; n < tower_.defects.size(); ++n) {
    factors_.push_back(square_root_factor(tower_.defects[n].entries, tol, "factor of gram(D_" + std::to_string(n) + ")"));
  }
}

void GaussianTowerSampler::sample(std::uint64_t index, double* out) const {
  const auto p = static_cast<Eigen::Index>(points());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd g;
  for (std::size_t level = 0; level < factors_.size(); ++level) {
    const auto& F = factors_[level];
    g.resize(F.cols());
    stream_.fill(index, static_cast<std::uint32_t>(level), g.data(), static_cast<std::size_t>(g.size()));
    x.noalias() += F * g;
    std::copy(x.data(), x.data() + p, out + level * static_cast<std::size_t>(p));
  }
}

Eigen::MatrixXd FieldSampleBatch::level(std::size_t n) const {
  const auto p = points.size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < samples; ++i) {
    for (std::size_t a = 0; a < p; ++a) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = (*this)(i, n, a);
  }
  return m;
}

Eigen::MatrixXd FieldSampleBatch::increment(std::size_t n) const {
  return level(n + 1) - level(n);
}

FieldSampleBatch sample_fields(const GaussianTowerSampler& sampler, std::size_t nsamples, int threads) {
  if (nsamples < 1) throw InputError("sample_fields: nsamples must be at least 1");
  FieldSampleBatch batch;
  batch.seed = sampler.seed();
  batch.samples = nsamples;
  batch.levels = sampler.horizon() + 1;
  batch.points = sampler.tower().base;
  batch.labels = sampler.tower().labels;
  const std::size_t stride = batch.levels * batch.points.size();
  batch.values.resize(nsamples * stride);
  parallel_for(nsamples, threads, [&](std::size_t i) { sampler.sample(i, batch.values.data() + i * stride); });
  return batch;
}

CovarianceEstimate empirical_covariance(const Eigen::MatrixXd& samples, const std::vector<Point>& points) {
  if (samples.rows() < 2) throw InputError("empirical_covariance: needs at least 2 samples");
  if (samples.cols() != static_cast<Eigen::Index>(points.size())) {
    throw InputError("empirical_covariance: column count does not match the point list");
  }
  const double n = static_cast<double>(samples.rows());
  CovarianceEstimate out;
  out.estimate = GramMatrix{points, samples.transpose() * samples / n};
  const Eigen::MatrixXd& C = out.estimate.entries;
  const auto p = C.rows();
  out.standard_error.resize(p, p);
  for (Eigen::Index a = 0; a < p; ++a) {
    for (Eigen::Index b = 0; b < p; ++b) {
      out.standard_error(a, b) = std::sqrt(std::max(C(a, a) * C(b, b) + C(a, b) * C(a, b), 0.0) / n);
    }
  }
  return out;
}

CovarianceEstimate empirical_covariance(const FieldSampleBatch& batch, std::size_t level) {
  if (level >= batch.levels) throw InputError("empirical_covariance: level beyond the batch horizon");
  return empirical_covariance(batch.level(level), batch.points);
}

SigmaCheck sigma_check(std::string name, const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& target,
                       const Eigen::MatrixXd& standard_error, double sigmas, double floor) {
  SigmaCheck out;
  out.name = std::move(name);
  for (Eigen::Index a = 0; a < estimate.rows(); ++a) {
    for (Eigen::Index b = 0; b < estimate.cols(); ++b) {
      const double dev = std::abs(estimate(a, b) - target(a, b));
      const double se = standard_error(a, b);
      double z = 0.0;
      if (dev > floor) z = se > 0.0 ? dev / se : std::numeric_limits<double>::infinity();
      out.max_z = std::max(out.max_z, z);
      out.max_abs_dev = std::max(out.max_abs_dev, dev);
      ++out.entries;
    }
  }
  out.pass = out.max_z <= sigmas;
  return out;
}

bool MartingaleReport::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const SigmaCheck& c) { return c.pass; });
}

MartingaleReport martingale_checks(const FieldSampleBatch& batch, const TowerState& tower, double sigmas) {
  const std::size_t N = batch.levels - 1;
  if (N < 1) throw ContractError("martingale_checks needs horizon N >= 1");
  if (tower.defects.size() < N) throw ContractError("martingale_checks: tower horizon below the batch horizon");
  const double n = static_cast<double>(batch.samples);
  std::vector<Eigen::MatrixXd> inc;
  std::vector<CovarianceEstimate> cov;
  for (std::size_t k = 0; k < N; ++k) {
    inc.push_back(batch.increment(k));
    cov.push_back(empirical_covariance(inc.back(), batch.points));
  }
  MartingaleReport report;
  const double roundoff = 1e-12 * std::max(max_abs(tower.levels[N].entries), 1.0);
  const auto p = static_cast<Eigen::Index>(batch.points.size());

  // (i) means: each entry of a row vector, SE sqrt(C(a,a)/n)
  Eigen::MatrixXd means(static_cast<Eigen::Index>(N), p), mean_se(static_cast<Eigen::Index>(N), p);
  for (std::size_t k = 0; k < N; ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    means.row(row) = inc[k].colwise().mean();
    mean_se.row(row) = (cov[k].estimate.entries.diagonal() / n).cwiseSqrt().transpose();
  }
  report.checks.push_back(sigma_check("increment means", means, Eigen::MatrixXd::Zero(means.rows(), means.cols()),
                                      mean_se, sigmas));

  // (ii) cross-level covariances of increments k < l
  SigmaCheck cross;
  cross.name = "cross-level increment covariance";
  for (std::size_t k = 0; k < N; ++k) {
    for (std::size_t l = k + 1; l < N; ++l) {
      const Eigen::MatrixXd c = inc[k].transpose() * inc[l] / n;
      Eigen::MatrixXd se(p, p);
      for (Eigen::Index a = 0; a < p; ++a) {
        for (Eigen::Index b = 0; b < p; ++b) {
          se(a, b) = std::sqrt(cov[k].estimate(a, a) * cov[l].estimate(b, b) / n);
        }
      }
      const auto part = sigma_check(cross.name, c, Eigen::MatrixXd::Zero(p, p), se, sigmas);
      cross.max_z = std::max(cross.max_z, part.max_z);
      cross.max_abs_dev = std::max(cross.max_abs_dev, part.max_abs_dev);
      cross.entries += part.entries;
      cross.pass = cross.pass && part.pass;
    }
  }
  report.checks.push_back(cross);

  // (iii) quadratic variation
  for (std::size_t k = 0; k < N; ++k) {
    report.checks.push_back(sigma_check("increment covariance vs D_" + std::to_string(k), cov[k].estimate.entries,
                                        tower.defects[k].entries, cov[k].standard_error, sigmas, roundoff));
  }
  return report;
}

SigmaCheck centering_check(const FieldSampleBatch& batch, double sigmas) {
  const double n = static_cast<double>(batch.samples);
  const auto p = static_cast<Eigen::Index>(batch.points.size());
  Eigen::MatrixXd means(static_cast<Eigen::Index>(batch.levels), p), se(static_cast<Eigen::Index>(batch.levels), p);
  for (std::size_t k = 0; k < batch.levels; ++k) {
    const Eigen::MatrixXd x = batch.level(k);
    const auto row = static_cast<Eigen::Index>(k);
    means.row(row) = x.colwise().mean();
    se.row(row) = (x.colwise().squaredNorm() / n / n).cwiseSqrt();
  }
  return sigma_check("field means", means, Eigen::MatrixXd::Zero(means.rows(), means.cols()), se, sigmas);
}

LimitFields limit_fields(const GaussianTowerSampler& sampler, std::size_t nsamples, double tail_bound,
                         std::optional<double> tolerance, int threads) {
  if (nsamples < 1) throw InputError("limit_fields: nsamples must be at least 1");
  const auto& top = sampler.tower().levels.back();
  const double resolution = top.entries.diagonal().minCoeff() * std::sqrt(2.0 / static_cast<double>(nsamples));
  const double tol = tolerance.value_or(resolution);
  if (!(tail_bound <= tol)) {
    throw ContractError("limit_fields: truncation bound " + std::to_string(tail_bound) + " exceeds tolerance " +
                        std::to_string(tol) + "; build the tower to a larger horizon N");
  }
  const std::size_t p = sampler.points(), L = sampler.horizon() + 1;
  LimitFields out;
  out.points = sampler.tower().base;
  out.Z.resize(static_cast<Eigen::Index>(nsamples), static_cast<Eigen::Index>(p));
  out.Y.resize(static_cast<Eigen::Index>(nsamples), static_cast<Eigen::Index>(p));
  parallel_for(nsamples, threads, [&](std::size_t i) {
    std::vector<double> buffer(L * p);
    sampler.sample(i, buffer.data());
    for (std::size_t a = 0; a < p; ++a) {
      out.Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = buffer[(L - 1) * p + a];
      out.Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = buffer[a];
    }
  });
  return out;
}

BoundednessProbe boundedness_probe(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& base,
                                   std::size_t nsamples, std::size_t N, std::uint64_t seed,
                                   const ProbeOptions& options) {
  if (nsamples < 2) throw InputError("boundedness_probe: nsamples must be at least 2");
  GaussianTowerSampler sampler(build_tower(K, system, base, N, options.tower), seed, options.tower.tol);
  const auto batch = sample_fields(sampler, nsamples, options.threads);
  const double n = static_cast<double>(nsamples);
  const auto p = static_cast<Eigen::Index>(base.size());

  BoundednessProbe out;
  out.second_moments.resize(static_cast<Eigen::Index>(N + 1), p);
  for (std::size_t k = 0; k <= N; ++k) {
    out.second_moments.row(static_cast<Eigen::Index>(k)) = batch.level(k).colwise().squaredNorm() / n;
  }
  out.increment_moments.resize(static_cast<Eigen::Index>(N), p);
  Eigen::MatrixXd fourth(static_cast<Eigen::Index>(N), p);
  for (std::size_t k = 0; k < N; ++k) {
    const Eigen::MatrixXd d = batch.increment(k);
    out.increment_moments.row(static_cast<Eigen::Index>(k)) = d.colwise().squaredNorm() / n;
    fourth.row(static_cast<Eigen::Index>(k)) = d.array().square().square().colwise().sum() / n;
  }

  if (!(out.second_moments.row(static_cast<Eigen::Index>(N)).maxCoeff() <= options.ceiling)) {
    out.verdict = Verdict::diverging;
    out.reason = "second moment exceeds ceiling";
    return out;
  }
  if (N >= 1 && out.increment_moments.row(static_cast<Eigen::Index>(N - 1)).maxCoeff() == 0.0) {
    out.verdict = Verdict::converging;
    out.reason = "increments vanish at the last level";
    return out;
  }
  if (N < 2) {
    out.verdict = Verdict::inconclusive;
    out.reason = "need N >= 2 to estimate growth";
    return out;
  }

  // Ratio of the last two increment second moments per point, with a
  // delta-method standard error from the empirical fourth moments.
  bool all_shrink = true;
  const auto last = static_cast<Eigen::Index>(N - 1), prev = static_cast<Eigen::Index>(N - 2);
  for (Eigen::Index a = 0; a < p; ++a) {
    const double d1 = out.increment_moments(last, a), d0 = out.increment_moments(prev, a);
    if (d1 == 0.0) {
      out.growth_ratio.push_back(0.0);
      out.growth_ratio_se.push_back(0.0);
      continue;
    }
    if (d0 == 0.0) {
      out.growth_ratio.push_back(std::numeric_limits<double>::infinity());
      out.growth_ratio_se.push_back(0.0);
      all_shrink = false;
      continue;
    }
    const double rel1 = (fourth(last, a) - d1 * d1) / (n * d1 * d1);
    const double rel0 = (fourth(prev, a) - d0 * d0) / (n * d0 * d0);
    const double q = d1 / d0;
    const double se = q * std::sqrt(std::max(rel1 + rel0, 0.0));
    out.growth_ratio.push_back(q);
    out.growth_ratio_se.push_back(se);
    if (q - options.sigmas * se >= 1.0) {
      out.verdict = Verdict::diverging;
      out.reason = "increment second moments grow at " + system->label(base[static_cast<std::size_t>(a)]);
      return out;
    }
    if (!(q + options.sigmas * se < 1.0)) all_shrink = false;
  }
  if (all_shrink) {
    out.verdict = Verdict::converging;
    out.reason = "increment second moments shrink geometrically";
  } else {
    out.verdict = Verdict::inconclusive;
    out.reason = "increment growth not resolved at the sigma level";
  }
  return out;
}

void write_batch_csv(std::ostream& out, const FieldSampleBatch& batch) {
  write_csv_row(out, {"seed", "sample", "level", "point_label", "value"});
  const std::string seed = std::to_string(batch.seed);
  for (std::size_t i = 0; i < batch.samples; ++i) {
    for (std::size_t k = 0; k < batch.levels; ++k) {
      for (std::size_t a = 0; a < batch.points.size(); ++a) {
        write_csv_row(out, {seed, std::to_string(i), std::to_string(k), batch.labels[a], format_double(batch(i, k, a))});
      }
    }
  }
}

}  // namespace kt
