#include "kt/tower.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kt/errors.hpp"
#include "kt/pair_memo.hpp"
#include "kt/parallel.hpp"

namespace kt {

namespace {

class BranchedKernel final : public Kernel {
 public:
  BranchedKernel(KernelPtr inner, BranchSystemPtr system, std::size_t capacity)
      : inner_(std::move(inner)), system_(std::move(system)), memo_(capacity) {}

  double operator()(Point s, Point t) const override {
    if (auto hit = memo_.find(s, t)) return *hit;
    double v = 0.0;
    for (int i = 1; i <= system_->arity(); ++i) {
      v += (*inner_)(system_->apply(i, s), system_->apply(i, t));
    }
    memo_.store(s, t, v);
    return v;
  }

  std::string name() const override { return "L(" + inner_->name() + ")"; }

 private:
  KernelPtr inner_;
  BranchSystemPtr system_;
  mutable PairMemo memo_;
};

// Adds K(x, y) at every node of the synchronous branch tree below (s, t)
// into sums[depth]. The nodes at depth n are the pairs (phi_w s, phi_w t)
// for |w| = n, so sums[n] = (L^n K)(s, t).
void branch_sums(const Kernel& K, const BranchSystem& system, Point s, Point t, std::size_t depth,
                 std::size_t horizon, bool all_levels, std::vector<double>& sums) {
  if (all_levels || depth == horizon) sums[depth] += K(s, t);
  if (depth == horizon) return;
  for (int i = 1; i <= system.arity(); ++i) {
    branch_sums(K, system, system.apply(i, s), system.apply(i, t), depth + 1, horizon, all_levels, sums);
  }
}

class LevelKernel final : public Kernel {
 public:
  LevelKernel(KernelPtr inner, BranchSystemPtr system, std::size_t n)
      : inner_(std::move(inner)), system_(std::move(system)), n_(n) {}
  double operator()(Point s, Point t) const override {
    std::vector<double> sums(n_ + 1, 0.0);
    branch_sums(*inner_, *system_, s, t, 0, n_, false, sums);
    return sums[n_];
  }
  std::string name() const override { return "L^" + std::to_string(n_) + "(" + inner_->name() + ")"; }

 private:
  KernelPtr inner_;
  BranchSystemPtr system_;
  std::size_t n_;
};

// Orbit closure that is closed under every map, with successor tables.
struct SaturatedClosure {
  std::vector<Point> points;
  std::vector<std::vector<std::size_t>> successor;  // successor[i-1][a]
  std::vector<std::size_t> base_index;
};

std::optional<SaturatedClosure> saturated_closure(const BranchSystem& system, const std::vector<Point>& base,
                                                  std::size_t cap) {
  SaturatedClosure out;
  std::unordered_map<Point, std::size_t, PointHash> index;
  auto intern = [&](Point p) -> std::optional<std::size_t> {
    if (auto it = index.find(p); it != index.end()) return it->second;
    if (out.points.size() >= cap) return std::nullopt;
    index.emplace(p, out.points.size());
    out.points.push_back(p);
    return out.points.size() - 1;
  };
  for (Point p : base) {
    auto k = intern(p);
    if (!k) return std::nullopt;
    out.base_index.push_back(*k);
  }
  const auto m = static_cast<std::size_t>(system.arity());
  out.successor.assign(m, {});
  for (std::size_t a = 0; a < out.points.size(); ++a) {
    for (std::size_t i = 0; i < m; ++i) {
      auto k = intern(system.apply(static_cast<int>(i) + 1, out.points[a]));
      if (!k) return std::nullopt;
      out.successor[i].push_back(*k);
    }
  }
  return out;
}

// Produces K_0, K_1, ... on a base set, either by dense recursion on a
// saturated closure or by branch-tree sums.
class TowerEngine {
 public:
  TowerEngine(KernelPtr K, BranchSystemPtr system, std::vector<Point> base, const TowerOptions& options)
      : K_(std::move(K)), system_(std::move(system)), base_(std::move(base)), options_(options) {
    if (base_.empty()) throw InputError("tower: empty base point set");
    closure_ = saturated_closure(*system_, base_, options_.dense_cap);
    for (std::size_t a = 0; a < base_.size(); ++a) {
      for (std::size_t b = a; b < base_.size(); ++b) pairs_.emplace_back(a, b);
    }
  }

  bool dense() const noexcept { return closure_.has_value(); }

  // K_0 .. K_horizon on base.
  std::vector<GramMatrix> levels(std::size_t horizon) {
    if (dense()) {
      std::vector<GramMatrix> out;
      for (std::size_t n = 0; n <= horizon; ++n) out.push_back(next());
      return out;
    }
    checked_word_count(system_->arity(), horizon, options_.limits);
    std::vector<std::vector<double>> sums(pairs_.size(), std::vector<double>(horizon + 1, 0.0));
    parallel_for(pairs_.size(), options_.threads, [&](std::size_t k) {
      const auto [a, b] = pairs_[k];
      branch_sums(*K_, *system_, base_[a], base_[b], 0, horizon, true, sums[k]);
    });
    std::vector<GramMatrix> out;
    for (std::size_t n = 0; n <= horizon; ++n) {
      out.push_back(assemble([&](std::size_t k) { return sums[k][n]; }));
    }
    return out;
  }

  // Successive levels K_0, K_1, ... one per call.
  GramMatrix next() {
    const std::size_t n = produced_++;
    if (dense()) {
      const auto& c = *closure_;
      const auto size = static_cast<Eigen::Index>(c.points.size());
      if (n == 0) {
        current_ = gram(*K_, c.points, system_.get()).entries;
      } else {
        Eigen::MatrixXd next(size, size);
        parallel_for(static_cast<std::size_t>(size), options_.threads, [&](std::size_t a) {
          for (Eigen::Index b = 0; b < size; ++b) {
            double v = 0.0;
            for (const auto& succ : c.successor) {
              v += current_(static_cast<Eigen::Index>(succ[a]), static_cast<Eigen::Index>(succ[static_cast<std::size_t>(b)]));
            }
            next(static_cast<Eigen::Index>(a), b) = v;
          }
        });
        current_ = std::move(next);
      }
      return assemble([&](std::size_t k) {
        const auto [a, b] = pairs_[k];
        return current_(static_cast<Eigen::Index>(c.base_index[a]), static_cast<Eigen::Index>(c.base_index[b]));
      });
    }
    checked_word_count(system_->arity(), n, options_.limits);
    std::vector<double> values(pairs_.size());
    parallel_for(pairs_.size(), options_.threads, [&](std::size_t k) {
      const auto [a, b] = pairs_[k];
      std::vector<double> sums(n + 1, 0.0);
      branch_sums(*K_, *system_, base_[a], base_[b], 0, n, false, sums);
      values[k] = sums[n];
    });
    return assemble([&](std::size_t k) { return values[k]; });
  }

 private:
  template <class F>
  GramMatrix assemble(F&& value_of_pair) const {
    const auto n = static_cast<Eigen::Index>(base_.size());
    GramMatrix g{base_, Eigen::MatrixXd(n, n)};
    for (std::size_t k = 0; k < pairs_.size(); ++k) {
      const auto a = static_cast<Eigen::Index>(pairs_[k].first);
      const auto b = static_cast<Eigen::Index>(pairs_[k].second);
      g.entries(a, b) = g.entries(b, a) = value_of_pair(k);
    }
    return g;
  }

  KernelPtr K_;
  BranchSystemPtr system_;
  std::vector<Point> base_;
  TowerOptions options_;
  std::optional<SaturatedClosure> closure_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  Eigen::MatrixXd current_;
  std::size_t produced_ = 0;
};

std::vector<Point> precheck_points(const BranchSystem& system, const std::vector<Point>& base,
                                   std::size_t horizon, const TowerOptions& options) {
  std::vector<Point> points = orbit_closure(system, base, 0, options.limits);
  for (std::size_t depth = 1; depth <= horizon; ++depth) {
    auto wider = orbit_closure(system, base, depth, options.limits);
    if (wider.size() > options.precheck_points) break;
    if (wider.size() == points.size()) break;
    points = std::move(wider);
  }
  return points;
}

}  // namespace

KernelPtr apply_L(KernelPtr J, BranchSystemPtr system, std::size_t memo_capacity) {
  return std::make_shared<BranchedKernel>(std::move(J), std::move(system), memo_capacity);
}

KernelPtr level_kernel(KernelPtr K, BranchSystemPtr system, std::size_t n, Limits limits) {
  checked_word_count(system->arity(), n, limits);
  return std::make_shared<LevelKernel>(std::move(K), std::move(system), n);
}

PsdReport subinvariance_check(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& points, double tol) {
  auto defect = difference(apply_L(K, system), K);
  return psd_check(gram(*defect, points, system.get()), tol);
}

TowerState build_tower(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& base,
                       std::size_t horizon, const TowerOptions& options) {
  TowerState state;
  state.base = base;
  state.labels = labels(*system, base);
  state.horizon = horizon;

  const auto check_set = precheck_points(*system, base, horizon, options);
  state.precheck_size = check_set.size();
  state.precheck = subinvariance_check(K, system, check_set, options.tol);
  if (!state.precheck.psd) {
    throw ModelError("subinvariance L K >= K fails on " + std::to_string(check_set.size()) +
                     " orbit points (min eigenvalue of L K - K: " +
                     std::to_string(state.precheck.min_eigenvalue) + ")");
  }

  TowerEngine engine(K, system, base, options);
  state.strategy = engine.dense() ? "dense" : "recursive";
  state.levels = engine.levels(horizon);
  for (std::size_t n = 0; n < horizon; ++n) {
    GramMatrix d{base, state.levels[n + 1].entries - state.levels[n].entries};
    PsdReport report = psd_check(d, options.tol);
    if (!report.psd) {
      throw ModelError("defect D_" + std::to_string(n) + " is not PSD (min eigenvalue " +
                       std::to_string(report.min_eigenvalue) + ", threshold " +
                       std::to_string(report.threshold()) + ")");
    }
    state.trace_increments.push_back(d.trace());
    state.defect_reports.push_back(report);
    state.defects.push_back(std::move(d));
  }
  return state;
}

GramMatrix level_via_words(const Kernel& K, const BranchSystem& system, const std::vector<Point>& base,
                           std::size_t n, const Limits& limits) {
  if (base.empty()) throw InputError("level_via_words: empty base point set");
  const auto words = enumerate_words(system.arity(), n, limits);
  const auto size = static_cast<Eigen::Index>(base.size());
  GramMatrix g{base, Eigen::MatrixXd(size, size)};
  // Images phi_w(x) for every base point, one column per word.
  std::vector<std::vector<Point>> images(base.size(), std::vector<Point>(words.size()));
  for (std::size_t a = 0; a < base.size(); ++a) {
    for (std::size_t k = 0; k < words.size(); ++k) images[a][k] = compose_forward(system, words[k], base[a]);
  }
  for (Eigen::Index a = 0; a < size; ++a) {
    for (Eigen::Index b = a; b < size; ++b) {
      double v = 0.0;
      for (std::size_t k = 0; k < words.size(); ++k) {
        v += K(images[static_cast<std::size_t>(a)][k], images[static_cast<std::size_t>(b)][k]);
      }
      g.entries(a, b) = g.entries(b, a) = v;
    }
  }
  return g;
}

GramMatrix defect_via_words(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& base,
                            std::size_t n, const Limits& limits) {
  auto d0 = difference(apply_L(K, system), K);
  return level_via_words(*d0, *system, base, n, limits);
}

double telescoping_residual(const TowerState& tower) {
  Eigen::MatrixXd sum = tower.levels.front().entries;
  for (const auto& d : tower.defects) sum += d.entries;
  const auto& top = tower.levels.back().entries;
  return max_abs_diff(top, sum) / std::max(max_abs(top), 1.0);
}

std::string_view to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::converged: return "converged";
    case StopReason::max_level: return "max_level";
    case StopReason::resource_cap: return "resource_cap";
  }
  return "unknown";
}

double extrapolated_tail(const std::vector<double>& increments) {
  if (increments.empty()) return std::numeric_limits<double>::infinity();
  const double last = increments.back();
  if (last <= 0.0) return 0.0;
  if (increments.size() < 2) return std::numeric_limits<double>::infinity();
  const double prev = increments[increments.size() - 2];
  if (prev <= 0.0) return std::numeric_limits<double>::infinity();
  const double q = last / prev;
  if (q >= 1.0) return std::numeric_limits<double>::infinity();
  return last * q / (1.0 - q);
}

KInfinityEstimate estimate_K_infinity(KernelPtr K, BranchSystemPtr system, const std::vector<Point>& base,
                                      const StoppingRule& rule, const TailCertificate* certificate,
                                      const TowerOptions& options) {
  TowerEngine engine(K, system, base, options);
  KInfinityEstimate out;
  std::vector<std::vector<double>> diag_increments(base.size());
  GramMatrix current = engine.next();
  double eps = 0.0;
  for (std::size_t n = 0;; ++n) {
    for (std::size_t a = 0; a < base.size(); ++a) {
      const double u = current(a, a);
      if (!(u <= rule.ceiling)) {
        throw ModelError("blow-up: diagonal K_" + std::to_string(n) + "(" + system->label(base[a]) + ") = " +
                         std::to_string(u) + " exceeds ceiling " + std::to_string(rule.ceiling) +
                         "; the point is not in the finite region, see the diagonal module (blowup_detect)");
      }
    }
    out.traces.push_back(current.trace());
    if (n == 0) eps = rule.trace_eps.value_or(1e-10 * std::abs(current.trace()));
    if (n >= rule.max_level) {
      out.stop = StopReason::max_level;
      break;
    }
    GramMatrix next;
    try {
      next = engine.next();
    } catch (const ResourceError&) {
      out.stop = StopReason::resource_cap;
      break;
    }
    const double increment = next.trace() - current.trace();
    for (std::size_t a = 0; a < base.size(); ++a) diag_increments[a].push_back(next(a, a) - current(a, a));
    if (increment < eps) {
      // K_{n+1} adds less than trace_eps over K_n: report level n.
      out.stop = StopReason::converged;
      break;
    }
    current = std::move(next);
  }
  out.level = out.traces.size() - 1;
  out.estimate = std::move(current);

  const auto size = static_cast<Eigen::Index>(base.size());
  out.error_bound = Eigen::MatrixXd(size, size);
  const bool certify = certificate != nullptr &&
                       std::all_of(base.begin(), base.end(), [&](Point p) { return certificate->covers(p); });
  if (certify) {
    out.certified = true;
    out.certificate_domain = certificate->domain;
    for (Eigen::Index a = 0; a < size; ++a) {
      for (Eigen::Index b = 0; b < size; ++b) {
        out.error_bound(a, b) = certificate->bound(out.level, base[static_cast<std::size_t>(a)], base[static_cast<std::size_t>(b)]);
      }
    }
  } else {
    // Tail sum_{n >= N} d_n(s): increments already seen beyond level N
    // plus the geometric extrapolation past the last one.
    std::vector<double> tails(base.size());
    for (std::size_t a = 0; a < base.size(); ++a) {
      const auto& inc = diag_increments[a];
      double seen = 0.0;
      for (std::size_t k = out.level; k < inc.size(); ++k) seen += inc[k];
      tails[a] = seen + extrapolated_tail(inc);
    }
    for (Eigen::Index a = 0; a < size; ++a) {
      for (Eigen::Index b = 0; b < size; ++b) {
        out.error_bound(a, b) = std::sqrt(tails[static_cast<std::size_t>(a)] * tails[static_cast<std::size_t>(b)]);
      }
    }
  }
  return out;
}

double invariance_residual(KernelPtr kinf, BranchSystemPtr system, const std::vector<Point>& base) {
  auto lk = apply_L(kinf, system);
  double worst = 0.0;
  for (std::size_t a = 0; a < base.size(); ++a) {
    for (std::size_t b = a; b < base.size(); ++b) {
      worst = std::max(worst, std::abs((*lk)(base[a], base[b]) - (*kinf)(base[a], base[b])));
    }
  }
  return worst;
}

MinimalityReport minimality_check(const GramMatrix& kinf_estimate, KernelPtr candidate, KernelPtr K,
                                  BranchSystemPtr system, double tol) {
  const auto& base = kinf_estimate.points;
  MinimalityReport report;
  const GramMatrix gj = gram(*candidate, base, system.get());
  report.invariance_residual = invariance_residual(candidate, system, base);
  report.invariance_tolerance = tol * std::max(max_abs(gj.entries), 1.0);
  report.majorant = psd_leq(gram(*K, base, system.get()), gj, tol);
  report.conclusion = psd_leq(kinf_estimate, gj, tol);
  return report;
}

Eigen::MatrixXd DefectEmbedding::level_zero_block() const {
  return features.leftCols(block_offsets.at(1) - block_offsets.at(0));
}

DefectEmbedding defect_embedding(const TowerState& tower, double tol) {
  std::vector<Eigen::MatrixXd> blocks;
  blocks.push_back(square_root_factor(tower.levels.front().entries, tol, "factor of gram(K)"));
  for (std::size_t n = 0; n < tower.defects.size(); ++n) {
    blocks.push_back(square_root_factor(tower.defects[n].entries, tol, "factor of gram(D_" + std::to_string(n) + ")"));
  }
  DefectEmbedding out;
  Eigen::Index cols = 0;
  for (const auto& b : blocks) {
    out.block_offsets.push_back(cols);
    cols += b.cols();
  }
  out.block_offsets.push_back(cols);
  out.features = Eigen::MatrixXd(static_cast<Eigen::Index>(tower.base.size()), cols);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    out.features.middleCols(out.block_offsets[k], blocks[k].cols()) = blocks[k];
  }
  return out;
}

}  // namespace kt
