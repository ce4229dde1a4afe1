#include "kt/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "kt/errors.hpp"
#include "kt/io.hpp"
#include "kt/pair_memo.hpp"
#include "kt/parallel.hpp"
#include "kt/rng.hpp"

namespace kt {

namespace {

double relative(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

class NormalizedKernel final : public Kernel {
 public:
  NormalizedKernel(KernelPtr inner, DoobChain chain) : inner_(std::move(inner)), chain_(std::move(chain)) {}
  double operator()(Point s, Point t) const override {
    return (*inner_)(s, t) / (chain_.gauge_at(s) * chain_.gauge_at(t));
  }
  std::string name() const override { return inner_->name() + "^(h)"; }

 private:
  KernelPtr inner_;
  DoobChain chain_;
};

class TildeKernel final : public Kernel {
 public:
  TildeKernel(KernelPtr inner, DoobChain chain, std::size_t capacity)
      : inner_(std::move(inner)), chain_(std::move(chain)), memo_(capacity) {}
  double operator()(Point s, Point t) const override {
    if (auto hit = memo_.find(s, t)) return *hit;
    double v = 0.0;
    const BranchSystem& sys = *chain_.system;
    for (int i = 1; i <= sys.arity(); ++i) {
      const double w = chain_.p(i, s) * chain_.p(i, t);
      if (w == 0.0) continue;
      v += w * (*inner_)(sys.apply(i, s), sys.apply(i, t));
    }
    memo_.store(s, t, v);
    return v;
  }
  std::string name() const override { return "Ltilde(" + inner_->name() + ")"; }

 private:
  KernelPtr inner_;
  DoobChain chain_;
  mutable PairMemo memo_;
};

}  // namespace

double DoobChain::gauge_at(Point s) const {
  const double v = h(s);
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw InputError("gauge h vanishes or is invalid at " + system->label(s) + " (h = " + format_double(v) +
                     "); point is outside the Doob domain");
  }
  return v;
}

double DoobChain::p(int i, Point s) const { return h(system->apply(i, s)) / gauge_at(s); }

double DoobChain::p_word(const Word& w, Point s) const {
  return h(compose_reversed(*system, w, s)) / gauge_at(s);
}

DoobChain build_doob(PointFunction h, BranchSystemPtr system, const std::vector<Point>& domain, double tol,
                     std::string gauge) {
  if (!system) throw InputError("build_doob: null branch system");
  DoobChain chain;
  chain.h = std::move(h);
  chain.system = std::move(system);
  chain.tolerance = tol;
  chain.gauge = std::move(gauge);
  for (Point s : domain) {
    const double v = chain.h(s);
    if (!std::isfinite(v) || v < 0.0) {
      throw InputError("gauge h is negative or non-finite at " + chain.system->label(s) +
                       " (h = " + format_double(v) + ")");
    }
    (v == 0.0 ? chain.excluded : chain.domain).push_back(s);
  }
  if (chain.domain.empty()) throw InputError("build_doob: gauge h vanishes on the whole domain");

  Point worst{};
  double worst_res = -1.0;
  for (Point s : chain.domain) {
    const double hs = chain.h(s);
    double ph = 0.0;
    for (int i = 1; i <= chain.system->arity(); ++i) ph += chain.h(chain.system->apply(i, s));
    const double res = std::abs(ph - hs) / hs;
    if (res > worst_res) {
      worst_res = res;
      worst = s;
    }
  }
  chain.harmonic_residual = worst_res;
  if (chain.harmonic_residual > tol) {
    throw ModelError("gauge is not P-harmonic: relative residual " + format_double(chain.harmonic_residual) +
                     " at " + chain.system->label(worst) + " exceeds " + format_double(tol));
  }
  return chain;
}

PointFunction computed_gauge(KernelPtr K, BranchSystemPtr system, std::size_t N, const Limits& limits) {
  KernelPtr level = level_kernel(std::move(K), std::move(system), N, limits);
  return [level](Point s) { return (*level)(s, s); };
}

CylinderTable cylinder_measure(const DoobChain& chain, Point s, std::size_t n, const Limits& limits, int threads) {
  const BranchSystem& sys = *chain.system;
  const int m = sys.arity();
  checked_word_count(m, n, limits);
  const double hs = chain.gauge_at(s);

  CylinderTable table;
  table.anchor = s;
  table.anchor_label = sys.label(s);
  table.horizon = n;
  table.levels.resize(n + 1);
  std::vector<std::vector<double>> chain_rule(n + 1);
  table.levels[0] = {1.0};
  chain_rule[0] = {1.0};
  for (std::size_t k = 1; k <= n; ++k) {
    const std::size_t count = table.levels[k - 1].size() * static_cast<std::size_t>(m);
    table.levels[k].assign(count, 0.0);
    chain_rule[k].assign(count, 0.0);
  }
  // States along each cylinder's path, level by level.
  std::vector<Point> states{s};
  for (std::size_t k = 1; k <= n; ++k) {
    std::vector<Point> next(states.size() * static_cast<std::size_t>(m));
    const auto& prev_rule = chain_rule[k - 1];
    auto& level = table.levels[k];
    auto& rule = chain_rule[k];
    parallel_for(states.size(), threads, [&](std::size_t j) {
      const Point a = states[j];
      const double ha = chain.h(a);
      for (int i = 1; i <= m; ++i) {
        const std::size_t idx = j * static_cast<std::size_t>(m) + static_cast<std::size_t>(i - 1);
        const Point b = sys.apply(i, a);
        next[idx] = b;
        const double hb = chain.h(b);
        level[idx] = hb / hs;
        rule[idx] = prev_rule[j] == 0.0 ? 0.0 : prev_rule[j] * (hb / ha);
      }
    });
    states = std::move(next);
  }

  for (std::size_t k = 0; k <= n; ++k) {
    double total = 0.0;
    for (std::size_t j = 0; j < table.levels[k].size(); ++j) {
      total += table.levels[k][j];
      table.max_chain_rule_error =
          std::max(table.max_chain_rule_error, std::abs(table.levels[k][j] - chain_rule[k][j]));
      if (k < n) {
        double children = 0.0;
        for (int i = 0; i < m; ++i) children += table.levels[k + 1][j * static_cast<std::size_t>(m) + i];
        table.max_consistency_error = std::max(table.max_consistency_error, std::abs(table.levels[k][j] - children));
      }
    }
    table.max_level_sum_error = std::max(table.max_level_sum_error, std::abs(total - 1.0));
  }
  return table;
}

void write_cylinder_csv(std::ostream& out, const BranchSystem& system, const std::vector<CylinderTable>& tables) {
  out << "anchor_label,word,probability\n";
  const int m = system.arity();
  for (const auto& t : tables) {
    for (std::size_t k = 0; k < t.levels.size(); ++k) {
      std::size_t j = 0;
      for_each_word(m, k, [&](const Word& w) {
        write_csv_row(out, {t.anchor_label, w.to_string(m), format_double(t.levels[k][j++])});
      }, Limits{std::uint64_t{1} << 62});
    }
  }
}

SamplePath sample_path(const DoobChain& chain, Point s, std::size_t n, std::uint64_t seed, std::uint64_t index) {
  const BranchSystem& sys = *chain.system;
  const NormalStream stream(seed);
  SamplePath path;
  path.states.reserve(n + 1);
  path.states.push_back(s);
  std::vector<int> symbols;
  symbols.reserve(n);
  Point cur = s;
  for (std::size_t k = 0; k < n; ++k) {
    const double u = stream.uniform(index, static_cast<std::uint32_t>(k), 0);
    double cumulative = 0.0;
    int chosen = 0;
    double chosen_p = 0.0;
    for (int i = 1; i <= sys.arity(); ++i) {
      const double pi = chain.p(i, cur);
      if (pi <= 0.0) continue;
      cumulative += pi;
      chosen = i;
      chosen_p = pi;
      if (u < cumulative) break;
    }
    if (chosen == 0) throw ModelError("no branch with positive probability at " + sys.label(cur));
    symbols.push_back(chosen);
    path.probability *= chosen_p;
    cur = sys.apply(chosen, cur);
    path.states.push_back(cur);
  }
  path.word = Word(std::move(symbols));
  return path;
}

double apply_Q(const DoobChain& chain, const PointFunction& f, Point s) {
  double v = 0.0;
  for (int i = 1; i <= chain.system->arity(); ++i) {
    const double pi = chain.p(i, s);
    if (pi != 0.0) v += pi * f(chain.system->apply(i, s));
  }
  return v;
}

double apply_Q_power(const DoobChain& chain, const PointFunction& f, Point s, std::size_t n) {
  if (n == 0) return f(s);
  double v = 0.0;
  for (int i = 1; i <= chain.system->arity(); ++i) {
    const double pi = chain.p(i, s);
    if (pi != 0.0) v += pi * apply_Q_power(chain, f, chain.system->apply(i, s), n - 1);
  }
  return v;
}

IntertwiningResiduals intertwining_check(const DoobChain& chain, const PointFunction& f, Point s, std::size_t n,
                                         const Limits& limits) {
  const BranchSystem& sys = *chain.system;
  IntertwiningResiduals r;
  double phf = 0.0;
  for (int i = 1; i <= sys.arity(); ++i) {
    const Point a = sys.apply(i, s);
    phf += chain.h(a) * f(a);
  }
  r.one_step = relative(phf, chain.gauge_at(s) * apply_Q(chain, f, s));

  double expectation = 0.0;
  for_each_word(sys.arity(), n, [&](const Word& w) {
    const double pw = chain.p_word(w, s);
    if (pw != 0.0) expectation += pw * f(compose_reversed(sys, w, s));
  }, limits);
  r.n_step = relative(apply_Q_power(chain, f, s, n), expectation);
  return r;
}

KernelPtr h_normalize(KernelPtr J, const DoobChain& chain) {
  return std::make_shared<NormalizedKernel>(std::move(J), chain);
}

KernelPtr apply_L_tilde(KernelPtr G, const DoobChain& chain, std::size_t memo_capacity) {
  return std::make_shared<TildeKernel>(std::move(G), chain, memo_capacity);
}

double normalization_commutes(KernelPtr J, const DoobChain& chain, const std::vector<Point>& F, std::size_t n,
                              const Limits& limits) {
  checked_word_count(chain.system->arity(), n, limits);
  KernelPtr lhs = h_normalize(level_kernel(J, chain.system, n, limits), chain);
  KernelPtr rhs = h_normalize(J, chain);
  for (std::size_t k = 0; k < n; ++k) rhs = apply_L_tilde(rhs, chain);
  const GramMatrix a = gram(*lhs, F, chain.system.get());
  const GramMatrix b = gram(*rhs, F, chain.system.get());
  return max_abs_diff(a.entries, b.entries) / std::max(max_abs(a.entries), 1.0);
}

double tilde_word_expansion(KernelPtr G, const DoobChain& chain, Point s, Point t, std::size_t n,
                            const Limits& limits) {
  const BranchSystem& sys = *chain.system;
  const double hs = chain.gauge_at(s), ht = chain.gauge_at(t);
  double v = 0.0;
  for_each_word(sys.arity(), n, [&](const Word& w) {
    const Point a = compose_reversed(sys, w, s), b = compose_reversed(sys, w, t);
    const double weight = (chain.h(a) / hs) * (chain.h(b) / ht);
    if (weight != 0.0) v += weight * (*G)(a, b);
  }, limits);
  return v;
}

CylinderWeights CylinderWeights::bernoulli(const std::vector<double>& q, std::size_t levels) {
  if (q.empty()) throw InputError("Bernoulli cylinder weights need at least one symbol");
  for (double x : q) {
    if (!std::isfinite(x) || x < 0.0) throw InputError("Bernoulli weights must be finite and non-negative");
  }
  CylinderWeights nu;
  nu.levels.reserve(levels);
  std::vector<double> cur{1.0};
  for (std::size_t k = 0; k < levels; ++k) {
    if (k > 0) {
      std::vector<double> next;
      next.reserve(cur.size() * q.size());
      for (double c : cur)
        for (double x : q) next.push_back(c * x);
      cur = std::move(next);
    }
    nu.levels.push_back(cur);
  }
  return nu;
}

BoundaryGram boundary_feature_gram(KernelPtr K, const TowerState& tower, const DoobChain& chain,
                                   const CylinderWeights& nu, std::size_t N, double tol) {
  const BranchSystem& sys = *chain.system;
  const int m = sys.arity();
  if (N == 0) throw InputError("boundary feature map needs N >= 1");
  if (tower.horizon < N) {
    throw InputError("tower horizon " + std::to_string(tower.horizon) + " is below N = " + std::to_string(N));
  }
  if (nu.levels.size() < N) throw InputError("cylinder weights cover fewer than N levels");
  checked_word_count(m, N - 1);
  std::size_t expected = 1;
  for (std::size_t k = 0; k < N; ++k) {
    if (nu.levels[k].size() != expected) {
      throw InputError("cylinder weights at level " + std::to_string(k) + " have " +
                       std::to_string(nu.levels[k].size()) + " entries, expected " + std::to_string(expected));
    }
    for (std::size_t j = 0; j < expected; ++j) {
      const double x = nu.levels[k][j];
      if (!(x > 0.0) || !std::isfinite(x)) {
        throw InputError("cylinder weight is not positive at level " + std::to_string(k) + ", cylinder " +
                         std::to_string(j));
      }
    }
    expected *= static_cast<std::size_t>(m);
  }

  const std::vector<Point>& base = tower.base;
  const auto nb = static_cast<Eigen::Index>(base.size());
  Eigen::VectorXd hb(nb);
  for (Eigen::Index b = 0; b < nb; ++b) hb(b) = chain.gauge_at(base[b]);

  std::vector<Point> section;
  for (Point a : orbit_closure(sys, base, N - 1))
    if (chain.h(a) > 0.0) section.push_back(a);
  std::unordered_map<Point, Eigen::Index, PointHash> row;
  for (std::size_t k = 0; k < section.size(); ++k) row.emplace(section[k], static_cast<Eigen::Index>(k));

  KernelPtr d0 = h_normalize(difference(apply_L(K, chain.system), K), chain);
  const GramMatrix g = gram(*d0, section, &sys);
  const Eigen::MatrixXd full = square_root_factor(g.entries, tol, "D_0^(h) on the section points");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < full.cols(); ++c)
    if (full.col(c).squaredNorm() > 0.0) keep.push_back(c);
  Eigen::MatrixXd R(full.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) R.col(static_cast<Eigen::Index>(c)) = full.col(keep[c]);
  const Eigen::Index rank = R.cols();

  std::size_t cylinders = 0;
  for (std::size_t k = 0; k < N; ++k) cylinders += nu.levels[k].size();

  BoundaryGram out;
  out.section_points = section.size();
  out.features = Eigen::MatrixXd::Zero(nb, static_cast<Eigen::Index>(cylinders) * rank);
  Eigen::Index col = 0;
  for (std::size_t k = 0; k < N; ++k) {
    std::size_t j = 0;
    for_each_word(m, k, [&](const Word& w) {
      const double weight = nu.levels[k][j++];
      const double root = std::sqrt(weight);
      for (Eigen::Index b = 0; b < nb; ++b) {
        const Point a = compose_reversed(sys, w, base[b]);
        const double pw = chain.h(a) / hb(b);
        if (pw == 0.0) continue;
        // fiber in L2(nu), stored isometrically
        out.features.block(b, col, 1, rank) = root * ((pw / root) * R.row(row.at(a)));
      }
      col += rank;
    });
  }

  out.gram.points = base;
  out.gram.entries = out.features * out.features.transpose();

  const Eigen::MatrixXd norm = hb * hb.transpose();
  Eigen::MatrixXd target = Eigen::MatrixXd::Zero(nb, nb);
  for (std::size_t n = 0; n < N; ++n) target += tower.defects[n].entries.cwiseQuotient(norm);
  out.residual = max_abs_diff(out.gram.entries, target) / std::max(max_abs(target), 1.0);
  const Eigen::MatrixXd kn = tower.levels[N].entries.cwiseQuotient(norm);
  const Eigen::MatrixXd k0 = tower.levels[0].entries.cwiseQuotient(norm);
  out.identity_residual = max_abs_diff(kn, k0 + out.gram.entries) / std::max(max_abs(kn), 1.0);
  return out;
}

}  // namespace kt
