#include "kt/diagonal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kt/errors.hpp"

namespace kt {

namespace {

std::size_t base_index(const TowerState& tower, Point s) {
  const auto it = std::find(tower.base.begin(), tower.base.end(), s);
  if (it == tower.base.end()) throw ContractError("tail_bound: point is not a tower base point");
  return static_cast<std::size_t>(it - tower.base.begin());
}

double relative_gap(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale > 0.0 ? std::abs(a - b) / scale : 0.0;
}

}  // namespace

PointFunction apply_P(PointFunction u, BranchSystemPtr system) {
  return [u = std::move(u), system = std::move(system)](Point s) {
    double total = 0.0;
    for (int i = 1; i <= system->arity(); ++i) total += u(system->apply(i, s));
    return total;
  };
}

PointFunction diagonal_of(KernelPtr K) {
  return [K = std::move(K)](Point s) { return (*K)(s, s); };
}

PointFunction defect_diagonal_of(KernelPtr K, BranchSystemPtr system) {
  auto d0 = difference(apply_L(K, system), K);
  return diagonal_of(std::move(d0));
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::converging: return "converging";
    case Verdict::diverging: return "diverging";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "unknown";
}

BlowupWitness blowup_detect(KernelPtr K, BranchSystemPtr system, Point s, const BlowupQuery& query,
                            const Limits& limits) {
  if (!(query.epsilon > 0.0)) throw InputError("blowup_detect: epsilon must be positive");
  if (!(query.rho > 1.0)) throw InputError("blowup_detect: rho must exceed 1");
  BlowupWitness out;
  out.query = query;
  for (std::size_t n : query.levels) checked_word_count(system->arity(), n, limits);
  for (std::size_t n : query.levels) {
    std::uint64_t count = 0;
    for_each_word(system->arity(), n, [&](const Word& w) {
      const Point x = compose_forward(*system, w, s);
      if (query.region && !query.region(x)) return;
      if ((*K)(x, x) >= query.epsilon) ++count;
    }, limits);
    out.counts.push_back(count);
    if (!out.first_short_level && static_cast<double>(count) < std::pow(query.rho, static_cast<double>(n))) {
      out.first_short_level = n;
    }
  }
  out.found = !query.levels.empty() && !out.first_short_level;
  return out;
}

DiagonalTrace diagonal_trace(KernelPtr K, BranchSystemPtr system, Point s, std::size_t N,
                             const DiagonalOptions& options) {
  DiagonalTrace out;
  out.point = s;
  out.label = system->label(s);

  const TowerState tower = build_tower(K, system, {s}, N, options.tower);
  for (const auto& level : tower.levels) out.values.push_back(level(0, 0));

  const auto u0 = diagonal_of(K);
  for (std::size_t n = 0; n <= N; ++n) {
    double total = 0.0;
    for_each_word(system->arity(), n, [&](const Word& w) { total += u0(compose_forward(*system, w, s)); },
                  options.tower.limits);
    out.word_values.push_back(total);
    out.path_residual = std::max(out.path_residual, relative_gap(total, out.values[n]));
  }

  const double uN = out.values.back();
  const double eps = options.trace_eps.value_or(1e-10 * std::abs(out.values.front()));
  if (!(uN <= options.ceiling)) {
    out.verdict = Verdict::diverging;
    out.reason = "u_N exceeds ceiling " + std::to_string(options.ceiling);
    return out;
  }
  if (options.witness) {
    out.witness = blowup_detect(K, system, s, *options.witness, options.tower.limits);
    if (out.witness->found) {
      out.verdict = Verdict::diverging;
      out.reason = "blow-up witness";
      return out;
    }
  }
  if (options.certificate && options.certificate->covers(s)) {
    out.verdict = Verdict::converging;
    out.reason = "Lyapunov certificate";
    return out;
  }
  if (N >= 1) {
    const double last = out.values[N] - out.values[N - 1];
    if (last < eps || last <= 0.0) {
      out.verdict = Verdict::converging;
      out.reason = "increment below trace_eps";
      return out;
    }
  }
  out.verdict = Verdict::inconclusive;
  out.reason = "no certificate, witness or small increment";
  return out;
}

LyapunovResult lyapunov_verify(KernelPtr K, BranchSystemPtr system, const LyapunovCandidate& candidate,
                               const std::vector<Point>& domain, double tol) {
  if (!candidate.r) throw InputError("lyapunov_verify: candidate has no function r");
  if (domain.empty()) throw InputError("lyapunov_verify: empty domain");
  if (!(candidate.C >= 0.0)) throw InputError("lyapunov_verify: C must be nonnegative");
  const bool defect = candidate.form == LyapunovForm::defect;
  if (defect && !(candidate.beta > 0.0 && candidate.beta < 1.0)) {
    throw InputError("lyapunov_verify: the defect form needs 0 < beta < 1");
  }
  if (!defect && !(candidate.beta > 0.0 && candidate.beta <= 1.0)) {
    throw InputError("lyapunov_verify: the diagonal form needs 0 < beta <= 1");
  }

  const auto checked = orbit_closure(*system, domain, 1);
  const PointFunction first = defect ? defect_diagonal_of(K, system) : diagonal_of(K);
  const PointFunction Pr = apply_P(candidate.r, system);
  const std::string first_name = defect ? "d0 <= C r" : "u0 <= C r";

  LyapunovResult out;
  out.checked_points = checked.size();
  auto fails = [tol](double lhs, double rhs) { return lhs > rhs + tol * std::max(std::abs(lhs), std::abs(rhs)); };
  for (Point x : checked) {
    const double r = candidate.r(x);
    if (!(r > 0.0) || !std::isfinite(r)) {
      throw InputError("lyapunov_verify: r must be positive and finite, r(" + system->label(x) +
                       ") = " + std::to_string(r));
    }
    const double lhs1 = first(x), rhs1 = candidate.C * r;
    if (fails(lhs1, rhs1)) {
      out.refutation = LyapunovRefutation{x, system->label(x), first_name, lhs1, rhs1};
      return out;
    }
    const double lhs2 = Pr(x), rhs2 = candidate.beta * r;
    if (fails(lhs2, rhs2)) {
      out.refutation = LyapunovRefutation{x, system->label(x), "P r <= beta r", lhs2, rhs2};
      return out;
    }
  }
  out.certificate = TailCertificate{candidate, checked};
  return out;
}

std::uint64_t level_set_count(KernelPtr K, BranchSystemPtr system, Point s, std::size_t n, double theta,
                              const Limits& limits) {
  std::uint64_t count = 0;
  for_each_word(system->arity(), n, [&](const Word& w) {
    const Point x = compose_forward(*system, w, s);
    if ((*K)(x, x) >= theta) ++count;
  }, limits);
  return count;
}

LayerCake layer_cake_check(KernelPtr K, BranchSystemPtr system, Point s, std::size_t n,
                           const TowerOptions& options) {
  std::vector<double> values;
  for_each_word(system->arity(), n, [&](const Word& w) {
    const Point x = compose_forward(*system, w, s);
    values.push_back((*K)(x, x));
  }, options.limits);
  std::sort(values.begin(), values.end());
  if (values.front() < 0.0) {
    throw ModelError("layer_cake_check: negative diagonal value below " + system->label(s));
  }
  // N_n(s, theta) is constant between consecutive distinct values, equal to
  // the number of values >= the upper end of the interval.
  LayerCake out;
  double previous = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k > 0 && values[k] == values[k - 1]) continue;
    out.integral += (values[k] - previous) * static_cast<double>(values.size() - k);
    previous = values[k];
  }
  const TowerState tower = build_tower(K, system, {s}, n, options);
  out.u_n = tower.levels.back()(0, 0);
  const double gap = std::abs(out.integral - out.u_n);
  out.residual = out.u_n > 0.0 ? gap / out.u_n : gap;
  return out;
}

double certified_tail_bound(const TailCertificate* certificate, Point s, Point t, std::size_t N) {
  if (!certificate) throw ContractError("certified tail bound requested without a certificate");
  if (!certificate->covers(s) || !certificate->covers(t)) {
    throw ContractError("certified tail bound requested outside the certificate domain");
  }
  return certificate->bound(N, s, t);
}

TailBound tail_bound(const TowerState& tower, const TailCertificate* certificate, Point s, Point t,
                     std::size_t N, const ClosedForm* oracle) {
  if (certificate) return {certified_tail_bound(certificate, s, t, N), true, "certificate"};
  if (N > tower.horizon) throw ContractError("tail_bound: level beyond the tower horizon");
  const std::size_t a = base_index(tower, s), b = base_index(tower, t);
  auto tail = [&](std::size_t k, Point p) {
    const double uN = tower.levels[N](k, k);
    if (oracle) return std::max(oracle->h(p) - uN, 0.0);
    std::vector<double> increments;
    for (std::size_t n = 0; n < tower.horizon; ++n) {
      increments.push_back(tower.levels[n + 1](k, k) - tower.levels[n](k, k));
    }
    double seen = 0.0;
    for (std::size_t n = N; n < increments.size(); ++n) seen += increments[n];
    return seen + extrapolated_tail(increments);
  };
  const double ts = tail(a, s), tt = tail(b, t);
  const double value = std::isinf(ts) || std::isinf(tt) ? std::numeric_limits<double>::infinity()
                                                         : std::sqrt(ts * tt);
  // The oracle gauge is exact, so that bound is rigorous too.
  return {value, oracle != nullptr, oracle ? "oracle" : "extrapolated"};
}

}  // namespace kt
