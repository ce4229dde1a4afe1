#include "kt/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "kt/boundary.hpp"
#include "kt/diagonal.hpp"
#include "kt/errors.hpp"
#include "kt/gaussian.hpp"
#include "kt/io.hpp"
#include "kt/tower.hpp"

namespace kt {

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr double kExactTol = 1e-12;
constexpr double kGramTol = 1e-10;
constexpr std::size_t kWordCheckLevels = 8;
constexpr std::uint64_t kCheckWordBudget = std::uint64_t{1} << 22;
constexpr std::uint64_t kVerifyDefaultSeed = 1;

// JSON has no infinities; non-finite values are written as strings.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(format_double(v)); }

Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index a = 0; a < m.rows(); ++a) {
    Json row = Json::array();
    for (Eigen::Index b = 0; b < m.cols(); ++b) row.push_back(num(m(a, b)));
    rows.push_back(row);
  }
  return rows;
}

double rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& target) {
  return max_abs_diff(a, target) / std::max(max_abs(target), 1.0);
}

Json check_json(const Check& c) {
  return {{"module", c.module},   {"identity", c.identity}, {"subject", c.subject},
          {"residual", num(c.residual)}, {"tolerance", num(c.tolerance)}, {"pass", c.pass}};
}

void add_check(RunReport& r, std::string module, std::string identity, std::string subject, double residual,
               double tolerance) {
  r.checks.push_back({std::move(module), std::move(identity), std::move(subject), residual, tolerance,
                      residual <= tolerance});
}

std::string subject(std::size_t index, const Model& m) { return "models[" + std::to_string(index) + "] " + m.name; }

class Stopwatch {
 public:
  Stopwatch(bool verbose, std::string what) : verbose_(verbose), what_(std::move(what)) {}
  ~Stopwatch() {
    if (!verbose_) return;
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
    std::cerr << "timing " << what_ << " " << dt.count() << " s\n";
  }

 private:
  bool verbose_;
  std::string what_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

bool g_verbose = false;

TowerOptions tower_options(const ExperimentConfig& c) {
  TowerOptions o;
  o.tol = c.tol;
  o.threads = c.threads;
  return o;
}

struct Certified {
  std::optional<TailCertificate> certificate;
  Json report;
};

// Verifies the model's declared certificate on base and its one-step images.
Certified verify_certificate(const ResolvedModel& rm) {
  Certified out;
  if (!rm.model.certificate) {
    out.report = {{"declared", false}};
    return out;
  }
  const auto result = lyapunov_verify(rm.model.kernel, rm.model.system, *rm.model.certificate, rm.base);
  out.report = {{"declared", true},
                {"description", rm.model.certificate->description},
                {"C", num(rm.model.certificate->C)},
                {"beta", num(rm.model.certificate->beta)},
                {"verified", result.certificate.has_value()},
                {"checked_points", result.checked_points}};
  if (result.refutation) {
    const auto& f = *result.refutation;
    out.report["refutation"] = {{"point", f.label}, {"premise", f.premise}, {"lhs", num(f.lhs)}, {"rhs", num(f.rhs)}};
  }
  out.certificate = result.certificate;
  return out;
}

std::string kind_label(bool defect) { return defect ? "D" : "K"; }

void tower_stage(const ExperimentConfig& c, RunReport& r, Json& models, std::ostringstream& csv) {
  for (std::size_t k = 0; k < c.models.size(); ++k) {
    Stopwatch sw(g_verbose, "tower " + c.models[k].name);
    const auto rm = resolve_model(c.models[k], c.tol);
    const Model& m = rm.model;
    const BranchSystem& sys = *m.system;
    const std::string subj = subject(k, m);
    const std::size_t N = c.horizon;
    const auto opts = tower_options(c);
    TowerState tower = build_tower(m.kernel, m.system, rm.base, N, opts);
    if (c.inject_fault && k == 0) tower.levels[N].entries(0, 0) += 1e-3;

    Json mj;
    mj["model"] = m.name;
    mj["base"] = tower.labels;
    mj["horizon"] = N;
    mj["strategy"] = tower.strategy;
    mj["subinvariance"] = {{"points", tower.precheck_size},
                           {"min_eigenvalue", num(tower.precheck.min_eigenvalue)},
                           {"threshold", num(tower.precheck.threshold())}};
    Json levels = Json::array();
    for (std::size_t n = 0; n <= N; ++n) {
      Json lj{{"level", n}, {"trace_K", num(tower.levels[n].trace())}};
      if (n < N) {
        lj["trace_D"] = num(tower.trace_increments[n]);
        lj["D_min_eigenvalue"] = num(tower.defect_reports[n].min_eigenvalue);
        lj["D_psd"] = tower.defect_reports[n].psd;
      }
      levels.push_back(lj);
    }
    mj["levels"] = levels;

    for (std::size_t n = 0; n < N; ++n) {
      const auto& rep = tower.defect_reports[n];
      add_check(r, "tower", "defect D_" + std::to_string(n) + " PSD", subj, std::max(0.0, -rep.min_eigenvalue),
                -rep.threshold());
    }
    add_check(r, "tower", "telescoping", subj, telescoping_residual(tower), kExactTol);

    const std::uint64_t pairs = tower.base.size() * (tower.base.size() + 1) / 2;
    std::uint64_t words = 1;
    for (std::size_t n = 0; n <= std::min(N, kWordCheckLevels); ++n) {
      if (n > 0) words *= static_cast<std::uint64_t>(sys.arity());
      if (words * pairs > kCheckWordBudget) break;
      const GramMatrix w = level_via_words(*m.kernel, sys, tower.base, n);
      add_check(r, "tower", "word expansion level " + std::to_string(n), subj,
                rel_diff(w.entries, tower.levels[n].entries), kExactTol);
    }

    if (m.oracle) {
      double kerr = 0.0, derr = 0.0;
      for (std::size_t n = 0; n <= N; ++n) {
        const auto& g = tower.levels[n];
        Eigen::MatrixXd ko(g.entries.rows(), g.entries.cols()), dO(ko.rows(), ko.cols());
        for (Eigen::Index a = 0; a < ko.rows(); ++a)
          for (Eigen::Index b = 0; b < ko.cols(); ++b) {
            ko(a, b) = m.oracle->K_n(n, tower.base[a], tower.base[b]);
            dO(a, b) = m.oracle->D_n(n, tower.base[a], tower.base[b]);
          }
        kerr = std::max(kerr, rel_diff(g.entries, ko));
        if (n < N) derr = std::max(derr, rel_diff(tower.defects[n].entries, dO));
      }
      add_check(r, "tower", "oracle K_n", subj, kerr, kExactTol);
      add_check(r, "tower", "oracle D_n", subj, derr, kExactTol);
    }

    const auto cert = verify_certificate(rm);
    mj["certificate"] = cert.report;
    StoppingRule rule;
    rule.max_level = N;
    rule.ceiling = c.ceiling;
    const TailCertificate* cp = cert.certificate ? &*cert.certificate : nullptr;
    const auto est = estimate_K_infinity(m.kernel, m.system, rm.base, rule, cp, opts);
    Json ej{{"level", est.level},
            {"stop", std::string(to_string(est.stop))},
            {"certified", est.certified},
            {"estimate", matrix_json(est.estimate.entries)},
            {"error_bound", matrix_json(est.error_bound)}};
    if (m.oracle) {
      Eigen::MatrixXd kinf(est.estimate.entries.rows(), est.estimate.entries.cols());
      double excess = 0.0;
      for (Eigen::Index a = 0; a < kinf.rows(); ++a)
        for (Eigen::Index b = 0; b < kinf.cols(); ++b) {
          kinf(a, b) = m.oracle->K_infinity(tower.base[a], tower.base[b]);
          const double gap = std::abs(kinf(a, b) - est.estimate.entries(a, b));
          excess = std::max(excess, gap - est.error_bound(a, b));
        }
      ej["oracle"] = matrix_json(kinf);
      add_check(r, "tower", "K_inf within error bound", subj, std::max(excess, 0.0),
                kExactTol * std::max(max_abs(kinf), 1.0));
      auto oracle = m.oracle;
      const auto kernel = make_kernel("K_inf", [oracle](Point s, Point t) { return oracle->K_infinity(s, t); });
      add_check(r, "tower", "K_inf invariance", subj, invariance_residual(kernel, m.system, rm.base) /
                    std::max(max_abs(kinf), 1.0), kExactTol);
    }
    Json tails = Json::array();
    for (std::size_t a = 0; a < tower.base.size(); ++a) {
      const auto tb = tail_bound(tower, cp, tower.base[a], tower.base[a], N, m.oracle.get());
      tails.push_back({{"point", tower.labels[a]}, {"bound", num(tb.value)}, {"certified", tb.certified},
                       {"method", tb.method}});
    }
    ej["diagonal_tail_bounds"] = tails;
    mj["K_infinity"] = ej;
    models.push_back(mj);

    for (std::size_t n = 0; n <= N; ++n) {
      for (int d = 0; d < 2; ++d) {
        if (d == 1 && n == N) continue;
        const auto& g = d ? tower.defects[n] : tower.levels[n];
        for (std::size_t a = 0; a < g.size(); ++a)
          for (std::size_t b = 0; b < g.size(); ++b)
            write_csv_row(csv, {std::to_string(k), m.name, std::to_string(n), kind_label(d == 1), tower.labels[a],
                                tower.labels[b], format_double(g(a, b))});
      }
    }
  }
}

std::vector<Verdict> diagonal_stage(const ExperimentConfig& c, RunReport& r, Json& models, std::ostringstream& csv) {
  std::vector<Verdict> first;
  for (std::size_t k = 0; k < c.models.size(); ++k) {
    Stopwatch sw(g_verbose, "diagonal " + c.models[k].name);
    const auto rm = resolve_model(c.models[k], c.tol);
    const Model& m = rm.model;
    const BranchSystem& sys = *m.system;
    const std::string subj = subject(k, m);
    const std::size_t N = c.horizon;
    const auto cert = verify_certificate(rm);

    DiagonalOptions opts;
    opts.ceiling = c.ceiling;
    opts.certificate = cert.certificate ? &*cert.certificate : nullptr;
    opts.tower = tower_options(c);
    if (c.witness_epsilon) {
      BlowupQuery q;
      q.epsilon = *c.witness_epsilon;
      q.rho = c.witness_rho > 0.0 ? c.witness_rho : double(sys.arity());
      for (std::size_t n = 1; n <= N; ++n) q.levels.push_back(n);
      opts.witness = q;
    }

    Json mj{{"model", m.name}, {"certificate", cert.report}};
    Json points = Json::array();
    for (std::size_t p = 0; p < rm.base.size(); ++p) {
      const Point s = rm.base[p];
      const auto tr = diagonal_trace(m.kernel, m.system, s, N, opts);
      if (p == 0) first.push_back(tr.verdict);
      add_check(r, "diagonal", "tower vs word-sum diagonal", subj + " at " + tr.label, tr.path_residual, kExactTol);
      Json pj{{"point", tr.label}, {"verdict", std::string(to_string(tr.verdict))}, {"reason", tr.reason}};
      Json vals = Json::array();
      for (double v : tr.values) vals.push_back(num(v));
      pj["u"] = vals;
      if (tr.witness) {
        pj["witness"] = {{"epsilon", num(tr.witness->query.epsilon)},
                         {"rho", num(tr.witness->query.rho)},
                         {"counts", tr.witness->counts},
                         {"found", tr.witness->found}};
      }
      Json cakes = Json::array();
      double worst = 0.0;
      for (std::size_t n = 0; n <= std::min(N, kWordCheckLevels); ++n) {
        const auto lc = layer_cake_check(m.kernel, m.system, s, n, opts.tower);
        worst = std::max(worst, lc.residual);
        cakes.push_back({{"level", n}, {"integral", num(lc.integral)}, {"u_n", num(lc.u_n)},
                         {"residual", num(lc.residual)}});
      }
      add_check(r, "diagonal", "layer-cake", subj + " at " + tr.label, worst, kExactTol);
      pj["layer_cake"] = cakes;
      points.push_back(pj);
      for (std::size_t n = 0; n < tr.values.size(); ++n)
        write_csv_row(csv, {std::to_string(k), m.name, tr.label, std::to_string(n), format_double(tr.values[n])});
    }
    mj["points"] = points;
    models.push_back(mj);
  }
  return first;
}

std::uint64_t require_seed(const ExperimentConfig& c, const char* command) {
  if (!c.seed) throw InputError(std::string(command) + " needs a seed (config 'seed' or --seed)");
  return *c.seed;
}

Json sigma_json(const SigmaCheck& s) {
  return {{"name", s.name}, {"max_z", num(s.max_z)}, {"max_abs_dev", num(s.max_abs_dev)}, {"entries", s.entries},
          {"pass", s.pass}};
}

void gaussian_stage(const ExperimentConfig& c, RunReport& r, Json& models, std::ostringstream& cov_csv,
                    std::ostringstream* samples_csv) {
  const std::uint64_t seed = require_seed(c, "gaussian");
  for (std::size_t k = 0; k < c.models.size(); ++k) {
    Stopwatch sw(g_verbose, "gaussian " + c.models[k].name);
    const auto rm = resolve_model(c.models[k], c.tol);
    const Model& m = rm.model;
    const std::string subj = subject(k, m);
    const std::size_t N = c.horizon;
    const auto tower = build_tower(m.kernel, m.system, rm.base, N, tower_options(c));
    const GaussianTowerSampler sampler(tower, seed, c.tol);
    const auto batch = sample_fields(sampler, c.nsamples, c.threads);

    Json mj{{"model", m.name}, {"seed", seed}, {"nsamples", c.nsamples}, {"horizon", N}, {"base", tower.labels}};
    Json checks = Json::array();
    const auto cov = empirical_covariance(batch, N);
    const double floor = 1e-12 * std::max(max_abs(tower.levels[N].entries), 1.0);
    std::vector<SigmaCheck> all{sigma_check("covariance of X_N vs K_N", cov.estimate.entries, tower.levels[N].entries,
                                            cov.standard_error, kSigmaThreshold, floor),
                                centering_check(batch)};
    if (N >= 1) {
      for (auto& s : martingale_checks(batch, tower).checks) all.push_back(std::move(s));
    }
    for (const auto& s : all) {
      checks.push_back(sigma_json(s));
      // roundoff-floor matches can carry an infinite z, so the verdict comes from the check itself
      r.checks.push_back({"gaussian", s.name, subj, s.max_z, kSigmaThreshold, s.pass});
    }
    mj["checks"] = checks;
    models.push_back(mj);

    auto emit = [&](const std::string& kind, std::size_t level, const CovarianceEstimate& e, const GramMatrix& target) {
      for (std::size_t a = 0; a < tower.base.size(); ++a)
        for (std::size_t b = 0; b < tower.base.size(); ++b)
          write_csv_row(cov_csv, {std::to_string(k), m.name, kind, std::to_string(level), tower.labels[a],
                                  tower.labels[b], format_double(e.estimate(a, b)), format_double(target(a, b)),
                                  format_double(e.standard_error(a, b))});
    };
    emit("K", N, cov, tower.levels[N]);
    for (std::size_t n = 0; n < N; ++n) emit("D", n, empirical_covariance(batch.increment(n), batch.points), tower.defects[n]);
    if (samples_csv) write_batch_csv(*samples_csv, batch);
  }
}

std::vector<std::vector<double>> nu_choices(const ExperimentConfig& c, int m) {
  if (!c.nu.empty()) {
    for (std::size_t k = 0; k < c.nu.size(); ++k) {
      if (c.nu[k].size() != static_cast<std::size_t>(m)) {
        throw InputError("config boundary.nu[" + std::to_string(k) + "]: expected " + std::to_string(m) +
                         " weights");
      }
    }
    return c.nu;
  }
  std::vector<double> uniform(static_cast<std::size_t>(m), 1.0 / m), skewed;
  if (m == 2) {
    skewed = {0.3, 0.7};
  } else {
    const double total = m * (m + 1) / 2.0;
    for (int i = 1; i <= m; ++i) skewed.push_back(i / total);
  }
  return {uniform, skewed};
}

void boundary_stage(const ExperimentConfig& c, RunReport& r, Json& models, std::map<std::string, std::string>& files,
                    const std::vector<bool>* skip) {
  for (std::size_t k = 0; k < c.models.size(); ++k) {
    const auto rm = resolve_model(c.models[k], c.tol);
    const Model& m = rm.model;
    if (skip && (*skip)[k]) {
      models.push_back({{"model", m.name}, {"skipped", "diverging diagonal: no finite harmonic gauge"}});
      continue;
    }
    Stopwatch sw(g_verbose, "boundary " + c.models[k].name);
    const BranchSystem& sys = *m.system;
    const std::string subj = subject(k, m);
    const std::size_t N = c.horizon;
    const auto domain = orbit_closure(sys, rm.base, 2);
    DoobChain chain = m.oracle ? build_doob([o = m.oracle](Point s) { return o->h(s); }, m.system, domain, kExactTol)
                               : build_doob(computed_gauge(m.kernel, m.system, N), m.system, domain, kExactTol,
                                            "computed");
    std::vector<Point> anchors;
    for (Point s : rm.base)
      if (chain.h(s) > 0.0) anchors.push_back(s);
    if (anchors.empty()) throw InputError(subj + ": the gauge vanishes on every base point");

    Json mj{{"model", m.name},
            {"gauge", chain.gauge},
            {"harmonic_residual", num(chain.harmonic_residual)},
            {"excluded", labels(sys, chain.excluded)},
            {"anchors", labels(sys, anchors)}};

    std::vector<CylinderTable> tables;
    for (Point s : anchors) {
      auto t = cylinder_measure(chain, s, c.cylinder_levels, {}, c.threads);
      add_check(r, "boundary", "cylinder level sums", subj + " at " + t.anchor_label, t.max_level_sum_error, kExactTol);
      add_check(r, "boundary", "cylinder consistency", subj + " at " + t.anchor_label, t.max_consistency_error,
                kExactTol);
      add_check(r, "boundary", "cylinder chain rule", subj + " at " + t.anchor_label, t.max_chain_rule_error,
                kExactTol);
      tables.push_back(std::move(t));
    }
    std::ostringstream cyl;
    write_cylinder_csv(cyl, sys, tables);
    files["cylinders_" + std::to_string(k) + "_" + m.name + ".csv"] = cyl.str();

    const PointFunction u0 = diagonal_of(m.kernel);
    const PointFunction f = [u0](Point s) { return 1.0 + u0(s); };
    const std::size_t nmax = std::min<std::size_t>(5, N);
    double one = 0.0, many = 0.0, comm = 0.0, expand = 0.0;
    const KernelPtr d0 = h_normalize(difference(apply_L(m.kernel, m.system), m.kernel), chain);
    for (Point s : anchors) {
      for (std::size_t n = 0; n <= nmax; ++n) {
        const auto res = intertwining_check(chain, f, s, n);
        one = std::max(one, res.one_step);
        many = std::max(many, res.n_step);
      }
    }
    KernelPtr it = d0;
    for (std::size_t n = 0; n <= nmax; ++n) {
      comm = std::max(comm, normalization_commutes(m.kernel, chain, anchors, n));
      if (n > 0) it = apply_L_tilde(it, chain);
      for (Point s : anchors)
        for (Point t : anchors) {
          const double a = tilde_word_expansion(d0, chain, s, t, n), b = (*it)(s, t);
          expand = std::max(expand, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}));
        }
    }
    add_check(r, "boundary", "intertwining P(hf) = h Qf", subj, one, kExactTol);
    add_check(r, "boundary", "Q^n f = E[f(s_n)]", subj, many, kExactTol);
    add_check(r, "boundary", "normalization commutes with L", subj, comm, kExactTol);
    add_check(r, "boundary", "L~ word expansion", subj, expand, kExactTol);
    mj["residuals"] = {{"intertwining_one_step", num(one)},
                       {"intertwining_n_step", num(many)},
                       {"normalization", num(comm)},
                       {"tilde_word_expansion", num(expand)},
                       {"levels", nmax}};

    const std::size_t NB = std::min(c.boundary_levels, N);
    if (NB >= 1) {
      const auto tower = build_tower(m.kernel, m.system, anchors, NB, tower_options(c));
      Json grams = Json::array();
      std::optional<Eigen::MatrixXd> reference;
      double spread = 0.0;
      for (const auto& q : nu_choices(c, sys.arity())) {
        const auto bg = boundary_feature_gram(m.kernel, tower, chain, CylinderWeights::bernoulli(q, NB), NB, c.tol);
        add_check(r, "boundary", "feature Gram = sum of normalized defects", subj, bg.residual, kGramTol);
        add_check(r, "boundary", "K_N^(h) = K^(h) + feature Gram", subj, bg.identity_residual, kGramTol);
        if (reference) spread = std::max(spread, rel_diff(bg.gram.entries, *reference));
        else reference = bg.gram.entries;
        grams.push_back({{"nu", q},
                         {"gram", matrix_json(bg.gram.entries)},
                         {"residual", num(bg.residual)},
                         {"identity_residual", num(bg.identity_residual)},
                         {"section_points", bg.section_points}});
      }
      add_check(r, "boundary", "feature Gram independent of nu", subj, spread, kExactTol);
      mj["feature_gram"] = {{"levels", NB}, {"choices", grams}, {"nu_spread", num(spread)}};
    }
    models.push_back(mj);
  }
}

Json report_header(const std::string& command, const ExperimentConfig& c) {
  Json j;
  j["artifact"] = "kt";
  j["version"] = kVersion;
  j["command"] = command;
  j["config"] = config_to_json(c);
  return j;
}

void finish(RunReport& r) {
  Json checks = Json::array();
  for (const auto& c : r.checks) checks.push_back(check_json(c));
  r.summary["checks"] = checks;
  r.summary["pass"] = r.pass();
  const Check* f = r.first_failure();
  r.summary["first_failure"] = f ? check_json(*f) : Json(nullptr);
}

const char* kTowerHeader = "model_index,model,level,kind,row_label,col_label,value\n";
const char* kDiagonalHeader = "model_index,model,point_label,level,u_n\n";
const char* kCovarianceHeader = "model_index,model,kind,level,row_label,col_label,estimate,target,standard_error\n";

}  // namespace

bool RunReport::pass() const { return first_failure() == nullptr; }

const Check* RunReport::first_failure() const {
  for (const auto& c : checks)
    if (!c.pass) return &c;
  return nullptr;
}

RunReport cmd_tower(const ExperimentConfig& config) {
  RunReport r;
  r.command = "tower";
  r.summary = report_header("tower", config);
  Json models = Json::array();
  std::ostringstream csv;
  csv << kTowerHeader;
  tower_stage(config, r, models, csv);
  r.summary["models"] = models;
  r.csv["tower.csv"] = csv.str();
  finish(r);
  return r;
}

RunReport cmd_diagonal(const ExperimentConfig& config) {
  RunReport r;
  r.command = "diagonal";
  r.summary = report_header("diagonal", config);
  Json models = Json::array();
  std::ostringstream csv;
  csv << kDiagonalHeader;
  diagonal_stage(config, r, models, csv);
  r.summary["models"] = models;
  r.csv["diagonal.csv"] = csv.str();
  finish(r);
  return r;
}

RunReport cmd_gaussian(const ExperimentConfig& config) {
  RunReport r;
  r.command = "gaussian";
  r.summary = report_header("gaussian", config);
  Json models = Json::array();
  std::ostringstream cov, samples;
  cov << kCovarianceHeader;
  gaussian_stage(config, r, models, cov, config.write_samples ? &samples : nullptr);
  r.summary["models"] = models;
  r.csv["covariance.csv"] = cov.str();
  if (config.write_samples) r.csv["samples.csv"] = samples.str();
  finish(r);
  return r;
}

RunReport cmd_boundary(const ExperimentConfig& config) {
  RunReport r;
  r.command = "boundary";
  r.summary = report_header("boundary", config);
  Json models = Json::array();
  boundary_stage(config, r, models, r.csv, nullptr);
  r.summary["models"] = models;
  finish(r);
  return r;
}

RunReport cmd_verify(const ExperimentConfig& in) {
  if (in.models.empty()) throw InputError("verify: empty model list");
  ExperimentConfig config = in;
  if (!config.seed) config.seed = kVerifyDefaultSeed;
  RunReport r;
  r.command = "verify";
  r.summary = report_header("verify", config);

  Json tower_models = Json::array(), diag_models = Json::array(), gauss_models = Json::array(),
       boundary_models = Json::array();
  std::ostringstream tcsv, dcsv, gcsv;
  tcsv << kTowerHeader;
  dcsv << kDiagonalHeader;
  gcsv << kCovarianceHeader;
  tower_stage(config, r, tower_models, tcsv);
  const auto verdicts = diagonal_stage(config, r, diag_models, dcsv);

  // the sampled boundedness probe must agree with the diagonal verdict
  Json probes = Json::array();
  std::vector<bool> diverging;
  for (std::size_t k = 0; k < config.models.size(); ++k) {
    Stopwatch sw(g_verbose, "probe " + config.models[k].name);
    const auto rm = resolve_model(config.models[k], config.tol);
    ProbeOptions po;
    po.ceiling = config.ceiling;
    po.threads = config.threads;
    po.tower = tower_options(config);
    const auto probe = boundedness_probe(rm.model.kernel, rm.model.system, {rm.base[0]}, config.nsamples,
                                         config.horizon, *config.seed, po);
    const bool agree = verdicts[k] == Verdict::inconclusive || probe.verdict == Verdict::inconclusive ||
                       probe.verdict == verdicts[k];
    r.checks.push_back({"gaussian", "probe agrees with diagonal verdict", subject(k, rm.model), agree ? 0.0 : 1.0, 0.0,
                        agree});
    probes.push_back({{"model", rm.model.name},
                      {"point", rm.model.system->label(rm.base[0])},
                      {"diagonal_verdict", std::string(to_string(verdicts[k]))},
                      {"probe_verdict", std::string(to_string(probe.verdict))},
                      {"probe_reason", probe.reason}});
    diverging.push_back(verdicts[k] == Verdict::diverging);
  }

  gaussian_stage(config, r, gauss_models, gcsv, nullptr);
  boundary_stage(config, r, boundary_models, r.csv, &diverging);

  r.summary["tower"] = tower_models;
  r.summary["diagonal"] = diag_models;
  r.summary["probes"] = probes;
  r.summary["gaussian"] = gauss_models;
  r.summary["boundary"] = boundary_models;
  r.csv["tower.csv"] = tcsv.str();
  r.csv["diagonal.csv"] = dcsv.str();
  r.csv["covariance.csv"] = gcsv.str();
  finish(r);
  return r;
}

void write_bundle(const RunReport& report, const ExperimentConfig& config, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ResourceError("cannot create output directory '" + dir + "': " + ec.message());
  auto write = [&](const std::string& name, const std::string& contents) {
    const fs::path p = fs::path(dir) / name;
    std::ofstream out(p, std::ios::binary);
    out << contents;
    if (!out) throw ResourceError("cannot write '" + p.string() + "'");
  };
  write("config.json", config_to_json(config).dump(2) + "\n");
  if (config.format != "csv") write("summary.json", report.summary.dump(2) + "\n");
  if (config.format != "json")
    for (const auto& [name, contents] : report.csv) write(name, contents);
}

namespace {

ExperimentConfig default_verify_config() {
  ExperimentConfig c;
  ModelConfig example;
  example.base = {"∅"};
  example.base_depth = 1;
  ModelConfig invariant;
  invariant.name = "word_tree_invariant";
  ModelConfig delta;
  delta.name = "delta";
  ModelConfig sink;
  sink.name = "sink_chain";
  sink.base = {"0", "1", "2"};
  c.models = {example, invariant, delta, sink};
  c.witness_epsilon = 1.0;
  return c;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Kernel towers under branching operators"};
  app.require_subcommand(1);
  std::string config_path, out, format;
  std::optional<std::uint64_t> seed;
  std::optional<double> tol;
  std::optional<std::size_t> max_level;
  std::optional<int> threads;
  bool verbose = false;

  const char* names[] = {"tower", "diagonal", "gaussian", "boundary", "verify"};
  const char* help[] = {"kernel tower, defects, telescoping and K_inf estimate",
                        "diagonal traces, verdicts, layer-cake and certificates",
                        "Gaussian defect martingale sampling and covariance checks",
                        "Doob transform, cylinder measures and boundary feature Gram",
                        "run every identity check across the configured models"};
  for (int i = 0; i < 5; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], help[i]);
    sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "RNG seed (overrides config)");
    sub->add_option("--out", out, "output directory (overrides config)");
    sub->add_option("--format", format, "csv, json or both")->check(CLI::IsMember({"csv", "json", "both"}));
    sub->add_option("--tol", tol, "PSD tolerance")->check(CLI::PositiveNumber);
    sub->add_option("--max-level", max_level, "tower horizon N");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::Range(1, 1024));
    sub->add_flag("--verbose", verbose, "timings and progress on stderr");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: input: " << e.what() << "\n";
    return exit_code(ErrorCategory::input);
  }
  const std::string command = app.get_subcommands().front()->get_name();
  g_verbose = verbose;

  try {
    ExperimentConfig config;
    if (!config_path.empty()) config = load_config(config_path);
    else if (command == "verify") config = default_verify_config();
    if (seed) config.seed = *seed;
    if (!out.empty()) config.out = out;
    if (!format.empty()) config.format = format;
    if (tol) config.tol = *tol;
    if (max_level) config.horizon = *max_level;
    if (threads) config.threads = *threads;

    RunReport report;
    {
      Stopwatch sw(verbose, command);
      if (command == "tower") report = cmd_tower(config);
      else if (command == "diagonal") report = cmd_diagonal(config);
      else if (command == "gaussian") report = cmd_gaussian(config);
      else if (command == "boundary") report = cmd_boundary(config);
      else report = cmd_verify(config);
    }
    if (command == "verify" && !config.seed) config.seed = kVerifyDefaultSeed;
    write_bundle(report, config, config.out);
    if (const Check* f = report.first_failure()) {
      std::cerr << "FAILED " << f->module << ": " << f->identity << " [" << f->subject << "] residual "
                << format_double(f->residual) << " > tolerance " << format_double(f->tolerance) << "\n";
      std::cout << command << ": fail (" << report.checks.size() << " checks) -> " << config.out << "\n";
      return kExitCheckFailed;
    }
    std::cout << command << ": pass (" << report.checks.size() << " checks) -> " << config.out << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.category()) << ": " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 70;
  }
}

}  // namespace kt
