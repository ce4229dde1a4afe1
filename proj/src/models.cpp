#include "kt/models.hpp"

#include <cmath>

#include "kt/errors.hpp"

namespace kt {

namespace {

class InvariantWordTreeOracle final : public ClosedForm {
 public:
  explicit InvariantWordTreeOracle(std::shared_ptr<const WordTreeModel> base) : base_(std::move(base)) {}
  double K_n(std::size_t, Point s, Point t) const override { return base_->K_infinity(s, t); }
  double D_n(std::size_t, Point, Point) const override { return 0.0; }
  double K_infinity(Point s, Point t) const override { return base_->K_infinity(s, t); }

 private:
  std::shared_ptr<const WordTreeModel> base_;
};

}  // namespace

WordTreeModel::WordTreeModel(WordTreeParams params)
    : params_(params) {
  if (params.m < 2) throw InputError("word tree model needs m >= 2");
  if (!(params.r > 0.0 && params.r < 1.0)) throw InputError("word tree model needs 0 < r < 1");
  if (!(params.c > 0.0 && params.c < 1.0)) throw InputError("word tree model needs 0 < c < 1");
  if (!(params.eta >= 0.0)) throw InputError("word tree model needs eta >= 0");
  system_ = std::make_shared<WordTreeSystem>(params.m);
  const std::size_t n = system_->max_length() + 1;
  const double m = params.m;
  inv_m_pow_.resize(n);
  r_pow_.resize(n);
  inv_m_half_pow_.resize(2 * n);
  for (std::size_t k = 0; k < n; ++k) {
    inv_m_pow_[k] = std::pow(m, -static_cast<double>(k));
    r_pow_[k] = std::pow(params.r, static_cast<double>(k));
  }
  for (std::size_t k = 0; k < 2 * n; ++k) {
    inv_m_half_pow_[k] = std::pow(m, -0.5 * static_cast<double>(k));
  }
}

double WordTreeModel::j0(Point u, Point v) const {
  return u == v ? inv_m_pow_[system_->length(u)] : 0.0;
}

double WordTreeModel::j1(Point u, Point v) const {
  return inv_m_half_pow_[system_->length(u) + system_->length(v)];
}

double WordTreeModel::e(Point u, Point v) const {
  if (u != v) return 0.0;
  const std::size_t k = system_->length(u);
  return params_.c * r_pow_[k] * inv_m_pow_[k];
}

KernelPtr WordTreeModel::J0() const {
  return make_kernel("J0", [self = shared_from_this()](Point u, Point v) { return self->j0(u, v); });
}

KernelPtr WordTreeModel::J1() const {
  return make_kernel("J1", [self = shared_from_this()](Point u, Point v) { return self->j1(u, v); });
}

KernelPtr WordTreeModel::E() const {
  return make_kernel("E", [self = shared_from_this()](Point u, Point v) { return self->e(u, v); });
}

KernelPtr WordTreeModel::J() const {
  return make_kernel("J", [self = shared_from_this()](Point u, Point v) {
    return self->j0(u, v) + self->params_.eta * self->j1(u, v);
  });
}

KernelPtr WordTreeModel::K() const {
  return make_kernel("K", [self = shared_from_this()](Point u, Point v) {
    return self->j0(u, v) + self->params_.eta * self->j1(u, v) - self->e(u, v);
  });
}

double WordTreeModel::K_n(std::size_t n, Point s, Point t) const {
  return K_infinity(s, t) - std::pow(params_.r, static_cast<double>(n)) * e(s, t);
}

double WordTreeModel::D_n(std::size_t n, Point s, Point t) const {
  return std::pow(params_.r, static_cast<double>(n)) * (1.0 - params_.r) * e(s, t);
}

double WordTreeModel::K_infinity(Point s, Point t) const {
  return j0(s, t) + params_.eta * j1(s, t);
}

double WordTreeModel::h(Point s) const {
  return (1.0 + params_.eta) * inv_m_pow_[system_->length(s)];
}

LyapunovCandidate WordTreeModel::defect_certificate() const {
  const double ratio = params_.r / params_.m;
  auto system = system_;
  LyapunovCandidate c;
  c.r = [system, ratio](Point s) { return std::pow(ratio, static_cast<double>(system->length(s))); };
  c.C = (1.0 - params_.r) * params_.c;
  c.beta = params_.r;
  c.form = LyapunovForm::defect;
  c.description = "r(s) = (r/m)^|s|";
  return c;
}

std::shared_ptr<const WordTreeModel> make_word_tree(WordTreeParams params) {
  return std::make_shared<WordTreeModel>(params);
}

Model WordTreeModel::model() const {
  Model out;
  out.name = "word_tree";
  out.system = system_;
  out.kernel = K();
  out.oracle = shared_from_this();
  out.certificate = defect_certificate();
  out.default_base = {system_->root()};
  return out;
}

Model WordTreeModel::invariant_model() const {
  Model out;
  out.name = "word_tree_invariant";
  out.system = system_;
  out.kernel = J();
  out.oracle = std::make_shared<InvariantWordTreeOracle>(shared_from_this());
  out.default_base = {system_->root()};
  return out;
}

Model make_delta_model(int m) {
  if (m < 2) throw InputError("delta model needs m >= 2");
  auto system = std::make_shared<WordTreeSystem>(m);
  Model out;
  out.name = "delta";
  out.system = system;
  out.kernel = make_kernel("delta", [](Point u, Point v) { return u == v ? 1.0 : 0.0; });
  out.default_base = {system->root()};
  return out;
}

FiniteStateSpec sink_chain_spec(double deficit) {
  FiniteStateSpec spec;
  spec.name = "sink_chain";
  spec.maps = {{1, 1, 2, 3}, {2, 3, 3, 3}};
  spec.kernel = {{2.0 - deficit, 1, 0, 0}, {1, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 0}};
  return spec;
}

Model load_finite_state(const FiniteStateSpec& spec, double tol) {
  if (spec.maps.empty()) throw InputError("finite-state model: at least one map table required");
  auto system = std::make_shared<TableSystem>(spec.maps);
  const auto states = static_cast<std::size_t>(system->states());
  if (spec.kernel.size() != states) {
    throw InputError("finite-state model: kernel table has " + std::to_string(spec.kernel.size()) +
                     " rows, expected " + std::to_string(states));
  }
  Eigen::MatrixXd table(static_cast<Eigen::Index>(states), static_cast<Eigen::Index>(states));
  for (std::size_t a = 0; a < states; ++a) {
    if (spec.kernel[a].size() != states) {
      throw InputError("finite-state model: kernel row " + std::to_string(a) + " has " +
                       std::to_string(spec.kernel[a].size()) + " entries, expected " +
                       std::to_string(states));
    }
    for (std::size_t b = 0; b < states; ++b) {
      const double v = spec.kernel[a][b];
      if (!std::isfinite(v)) throw InputError("finite-state model: non-finite kernel entry");
      table(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
    }
  }
  const double asym = max_abs_diff(table, table.transpose());
  if (asym > tol * std::max(max_abs(table), 1.0)) {
    throw InputError("finite-state model: kernel table not symmetric (max asymmetry " +
                     std::to_string(asym) + ")");
  }
  const PsdReport report = psd_check(table, tol);
  if (!report.psd) {
    throw InputError("finite-state model: kernel table not PSD (min eigenvalue " +
                     std::to_string(report.min_eigenvalue) + ")");
  }
  Model out;
  out.name = spec.name;
  out.system = system;
  out.kernel = make_kernel("table", [table](Point s, Point t) {
    return table(static_cast<Eigen::Index>(s.id), static_cast<Eigen::Index>(t.id));
  });
  out.certificate = spec.certificate;
  out.default_base = {TableSystem::state(0)};
  return out;
}

double oracle_K_n(const Model& model, std::size_t n, Point s, Point t) {
  if (!model.oracle) throw ContractError("model '" + model.name + "' has no closed-form oracle");
  return model.oracle->K_n(n, s, t);
}

double oracle_defect(const Model& model, std::size_t n, Point s, Point t) {
  if (!model.oracle) throw ContractError("model '" + model.name + "' has no closed-form oracle");
  return model.oracle->D_n(n, s, t);
}

}  // namespace kt
