#include <cmath>

#include "doctest.h"
#include "kt/errors.hpp"
#include "kt/models.hpp"
#include "kt/tower.hpp"
#include "oracles.hpp"

using namespace kt;

namespace {

std::shared_ptr<const WordTreeModel> example() { return make_word_tree({2, 0.5, 0.5, 1.0}); }

}  // namespace

TEST_CASE("apply_L on the word tree kernels") {
  auto wt = example();
  auto tree = wt->system();
  auto lj0 = apply_L(wt->J0(), tree);
  auto le = apply_L(wt->E(), tree);
  auto lj = apply_L(wt->J(), tree);
  auto lzero = apply_L(zero_kernel(), tree);
  const auto points = orbit_closure(*tree, {tree->root()}, 2);
  for (Point s : points) {
    for (Point t : points) {
      CHECK((*lj0)(s, t) == doctest::Approx((*wt->J0())(s, t)).epsilon(1e-14));
      CHECK((*lj)(s, t) == doctest::Approx((*wt->J())(s, t)).epsilon(1e-14));
      CHECK((*le)(s, t) == doctest::Approx(0.5 * (*wt->E())(s, t)).epsilon(1e-14));
      CHECK((*lzero)(s, t) == 0.0);
    }
  }
  // memoized values are stable on repeat
  CHECK((*le)(tree->root(), tree->root()) == (*le)(tree->root(), tree->root()));
}

TEST_CASE("subinvariance_check") {
  auto wt = example();
  auto tree = wt->system();
  const auto points = orbit_closure(*tree, {tree->root()}, 2);
  CHECK(subinvariance_check(wt->K(), tree, points).psd);
  // L J0 = J0: the defect Gram is zero
  const auto r0 = subinvariance_check(wt->J0(), tree, points);
  CHECK(r0.psd);
  CHECK(std::abs(r0.min_eigenvalue) < 1e-14);
  // delta kernel on the binary tree: L K - K = K, the identity
  auto delta = make_delta_model(2);
  const auto rd = subinvariance_check(delta.kernel, delta.system, points);
  CHECK(rd.psd);
  CHECK(rd.min_eigenvalue == doctest::Approx(1.0));
  // a kernel that loses mass under L
  auto shrink = make_kernel("shrink", [](Point, Point) { return 1.0; });
  auto collapse = std::make_shared<TableSystem>(std::vector<std::vector<int>>{{1, 1}});
  auto table = make_kernel("t", [](Point s, Point t) { return s == t ? (s.id == 0 ? 2.0 : 1.0) : 0.0; });
  CHECK_FALSE(subinvariance_check(table, collapse, {TableSystem::state(0), TableSystem::state(1)}).psd);
  CHECK(subinvariance_check(shrink, collapse, {TableSystem::state(0), TableSystem::state(1)}).psd);
}

TEST_CASE("build_tower on the worked example matches the closed forms") {
  auto wt = example();
  auto tree = wt->system();
  const auto tower = build_tower(wt->K(), tree, {tree->root()}, 4);
  REQUIRE(tower.levels.size() == 5);
  REQUIRE(tower.defects.size() == 4);
  CHECK(tower.strategy == "recursive");
  for (std::size_t n = 0; n <= 4; ++n) {
    CHECK(tower.levels[n](0, 0) == doctest::Approx(2.0 - std::pow(0.5, double(n + 1))).epsilon(1e-15));
  }
  CHECK(tower.levels[0](0, 0) == 1.5);
  for (std::size_t n = 0; n < 4; ++n) {
    CHECK(tower.defects[n](0, 0) == doctest::Approx(0.25 * std::pow(0.5, double(n))).epsilon(1e-15));
    CHECK(tower.defect_reports[n].psd);
  }
  CHECK(tower.labels == std::vector<std::string>{"∅"});
  CHECK(tower.precheck.psd);
  CHECK(tower.precheck_size > 1);
}

TEST_CASE("build_tower agrees with the oracle across the parameter grid") {
  for (int m : {2, 3}) {
    for (double r : {0.2, 0.5, 0.9}) {
      for (double c : {0.1, 0.5, 0.9}) {
        for (double eta : {0.0, 1.0, 3.0}) {
          const oracle::Params p{m, r, c, eta};
          auto wt = make_word_tree({m, r, c, eta});
          auto tree = wt->system();
          const auto base = orbit_closure(*tree, {tree->root()}, 1);
          const auto tower = build_tower(wt->K(), tree, base, 6);
          double worst = 0.0;
          for (std::size_t n = 0; n <= 6; ++n) {
            for (std::size_t a = 0; a < base.size(); ++a) {
              for (std::size_t b = 0; b < base.size(); ++b) {
                const double want = oracle::K_n(p, n, tower.labels[a], tower.labels[b]);
                worst = std::max(worst, std::abs(tower.levels[n](a, b) - want));
                if (n < 6) {
                  const double d = oracle::D_n(p, n, tower.labels[a], tower.labels[b]);
                  worst = std::max(worst, std::abs(tower.defects[n](a, b) - d));
                }
              }
            }
          }
          CHECK(worst <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("invariant and delta towers") {
  auto wt = example();
  auto tree = wt->system();
  const auto base = orbit_closure(*tree, {tree->root()}, 1);
  const auto inv = build_tower(wt->J(), tree, base, 5);
  for (const auto& d : inv.defects) CHECK(max_abs(d.entries) < 1e-14);

  auto delta = make_delta_model(2);
  const auto dt = build_tower(delta.kernel, delta.system, {tree->root()}, 10);
  for (std::size_t n = 0; n <= 10; ++n) CHECK(dt.levels[n](0, 0) == std::ldexp(1.0, int(n)));

  auto delta3 = make_delta_model(3);
  const auto d3 = build_tower(delta3.kernel, delta3.system, {delta3.system->parse("12")}, 4);
  CHECK(d3.levels[4](0, 0) == 81.0);
}

TEST_CASE("level_via_words agrees with the tower") {
  for (int m : {2, 3}) {
    auto wt = make_word_tree({m, 0.4, 0.6, 1.5});
    auto tree = wt->system();
    const std::vector<Point> base{tree->root(), tree->parse("1"), tree->parse("21")};
    const std::size_t horizon = m == 2 ? 8 : 6;
    const auto tower = build_tower(wt->K(), tree, base, horizon);
    CHECK(max_abs_diff(level_via_words(*wt->K(), *tree, base, 0).entries, gram(*wt->K(), base).entries) == 0.0);
    for (std::size_t n = 0; n <= horizon; ++n) {
      const auto words = level_via_words(*wt->K(), *tree, base, n);
      CHECK(max_abs_diff(words.entries, tower.levels[n].entries) <= 1e-12);
      if (n < horizon) {
        const auto dw = defect_via_words(wt->K(), tree, base, n);
        CHECK(max_abs_diff(dw.entries, tower.defects[n].entries) <= 1e-12);
      }
    }
  }
  auto delta = make_delta_model(2);
  CHECK(level_via_words(*delta.kernel, *delta.system, delta.default_base, 5)(0, 0) == 32.0);
  CHECK_THROWS_AS(level_via_words(*delta.kernel, *delta.system, delta.default_base, 5, Limits{16}), ResourceError);
}

TEST_CASE("finite-state towers use the dense path") {
  const auto model = load_finite_state(sink_chain_spec());
  const std::vector<Point> base{TableSystem::state(0), TableSystem::state(1), TableSystem::state(2)};
  const auto tower = build_tower(model.kernel, model.system, base, 4);
  CHECK(tower.strategy == "dense");
  CHECK(tower.defects[0](0, 0) == 0.5);
  CHECK(max_abs(tower.defects[0].entries) == 0.5);
  for (std::size_t n = 1; n < 4; ++n) CHECK(max_abs(tower.defects[n].entries) == 0.0);
  CHECK(tower.levels[4](0, 0) == 2.0);
  CHECK(tower.levels[4](0, 1) == 1.0);
  for (std::size_t n = 0; n <= 4; ++n) {
    CHECK(max_abs_diff(level_via_words(*model.kernel, *model.system, base, n).entries, tower.levels[n].entries) <= 1e-12);
  }

  // a permuting map with the identity as second branch: D_0 is a pullback
  FiniteStateSpec grow;
  grow.maps = {{1, 2, 0}, {0, 1, 2}};
  grow.kernel = {{2, 1, 0}, {1, 2, 1}, {0, 1, 2}};
  const auto gm = load_finite_state(grow);
  const std::vector<Point> all{TableSystem::state(0), TableSystem::state(1), TableSystem::state(2)};
  const auto gt = build_tower(gm.kernel, gm.system, all, 6);
  CHECK(gt.strategy == "dense");
  for (std::size_t n = 0; n <= 6; ++n) {
    CHECK(max_abs_diff(level_via_words(*gm.kernel, *gm.system, all, n).entries, gt.levels[n].entries) <= 1e-9);
  }
}

TEST_CASE("build_tower rejects kernels that are not subinvariant") {
  FiniteStateSpec bad;
  bad.maps = {{1, 1}, {1, 1}};
  bad.kernel = {{2, 0}, {0, 1}};
  const auto model = load_finite_state(bad);
  CHECK_THROWS_AS(build_tower(model.kernel, model.system, {TableSystem::state(0)}, 3), ModelError);
  try {
    build_tower(model.kernel, model.system, {TableSystem::state(0)}, 3);
  } catch (const ModelError& e) {
    CHECK(std::string(e.what()).find("subinvarian") != std::string::npos);
  }
}

TEST_CASE("tower structure: monotone levels and telescoping") {
  auto wt = make_word_tree({3, 0.7, 0.8, 0.5});
  auto tree = wt->system();
  const auto base = orbit_closure(*tree, {tree->root()}, 1);
  const auto tower = build_tower(wt->K(), tree, base, 6);
  for (std::size_t n = 0; n < 6; ++n) {
    CHECK(psd_leq(tower.levels[n], tower.levels[n + 1]).psd);
  }
  CHECK(telescoping_residual(tower) <= 1e-12);

  auto corrupted = tower;
  corrupted.levels.back().entries(0, 1) += 1e-3;
  CHECK(telescoping_residual(corrupted) >= 1e-4);
}

TEST_CASE("estimate_K_infinity with the certified bound") {
  auto wt = example();
  auto tree = wt->system();
  const auto model = wt->model();
  TailCertificate cert{*model.certificate, {tree->root()}};
  StoppingRule rule;
  rule.trace_eps = 0.0;
  rule.max_level = 20;
  const auto est = estimate_K_infinity(model.kernel, tree, {tree->root()}, rule, &cert);
  CHECK(est.certified);
  CHECK(est.level == 20);
  CHECK(est.stop == StopReason::max_level);
  CHECK(est.error_bound(0, 0) == doctest::Approx(0.5 * std::pow(0.5, 20)).epsilon(1e-12));
  const double gap = std::abs(wt->K_infinity(tree->root(), tree->root()) - est.estimate(0, 0));
  CHECK(gap <= est.error_bound(0, 0) * (1 + 1e-12));
  CHECK(est.traces.size() == 21);

  // without a certificate: geometric extrapolation of the diagonal increments
  const auto unc = estimate_K_infinity(model.kernel, tree, {tree->root()}, rule);
  CHECK_FALSE(unc.certified);
  CHECK(unc.error_bound(0, 0) == doctest::Approx(std::pow(0.5, 21)).epsilon(1e-9));
  CHECK(gap <= unc.error_bound(0, 0) * (1 + 1e-9));

  // the trace rule stops at the first level whose increment is below eps
  StoppingRule loose;
  loose.trace_eps = 1e-6;
  const auto conv = estimate_K_infinity(model.kernel, tree, {tree->root()}, loose);
  CHECK(conv.stop == StopReason::converged);
  CHECK(conv.level == 18);

  // the default eps (1e-10 tr K_0) lies beyond the binary word cap
  const auto capped = estimate_K_infinity(model.kernel, tree, {tree->root()});
  CHECK(capped.stop == StopReason::resource_cap);
  CHECK(capped.level == 24);
}

TEST_CASE("estimate_K_infinity: invariant, blow-up and word cap") {
  auto wt = example();
  auto tree = wt->system();
  const auto inv = estimate_K_infinity(wt->J(), tree, {tree->root(), tree->parse("2")});
  CHECK(inv.stop == StopReason::converged);
  CHECK(inv.level == 0);
  CHECK(max_abs(inv.error_bound) == 0.0);

  auto delta = make_delta_model(2);
  StoppingRule low;
  low.ceiling = 1e6;
  CHECK_THROWS_AS(estimate_K_infinity(delta.kernel, delta.system, delta.default_base, low), ModelError);
  try {
    estimate_K_infinity(delta.kernel, delta.system, delta.default_base, low);
  } catch (const ModelError& e) {
    CHECK(std::string(e.what()).find("blow-up") != std::string::npos);
    CHECK(std::string(e.what()).find("K_20") != std::string::npos);
  }
  const auto capped = estimate_K_infinity(delta.kernel, delta.system, delta.default_base);
  CHECK(capped.stop == StopReason::resource_cap);
  CHECK(capped.level == 24);
  CHECK(std::isinf(capped.error_bound(0, 0)));
}

TEST_CASE("extrapolated_tail") {
  CHECK(std::isinf(extrapolated_tail({})));
  CHECK(extrapolated_tail({1.0, 0.0}) == 0.0);
  CHECK(std::isinf(extrapolated_tail({1.0})));
  CHECK(std::isinf(extrapolated_tail({1.0, 1.0})));
  CHECK(extrapolated_tail({0.4, 0.2}) == doctest::Approx(0.2));
  CHECK(extrapolated_tail({1.0, 0.25}) == doctest::Approx(0.25 / 3.0));
}

TEST_CASE("invariance_residual and minimality_check") {
  auto wt = example();
  auto tree = wt->system();
  const auto base = orbit_closure(*tree, {tree->root()}, 1);
  CHECK(invariance_residual(wt->J(), tree, base) <= 1e-14);
  CHECK(invariance_residual(wt->K(), tree, base) == doctest::Approx(0.25));
  auto truncated = level_kernel(wt->K(), tree, 10);
  const double tail = 0.5 * std::pow(0.5, 10);
  CHECK(invariance_residual(truncated, tree, base) <= 2 * tail);

  StoppingRule rule;
  rule.trace_eps = 0.0;
  rule.max_level = 12;
  const auto est = estimate_K_infinity(wt->K(), tree, base, rule);
  const auto exact = minimality_check(est.estimate, wt->J(), wt->K(), tree);
  CHECK(exact.premises_hold());
  CHECK(exact.conclusion.psd);
  CHECK(exact.conclusion.min_eigenvalue >= 0.0);
  CHECK(exact.conclusion.min_eigenvalue <= est.error_bound.maxCoeff() * base.size());

  auto bigger = sum(wt->J(), wt->J0());
  const auto loose = minimality_check(est.estimate, bigger, wt->K(), tree);
  CHECK(loose.premises_hold());
  CHECK(loose.conclusion.min_eigenvalue > 0.01);

  // K itself is not invariant, so the premise fails
  CHECK_FALSE(minimality_check(est.estimate, wt->K(), wt->K(), tree).premises_hold());
}

TEST_CASE("defect_embedding reproduces K_N") {
  auto wt = example();
  auto tree = wt->system();
  const auto base = std::vector<Point>{tree->root(), tree->parse("1"), tree->parse("12")};
  const auto t0 = build_tower(wt->K(), tree, base, 0);
  const auto e0 = defect_embedding(t0);
  CHECK(max_abs_diff(e0.gram(), t0.levels[0].entries) <= 1e-12);

  const auto tower = build_tower(wt->K(), tree, base, 5);
  const auto emb = defect_embedding(tower);
  CHECK(emb.block_offsets.size() == 7);
  CHECK(max_abs_diff(emb.gram(), tower.levels[5].entries) <= 1e-10);
  const Eigen::MatrixXd z = emb.level_zero_block();
  CHECK(max_abs_diff(z * z.transpose(), tower.levels[0].entries) <= 1e-12);
}

TEST_CASE("tail Cauchy-Schwarz on off-diagonal entries") {
  auto wt = make_word_tree({2, 0.6, 0.7, 0.8});
  auto tree = wt->system();
  const auto base = orbit_closure(*tree, {tree->root()}, 2);
  const auto tower = build_tower(wt->K(), tree, base, 6);
  for (std::size_t n = 0; n <= 6; ++n) {
    for (std::size_t a = 0; a < base.size(); ++a) {
      for (std::size_t b = 0; b < base.size(); ++b) {
        const double ga = wt->K_infinity(base[a], base[a]) - tower.levels[n](a, a);
        const double gb = wt->K_infinity(base[b], base[b]) - tower.levels[n](b, b);
        const double gab = std::abs(wt->K_infinity(base[a], base[b]) - tower.levels[n](a, b));
        CHECK(gab <= std::sqrt(ga * gb) + 1e-14);
      }
    }
  }
}
