#include <cmath>
#include <sstream>

#include "doctest.h"
#include "kt/boundary.hpp"
#include "kt/errors.hpp"
#include "kt/models.hpp"

using namespace kt;

namespace {

std::shared_ptr<const WordTreeModel> example() { return make_word_tree({2, 0.5, 0.5, 1.0}); }

DoobChain example_chain(const std::shared_ptr<const WordTreeModel>& wt, std::size_t depth = 3) {
  auto tree = wt->system();
  return build_doob([wt](Point s) { return wt->h(s); }, tree, orbit_closure(*tree, {tree->root()}, depth));
}

std::vector<Point> sink_states() {
  return {TableSystem::state(0), TableSystem::state(1), TableSystem::state(2), TableSystem::state(3)};
}

DoobChain sink_chain(const Model& sink) {
  return build_doob(computed_gauge(sink.kernel, sink.system, 6), sink.system, sink_states(), 1e-12, "computed");
}

}  // namespace

TEST_CASE("build_doob on the worked example") {
  auto wt = example();
  auto tree = wt->system();
  const auto chain = example_chain(wt);
  CHECK(chain.harmonic_residual == 0.0);
  for (Point s : chain.domain) {
    CHECK(chain.gauge_at(s) == 2.0 * std::pow(0.5, double(tree->length(s))));
    CHECK(chain.p(1, s) == 0.5);
    CHECK(chain.p(2, s) == 0.5);
  }
  CHECK(chain.p_word(Word{2, 1, 1}, tree->parse("12")) == 0.125);
}

TEST_CASE("build_doob validation") {
  auto wt = example();
  auto tree = wt->system();
  const std::vector<Point> dom{tree->root(), tree->parse("1")};
  CHECK_THROWS_AS(build_doob([](Point) { return -1.0; }, tree, dom), InputError);
  CHECK_THROWS_AS(build_doob([](Point) { return 0.0; }, tree, dom), InputError);
  // J1 diagonal m^-|s| is harmonic; a constant is not (P 1 = 2)
  CHECK_NOTHROW(build_doob([&](Point s) { return std::pow(0.5, double(tree->length(s))); }, tree, dom));
  try {
    build_doob([](Point) { return 1.0; }, tree, dom);
    FAIL("expected ModelError");
  } catch (const ModelError& e) {
    CHECK(std::string(e.what()).find("∅") != std::string::npos);
  }

  // m = 1: p_1 = 1
  auto one = TableSystem::identity(3, 1);
  const auto c1 = build_doob([](Point) { return 1.0; }, one, {TableSystem::state(0), TableSystem::state(2)});
  CHECK(c1.p(1, TableSystem::state(2)) == 1.0);
  const auto path = sample_path(c1, TableSystem::state(2), 5, 9);
  CHECK(path.word == Word{1, 1, 1, 1, 1});
  CHECK(path.probability == 1.0);
}

TEST_CASE("finite-state chain with a computed gauge") {
  const auto sink = load_finite_state(sink_chain_spec());
  const auto chain = sink_chain(sink);
  REQUIRE(chain.domain.size() == 3);
  REQUIRE(chain.excluded.size() == 1);
  CHECK(chain.excluded[0] == TableSystem::state(3));
  CHECK(chain.harmonic_residual <= 1e-15);
  const double gauge[] = {2, 1, 1};
  for (int k = 0; k < 3; ++k) {
    const Point s = TableSystem::state(k);
    CHECK(chain.gauge_at(s) == doctest::Approx(gauge[k]).epsilon(1e-15));
    CHECK(std::abs(chain.p(1, s) + chain.p(2, s) - 1.0) <= 1e-12);
  }
  CHECK(chain.p(2, TableSystem::state(1)) == 0.0);
  CHECK_THROWS_AS(chain.gauge_at(TableSystem::state(3)), InputError);
  CHECK_THROWS_AS(chain.p(1, TableSystem::state(3)), InputError);
}

TEST_CASE("cylinder measures") {
  auto wt = example();
  auto tree = wt->system();
  const auto chain = example_chain(wt);
  const auto t0 = cylinder_measure(chain, tree->root(), 0);
  REQUIRE(t0.levels.size() == 1);
  CHECK(t0.levels[0][0] == 1.0);

  for (const char* label : {"", "1", "212"}) {
    const auto t = cylinder_measure(chain, tree->parse(label), 12, {}, 2);
    REQUIRE(t.levels.size() == 13);
    for (std::size_t k = 0; k <= 12; ++k) {
      REQUIRE(t.levels[k].size() == (std::size_t{1} << k));
      bool exact = true;
      for (double p : t.levels[k]) exact = exact && p == std::ldexp(1.0, -int(k));
      CHECK(exact);
    }
    CHECK(t.max_level_sum_error == 0.0);
    CHECK(t.max_consistency_error == 0.0);
    CHECK(t.max_chain_rule_error == 0.0);
  }
  CHECK_THROWS_AS(cylinder_measure(chain, tree->root(), 30), ResourceError);

  const auto sink = load_finite_state(sink_chain_spec());
  const auto sc = sink_chain(sink);
  for (int k = 0; k < 3; ++k) {
    const auto t = cylinder_measure(sc, TableSystem::state(k), 12);
    CHECK(t.max_level_sum_error <= 1e-12);
    CHECK(t.max_consistency_error <= 1e-12);
    CHECK(t.max_chain_rule_error <= 1e-12);
  }
  // from state 0: p_1 = h(1)/h(0) = 1/2, p_2 = h(2)/h(0) = 1/2; from 1 always to 1
  const auto t = cylinder_measure(sc, TableSystem::state(0), 2);
  CHECK(t.levels[1][0] == doctest::Approx(0.5));
  CHECK(t.levels[2][0] == doctest::Approx(0.5));   // "11": 0 -> 1 -> 1
  CHECK(t.levels[2][1] == 0.0);                    // "12": 1 -> sink
  CHECK(t.levels[2][2] == doctest::Approx(0.5));   // "21": 0 -> 2 -> 2
}

TEST_CASE("cylinder CSV export") {
  auto wt = example();
  auto tree = wt->system();
  const auto chain = example_chain(wt);
  std::ostringstream out;
  write_cylinder_csv(out, *tree, {cylinder_measure(chain, tree->parse("1"), 1)});
  CHECK(out.str() == "anchor_label,word,probability\n1,∅,1\n1,1,0.5\n1,2,0.5\n");
}

TEST_CASE("sampled paths") {
  auto wt = example();
  auto tree = wt->system();
  const auto chain = example_chain(wt);
  const std::size_t paths = 100000, n = 3;
  std::vector<double> counts(8, 0.0);
  for (std::size_t k = 0; k < paths; ++k) {
    const auto p = sample_path(chain, tree->root(), n, 17, k);
    REQUIRE(p.states.size() == n + 1);
    CHECK(p.states[n] == compose_reversed(*tree, p.word, tree->root()));
    CHECK(p.probability == 0.125);
    std::size_t idx = 0;
    for (std::size_t j = 0; j < n; ++j) idx = idx * 2 + static_cast<std::size_t>(p.word[j] - 1);
    counts[idx] += 1.0;
  }
  const double se = std::sqrt(0.125 * 0.875 / double(paths));
  for (double c : counts) CHECK(std::abs(c / double(paths) - 0.125) <= 5 * se);
  CHECK(sample_path(chain, tree->root(), 6, 17, 4).word == sample_path(chain, tree->root(), 6, 17, 4).word);

  // chain rule on the finite-state model
  const auto sink = load_finite_state(sink_chain_spec());
  const auto sc = sink_chain(sink);
  for (std::uint64_t k = 0; k < 50; ++k) {
    const auto p = sample_path(sc, TableSystem::state(0), 8, 3, k);
    CHECK(std::abs(p.probability - sc.p_word(p.word, TableSystem::state(0))) <= 1e-12);
    CHECK(p.probability > 0.0);
  }
}

TEST_CASE("Markov operator Q and intertwining") {
  auto wt = example();
  auto tree = wt->system();
  const auto chain = example_chain(wt);
  const PointFunction one = [](Point) { return 1.0; };
  const PointFunction len = [&](Point s) { return double(tree->length(s)); };
  const PointFunction geo = [&](Point s) { return std::pow(0.5, double(tree->length(s))); };
  for (const char* label : {"", "2", "1121"}) {
    const Point s = tree->parse(label);
    CHECK(apply_Q(chain, one, s) == 1.0);
    CHECK(apply_Q(chain, len, s) == len(s) + 1.0);
    CHECK(apply_Q_power(chain, geo, s, 0) == geo(s));
    CHECK(apply_Q_power(chain, geo, s, 4) == doctest::Approx(geo(s) / 16).epsilon(1e-15));
    for (std::size_t n = 0; n <= 6; ++n) {
      const auto r = intertwining_check(chain, geo, s, n);
      CHECK(r.one_step <= 1e-12);
      CHECK(r.n_step <= 1e-12);
      const auto r1 = intertwining_check(chain, one, s, n);
      CHECK(r1.one_step <= 1e-12);
      CHECK(r1.n_step <= 1e-12);
    }
  }

  const auto sink = load_finite_state(sink_chain_spec());
  const auto sc = sink_chain(sink);
  const PointFunction f = [](Point s) { return 1.0 + 3.0 * double(s.id) * double(s.id); };
  for (int k = 0; k < 3; ++k) {
    CHECK(apply_Q(sc, one, TableSystem::state(k)) == doctest::Approx(1.0).epsilon(1e-15));
    for (std::size_t n = 0; n <= 6; ++n) {
      const auto r = intertwining_check(sc, f, TableSystem::state(k), n);
      CHECK(r.one_step <= 1e-12);
      CHECK(r.n_step <= 1e-12);
    }
  }
}

TEST_CASE("h-normalization") {
  auto wt = example();
  auto tree = wt->system();
  const auto chain = example_chain(wt);
  const auto kinf = make_kernel("Kinf", [wt](Point s, Point t) { return wt->K_infinity(s, t); });
  const auto hh = make_kernel("hh", [wt](Point s, Point t) { return wt->h(s) * wt->h(t); });
  const auto nk = h_normalize(kinf, chain);
  const auto nh = h_normalize(hh, chain);
  const auto nz = h_normalize(zero_kernel(), chain);
  for (Point s : chain.domain) {
    CHECK((*nk)(s, s) == doctest::Approx(1.0 / wt->h(s)).epsilon(1e-15));
    for (Point t : chain.domain) {
      CHECK((*nh)(s, t) == doctest::Approx(1.0).epsilon(1e-15));
      CHECK((*nz)(s, t) == 0.0);
    }
  }
  const auto sink = load_finite_state(sink_chain_spec());
  const auto sc = sink_chain(sink);
  try {
    (*h_normalize(sink.kernel, sc))(TableSystem::state(3), TableSystem::state(0));
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(sink.system->label(TableSystem::state(3))) != std::string::npos);
  }
}

TEST_CASE("normalized operator L~") {
  auto wt = example();
  auto tree = wt->system();
  const auto chain = example_chain(wt);
  const auto ones = make_kernel("one", [](Point, Point) { return 1.0; });
  const auto F = orbit_closure(*tree, {tree->root()}, 1);
  const auto lt = apply_L_tilde(ones, chain);
  const auto lz = apply_L_tilde(zero_kernel(), chain);
  for (Point s : F)
    for (Point t : F) {
      CHECK((*lt)(s, t) == 0.5);
      CHECK((*lz)(s, t) == 0.0);
    }

  CHECK(normalization_commutes(wt->K(), chain, F, 0) == 0.0);
  for (std::size_t n = 1; n <= 5; ++n) CHECK(normalization_commutes(wt->K(), chain, F, n) <= 1e-12);
  // n = 1 by hand at (1, 2): sum_i K(i1, i2) / (h(1) h(2))
  const Point a = tree->parse("1"), b = tree->parse("2");
  double direct = 0.0;
  for (int i = 1; i <= 2; ++i) direct += (*wt->K())(tree->apply(i, a), tree->apply(i, b));
  direct /= wt->h(a) * wt->h(b);
  CHECK((*apply_L_tilde(h_normalize(wt->K(), chain), chain))(a, b) == doctest::Approx(direct).epsilon(1e-15));

  const auto sink = load_finite_state(sink_chain_spec());
  const auto sc = sink_chain(sink);
  for (std::size_t n = 0; n <= 5; ++n) CHECK(normalization_commutes(sink.kernel, sc, sc.domain, n) <= 1e-12);
}

TEST_CASE("L~ word expansion") {
  auto wt = example();
  auto tree = wt->system();
  const auto chain = example_chain(wt);
  const auto ones = make_kernel("one", [](Point, Point) { return 1.0; });
  const auto d0 = h_normalize(difference(apply_L(wt->K(), tree), wt->K()), chain);
  const auto F = orbit_closure(*tree, {tree->root()}, 1);
  for (Point s : F)
    for (Point t : F) {
      CHECK(tilde_word_expansion(d0, chain, s, t, 0) == (*d0)(s, t));
      for (std::size_t n = 0; n <= 6; ++n) CHECK(tilde_word_expansion(ones, chain, s, t, n) == std::ldexp(1.0, -int(n)));
      KernelPtr it = d0;
      for (std::size_t n = 1; n <= 6; ++n) {
        it = apply_L_tilde(it, chain);
        CHECK(std::abs(tilde_word_expansion(d0, chain, s, t, n) - (*it)(s, t)) <= 1e-12 * std::max(std::abs((*it)(s, t)), 1e-300));
      }
      // D_3^(h) from the oracle
      CHECK(tilde_word_expansion(d0, chain, s, t, 3) ==
            doctest::Approx(wt->D_n(3, s, t) / (wt->h(s) * wt->h(t))).epsilon(1e-14));
    }
}

TEST_CASE("cylinder weights") {
  const auto nu = CylinderWeights::bernoulli({0.3, 0.7}, 3);
  REQUIRE(nu.levels.size() == 3);
  CHECK(nu.levels[0] == std::vector<double>{1.0});
  CHECK(nu.levels[1] == std::vector<double>{0.3, 0.7});
  CHECK(nu.levels[2][1] == doctest::Approx(0.21));
  CHECK_THROWS_AS(CylinderWeights::bernoulli({-0.1, 1.1}, 2), InputError);
}

TEST_CASE("boundary feature Gram") {
  auto wt = example();
  auto tree = wt->system();
  const auto chain = example_chain(wt, 2);
  const auto base = orbit_closure(*tree, {tree->root()}, 1);
  const std::size_t N = 8;
  const auto tower = build_tower(wt->K(), tree, base, N);
  const auto half = boundary_feature_gram(wt->K(), tower, chain, CylinderWeights::bernoulli({0.5, 0.5}, N), N);
  const auto skew = boundary_feature_gram(wt->K(), tower, chain, CylinderWeights::bernoulli({0.3, 0.7}, N), N);
  CHECK(half.residual <= 1e-10);
  CHECK(half.identity_residual <= 1e-10);
  CHECK(max_abs_diff(half.gram.entries, skew.gram.entries) <= 1e-12);
  // oracle: sum_{n<8} D_n^(h)(s,t)
  for (std::size_t a = 0; a < base.size(); ++a)
    for (std::size_t b = 0; b < base.size(); ++b) {
      double expect = 0.0;
      for (std::size_t n = 0; n < N; ++n) expect += wt->D_n(n, base[a], base[b]);
      expect /= wt->h(base[a]) * wt->h(base[b]);
      CHECK(std::abs(half.gram(a, b) - expect) <= 1e-10);
    }
  // at the root: sum 0.5^n * 0.25 / 4
  CHECK(half.gram(0, 0) == doctest::Approx(0.0625 * (2.0 - std::ldexp(1.0, -7))).epsilon(1e-12));

  // N = 1: the Gram is D_0^(h) and nu cancels
  const auto first = boundary_feature_gram(wt->K(), tower, chain, CylinderWeights::bernoulli({0.9, 0.1}, 1), 1);
  for (std::size_t a = 0; a < base.size(); ++a)
    for (std::size_t b = 0; b < base.size(); ++b)
      CHECK(std::abs(first.gram(a, b) - wt->D_n(0, base[a], base[b]) / (wt->h(base[a]) * wt->h(base[b]))) <= 1e-14);

  CHECK_THROWS_AS(boundary_feature_gram(wt->K(), tower, chain, CylinderWeights::bernoulli({1.0, 0.0}, N), N),
                  InputError);
  CHECK_THROWS_AS(boundary_feature_gram(wt->K(), tower, chain, CylinderWeights::bernoulli({0.5, 0.5}, 4), N),
                  InputError);
  CHECK_THROWS_AS(boundary_feature_gram(wt->K(), tower, chain, CylinderWeights::bernoulli({0.5, 0.5}, 9), 9),
                  InputError);

  // finite-state model, gauge zero at the sink
  const auto sink = load_finite_state(sink_chain_spec());
  const auto sc = sink_chain(sink);
  const auto stower = build_tower(sink.kernel, sink.system, sc.domain, N);
  const auto sh = boundary_feature_gram(sink.kernel, stower, sc, CylinderWeights::bernoulli({0.5, 0.5}, N), N);
  const auto sk = boundary_feature_gram(sink.kernel, stower, sc, CylinderWeights::bernoulli({0.3, 0.7}, N), N);
  CHECK(sh.residual <= 1e-10);
  CHECK(sh.identity_residual <= 1e-10);
  CHECK(max_abs_diff(sh.gram.entries, sk.gram.entries) <= 1e-12);
  // D_0 = 0.5 e_0 e_0^T, D_n = 0 after: Gram = 0.5 / 4 at (0,0)
  CHECK(sh.gram(0, 0) == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(std::abs(sh.gram(1, 1)) <= 1e-14);
}
