#include <cmath>

#include "didsnmm/error.hpp"
#include "didsnmm/simulation.hpp"
#include "helpers.hpp"

using namespace didsnmm;
using testutil::bitwise_equal;

namespace {

Eigen::MatrixXd outcomes(const PanelDataset& d) {
  Eigen::MatrixXd y(d.n(), d.periods());
  for (int i = 0; i < d.n(); ++i)
    for (int t = 0; t < d.periods(); ++t) y(i, t) = d.y(i, t);
  return y;
}

}  // namespace

TEST_CASE("simulation is deterministic and seed sensitive") {
  for (const auto& name : gallery_names()) {
    const DgpConfig c = gallery(name);
    CAPTURE(name);
    CHECK(to_csv(simulate_panel(c, 200, 3)) == to_csv(simulate_panel(c, 200, 3)));
    CHECK(to_csv(simulate_panel(c, 200, 3)) != to_csv(simulate_panel(c, 200, 4)));
  }
}

TEST_CASE("subject streams do not depend on the sample size") {
  const DgpConfig c = gallery("standard-general");
  const PanelDataset a = simulate_panel(c, 50, 9), b = simulate_panel(c, 80, 9);
  CHECK(bitwise_equal(outcomes(a), outcomes(b).topRows(50)));
}

TEST_CASE("staggered configs produce monotone treatment paths") {
  for (const char* name : {"coarse-staggered", "violation", "cde-two-treatment"}) {
    const PanelDataset d = simulate_panel(gallery(name), 2000, 1);
    CHECK(is_staggered_adoption(d, {0}));
  }
}

TEST_CASE("second treatment starts strictly after the first") {
  const PanelDataset d = simulate_panel(gallery("cde-two-treatment"), 3000, 2);
  for (int i = 0; i < d.n(); ++i) {
    const InitiationTime ta = initiation_time(d, i, {0}), tr = initiation_time(d, i, {1});
    if (!tr.is_never()) {
      REQUIRE_FALSE(ta.is_never());
      CHECK(tr.time() > ta.time());
    }
  }
}

TEST_CASE("under the null the natural and never arms share outcomes") {
  const DgpConfig c = gallery("null");
  const PanelDataset nat = simulate_arm(c, 500, 4, ArmSpec::natural());
  const PanelDataset nev = simulate_arm(c, 500, 4, ArmSpec::never());
  CHECK(bitwise_equal(outcomes(nat), outcomes(nev)));
}

TEST_CASE("never arm treats nobody and truncation keeps the past") {
  const DgpConfig c = gallery("coarse-staggered");
  const PanelDataset nat = simulate_arm(c, 500, 4, ArmSpec::natural());
  const PanelDataset nev = simulate_arm(c, 500, 4, ArmSpec::never());
  const PanelDataset tr = simulate_arm(c, 500, 4, ArmSpec::truncate_at(2));
  for (int i = 0; i < 500; ++i) {
    CHECK(initiation_time(nev, i).is_never());
    for (int t = 0; t < 2; ++t) CHECK(tr.a(i, 0, t) == nat.a(i, 0, t));
    const InitiationTime T = initiation_time(tr, i);
    CHECK((T.is_never() || T.time() < 2));
  }
}

TEST_CASE("config validation") {
  json j = gallery("coarse-staggered").to_json();
  j["treatment"]["mode"] = "general";
  CHECK_THROWS_AS(DgpConfig::from_json(j), ConfigError);
  CHECK_THROWS_AS(gallery("nope"), ConfigError);
  const DgpConfig back = DgpConfig::from_json(gallery("optimal-regime").to_json());
  CHECK(back.to_json() == gallery("optimal-regime").to_json());
}

TEST_CASE("violation config reproduces its planted deviation on counterfactual arms") {
  // c(l_m, k): treated-minus-untreated gap in Y_k(never) - Y_{k-1}(never)
  // among those at risk at m, adjusting for the covariate history
  const DgpConfig c = gallery("violation");
  const int n = 200000;
  const PanelDataset nat = simulate_arm(c, n, 17, ArmSpec::natural());
  const PanelDataset nev = simulate_arm(c, n, 17, ArmSpec::never());
  const int K = c.K;
  auto expit = [](double x) { return 1 / (1 + std::exp(-x)); };
  for (int m = 0; m < K; ++m)
    for (int k = m + 1; k <= K; ++k) {
      std::vector<int> rows;
      for (int i = 0; i < n; ++i)
        if (initiation_time(nat, i).at_or_after(m)) rows.push_back(i);
      const int p = 2 + (m + 1) + m;
      Eigen::MatrixXd X(rows.size(), p);
      Eigen::VectorXd y(rows.size());
      for (size_t r = 0; r < rows.size(); ++r) {
        const int i = rows[r];
        int col = 0;
        X(r, col++) = 1;
        X(r, col++) = nat.a(i, 0, m);
        for (int t = 0; t <= m; ++t) X(r, col++) = nat.z(i, 0, t);
        for (int t = 0; t < m; ++t) X(r, col++) = expit(c.alpha[t] + c.a_z * nat.z(i, 0, t));
        y[r] = nev.y(i, k) - nev.y(i, k - 1);
      }
      const auto [coef, se] = testutil::ols(X, y, 1);
      CAPTURE(m);
      CAPTURE(k);
      CHECK(std::abs(coef - c.violation_c0) < 4 * se);
    }
}

TEST_CASE("shipped parallel-trends configs pass the trend-independence self-audit" * doctest::test_suite("audit")) {
  for (const auto& name : gallery_names()) {
    const DgpConfig c = gallery(name);
    if (c.violation_c0 != 0) continue;
    const auto checks = trend_independence_check(c, 1000000, 2024);
    for (auto& t : checks) {
      CAPTURE(name);
      CAPTURE(t.m);
      CAPTURE(t.k);
      // Bonferroni-style bound over the roughly 100 regressions
      CHECK(std::abs(t.fit.coef) < 4.0 * t.fit.se);
    }
  }
}
