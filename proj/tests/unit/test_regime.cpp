#include "didsnmm/error.hpp"
#include "didsnmm/regime.hpp"
#include "helpers.hpp"

using namespace didsnmm;

TEST_CASE("decision table is invariant to scaling the utility weights") {
  const auto s = testutil::setup("optimal-regime", 1500, 3);
  const Eigen::VectorXd psi = s.cfg.psi;
  BlipModel scaled = s.model;
  for (auto& u : scaled.utility) u *= 2.5;
  const auto a = decision_table(s.model, psi, s.data, 100);
  const auto b = decision_table(scaled, psi, s.data, 100);
  REQUIRE(a.size() == b.size());
  for (size_t r = 0; r < a.size(); ++r) {
    CHECK(a[r].action == b[r].action);
    CHECK(a[r].count == b[r].count);
  }
}

TEST_CASE("decision table picks the argmax of its own scores") {
  const auto s = testutil::setup("optimal-regime", 1500, 4);
  const auto table = decision_table(s.model, s.cfg.psi, s.data, 100);
  int total = 0;
  for (auto& row : table) {
    const auto best = std::max_element(row.scores.begin(), row.scores.end()) - row.scores.begin();
    CHECK(row.scores[row.action] == row.scores[best]);
    if (row.m == 0) total += row.count;
  }
  CHECK(total == s.data.n());
}

TEST_CASE("zero blips keep everyone at the baseline") {
  const auto s = testutil::setup("optimal-regime", 500, 5);
  const auto table = decision_table(s.model, Eigen::VectorXd::Zero(s.model.dim()), s.data, 100);
  for (auto& row : table) CHECK(row.action == 0);
}

TEST_CASE("true blips give the enumerated oracle rule") {
  // at the true psi the plug-in rule treats at m=0 iff z=1 and at m=1 iff z=0
  const auto s = testutil::setup("optimal-regime", 2000, 6);
  const auto table = decision_table(s.model, s.cfg.psi, s.data, 100);
  const int zc = s.data.covariate_index("z");
  for (auto& row : table) {
    const int i = [&] {
      for (int j = 0; j < s.data.n(); ++j)
        if (s.data.subject_id(j) == row.example) return j;
      return -1;
    }();
    REQUIRE(i >= 0);
    const double z = s.data.z(i, zc, row.m);
    CHECK(row.action == ((row.m == 0) == (z == 1.0) ? 1 : 0));
  }
}

TEST_CASE("regime fit solves iteratively even when asked for the closed form") {
  const auto s = testutil::setup("optimal-regime", 1000, 1);
  RegimeOptions o;
  o.fit.method = Method::closed_form;
  const RegimeFit r = fit_optimal_regime(s.data, s.model, s.spec, o);
  CHECK(r.estimate.method == "iterative");
  BlipModel fixed = s.model;
  fixed.reference = [](const HistoryView&) { return Action::Zero(1); };
  CHECK_THROWS_AS(fit_optimal_regime(s.data, fixed, s.spec, o), ConfigError);
}

TEST_CASE("regime value at psi = 0 is the weighted observed mean") {
  const auto s = testutil::setup("optimal-regime", 800, 2);
  GEstimate g;
  g.psi = Eigen::VectorXd::Zero(s.model.dim());
  g.covariance = Eigen::MatrixXd::Zero(g.psi.size(), g.psi.size());
  g.influence = Eigen::MatrixXd::Zero(s.data.n(), g.psi.size());
  const auto v = regime_value(g, s.model, s.data);
  double want = 0;
  for (int k = 0; k <= s.data.K(); ++k) {
    double m = 0;
    for (int i = 0; i < s.data.n(); ++i) m += s.data.y(i, k);
    want += s.model.utility[k] * m / s.data.n();
  }
  CHECK(v.estimate == doctest::Approx(want).epsilon(1e-12));
}
