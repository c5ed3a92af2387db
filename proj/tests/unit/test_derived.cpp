#include "didsnmm/derived.hpp"
#include "didsnmm/error.hpp"
#include "helpers.hpp"

using namespace didsnmm;

namespace {

CounterfactualQuery q(const json& j) { return CounterfactualQuery::from_json(j); }

}  // namespace

TEST_CASE("observed-vs-never is the observed mean minus the never-treated mean") {
  const auto s = testutil::setup("coarse-staggered", 2000, 3);
  const GEstimate g = fit(s.data, s.model, s.spec);
  for (int k = 0; k <= s.data.K(); ++k) {
    double ybar = 0;
    for (int i = 0; i < s.data.n(); ++i) ybar += s.data.y(i, k);
    ybar /= s.data.n();
    const auto diff = observed_vs_never(g, s.model, s.data, k);
    const auto never = mean_never_treated(g, s.model, s.data, k);
    CHECK(diff.estimate == doctest::Approx(ybar - never.estimate).epsilon(1e-12));
  }
}

TEST_CASE("subgroup means average back to the cohort mean") {
  const auto s = testutil::setup("coarse-staggered", 3000, 5);
  const GEstimate g = fit(s.data, s.model, s.spec);
  for (int m = 0; m < s.data.K(); ++m) {
    const auto all = evaluate_query(q({{"target", "conditional_mean"}, {"m", m}, {"k", 3}}), g, s.model, s.data);
    const auto hi = evaluate_query(
        q({{"target", "conditional_mean"}, {"m", m}, {"k", 3}, {"where", {{{"column", "L"}, {"op", ">="}, {"value", 0}, {"time", m}}}}}),
        g, s.model, s.data);
    const auto lo = evaluate_query(
        q({{"target", "conditional_mean"}, {"m", m}, {"k", 3}, {"where", {{{"column", "L"}, {"op", "<"}, {"value", 0}, {"time", m}}}}}),
        g, s.model, s.data);
    CHECK(hi.n_used + lo.n_used == all.n_used);
    CHECK(hi.n_used * hi.estimate + lo.n_used * lo.estimate == doctest::Approx(all.n_used * all.estimate).epsilon(1e-12));
  }
}

TEST_CASE("with psi = 0 counterfactual means are observed means") {
  const auto s = testutil::setup("coarse-staggered", 1000, 7);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(s.model.dim());
  for (int k = 0; k <= s.data.K(); ++k) {
    double ybar = 0;
    for (int i = 0; i < s.data.n(); ++i) ybar += s.data.y(i, k);
    ybar /= s.data.n();
    CHECK(point_estimate(q({{"target", "mean_never_treated"}, {"k", k}}), s.model, zero, s.data) ==
          doctest::Approx(ybar).epsilon(1e-12));
    CHECK(point_estimate(q({{"target", "observed_vs_never"}, {"k", k}}), s.model, zero, s.data) ==
          doctest::Approx(0).epsilon(1e-12));
  }
  CHECK(point_estimate(q({{"target", "lag_average"}, {"lag", 1}}), s.model, zero, s.data) == 0.0);
}

TEST_CASE("lag average against a direct oracle") {
  const auto s = testutil::setup("coarse-staggered", 2000, 9);
  const GEstimate g = fit(s.data, s.model, s.spec);
  // mean of γ_{T,T+1} over subjects initiated with a period to spare
  double sum = 0;
  int count = 0;
  for (int i = 0; i < s.data.n(); ++i) {
    const InitiationTime T = initiation_time(s.data, i);
    if (T.is_never() || T.time() + 1 > s.data.K()) continue;
    sum += s.model.eval(HistoryView(s.data, i, T.time()), T.time() + 1, s.data.action(i, T.time()), g.psi);
    ++count;
  }
  const auto e = lag_average_effect(g, s.model, s.data, 1);
  CHECK(e.estimate == doctest::Approx(sum / count).epsilon(1e-12));
  CHECK(e.lo < e.estimate);
  CHECK(e.hi > e.estimate);
  CHECK(e.ci_method == "delta (approximate)");
}

TEST_CASE("empty subgroup names the predicate") {
  const auto s = testutil::setup("coarse-staggered", 500, 1);
  const GEstimate g = fit(s.data, s.model, s.spec);
  try {
    evaluate_query(q({{"target", "conditional_mean"},
                      {"m", 1},
                      {"k", 3},
                      {"where", {{{"column", "L"}, {"op", ">"}, {"value", 1e9}, {"time", 1}}}}}),
                   g, s.model, s.data);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("L") != std::string::npos);
  }
}

TEST_CASE("predicates may not look into the future") {
  const auto s = testutil::setup("coarse-staggered", 200, 1);
  const GEstimate g = fit(s.data, s.model, s.spec);
  CHECK_THROWS_AS(evaluate_query(q({{"target", "conditional_mean"},
                                    {"m", 1},
                                    {"k", 3},
                                    {"where", {{{"column", "L"}, {"op", ">"}, {"value", 0}, {"time", 2}}}}}),
                                 g, s.model, s.data),
                  ConfigError);
  CHECK_THROWS_AS(evaluate_query(q({{"target", "conditional_mean"},
                                    {"m", 1},
                                    {"k", 3},
                                    {"where", {{{"column", "y"}, {"op", ">"}, {"value", 0}, {"time", 1}}}}}),
                                 g, s.model, s.data),
                  ConfigError);
}

TEST_CASE("blip query warns outside the observed support") {
  const auto s = testutil::setup("coarse-staggered", 1000, 1);
  const GEstimate g = fit(s.data, s.model, s.spec);
  const auto e = blip_query(g, s.model, s.data,
                            q({{"target", "blip"}, {"m", 1}, {"k", 3}, {"history", {{"L", {0.0, 50.0}}}}, {"action", {1.0}}}));
  CHECK_FALSE(e.warnings.empty());
  const auto f = blip_query(g, s.model, s.data,
                            q({{"target", "blip"}, {"m", 1}, {"k", 3}, {"history", {{"L", {0.0, 0.0}}}}, {"action", {1.0}}}));
  CHECK(f.warnings.empty());
  // linear blip: γ = ψ[1,3] + ψ_L L_1
  CHECK(f.estimate == doctest::Approx(g.psi[testutil::param(s.model, "pair[1,3]")]));
}

TEST_CASE("pipeline bootstrap agrees with the delta method in scale") {
  const auto s = testutil::setup("coarse-staggered", 3000, 13);
  const GEstimate g = fit(s.data, s.model, s.spec);
  const std::vector<CounterfactualQuery> qs = {q({{"target", "mean_never_treated"}, {"k", 3}}),
                                               q({{"target", "lag_average"}, {"lag", 1}})};
  PipelineOptions po;
  po.B = 200;
  const auto boot = pipeline_bootstrap(qs, g, s.data, s.model, s.spec, FitOptions{}, po);
  for (size_t j = 0; j < qs.size(); ++j) {
    const auto delta = evaluate_query(qs[j], g, s.model, s.data);
    CHECK(boot[j].estimate == doctest::Approx(delta.estimate));
    CHECK(boot[j].ci_method == "pipeline bootstrap");
    CHECK(boot[j].se / delta.se > 0.75);
    CHECK(boot[j].se / delta.se < 1.33);
  }
}

TEST_CASE("plot csv rows") {
  DerivedEstimate e;
  e.estimate = 1.5;
  e.lo = 1;
  e.hi = 2;
  CHECK(plot_csv("k", {2}, {e}) == "k,estimate,lo,hi\n2,1.5,1,2\n");
}
