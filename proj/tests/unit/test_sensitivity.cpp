#include "didsnmm/error.hpp"
#include "didsnmm/parallel.hpp"
#include "didsnmm/sensitivity.hpp"
#include "helpers.hpp"

using namespace didsnmm;
using testutil::bitwise_equal;

TEST_CASE("zero bias reproduces the unadjusted fit bitwise") {
  const auto s = testutil::setup("violation", 2000, 2);
  for (Method m : {Method::closed_form, Method::iterative, Method::crossfit}) {
    FitOptions o;
    o.method = m;
    const GEstimate a = fit(s.data, s.model, s.spec, o);
    const GEstimate b = sensitivity_fit(s.data, s.model, BiasFunction::zero(), s.spec, o);
    CHECK(bitwise_equal(a.psi, b.psi));
    CHECK(bitwise_equal(a.covariance, b.covariance));
  }
}

TEST_CASE("linear models with the constant family are affine in c0") {
  const auto s = testutil::setup("violation", 2000, 3);
  const std::vector<double> grid = {-1, -0.3, 0, 0.4, 1.2};
  const auto curve = sensitivity_grid(s.data, s.model, BiasFunction::constant(0), grid, {SensitivityTarget::psi(0)},
                                      s.spec);
  REQUIRE(curve.affinity_residual);
  CHECK(*curve.affinity_residual < 1e-9);
  // every pair of points lies on one line
  const auto& p = curve.points;
  const Eigen::VectorXd slope = (p[4].fit.psi - p[0].fit.psi) / (grid[4] - grid[0]);
  for (size_t g = 1; g < 4; ++g) {
    const Eigen::VectorXd line = p[0].fit.psi + slope * (grid[g] - grid[0]);
    CHECK((p[g].fit.psi - line).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("breakdown bisection agrees with a dense scan") {
  const auto s = testutil::setup("coarse-staggered", 1500, 4);
  const SensitivityTarget t = SensitivityTarget::psi(0);
  const auto covers = [&](double c0) {
    const GEstimate g = sensitivity_fit(s.data, s.model, BiasFunction::constant(c0), s.spec);
    const auto e = t.evaluate(g, s.model, s.data);
    return e.lo <= 0 && e.hi >= 0;
  };
  REQUIRE_FALSE(covers(0));
  double scan = 0;
  for (double c = 0; c <= 3; c += 1e-3)
    if (covers(c)) {
      scan = c;
      break;
    }
  REQUIRE(scan > 0);
  const Breakdown b = find_breakdown(s.data, s.model, BiasFunction::constant(0), t, -3, 3, s.spec, {}, 1e-5);
  REQUIRE(b.found);
  // the scan may also find a negative crossing nearer to 0
  CHECK(std::abs(b.c0) <= scan + 1e-3);
  CHECK(covers(b.c0));
  CHECK_FALSE(covers(b.c0 * (1 - 2e-3)));
}

TEST_CASE("grid points are independent of the thread count") {
  const auto s = testutil::setup("violation", 1000, 5);
  const std::vector<double> grid = {-0.5, 0, 0.5, 1};
  SensitivityOptions o;
  o.breakdown = false;
  set_thread_count(1);
  const auto a = sensitivity_grid(s.data, s.model, BiasFunction::constant(0), grid, {SensitivityTarget::psi(1)}, s.spec, o);
  set_thread_count(4);
  const auto b = sensitivity_grid(s.data, s.model, BiasFunction::constant(0), grid, {SensitivityTarget::psi(1)}, s.spec, o);
  set_thread_count(0);
  for (size_t g = 0; g < grid.size(); ++g) CHECK(bitwise_equal(a.points[g].fit.psi, b.points[g].fit.psi));
}

TEST_CASE("sensitivity needs a coarse binary model") {
  const auto s = testutil::setup("standard-general", 300, 1);
  CHECK_THROWS_AS(sensitivity_fit(s.data, s.model, BiasFunction::constant(1), s.spec), ConfigError);
  auto c = testutil::setup("coarse-staggered", 300, 1);
  c.data.set_a(0, 0, 3, 0.5);
  CHECK_THROWS_AS(sensitivity_fit(c.data, c.model, BiasFunction::constant(1), c.spec), DataError);
}

TEST_CASE("target parsing") {
  const auto s = testutil::setup("coarse-staggered", 100, 1);
  CHECK(*SensitivityTarget::from_json("psi:L", s.model).psi_index == testutil::param(s.model, "L"));
  CHECK(*SensitivityTarget::from_json("psi:2", s.model).psi_index == 2);
  CHECK_THROWS_AS(SensitivityTarget::from_json("psi:nope", s.model), ConfigError);
  CHECK(SensitivityTarget::from_json(json{{"target", "mean_never_treated"}, {"k", 2}}, s.model).query);
}
