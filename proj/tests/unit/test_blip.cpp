#include <cmath>

#include "didsnmm/bias.hpp"
#include "didsnmm/blip.hpp"
#include "didsnmm/error.hpp"
#include "helpers.hpp"

using namespace didsnmm;
using testutil::param;

namespace {

// one subject, K = 3, outcomes 1, 2, 4, 8
PanelDataset one(std::initializer_list<double> a) {
  PanelDataset d(1, 3, {"a"}, {"x"});
  int t = 0;
  for (double v : a) {
    d.set_y(0, t, std::pow(2.0, t));
    d.set_a(0, 0, t, v);
    d.set_z(0, 0, t, 0.1 * t);
    ++t;
  }
  return d;
}

Eigen::VectorXd psi6() {
  Eigen::VectorXd p(6);
  p << 0.5, -1.0, 2.0, 0.25, 3.0, -0.75;
  return p;
}

}  // namespace

TEST_CASE("coarse transform against a hand computation") {
  const PanelDataset d = one({0, 1, 1, 1});
  const BlipModel m = BlipModel::from_json({{"flavor", "coarse"}, {"basis", {{{"type", "pair_indicators"}}}}}, d);
  const Eigen::VectorXd psi = psi6();
  CHECK(blip_down_coarse(m, psi, d, 0, 0, 3) == doctest::Approx(8 - psi[param(m, "pair[1,3]")]));
  CHECK(blip_down_coarse(m, psi, d, 0, 1, 2) == doctest::Approx(4 - psi[param(m, "pair[1,2]")]));
  CHECK(blip_down_coarse(m, psi, d, 0, 0, 1) == doctest::Approx(2));
  CHECK(blip_down_coarse(m, psi, d, 0, 2, 3) == doctest::Approx(8));  // initiated before 2
  for (int k = 0; k <= 3; ++k) CHECK(blip_down(m, psi, d, 0, k, k) == std::pow(2.0, k));
}

TEST_CASE("coarse transform of a never-treated subject is the outcome") {
  const PanelDataset d = one({0, 0, 0, 0});
  const BlipModel m = BlipModel::from_json({{"flavor", "coarse"}, {"basis", {{{"type", "pair_indicators"}}}}}, d);
  for (int mm = 0; mm <= 3; ++mm)
    for (int k = mm; k <= 3; ++k) CHECK(blip_down_coarse(m, psi6(), d, 0, mm, k) == std::pow(2.0, k));
}

TEST_CASE("standard transform sums every treated period") {
  const PanelDataset d = one({1, 0, 1, 0});
  const BlipModel m = BlipModel::from_json({{"flavor", "standard"}, {"basis", {{{"type", "pair_indicators"}}}}}, d);
  const Eigen::VectorXd psi = psi6();
  const double want = 8 - psi[param(m, "pair[0,3]")] - psi[param(m, "pair[2,3]")];
  CHECK(blip_down_standard(m, psi, d, 0, 0, 3) == doctest::Approx(want));
  CHECK(blip_down_standard(m, psi, d, 0, 1, 3) == doctest::Approx(8 - psi[param(m, "pair[2,3]")]));
  CHECK(blip_down_standard(m, psi, d, 0, 1, 2) == doctest::Approx(4));
}

TEST_CASE("multiplicative transform divides out exp of the blip sum") {
  const PanelDataset d = one({1, 0, 1, 0});
  const BlipModel m = BlipModel::from_json({{"flavor", "multiplicative"}, {"basis", {{{"type", "intercept"}}}}}, d);
  Eigen::VectorXd psi(1);
  psi << 0.3;
  CHECK(blip_down_multiplicative(m, psi, d, 0, 0, 3) == doctest::Approx(8 * std::exp(-0.6)));
  CHECK(blip_down_multiplicative(m, psi, d, 0, 1, 3) == doctest::Approx(8 * std::exp(-0.3)));
  CHECK(blip_down_multiplicative(m, psi, d, 0, 3, 3) == 8);
  psi << 400;
  CHECK_THROWS_AS(blip_down_multiplicative(m, psi, d, 0, 0, 3), EstimationError);
}

TEST_CASE("regime transform compares with the optimal action") {
  const PanelDataset d = one({1, 1, 0, 0});
  const BlipModel m = BlipModel::from_json({{"flavor", "regime"},
                                            {"basis", {{{"type", "pair_indicators"}}}},
                                            {"regime", {{"actions", {0, 1}}, {"utility", {0, 0, 0, 1}}}}},
                                           d);
  const Eigen::VectorXd psi = psi6();
  // only Y_3 counts: treat at j iff pair[j,3] > 0
  auto opt = [&](int j) { return psi[param(m, "pair[" + std::to_string(j) + ",3]")] > 0 ? 1.0 : 0.0; };
  double want = 8;
  for (int j = 0; j < 3; ++j) {
    const double b = psi[param(m, "pair[" + std::to_string(j) + ",3]")];
    want -= (d.a(0, 0, j) - opt(j)) * b;
  }
  CHECK(blip_down_regime(m, psi, d, 0, 0, 3) == doctest::Approx(want));
}

TEST_CASE("argmax ties go to the first grid action") {
  const PanelDataset d = one({0, 0, 0, 0});
  const BlipModel m = BlipModel::from_json({{"flavor", "regime"},
                                            {"basis", {{{"type", "pair_indicators"}}}},
                                            {"regime", {{"actions", {0, 1}}, {"utility", {0, 1, 1, 1}}}}},
                                           d);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(m.dim());
  for (int t = 0; t < 3; ++t) CHECK(optimal_action(m, zero, HistoryView(d, 0, t))[0] == 0.0);
}

TEST_CASE("blips vanish at the baseline action") {
  const auto s = testutil::setup("standard-general", 50, 2);
  const Eigen::VectorXd psi = Eigen::VectorXd::LinSpaced(s.model.dim(), -1, 2);
  Action base = Action::Zero(s.data.q());
  for (int i = 0; i < s.data.n(); ++i)
    for (int mm = 0; mm < s.data.K(); ++mm)
      for (int k = mm + 1; k <= s.data.K(); ++k) CHECK(s.model.eval(HistoryView(s.data, i, mm), k, base, psi) == 0.0);
}

TEST_CASE("bias-adjusted transform against a hand computation") {
  const PanelDataset d = one({0, 1, 1, 1});
  const BlipModel m = BlipModel::from_json({{"flavor", "coarse"}, {"basis", {{{"type", "pair_indicators"}}}}}, d);
  const Eigen::VectorXd psi = psi6();
  const PropensityFn p = [](int, int) { return 0.3; };
  const double c = 0.9;
  // j=0: untreated, weight 0.3 and sign -1; j=1: treated, weight 0.7 and sign +1; then T < j
  const double want = 8 - psi[param(m, "pair[1,3]")] - (0.7 - 0.3) * c;
  CHECK(bias_adjusted_coarse(m, psi, d, 0, 0, 3, BiasFunction::constant(c), p) == doctest::Approx(want));
  CHECK(bias_adjusted_coarse(m, psi, d, 0, 0, 3, BiasFunction::zero(), p) == blip_down_coarse(m, psi, d, 0, 0, 3));
}

TEST_CASE("model json errors carry pointers") {
  const PanelDataset d = one({0, 0, 0, 0});
  try {
    BlipModel::from_json({{"flavor", "coarse"}, {"basis", {{{"type", "nope"}}}}}, d, "/model");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.pointer() == "/model/basis/0/type");
  }
  CHECK_THROWS_AS(BlipModel::from_json({{"flavor", "coarse"}}, d), ConfigError);
  CHECK_THROWS_AS(
      BlipModel::from_json({{"flavor", "coarse"}, {"basis", {{{"type", "outcome_lag"}, {"lag", 0}}}}}, d), ConfigError);
}
