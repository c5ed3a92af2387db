#include "didsnmm/error.hpp"
#include "didsnmm/gestimation.hpp"
#include "didsnmm/parallel.hpp"
#include "helpers.hpp"

using namespace didsnmm;
using testutil::bitwise_equal;

TEST_CASE("closed form and iterative solve the same equations") {
  for (const char* name : {"coarse-staggered", "standard-general", "cde-two-treatment"}) {
    for (std::uint64_t seed : {1, 2}) {
      const auto s = testutil::setup(name, 1500, seed);
      FitOptions o;
      o.method = Method::closed_form;
      const GEstimate a = fit(s.data, s.model, s.spec, o);
      o.method = Method::iterative;
      const GEstimate b = fit(s.data, s.model, s.spec, o);
      CAPTURE(name);
      CHECK((a.psi - b.psi).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("estimating equations vanish at the closed-form solution") {
  const auto s = testutil::setup("coarse-staggered", 2000, 4);
  FitOptions o;
  const GEstimate g = fit(s.data, s.model, s.spec, o);
  const FoldAssignment folds = single_fold(s.data.n());
  const Eigen::MatrixXd U = evaluate_U(s.data, s.model, g.psi, s.spec, o, &folds);
  const Eigen::VectorXd mean = U.colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-8 * (1 + U.cwiseAbs().maxCoeff()));
}

TEST_CASE("estimate is equivariant to outcome shifts and scales") {
  // adding a constant to every outcome leaves psi unchanged; scaling scales psi
  auto s = testutil::setup("coarse-staggered", 1500, 6);
  const GEstimate g = fit(s.data, s.model, s.spec);
  PanelDataset shifted = s.data, scaled = s.data;
  for (int i = 0; i < s.data.n(); ++i)
    for (int t = 0; t <= s.data.K(); ++t) {
      shifted.set_y(i, t, s.data.y(i, t) + 100);
      scaled.set_y(i, t, 3 * s.data.y(i, t));
    }
  CHECK((fit(shifted, s.model, s.spec).psi - g.psi).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((fit(scaled, s.model, s.spec).psi - 3 * g.psi).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("serial and parallel fits agree bitwise") {
  const auto s = testutil::setup("coarse-staggered", 2000, 8);
  FitOptions o;
  o.method = Method::crossfit;
  set_thread_count(1);
  const GEstimate a = fit(s.data, s.model, s.spec, o);
  set_thread_count(4);
  const GEstimate b = fit(s.data, s.model, s.spec, o);
  set_thread_count(0);
  CHECK(bitwise_equal(a.psi, b.psi));
  CHECK(bitwise_equal(a.covariance, b.covariance));

  const FitClosure closure = [&](const PanelDataset& db) { return fit(db, s.model, s.spec).psi; };
  set_thread_count(1);
  const BootstrapResult ba = bootstrap(s.data, closure, 100, 3, a.psi);
  set_thread_count(3);
  const BootstrapResult bb = bootstrap(s.data, closure, 100, 3, a.psi);
  set_thread_count(0);
  CHECK(bitwise_equal(ba.replicates, bb.replicates));
}

TEST_CASE("cross-fitting is deterministic in the fold seed") {
  auto s = testutil::setup("coarse-staggered", 1200, 9);
  FitOptions o;
  o.method = Method::crossfit;
  const GEstimate a = fit(s.data, s.model, s.spec, o);
  const GEstimate b = fit(s.data, s.model, s.spec, o);
  CHECK(bitwise_equal(a.psi, b.psi));
  s.spec.seed += 1;
  const GEstimate c = fit(s.data, s.model, s.spec, o);
  CHECK_FALSE(bitwise_equal(a.psi, c.psi));
}

TEST_CASE("folds are balanced and keep bootstrap duplicates together") {
  const FoldAssignment f = split_folds(103, 4, 11);
  const auto sizes = f.sizes();
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
  const auto s = testutil::setup("coarse-staggered", 200, 1);
  std::vector<int> idx;
  for (int i = 0; i < 200; ++i) idx.push_back((i * 7) % 50);
  const PanelDataset dup = s.data.subset(idx);
  const FoldAssignment g = split_folds(dup, 3, 2);
  for (int i = 0; i < dup.n(); ++i)
    for (int j = 0; j < dup.n(); ++j)
      if (dup.source(i) == dup.source(j)) CHECK(g.fold[i] == g.fold[j]);
}

TEST_CASE("covariance is symmetric and matches the influence functions") {
  const auto s = testutil::setup("coarse-staggered", 1500, 12);
  const GEstimate g = fit(s.data, s.model, s.spec);
  CHECK((g.covariance - g.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(g.influence.rows() == s.data.n());
  const double n = s.data.n();
  const Eigen::MatrixXd v = g.influence.transpose() * g.influence / (n * n);
  CHECK((v - g.covariance).cwiseAbs().maxCoeff() < 1e-6 * (1 + g.covariance.cwiseAbs().maxCoeff()));
}

TEST_CASE("percentile interval uses the outer order statistics") {
  // lower: floor(a B)-th draw, upper: ceil((1 - a) B)-th draw
  std::vector<double> x;
  for (int i = 1; i <= 1001; ++i) x.push_back(i);
  const auto [lo, hi] = percentile_interval(x, 0.9);
  CHECK(lo == 50);
  CHECK(hi == 951);
}

TEST_CASE("bootstrap needs enough replicates") {
  const auto s = testutil::setup("coarse-staggered", 300, 1);
  const FitClosure closure = [&](const PanelDataset& db) { return fit(db, s.model, s.spec).psi; };
  CHECK_THROWS_AS(bootstrap(s.data, closure, 20, 1, Eigen::VectorXd()), ConfigError);
}
