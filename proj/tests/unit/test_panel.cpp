#include <random>

#include "didsnmm/error.hpp"
#include "didsnmm/panel.hpp"
#include "helpers.hpp"

using namespace didsnmm;

namespace {

PanelDataset random_panel(int n, int K, std::uint64_t seed) {
  PanelDataset d(n, K, {"a", "r"}, {"x"});
  std::mt19937_64 g(seed);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution coin(0.3);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t <= K; ++t) {
      d.set_y(i, t, nd(g) * 1e3);
      d.set_a(i, 0, t, coin(g) ? 1.0 : 0.0);
      d.set_a(i, 1, t, coin(g) ? 2.5 : 0.0);
      d.set_z(i, 0, t, nd(g) / 7.0);
    }
  return d;
}

}  // namespace

TEST_CASE("csv round trip is exact") {
  const PanelDataset d = random_panel(37, 4, 5);
  const std::string text = to_csv(d);
  const PanelDataset back = parse_csv(text);
  REQUIRE(back.n() == d.n());
  REQUIRE(back.K() == d.K());
  CHECK(back.treatment_names() == d.treatment_names());
  for (int i = 0; i < d.n(); ++i)
    for (int t = 0; t <= d.K(); ++t) {
      CHECK(back.y(i, t) == d.y(i, t));
      CHECK(back.a(i, 1, t) == d.a(i, 1, t));
      CHECK(back.z(i, 0, t) == d.z(i, 0, t));
    }
  CHECK(to_csv(back) == text);
}

TEST_CASE("csv rows may arrive in any order") {
  const std::string a = "subject_id,time,y,a_a\n1,0,1,0\n1,1,2,1\n2,0,3,0\n2,1,4,0\n";
  const std::string b = "subject_id,time,y,a_a\n2,1,4,0\n1,1,2,1\n2,0,3,0\n1,0,1,0\n";
  CHECK(to_csv(parse_csv(a)) == to_csv(parse_csv(b)));
}

TEST_CASE("malformed csv is a data error") {
  CHECK_THROWS_AS(parse_csv(""), DataError);
  CHECK_THROWS_AS(parse_csv("subject_id,time,y,a_a\n1,0,1,0\n1,0,2,0\n"), DataError);        // duplicate
  CHECK_THROWS_AS(parse_csv("subject_id,time,y,a_a\n1,0,1,0\n1,1,2,0\n2,0,1,0\n"), DataError);  // ragged
  CHECK_THROWS_AS(parse_csv("subject_id,time,y,a_a\n1,0,x,0\n"), DataError);
  CHECK_THROWS_AS(parse_csv("subject_id,time,y\n1,0,1\n"), DataError);
  CHECK_THROWS_AS(parse_csv("subject_id,time,y,a_a\n1,0,1,0\n1,2,1,0\n"), DataError);  // gap
}

TEST_CASE("initiation time matches a direct scan") {
  const PanelDataset d = random_panel(200, 5, 9);
  for (int i = 0; i < d.n(); ++i) {
    int first = -1;
    for (int t = 0; t <= d.K() && first < 0; ++t)
      if (d.a(i, 0, t) != 0.0 || d.a(i, 1, t) != 0.0) first = t;
    const InitiationTime T = initiation_time(d, i);
    if (first < 0) {
      CHECK(T.is_never());
    } else {
      REQUIRE_FALSE(T.is_never());
      CHECK(T.time() == first);
      CHECK(T.value()[1] == d.a(i, 1, first));
    }
    // restricted to component 0
    int first0 = -1;
    for (int t = 0; t <= d.K() && first0 < 0; ++t)
      if (d.a(i, 0, t) != 0.0) first0 = t;
    const InitiationTime T0 = initiation_time(d, i, {0});
    CHECK(T0.is_never() == (first0 < 0));
    if (first0 >= 0) CHECK(T0.time() == first0);
  }
}

TEST_CASE("history view lags stop at the start of the panel") {
  PanelDataset d(1, 3, {"a"}, {"x"});
  for (int t = 0; t <= 3; ++t) {
    d.set_y(0, t, 10 + t);
    d.set_a(0, 0, t, t >= 2 ? 1 : 0);
    d.set_z(0, 0, t, 0.5 * t);
  }
  HistoryView h(d, 0, 2);
  CHECK(*h.covariate(0) == 1.0);
  CHECK(*h.covariate(0, 2) == 0.0);
  CHECK_FALSE(h.covariate(0, 3).has_value());
  CHECK(*h.outcome_lag(1) == 11.0);
  CHECK(*h.treatment_lag(0, 1) == 0.0);
  CHECK(h.treatment_count(0) == 0.0);  // counts strictly before m
  HistoryView h3(d, 0, 3);
  CHECK(h3.treatment_count(0) == 1.0);
}

TEST_CASE("staggered adoption check") {
  const auto s = testutil::setup("coarse-staggered", 500, 1);
  CHECK(is_staggered_adoption(s.data));
  const auto g = testutil::setup("standard-general", 500, 1);
  CHECK_FALSE(is_staggered_adoption(g.data));
}
