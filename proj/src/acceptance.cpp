#include "didsnmm/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <sstream>

#include "didsnmm/derived.hpp"
#include "didsnmm/error.hpp"
#include "didsnmm/parallel.hpp"
#include "didsnmm/random.hpp"
#include "didsnmm/regime.hpp"
#include "didsnmm/sensitivity.hpp"
#include "didsnmm/simulation.hpp"

namespace didsnmm {

namespace {

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Sizes {
  int c1_n = 100000;
  int c2_R = 40, c2_n = 10000;
  int c3_R = 200, c3_n = 10000;
  int c4_instances = 50, c4_n = 1000;
  int c5_R = 500, c5_n = 4000, c5_B = 200;
  int c6_R = 40, c6_n = 10000;
  int c7_R = 40, c7_n = 10000;
  int c8_R = 20, c8_n = 10000, c8_mc = 100000;
  int c9_R = 30, c9_n = 10000;
  int c10_R = 30, c10_n = 5000;
  int oracle_mc = 200000;
  int c11_B = 200;
};

Sizes quick_sizes() {
  Sizes s;
  s.c1_n = 20000;
  s.c2_R = 8;
  s.c2_n = 4000;
  s.c3_R = 20;
  s.c3_n = 4000;
  s.c4_instances = 10;
  s.c4_n = 600;
  s.c5_R = 40;
  s.c5_n = 2000;
  s.c5_B = 100;
  s.c6_R = 8;
  s.c7_R = 8;
  s.c8_R = 3;
  s.c8_n = 4000;
  s.c8_mc = 30000;
  s.c9_R = 6;
  s.c9_n = 5000;
  s.c10_R = 6;
  s.c10_n = 3000;
  s.oracle_mc = 50000;
  s.c11_B = 100;
  return s;
}

struct Mc {
  Eigen::VectorXd mean, sd, mcse;
};

Mc summarize(const std::vector<Eigen::VectorXd>& reps) {
  const int R = static_cast<int>(reps.size());
  const int d = static_cast<int>(reps.at(0).size());
  Mc s{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
  for (auto& r : reps) s.mean += r;
  s.mean /= R;
  for (auto& r : reps) s.sd += (r - s.mean).cwiseAbs2();
  s.sd = (s.sd / std::max(R - 1, 1)).cwiseSqrt();
  s.mcse = s.sd / std::sqrt(static_cast<double>(R));
  return s;
}

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

struct Setup {
  DgpConfig cfg;
  BlipModel model;
  NuisanceSpec spec;
};

Setup setup(const std::string& name, const PanelDataset& layout) {
  Setup s{gallery(name), {}, {}};
  s.model = BlipModel::from_json(s.cfg.analysis_model, layout, "/analysis_model");
  s.spec = NuisanceSpec::from_json(s.cfg.analysis_nuisance, layout, "/analysis_nuisance");
  return s;
}

std::uint64_t rep_seed(std::uint64_t base, int criterion, int r) {
  return stream_seed(base, static_cast<std::uint64_t>(criterion) * 1000003ULL + static_cast<std::uint64_t>(r));
}

// max_j |mean_j - truth_j| / mcse_j
double max_z(const Mc& s, const Eigen::VectorXd& truth) {
  double z = 0;
  for (int j = 0; j < truth.size(); ++j)
    z = std::max(z, std::abs(s.mean[j] - truth[j]) / std::max(s.mcse[j], 1e-300));
  return z;
}

// ---------------------------------------------------------------- 1
CriterionResult identification(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{1, "identification property", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 0;
  int tests = 0;
  for (const std::string name : {"coarse-staggered", "standard-general"}) {
    const DgpConfig cfg = gallery(name);
    const PanelDataset d = simulate_panel(cfg, sz.c1_n, rep_seed(seed, 1, 0));
    const Setup s = setup(name, d);
    json rows = json::array();
    for (auto [m, k] : anchor_pairs(d.K(), s.model.min_anchor)) {
      const int p = s.spec.trend.basis.dim();
      std::vector<int> at;
      for (int i = 0; i < d.n(); ++i)
        if (s.model.flavor != Flavor::coarse || initiation_time(d, i, s.model.initiation_components).at_or_after(m))
          at.push_back(i);
      Eigen::MatrixXd X(at.size(), p);
      Eigen::VectorXd a(at.size()), y(at.size()), x(p);
      for (size_t q = 0; q < at.size(); ++q) {
        const int i = at[q];
        s.spec.trend.basis.eval(HistoryView(d, i, m), k, x.data());
        X.row(q) = x.transpose();
        a[q] = d.a(i, 0, m);
        y[q] = blip_down(s.model, cfg.psi, d, i, m, k) - blip_down(s.model, cfg.psi, d, i, m, k - 1);
      }
      const ResidualizedCoef c = residualized_coefficient(X, a, y);
      const double z = std::abs(c.coef) / c.se;
      worst = std::max(worst, z);
      ok = ok && z < 3;
      ++tests;
      rows.push_back({{"m", m}, {"k", k}, {"coef", c.coef}, {"se", c.se}, {"rows", c.rows}});
    }
    r.data[name] = rows;
  }
  r.seconds = since(t0);
  const bool fast = r.seconds < 120;
  r.status = ok && fast ? "PASS" : "FAIL";
  r.detail = std::to_string(tests) + " (m,k) regressions at n=" + std::to_string(sz.c1_n) +
             ", max |coef|/SE = " + fmt(worst) + " (< 3), " + fmt(r.seconds, 3) + "s (< 120s)";
  return r;
}

// ---------------------------------------------------------------- 2
CriterionResult consistency(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{2, "consistency", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  bool ok = true;
  double slowest = 0, worst = 0;
  const std::vector<Method> methods{Method::closed_form, Method::iterative, Method::crossfit};
  for (const std::string name : {"coarse-staggered", "standard-general"}) {
    const DgpConfig cfg = gallery(name);
    std::vector<std::vector<Eigen::VectorXd>> est(methods.size(), std::vector<Eigen::VectorXd>(sz.c2_R));
    std::vector<double> secs(sz.c2_R, 0);
    parallel_for(static_cast<size_t>(sz.c2_R), [&](size_t rep) {
      const PanelDataset d = simulate_panel(cfg, sz.c2_n, rep_seed(seed, 2, static_cast<int>(rep)));
      const Setup s = setup(name, d);
      for (size_t mi = 0; mi < methods.size(); ++mi) {
        FitOptions o;
        o.method = methods[mi];
        const auto t = Clock::now();
        est[mi][rep] = fit(d, s.model, s.spec, o).psi;
        secs[rep] = std::max(secs[rep], since(t));
      }
    });
    for (double v : secs) slowest = std::max(slowest, v);
    for (size_t mi = 0; mi < methods.size(); ++mi) {
      const Mc s = summarize(est[mi]);
      const double z = max_z(s, cfg.psi);
      worst = std::max(worst, z);
      ok = ok && z < 3;
      r.data[name][to_string(methods[mi])] = {{"mean", vec(s.mean)}, {"mcse", vec(s.mcse)}, {"max_z", z}};
    }
    r.data[name]["truth"] = vec(cfg.psi);
  }
  // null DGP: each estimator's ψ̂ within 3 of its own SEs of 0
  double null_worst = 0;
  {
    const DgpConfig cfg = gallery("null");
    const PanelDataset d = simulate_panel(cfg, sz.c2_n, rep_seed(seed, 2, 999999));
    const Setup s = setup("null", d);
    for (Method m : methods) {
      FitOptions o;
      o.method = m;
      const GEstimate g = fit(d, s.model, s.spec, o);
      const Eigen::VectorXd se = g.se();
      for (int j = 0; j < g.psi.size(); ++j) null_worst = std::max(null_worst, std::abs(g.psi[j]) / se[j]);
      r.data["null"][to_string(m)] = {{"psi", vec(g.psi)}, {"se", vec(se)}};
    }
  }
  ok = ok && null_worst < 3 && slowest < 60;
  r.seconds = since(t0);
  r.status = ok ? "PASS" : "FAIL";
  r.detail = "coarse+standard x {closed-form, iterative, crossfit}, " + std::to_string(sz.c2_R) + " reps at n=" +
             std::to_string(sz.c2_n) + ": max |bias|/MCSE = " + fmt(worst) + " (< 3); null max |psi|/SE = " +
             fmt(null_worst) + " (< 3); slowest fit " + fmt(slowest, 3) + "s (< 60s)";
  return r;
}

// ---------------------------------------------------------------- 3
CriterionResult double_robustness(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{3, "double robustness", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  const std::string name = "coarse-staggered";
  const DgpConfig cfg = gallery(name);
  const std::vector<std::string> modes{"treatment-wrong", "trend-wrong", "both-wrong"};
  std::vector<std::vector<Eigen::VectorXd>> est(modes.size(), std::vector<Eigen::VectorXd>(sz.c3_R));
  parallel_for(static_cast<size_t>(sz.c3_R), [&](size_t rep) {
    const PanelDataset d = simulate_panel(cfg, sz.c3_n, rep_seed(seed, 3, static_cast<int>(rep)));
    const BlipModel model = BlipModel::from_json(cfg.analysis_model, d);
    for (size_t k = 0; k < modes.size(); ++k) {
      const NuisanceSpec spec = NuisanceSpec::from_json(misspecify(cfg.analysis_nuisance, modes[k]), d);
      est[k][rep] = fit(d, model, spec).psi;
    }
  });
  std::vector<double> z(modes.size());
  for (size_t k = 0; k < modes.size(); ++k) {
    const Mc s = summarize(est[k]);
    z[k] = max_z(s, cfg.psi);
    r.data[modes[k]] = {{"mean", vec(s.mean)}, {"mcse", vec(s.mcse)}, {"max_z", z[k]}};
  }
  r.seconds = since(t0);
  const bool ok = z[0] < 3 && z[1] < 3 && z[2] > 5 && r.seconds < 1800;
  r.status = ok ? "PASS" : "FAIL";
  r.detail = name + ", " + std::to_string(sz.c3_R) + " reps at n=" + std::to_string(sz.c3_n) +
             ": max |bias|/MCSE treatment-wrong " + fmt(z[0]) + " (< 3), trend-wrong " + fmt(z[1]) +
             " (< 3), both-wrong " + fmt(z[2]) + " (> 5); " + fmt(r.seconds, 4) + "s (< 1800s)";
  return r;
}

// ---------------------------------------------------------------- 4
CriterionResult solver_equivalence(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{4, "solver equivalence", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  std::vector<double> gap(sz.c4_instances, std::nan(""));
  std::vector<std::string> err(sz.c4_instances);
  parallel_for(static_cast<size_t>(sz.c4_instances), [&](size_t idx) {
    Rng rng = make_stream(seed, 40000 + idx);
    const int K = 2 + static_cast<int>(idx) % 3;
    const bool coarse = idx % 2 == 0;
    const bool general = !coarse && uniform01(rng) < 0.5;
    json basis;
    const int kind = std::min(2, static_cast<int>(uniform01(rng) * 3));
    if (kind == 0) basis = {{"constructor", "pair_indicators"}};
    else if (kind == 1) basis = {{"constructor", "deregulation"}, {"covariate", "L"}};
    else basis = json::array({{{"type", "intercept"}}, {{"type", "lag"}}, {{"type", "covariate"}, {"name", "L"}}});
    json j = {{"name", "random"},
              {"K", K},
              {"covariate", {{"name", "L"}, {"rho", 0.2 + 0.6 * uniform01(rng)}}},
              {"treatment",
               {{"mode", general ? "general" : "staggered"}, {"intercept", -1.0}, {"z", uniform01(rng)}, {"prev", 0.5}}},
              {"outcome", {{"trend", 0.3}, {"theta", 2 * uniform01(rng) - 1}, {"lambda", 1.0}}},
              {"effect", {{"flavor", coarse ? "coarse" : "standard"}, {"basis", basis}, {"psi", {0.0}}}}};
    try {
      const PanelDataset layout = [&] {
        json t = j;
        t["effect"]["basis"] = json::array({{{"type", "intercept"}}});
        return DgpConfig::from_json(t).layout();
      }();
      const BlipModel probe = BlipModel::from_json({{"flavor", coarse ? "coarse" : "standard"}, {"basis", basis}}, layout);
      std::vector<double> psi(probe.dim());
      for (double& v : psi) v = standard_normal(rng);
      j["effect"]["psi"] = psi;
      const DgpConfig cfg = DgpConfig::from_json(j);
      const PanelDataset d = simulate_panel(cfg, sz.c4_n, rep_seed(seed, 4, static_cast<int>(idx)));
      const BlipModel model = BlipModel::from_json({{"flavor", coarse ? "coarse" : "standard"}, {"basis", basis}}, d);
      const json nj = {{"treatment", {{"basis", json::array({{{"type", "intercept"}}, {{"type", "covariate"}, {"name", "L"}}})}}},
                       {"trend", {{"basis", json::array({{{"type", "intercept"}}, {{"type", "covariate"}, {"name", "L"}}})}}}};
      const NuisanceSpec spec = NuisanceSpec::from_json(nj, d);
      FitOptions a, b;
      a.method = Method::closed_form;
      b.method = Method::iterative;
      gap[idx] = (fit(d, model, spec, a).psi - fit(d, model, spec, b).psi).cwiseAbs().maxCoeff();
    } catch (const std::exception& e) {
      err[idx] = e.what();
    }
  });
  double worst = 0;
  int failed = 0;
  json inst = json::array();
  for (int i = 0; i < sz.c4_instances; ++i) {
    if (!err[i].empty() || !std::isfinite(gap[i])) {
      ++failed;
      inst.push_back({{"instance", i}, {"error", err[i]}});
      continue;
    }
    worst = std::max(worst, gap[i]);
    inst.push_back({{"instance", i}, {"max_abs_diff", gap[i]}});
  }
  r.data["instances"] = inst;
  r.seconds = since(t0);
  r.status = failed == 0 && worst <= 1e-8 ? "PASS" : "FAIL";
  r.detail = std::to_string(sz.c4_instances) + " random linear instances: max ||closed - iterative||_inf = " +
             fmt(worst, 3) + " (<= 1e-8)" + (failed ? ", " + std::to_string(failed) + " instances errored" : "");
  return r;
}

// ---------------------------------------------------------------- 5
CriterionResult inference(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{5, "inference coverage", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  const DgpConfig cfg = gallery("coarse-staggered");
  const int dim = static_cast<int>(cfg.psi.size());
  std::vector<Eigen::VectorXi> wald(sz.c5_R), boot(sz.c5_R);
  std::vector<int> boot_fail(sz.c5_R, 0);
  parallel_for(static_cast<size_t>(sz.c5_R), [&](size_t rep) {
    const PanelDataset d = simulate_panel(cfg, sz.c5_n, rep_seed(seed, 5, static_cast<int>(rep)));
    const Setup s = setup("coarse-staggered", d);
    FitOptions cf;
    cf.method = Method::crossfit;
    const GEstimate g = fit(d, s.model, s.spec, cf);
    const auto [lo, hi] = g.wald_ci();
    wald[rep] = Eigen::VectorXi::Zero(dim);
    boot[rep] = Eigen::VectorXi::Zero(dim);
    for (int j = 0; j < dim; ++j) wald[rep][j] = lo[j] <= cfg.psi[j] && cfg.psi[j] <= hi[j];
    const FitClosure closure = [&](const PanelDataset& db) { return fit(db, s.model, s.spec).psi; };
    const BootstrapResult b = bootstrap(d, closure, sz.c5_B, rep_seed(seed, 50, static_cast<int>(rep)), g.psi);
    boot_fail[rep] = static_cast<int>(b.failures.size());
    for (int j = 0; j < dim; ++j) boot[rep][j] = b.lo[j] <= cfg.psi[j] && cfg.psi[j] <= b.hi[j];
  });
  double cw = 0, cb = 0;
  Eigen::VectorXd per_w = Eigen::VectorXd::Zero(dim), per_b = Eigen::VectorXd::Zero(dim);
  for (int rep = 0; rep < sz.c5_R; ++rep) {
    per_w += wald[rep].cast<double>();
    per_b += boot[rep].cast<double>();
  }
  per_w /= sz.c5_R;
  per_b /= sz.c5_R;
  cw = per_w.mean();
  cb = per_b.mean();
  int fails = 0;
  for (int f : boot_fail) fails += f;
  r.data = {{"wald_by_coordinate", vec(per_w)},
            {"bootstrap_by_coordinate", vec(per_b)},
            {"wald", cw},
            {"bootstrap", cb},
            {"bootstrap_failures", fails}};
  r.seconds = since(t0);
  const bool ok = std::abs(cw - 0.95) <= 0.02 && std::abs(cb - 0.95) <= 0.02 && r.seconds < 2700;
  r.status = ok ? "PASS" : "FAIL";
  r.detail = "coarse-staggered, " + std::to_string(sz.c5_R) + " reps at n=" + std::to_string(sz.c5_n) +
             ", pooled over " + std::to_string(dim) + " coordinates: cross-fit Wald " + fmt(100 * cw, 4) +
             "%, bootstrap (B=" + std::to_string(sz.c5_B) + ") " + fmt(100 * cb, 4) + "% (95 +/- 2); " +
             fmt(r.seconds, 4) + "s (< 2700s)";
  return r;
}

// ---------------------------------------------------------------- 6
CriterionResult multiplicative(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{6, "multiplicative SNMM", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  const DgpConfig cfg = gallery("multiplicative");
  std::vector<Eigen::VectorXd> est(sz.c6_R);
  parallel_for(static_cast<size_t>(sz.c6_R), [&](size_t rep) {
    const PanelDataset d = simulate_panel(cfg, sz.c6_n, rep_seed(seed, 6, static_cast<int>(rep)));
    const Setup s = setup("multiplicative", d);
    FitOptions o;
    o.method = Method::iterative;
    est[rep] = fit(d, s.model, s.spec, o).psi;
  });
  const Mc s = summarize(est);
  const double z = max_z(s, cfg.psi);
  r.data = {{"mean", vec(s.mean)}, {"mcse", vec(s.mcse)}, {"truth", vec(cfg.psi)}};
  r.seconds = since(t0);
  r.status = z < 3 ? "PASS" : "FAIL";
  r.detail = std::to_string(sz.c6_R) + " reps at n=" + std::to_string(sz.c6_n) + ": mean " + fmt(s.mean[0]) + ", " +
             fmt(s.mean[1]) + " vs " + fmt(cfg.psi[0]) + ", " + fmt(cfg.psi[1]) + "; max |bias|/MCSE = " + fmt(z) +
             " (< 3)";
  return r;
}

// ---------------------------------------------------------------- 7
CriterionResult sensitivity(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{7, "sensitivity", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  const DgpConfig cfg = gallery("violation");
  std::vector<Eigen::VectorXd> adj(sz.c7_R), raw(sz.c7_R);
  std::vector<char> bitwise(sz.c7_R, 1);
  parallel_for(static_cast<size_t>(sz.c7_R), [&](size_t rep) {
    const PanelDataset d = simulate_panel(cfg, sz.c7_n, rep_seed(seed, 7, static_cast<int>(rep)));
    const Setup s = setup("violation", d);
    const GEstimate g0 = fit(d, s.model, s.spec);
    raw[rep] = g0.psi;
    adj[rep] = sensitivity_fit(d, s.model, BiasFunction::constant(cfg.violation_c0), s.spec).psi;
    if (rep < 3) {
      const GEstimate gz = sensitivity_fit(d, s.model, BiasFunction::zero(), s.spec);
      bitwise[rep] = gz.psi.size() == g0.psi.size() &&
                     std::memcmp(gz.psi.data(), g0.psi.data(), sizeof(double) * g0.psi.size()) == 0 &&
                     std::memcmp(gz.covariance.data(), g0.covariance.data(),
                                 sizeof(double) * g0.covariance.size()) == 0;
    }
  });
  const Mc sa = summarize(adj), sr = summarize(raw);
  const double za = max_z(sa, cfg.psi), zr = max_z(sr, cfg.psi);
  bool bits = true;
  for (char b : bitwise) bits = bits && b;
  r.data = {{"adjusted", {{"mean", vec(sa.mean)}, {"mcse", vec(sa.mcse)}}},
            {"unadjusted", {{"mean", vec(sr.mean)}, {"mcse", vec(sr.mcse)}}},
            {"c0", cfg.violation_c0},
            {"zero_bias_bitwise", bits}};
  r.seconds = since(t0);
  r.status = za < 3 && zr > 5 && bits ? "PASS" : "FAIL";
  r.detail = "violation DGP (c0=" + fmt(cfg.violation_c0) + "), " + std::to_string(sz.c7_R) + " reps at n=" +
             std::to_string(sz.c7_n) + ": adjusted max |bias|/MCSE " + fmt(za) + " (< 3), unadjusted " + fmt(zr) +
             " (> 5), c=0 bitwise " + (bits ? "identical" : "DIFFERENT");
  return r;
}

// ---------------------------------------------------------------- 8
CriterionResult optimal_regime(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{8, "optimal regime", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  const DgpConfig cfg = gallery("optimal-regime");
  const RegimeOracle oracle = enumerate_regimes(cfg, sz.c8_mc, rep_seed(seed, 8, 999999));
  const auto& cells = oracle.cells;
  const std::vector<int>& best = oracle.rules[oracle.best];
  std::vector<double> match(sz.c8_R), value(sz.c8_R);
  parallel_for(static_cast<size_t>(sz.c8_R), [&](size_t rep) {
    const PanelDataset d = simulate_panel(cfg, sz.c8_n, rep_seed(seed, 8, static_cast<int>(rep)));
    const Setup s = setup("optimal-regime", d);
    const RegimeFit rf = fit_optimal_regime(d, s.model, s.spec);
    std::vector<double> occupancy(cells.size(), 0);
    for (int i = 0; i < d.n(); ++i)
      for (int m = 0; m < d.K(); ++m) {
        const int c = cell_index(cells, m, d.z(i, 0, m), m > 0 ? d.a(i, 0, m - 1) : 0.0);
        if (c >= 0) occupancy[c] += 1;
      }
    double hit = 0, tot = 0;
    for (size_t c = 0; c < cells.size(); ++c) {
      PanelDataset one = cfg.layout(1);
      one.set_z(0, 0, cells[c].m, cells[c].z);
      if (cells[c].m > 0) one.set_a(0, 0, cells[c].m - 1, cells[c].a_prev);
      const Action a = optimal_action(s.model, rf.estimate.psi, HistoryView(one, 0, cells[c].m));
      hit += occupancy[c] * (static_cast<int>(a[0]) == best[c]);
      tot += occupancy[c];
    }
    match[rep] = hit / tot;
    value[rep] = rf.value.estimate;
  });
  double mean_match = 0, worst_match = 1;
  for (double m : match) {
    mean_match += m / sz.c8_R;
    worst_match = std::min(worst_match, m);
  }
  const Moment v = sample_moment(value);
  const double sd = v.se * std::sqrt(static_cast<double>(sz.c8_R));
  const Moment ov = oracle.values[oracle.best];
  const double tol_se = std::sqrt(sd * sd / sz.c8_R + ov.se * ov.se);
  const double z = std::abs(v.mean - ov.mean) / tol_se;
  r.data = {{"cell_match", match}, {"value_estimates", value}, {"oracle", oracle.to_json()}};
  r.seconds = since(t0);
  r.status = mean_match >= 0.99 && z < 3 ? "PASS" : "FAIL";
  r.detail = std::to_string(sz.c8_R) + " reps at n=" + std::to_string(sz.c8_n) + ": occupancy-weighted cell match " +
             fmt(100 * mean_match, 4) + "% (>= 99; worst rep " + fmt(100 * worst_match, 4) + "%), value " +
             fmt(v.mean) + " vs oracle " + fmt(ov.mean) + ", |diff|/MCSE = " + fmt(z) + " (< 3)";
  return r;
}

// ---------------------------------------------------------------- 9
CriterionResult cde(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{9, "controlled direct effect", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  const DgpConfig cfg = gallery("cde-two-treatment");
  const std::vector<std::pair<int, int>> pairs{{0, 2}, {0, 3}, {1, 3}};
  const std::uint64_t os = rep_seed(seed, 9, 999999);
  const PanelDataset nat = simulate_arm(cfg, sz.oracle_mc, os, ArmSpec::natural());
  const PanelDataset aon = simulate_arm(cfg, sz.oracle_mc, os, ArmSpec::a_only());
  const PanelDataset nev = simulate_arm(cfg, sz.oracle_mc, os, ArmSpec::never());
  std::vector<Moment> truth;
  for (auto [m, k] : pairs) {
    std::vector<double> diff;
    for (int i = 0; i < nat.n(); ++i)
      if (initiation_time(nat, i, {0}).equals(m)) diff.push_back(aon.y(i, k) - nev.y(i, k));
    truth.push_back(sample_moment(diff));
  }
  std::vector<std::vector<double>> est(pairs.size(), std::vector<double>(sz.c9_R));
  parallel_for(static_cast<size_t>(sz.c9_R), [&](size_t rep) {
    const PanelDataset d = simulate_panel(cfg, sz.c9_n, rep_seed(seed, 9, static_cast<int>(rep)));
    const Setup s = setup("cde-two-treatment", d);
    for (size_t p = 0; p < pairs.size(); ++p)
      est[p][rep] = coarse_cde(d, s.model, s.spec, "r", pairs[p].first, pairs[p].second).effect.estimate;
  });
  double worst = 0;
  json rows = json::array();
  std::string parts;
  for (size_t p = 0; p < pairs.size(); ++p) {
    const Moment e = sample_moment(est[p]);
    const double sd = e.se * std::sqrt(static_cast<double>(sz.c9_R));
    const double tol = std::sqrt(sd * sd / sz.c9_R + truth[p].se * truth[p].se);
    const double z = std::abs(e.mean - truth[p].mean) / tol;
    worst = std::max(worst, z);
    rows.push_back({{"m", pairs[p].first}, {"k", pairs[p].second}, {"estimate", e.mean}, {"oracle", truth[p].mean},
                    {"mcse", tol}});
    parts += (parts.empty() ? "" : ", ") + std::string("(") + std::to_string(pairs[p].first) + "," +
             std::to_string(pairs[p].second) + ") " + fmt(e.mean) + " vs " + fmt(truth[p].mean);
  }
  r.data["pairs"] = rows;
  r.seconds = since(t0);
  r.status = worst < 3 ? "PASS" : "FAIL";
  r.detail = std::to_string(sz.c9_R) + " reps at n=" + std::to_string(sz.c9_n) + ": " + parts +
             "; max |diff|/MCSE = " + fmt(worst) + " (< 3)";
  return r;
}

// ---------------------------------------------------------------- 10
struct Target {
  CounterfactualQuery q;
  Moment oracle;
};

std::vector<Target> derived_targets(const DgpConfig& cfg, const BlipModel& model, int mc, std::uint64_t seed) {
  std::vector<Target> out;
  const PanelDataset nat = simulate_arm(cfg, mc, seed, ArmSpec::natural());
  const PanelDataset nev = simulate_arm(cfg, mc, seed, ArmSpec::never());
  const int K = cfg.K;
  const std::string zname = cfg.z_name;
  for (int k = 1; k <= K; ++k) {
    Target t;
    t.q.target = CounterfactualQuery::Target::mean_never_treated;
    t.q.k = k;
    std::vector<double> y(mc);
    for (int i = 0; i < mc; ++i) y[i] = nev.y(i, k);
    t.oracle = sample_moment(y);
    out.push_back(t);
  }
  auto zpred = [&](int m) {
    Predicate p;
    p.column = zname;
    p.op = cfg.z_law == "binary_markov" ? "==" : ">=";
    p.value = cfg.z_law == "binary_markov" ? 1.0 : 0.0;
    p.time = m;
    return p;
  };
  if (model.flavor == Flavor::coarse) {
    std::vector<InitiationTime> T;
    for (int i = 0; i < mc; ++i) T.push_back(initiation_time(nat, i, {0}));
    for (int m = 0; m < K; ++m)
      for (int k = m + 1; k <= K; ++k) {
        Target t;
        t.q.target = CounterfactualQuery::Target::conditional_mean;
        t.q.m = m;
        t.q.k = k;
        t.q.cohort = "initiated";
        std::vector<double> y;
        for (int i = 0; i < mc; ++i)
          if (T[i].equals(m)) y.push_back(nev.y(i, k));
        t.oracle = sample_moment(y);
        out.push_back(t);
      }
    // subgroup within a cohort
    Target t;
    t.q.target = CounterfactualQuery::Target::conditional_mean;
    t.q.m = 1;
    t.q.k = K;
    t.q.cohort = "initiated";
    t.q.where.push_back(zpred(1));
    std::vector<double> y;
    for (int i = 0; i < mc; ++i)
      if (T[i].equals(1) && t.q.where[0].holds(nat, i, 1)) y.push_back(nev.y(i, K));
    t.oracle = sample_moment(y);
    out.push_back(t);
  } else {
    for (int m = 1; m < K; ++m) {
      const PanelDataset tr = simulate_arm(cfg, mc, seed, ArmSpec::truncate_at(m));
      Target t;
      t.q.target = CounterfactualQuery::Target::conditional_mean;
      t.q.m = m;
      t.q.k = K;
      t.q.cohort = "all";
      t.q.where.push_back(zpred(m));
      std::vector<double> y;
      for (int i = 0; i < mc; ++i)
        if (t.q.where[0].holds(nat, i, m)) y.push_back(tr.y(i, K));
      t.oracle = sample_moment(y);
      out.push_back(t);
    }
  }
  return out;
}

CriterionResult derived_quantities(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{10, "derived quantities", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  double worst = 0;
  int checks = 0, failed = 0;
  std::string worst_where;
  for (const std::string& name : gallery_names()) {
    const DgpConfig cfg = gallery(name);
    const PanelDataset layout = cfg.layout();
    BlipModel model = BlipModel::from_json(cfg.analysis_model, layout);
    if (model.flavor == Flavor::regime)
      model = BlipModel::from_json({{"flavor", "standard"}, {"basis", cfg.analysis_model["basis"]}}, layout);
    const std::vector<Target> targets = derived_targets(cfg, model, sz.oracle_mc, rep_seed(seed, 10, 999999));
    std::vector<Eigen::VectorXd> est(sz.c10_R, Eigen::VectorXd(targets.size()));
    parallel_for(static_cast<size_t>(sz.c10_R), [&](size_t rep) {
      const PanelDataset d = simulate_panel(cfg, sz.c10_n, rep_seed(seed, 10, static_cast<int>(rep)));
      const NuisanceSpec spec = NuisanceSpec::from_json(cfg.analysis_nuisance, d);
      FitOptions o;
      if (model.flavor == Flavor::multiplicative) o.method = Method::iterative;
      const GEstimate g = cfg.violation_c0 != 0
                              ? sensitivity_fit(d, model, BiasFunction::constant(cfg.violation_c0), spec, o)
                              : fit(d, model, spec, o);
      for (size_t t = 0; t < targets.size(); ++t) est[rep][t] = point_estimate(targets[t].q, model, g.psi, d);
    });
    const Mc s = summarize(est);
    json rows = json::array();
    for (size_t t = 0; t < targets.size(); ++t) {
      const double tol = std::sqrt(s.mcse[t] * s.mcse[t] + targets[t].oracle.se * targets[t].oracle.se);
      const double z = std::abs(s.mean[t] - targets[t].oracle.mean) / tol;
      ++checks;
      if (z >= 3) ++failed;
      if (z > worst) {
        worst = z;
        worst_where = name + " " + targets[t].q.label();
      }
      rows.push_back({{"query", targets[t].q.to_json()}, {"label", targets[t].q.label()}, {"estimate", s.mean[t]},
                      {"oracle", targets[t].oracle.mean}, {"mcse", tol}, {"z", z}});
    }
    r.data[name] = rows;
  }
  r.seconds = since(t0);
  r.status = failed == 0 ? "PASS" : "FAIL";
  r.detail = std::to_string(gallery_names().size()) + " gallery DGPs, " + std::to_string(checks) + " targets, " +
             std::to_string(sz.c10_R) + " reps at n=" + std::to_string(sz.c10_n) + ": max |diff|/MCSE = " +
             fmt(worst) + " at " + worst_where + " (< 3)" +
             (failed ? ", " + std::to_string(failed) + " targets outside" : "");
  return r;
}

// ---------------------------------------------------------------- 11
CriterionResult real_data(const Sizes& sz, std::uint64_t seed) {
  CriterionResult r{11, "bank-deregulation reproduction", "", "", 0, json::object()};
  const auto t0 = Clock::now();
  const char* path = std::getenv("DIDSNMM_DEREG_DATA");
  if (!path || !*path) {
    r.status = "SKIP";
    r.detail = "optional: set DIDSNMM_DEREG_DATA to the panel CSV (and DIDSNMM_DEREG_COVARIATE) to run";
    return r;
  }
  const PanelDataset d = load_csv(path);
  const char* cv = std::getenv("DIDSNMM_DEREG_COVARIATE");
  if (d.p() == 0) throw DataError("deregulation panel needs a covariate column");
  const std::string cov = cv && *cv ? cv : d.covariate_names()[0];
  const json basis = {{"constructor", "deregulation"}, {"covariate", cov}};
  const BlipModel model = BlipModel::from_json({{"flavor", "coarse"}, {"basis", basis}}, d);
  const json cols = json::array({{{"type", "intercept"}}, {{"type", "covariate"}, {"name", cov}}});
  const NuisanceSpec spec = NuisanceSpec::from_json({{"treatment", {{"basis", cols}}}, {"trend", {{"basis", cols}}}}, d);
  const GEstimate g = fit(d, model, spec);
  const int j = model.dim() - 1;
  const FitClosure closure = [&](const PanelDataset& db) { return fit(db, model, spec).psi; };
  const BootstrapResult b = bootstrap(d, closure, sz.c11_B, rep_seed(seed, 11, 0), g.psi);
  const double beta = g.psi[j];
  const bool near = std::abs(beta - 0.044) <= 0.005;
  const bool overlap = b.lo[j] <= 0.061 && b.hi[j] >= 0.026;
  r.data = {{"beta", beta}, {"ci", {b.lo[j], b.hi[j]}}};
  r.seconds = since(t0);
  r.status = near && overlap ? "PASS" : "FAIL";
  r.detail = "beta = " + fmt(beta) + " (|beta - 0.044| <= 0.005), bootstrap CI [" + fmt(b.lo[j]) + ", " +
             fmt(b.hi[j]) + "] overlaps [0.026, 0.061]: " + (overlap ? "yes" : "no");
  return r;
}

}  // namespace

std::string format_result(const CriterionResult& r) {
  std::ostringstream s;
  s << "[" << r.status << "] " << r.id << " " << r.name << ": " << r.detail;
  return s.str();
}

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options) {
  if (options.profile != "full" && options.profile != "quick")
    throw ConfigError("profile must be full or quick", "/profile");
  const Sizes sz = options.profile == "quick" ? quick_sizes() : Sizes{};
  using Fn = CriterionResult (*)(const Sizes&, std::uint64_t);
  const std::vector<std::pair<int, Fn>> all{{1, identification},  {2, consistency},     {3, double_robustness},
                                            {4, solver_equivalence}, {5, inference},      {6, multiplicative},
                                            {7, sensitivity},      {8, optimal_regime},  {9, cde},
                                            {10, derived_quantities}, {11, real_data}};
  std::vector<CriterionResult> out;
  for (auto& [id, fn] : all) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), id) == options.only.end())
      continue;
    CriterionResult res;
    try {
      res = fn(sz, options.seed);
    } catch (const std::exception& e) {
      res.id = id;
      res.name = "criterion " + std::to_string(id);
      res.status = "FAIL";
      res.detail = std::string("error: ") + e.what();
    }
    if (options.profile == "quick" && res.status != "SKIP") res.detail += " [quick profile]";
    if (options.on_result) options.on_result(res);
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace didsnmm
