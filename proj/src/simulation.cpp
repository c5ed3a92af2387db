#include "didsnmm/simulation.hpp"

#include <algorithm>
#include <cmath>

#include "didsnmm/error.hpp"
#include "didsnmm/linalg.hpp"
#include "didsnmm/nuisance.hpp"
#include "didsnmm/parallel.hpp"
#include "didsnmm/random.hpp"

namespace didsnmm {

namespace {

std::vector<double> get_vec(const json& j, const char* key, int size, double fill, const std::string& ptr) {
  if (!j.contains(key)) return std::vector<double>(size, fill);
  const json& v = j[key];
  if (v.is_number()) return std::vector<double>(size, v.get<double>());
  if (!v.is_array() || static_cast<int>(v.size()) != size)
    throw ConfigError("expected a number or an array of length " + std::to_string(size), ptr + "/" + key);
  return v.get<std::vector<double>>();
}

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

DgpConfig DgpConfig::from_json(const json& j, const std::string& p) {
  if (!j.is_object()) throw ConfigError("DGP config must be a JSON object", p);
  DgpConfig c;
  c.name = j.value("name", std::string("custom"));
  c.K = j.value("K", 3);
  if (c.K < 1) throw ConfigError("K must be at least 1", p + "/K");
  const int P = c.K + 1;
  if (j.contains("time_labels")) c.time_labels = get_vec(j, "time_labels", P, 0, p);

  const json z = j.value("covariate", json::object());
  c.z_name = z.value("name", std::string("L"));
  c.z_law = z.value("law", std::string("gaussian_ar"));
  if (c.z_law != "gaussian_ar" && c.z_law != "binary_markov")
    throw ConfigError("covariate law must be gaussian_ar or binary_markov", p + "/covariate/law");
  c.z_mean = z.value("mean", 0.0);
  c.z_sd = z.value("sd", 1.0);
  c.z_rho = z.value("rho", 0.5);
  c.z_p0 = z.value("p0", 0.5);
  c.z_stay = z.value("stay", 0.7);

  const json t = j.value("treatment", json::object());
  c.treatment_name = t.value("name", std::string("a"));
  const std::string mode = t.value("mode", std::string("staggered"));
  if (mode != "staggered" && mode != "general")
    throw ConfigError("treatment mode must be staggered or general", p + "/treatment/mode");
  c.staggered = mode == "staggered";
  c.alpha = get_vec(t, "intercept", P, -1.0, p + "/treatment");
  c.a_z = t.value("z", 0.0);
  c.a_prev = t.value("prev", 0.0);

  const json o = j.value("outcome", json::object());
  c.y0_mean = o.value("y0_mean", 0.0);
  c.y0_sd = o.value("y0_sd", 1.0);
  c.beta = get_vec(o, "trend", P, 0.0, p + "/outcome");
  c.theta = o.value("theta", 0.0);
  c.lambda = o.value("lambda", 1.0);
  c.sigma = o.value("sigma", 1.0);
  c.violation_c0 = o.value("violation_c0", 0.0);

  const json e = j.value("effect", json::object());
  c.effect_flavor = flavor_from_string(e.value("flavor", std::string("coarse")), p + "/effect/flavor");
  c.effect_basis = e.value("basis", json::array({{{"type", "intercept"}}}));
  const auto psi = e.value("psi", std::vector<double>{0.0});
  c.psi = Eigen::Map<const Eigen::VectorXd>(psi.data(), psi.size());
  c.u_modification = e.value("u_modification", 0.0);

  if (j.contains("second_treatment")) {
    const json r = j["second_treatment"];
    c.has_second = true;
    c.second_name = r.value("name", std::string("r"));
    c.r_alpha = get_vec(r, "intercept", P, -1.0, p + "/second_treatment");
    c.lambda_r = r.value("lambda", 0.0);
    c.r_effect = get_vec(r, "effect", c.K, 0.0, p + "/second_treatment");
  }
  c.analysis_model = j.value("analysis_model", json());
  c.analysis_nuisance = j.value("analysis_nuisance", json());
  c.regime = j.value("regime", json());
  c.validate();
  return c;
}

json DgpConfig::to_json() const {
  json j;
  j["name"] = name;
  j["K"] = K;
  if (!time_labels.empty()) j["time_labels"] = time_labels;
  j["covariate"] = {{"name", z_name}, {"law", z_law}};
  if (z_law == "gaussian_ar") {
    j["covariate"]["mean"] = z_mean;
    j["covariate"]["sd"] = z_sd;
    j["covariate"]["rho"] = z_rho;
  } else {
    j["covariate"]["p0"] = z_p0;
    j["covariate"]["stay"] = z_stay;
  }
  j["treatment"] = {{"name", treatment_name},
                    {"mode", staggered ? "staggered" : "general"},
                    {"intercept", alpha},
                    {"z", a_z},
                    {"prev", a_prev}};
  j["outcome"] = {{"y0_mean", y0_mean}, {"y0_sd", y0_sd}, {"trend", beta},         {"theta", theta},
                  {"lambda", lambda},   {"sigma", sigma}, {"violation_c0", violation_c0}};
  j["effect"] = {{"flavor", to_string(effect_flavor)},
                 {"basis", effect_basis},
                 {"psi", vec_json(psi)},
                 {"u_modification", u_modification}};
  if (has_second)
    j["second_treatment"] = {{"name", second_name}, {"intercept", r_alpha}, {"lambda", lambda_r}, {"effect", r_effect}};
  if (!analysis_model.is_null()) j["analysis_model"] = analysis_model;
  if (!analysis_nuisance.is_null()) j["analysis_nuisance"] = analysis_nuisance;
  if (!regime.is_null()) j["regime"] = regime;
  return j;
}

PanelDataset DgpConfig::layout(int n) const {
  std::vector<std::string> tn{treatment_name};
  if (has_second) tn.push_back(second_name);
  PanelDataset d(n, K, tn, {z_name});
  if (!time_labels.empty()) d.set_time_labels(time_labels);
  for (int i = 0; i < n; ++i) d.set_subject_id(i, std::to_string(i + 1));
  return d;
}

namespace {

BlipModel effect_model(const DgpConfig& c, const PanelDataset& layout) {
  json m = {{"flavor", to_string(c.effect_flavor == Flavor::regime ? Flavor::standard : c.effect_flavor)},
            {"basis", c.effect_basis},
            {"components", json::array({c.treatment_name})},
            {"initiation_components", json::array({c.treatment_name})}};
  return BlipModel::from_json(m, layout, "/effect");
}

}  // namespace

void DgpConfig::validate() const {
  const int P = K + 1;
  if (static_cast<int>(alpha.size()) != P || static_cast<int>(beta.size()) != P)
    throw ConfigError("treatment intercepts and outcome trend need K+1 entries");
  if (z_law == "gaussian_ar" && (std::abs(z_rho) >= 1 || z_sd < 0))
    throw ConfigError("gaussian_ar covariate needs |rho| < 1 and sd >= 0", "/covariate");
  if (z_law == "binary_markov" && (z_p0 < 0 || z_p0 > 1 || z_stay < 0 || z_stay > 1))
    throw ConfigError("binary_markov probabilities must lie in [0, 1]", "/covariate");
  if (sigma < 0 || y0_sd < 0) throw ConfigError("standard deviations must be non-negative", "/outcome");
  const PanelDataset l = layout();
  const BlipModel m = effect_model(*this, l);
  if (m.basis.uses_outcome())
    throw ConfigError("DGP effect bases may not use outcome history (outcomes depend on the arm)", "/effect/basis");
  if (psi.size() != m.dim())
    throw ConfigError("psi has " + std::to_string(psi.size()) + " entries but the effect basis has " +
                          std::to_string(m.dim()),
                      "/effect/psi");
  if (effect_flavor == Flavor::multiplicative && m.basis.depends_on_k())
    throw ConfigError("multiplicative DGPs need a horizon-free effect basis", "/effect/basis");
  if (effect_flavor == Flavor::coarse && !staggered)
    throw ConfigError("coarse effects are defined for staggered adoption only", "/effect/flavor");
  if (violation_c0 != 0 && !staggered) throw ConfigError("violations are defined for staggered adoption only", "/outcome");
  if (has_second && !staggered) throw ConfigError("a second treatment needs staggered adoption", "/second_treatment");
  if (effect_flavor == Flavor::regime && u_modification != 0)
    throw ConfigError("optimal-regime oracles need effect modification by U switched off", "/effect/u_modification");
}

namespace {

struct Draws {
  std::vector<double> z, u, eps, v;
  double y0 = 0;
};

Draws draw_subject(const DgpConfig& c, std::uint64_t seed, int i) {
  const int P = c.K + 1;
  Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
  Draws d;
  d.z.resize(P);
  if (c.z_law == "gaussian_ar") {
    const double sd0 = c.z_sd / std::sqrt(1 - c.z_rho * c.z_rho);
    d.z[0] = c.z_mean + sd0 * standard_normal(rng);
    for (int t = 1; t < P; ++t) d.z[t] = c.z_mean + c.z_rho * (d.z[t - 1] - c.z_mean) + c.z_sd * standard_normal(rng);
  } else {
    d.z[0] = uniform01(rng) < c.z_p0 ? 1.0 : 0.0;
    for (int t = 1; t < P; ++t) d.z[t] = uniform01(rng) < c.z_stay ? d.z[t - 1] : 1.0 - d.z[t - 1];
  }
  d.u.resize(P);
  d.eps.resize(P);
  d.v.resize(P);
  for (int t = 0; t < P; ++t) d.u[t] = standard_logistic(rng);
  for (int t = 0; t < P; ++t) d.eps[t] = standard_normal(rng);
  for (int t = 0; t < P; ++t) d.v[t] = standard_logistic(rng);
  d.y0 = standard_normal(rng);
  return d;
}

double natural_propensity_index(const DgpConfig& c, const Draws& dr, int t, double a_prev) {
  return c.alpha[t] + c.a_z * dr.z[t] + (c.staggered ? 0.0 : c.a_prev * a_prev);
}

std::vector<double> natural_path(const DgpConfig& c, const Draws& dr) {
  const int P = c.K + 1;
  std::vector<double> a(P, 0.0);
  for (int t = 0; t < P; ++t) {
    const double prev = t > 0 ? a[t - 1] : 0.0;
    if (c.staggered && prev == 1.0) {
      a[t] = 1.0;
      continue;
    }
    a[t] = natural_propensity_index(c, dr, t, prev) + dr.u[t] > 0 ? 1.0 : 0.0;
  }
  return a;
}

int first_one(const std::vector<double>& a) {
  for (size_t t = 0; t < a.size(); ++t)
    if (a[t] != 0.0) return static_cast<int>(t);
  return -1;
}

PanelDataset simulate(const DgpConfig& c, int n, std::uint64_t seed, const ArmSpec& arm) {
  if (n < 1) throw ConfigError("n must be positive", "/n");
  c.validate();
  const int P = c.K + 1;
  PanelDataset d = c.layout(n);
  const BlipModel eff = effect_model(c, d);
  const int ca = 0, cr = c.has_second ? 1 : -1;

  // pass 1: covariates and treatments (the rule arm reads A_{t-1} back)
  std::vector<std::vector<double>> natural(n);
  parallel_for(static_cast<size_t>(n), [&](size_t ii) {
    const int i = static_cast<int>(ii);
    const Draws dr = draw_subject(c, seed, i);
    for (int t = 0; t < P; ++t) d.set_z(i, 0, t, dr.z[t]);
    const std::vector<double> nat = natural_path(c, dr);
    const int T_nat = first_one(nat);
    std::vector<double> a(P, 0.0);
    switch (arm.kind) {
      case ArmSpec::Kind::natural:
      case ArmSpec::Kind::a_only: a = nat; break;
      case ArmSpec::Kind::never: break;
      case ArmSpec::Kind::truncate:
        if (c.staggered) {
          if (T_nat >= 0 && T_nat < arm.m) a = nat;
        } else {
          for (int t = 0; t < std::min(arm.m, P); ++t) a[t] = nat[t];
        }
        break;
      case ArmSpec::Kind::rule:
        for (int t = 0; t < P; ++t) {
          const Action g = arm.rule(HistoryView(d, i, t));
          a[t] = g[0];
          d.set_a(i, ca, t, a[t]);
        }
        break;
    }
    for (int t = 0; t < P; ++t) d.set_a(i, ca, t, a[t]);
    if (cr >= 0) {
      const int TA = first_one(a);
      double prev = 0;
      for (int t = 0; t < P; ++t) {
        double r = 0;
        if (arm.kind != ArmSpec::Kind::a_only && TA >= 0 && t > TA)
          r = prev == 1.0 ? 1.0 : (c.r_alpha[t] + dr.v[t] > 0 ? 1.0 : 0.0);
        d.set_a(i, cr, t, r);
        prev = r;
      }
    }
    natural[i] = nat;
  });

  // pass 2: outcomes
  parallel_for(static_cast<size_t>(n), [&](size_t ii) {
    const int i = static_cast<int>(ii);
    const Draws dr = draw_subject(c, seed, i);
    const std::vector<double>& nat = natural[i];
    const int T_nat = first_one(nat);
    std::vector<double> y0(P);
    y0[0] = c.y0_mean + c.y0_sd * dr.y0 + c.lambda * dr.u[0] + c.lambda_r * dr.v[0];
    for (int t = 1; t < P; ++t) {
      double inc = c.beta[t] + c.theta * dr.z[t - 1] + c.lambda * dr.u[t] + c.lambda_r * dr.v[t] + c.sigma * dr.eps[t];
      if (c.violation_c0 != 0) {
        // c0 Σ_{j<t} 1{T >= j}(A_j − Pr(A_j = 1 | history, T >= j)) on the natural path
        for (int j = 0; j < t; ++j)
          if (T_nat < 0 || T_nat >= j) inc += c.violation_c0 * (nat[j] - expit(natural_propensity_index(c, dr, j, 0)));
      }
      y0[t] = y0[t - 1] + inc;
    }
    std::vector<double> y = y0;
    const int T = [&] {
      for (int t = 0; t < P; ++t)
        if (d.a(i, ca, t) != 0.0) return t;
      return -1;
    }();
    if (c.effect_flavor == Flavor::coarse) {
      if (T >= 0) {
        HistoryView h(d, i, T);
        const Action aT = d.action(i, T);
        for (int k = T + 1; k < P; ++k) y[k] += eff.eval(h, k, aT, c.psi) * (1 + c.u_modification * dr.u[T]);
      }
    } else {
      for (int k = 1; k < P; ++k) {
        double s = 0;
        for (int j = 0; j < k; ++j) {
          HistoryView h(d, i, j);
          s += eff.eval(h, k, d.action(i, j), c.psi) * (1 + c.u_modification * dr.u[j]);
        }
        if (c.effect_flavor == Flavor::multiplicative) y[k] = y0[k] * std::exp(s);
        else y[k] += s;
      }
    }
    if (cr >= 0) {
      int TR = -1;
      for (int t = 0; t < P && TR < 0; ++t)
        if (d.a(i, cr, t) != 0.0) TR = t;
      if (TR >= 0)
        for (int k = TR + 1; k < P; ++k) y[k] += c.r_effect[k - TR - 1];
    }
    for (int t = 0; t < P; ++t) d.set_y(i, t, y[t]);
  });
  return d;
}

}  // namespace

PanelDataset simulate_panel(const DgpConfig& cfg, int n, std::uint64_t seed) {
  return simulate(cfg, n, seed, ArmSpec::natural());
}

PanelDataset simulate_arm(const DgpConfig& cfg, int n, std::uint64_t seed, const ArmSpec& arm) {
  if (arm.kind == ArmSpec::Kind::rule && !arm.rule) throw ConfigError("rule arm needs a decision rule");
  return simulate(cfg, n, seed, arm);
}

Moment sample_moment(const std::vector<double>& x) {
  Moment m;
  if (x.empty()) return {std::nan(""), std::nan("")};
  double s = 0;
  for (double v : x) s += v;
  m.mean = s / x.size();
  double ss = 0;
  for (double v : x) ss += (v - m.mean) * (v - m.mean);
  m.se = x.size() > 1 ? std::sqrt(ss / (x.size() - 1) / x.size()) : 0.0;
  return m;
}

std::vector<RegimeCell> regime_cells(const DgpConfig& cfg) {
  if (cfg.z_law != "binary_markov") throw ConfigError("regime enumeration needs a binary covariate");
  std::vector<RegimeCell> cells;
  for (int m = 0; m < cfg.K; ++m)
    for (double z : {0.0, 1.0}) {
      if (m == 0) {
        cells.push_back({0, z, 0.0});
        continue;
      }
      for (double a : {0.0, 1.0}) cells.push_back({m, z, a});
    }
  return cells;
}

int cell_index(const std::vector<RegimeCell>& cells, int m, double z, double a_prev) {
  for (size_t c = 0; c < cells.size(); ++c)
    if (cells[c].m == m && cells[c].z == z && (m == 0 || cells[c].a_prev == a_prev)) return static_cast<int>(c);
  return -1;
}

RegimeOracle enumerate_regimes(const DgpConfig& cfg, int mc_size, std::uint64_t seed) {
  if (cfg.regime.is_null() || !cfg.regime.contains("utility"))
    throw ConfigError("regime enumeration needs regime.utility in the DGP config", "/regime");
  const auto tau = cfg.regime["utility"].get<std::vector<double>>();
  if (static_cast<int>(tau.size()) != cfg.K + 1) throw ConfigError("utility needs K+1 weights", "/regime/utility");
  RegimeOracle out;
  out.cells = regime_cells(cfg);
  const int C = static_cast<int>(out.cells.size());
  if (C > 16) throw ConfigError("too many decision cells to enumerate");
  const auto cells = out.cells;
  for (int r = 0; r < (1 << C); ++r) {
    std::vector<int> rule(C);
    for (int c = 0; c < C; ++c) rule[c] = (r >> c) & 1;
    out.rules.push_back(rule);
  }
  out.values.resize(out.rules.size());
  for (size_t r = 0; r < out.rules.size(); ++r) {
    const auto rule = out.rules[r];
    RegimeRule g = [cells, rule](const HistoryView& h) {
      const int m = h.time();
      Action a = Action::Zero(h.data().q());
      if (m >= h.data().K()) return a;  // no decision cell at K
      const double z = h.covariate(0, 0).value_or(0.0);
      const double ap = h.treatment_lag(0, 1).value_or(0.0);
      a[0] = rule[cell_index(cells, m, z, ap)];
      return a;
    };
    const PanelDataset d = simulate_arm(cfg, mc_size, seed, ArmSpec::follow(g));
    std::vector<double> v(d.n());
    for (int i = 0; i < d.n(); ++i) {
      double s = 0;
      for (int k = 0; k <= cfg.K; ++k) s += tau[k] * d.y(i, k);
      v[i] = s;
    }
    out.values[r] = sample_moment(v);
    if (out.values[r].mean > out.values[out.best].mean) out.best = static_cast<int>(r);
  }
  return out;
}

json RegimeOracle::to_json() const {
  json c = json::array();
  for (auto& cell : cells) c.push_back({{"m", cell.m}, {"z", cell.z}, {"a_prev", cell.a_prev}});
  json rs = json::array();
  for (size_t r = 0; r < rules.size(); ++r)
    rs.push_back({{"rule", rules[r]}, {"value", values[r].mean}, {"se", values[r].se}});
  return {{"cells", c}, {"rules", rs}, {"best", best}};
}

OracleTruth oracle_truth(const DgpConfig& cfg, int mc_size, std::uint64_t seed) {
  OracleTruth o;
  o.psi = cfg.psi;
  o.mc_size = mc_size;
  o.seed = seed;
  const PanelDataset nat = simulate_arm(cfg, mc_size, seed, ArmSpec::natural());
  const PanelDataset nev = simulate_arm(cfg, mc_size, seed, ArmSpec::never());
  for (int k = 0; k <= cfg.K; ++k) {
    std::vector<double> a(mc_size), b(mc_size);
    for (int i = 0; i < mc_size; ++i) {
      a[i] = nev.y(i, k);
      b[i] = nat.y(i, k);
    }
    o.never_mean.push_back(sample_moment(a));
    o.observed_mean.push_back(sample_moment(b));
  }
  if (cfg.staggered) {
    std::vector<InitiationTime> T;
    for (int i = 0; i < mc_size; ++i) T.push_back(initiation_time(nat, i, {0}));
    for (int m = 0; m <= cfg.K; ++m)
      for (int k = m; k <= cfg.K; ++k) {
        std::vector<double> v;
        for (int i = 0; i < mc_size; ++i)
          if (T[i].equals(m)) v.push_back(nev.y(i, k));
        if (!v.empty()) o.never_given_initiation[{m, k}] = sample_moment(v);
      }
  }
  if (cfg.effect_flavor == Flavor::regime && !cfg.regime.is_null()) o.regime = enumerate_regimes(cfg, mc_size, seed);
  return o;
}

json OracleTruth::to_json() const {
  auto moments = [](const std::vector<Moment>& v) {
    json a = json::array();
    for (auto& m : v) a.push_back({{"mean", m.mean}, {"se", m.se}});
    return a;
  };
  json j;
  j["psi"] = vec_json(psi);
  j["mean_never_treated"] = moments(never_mean);
  j["mean_observed"] = moments(observed_mean);
  json c = json::array();
  for (auto& [mk, m] : never_given_initiation)
    c.push_back({{"m", mk.first}, {"k", mk.second}, {"mean", m.mean}, {"se", m.se}});
  j["mean_never_given_initiation"] = c;
  if (regime) j["regime"] = regime->to_json();
  j["mc_size"] = mc_size;
  j["seed"] = seed;
  return j;
}

ResidualizedCoef residualized_coefficient(const Eigen::MatrixXd& X, const Eigen::VectorXd& a, const Eigen::VectorXd& y) {
  ResidualizedCoef out;
  out.rows = static_cast<int>(y.size());
  Eigen::MatrixXd Z(X.rows(), X.cols() + 1);
  Z.col(0) = a;
  Z.rightCols(X.cols()) = X;
  const LeastSquares f = least_squares(Z, y);
  if (std::find(f.dropped.begin(), f.dropped.end(), 0) != f.dropped.end())
    throw EstimationError("treatment column is collinear with the adjustment basis");
  // drop aliased adjustment columns before the sandwich
  std::vector<int> keep;
  for (int c = 0; c < Z.cols(); ++c)
    if (std::find(f.dropped.begin(), f.dropped.end(), c) == f.dropped.end()) keep.push_back(c);
  Eigen::MatrixXd Zk(Z.rows(), keep.size());
  for (size_t c = 0; c < keep.size(); ++c) Zk.col(c) = Z.col(keep[c]);
  const Eigen::VectorXd resid = y - Z * f.coef;
  out.coef = f.coef[0];
  out.se = hc0_standard_errors(Zk, resid)[0];
  return out;
}

std::vector<TrendCheck> trend_independence_check(const DgpConfig& cfg, int n, std::uint64_t seed) {
  const PanelDataset nat = simulate_arm(cfg, n, seed, ArmSpec::natural());
  const bool coarse = cfg.staggered;
  const NuisanceSpec spec = NuisanceSpec::from_json(cfg.analysis_nuisance, nat, "/analysis_nuisance");
  std::vector<TrendCheck> out;
  for (int m = 0; m < cfg.K; ++m) {
    // untreated-from-m counterfactual: never initiating (staggered) or
    // treatment removed from m onward (general). Multiplicative effects of
    // treatment before m scale the whole later path by a factor fixed by the
    // history, so the untreated (never) increments are the ones to check.
    const bool never = coarse || cfg.effect_flavor == Flavor::multiplicative;
    const PanelDataset cf = simulate_arm(cfg, n, seed, never ? ArmSpec::never() : ArmSpec::truncate_at(m));
    for (int k = m + 1; k <= cfg.K; ++k) {
      std::vector<int> rows;
      for (int i = 0; i < n; ++i)
        if (!coarse || initiation_time(nat, i, {0}).at_or_after(m)) rows.push_back(i);
      const int p = spec.trend.basis.dim();
      Eigen::MatrixXd X(rows.size(), p);
      Eigen::VectorXd a(rows.size()), y(rows.size()), x(p);
      for (size_t r = 0; r < rows.size(); ++r) {
        const int i = rows[r];
        spec.trend.basis.eval(HistoryView(nat, i, m), k, x.data());
        X.row(r) = x.transpose();
        a[r] = nat.a(i, 0, m);
        y[r] = cf.y(i, k) - cf.y(i, k - 1);
      }
      out.push_back({m, k, residualized_coefficient(X, a, y)});
    }
  }
  return out;
}

std::vector<std::string> gallery_names() {
  return {"coarse-staggered", "null", "violation", "standard-general", "multiplicative", "cde-two-treatment",
          "optimal-regime"};
}

namespace {

json term(const std::string& type) { return {{"type", type}}; }
json cov(const std::string& name, int lag = 0) { return {{"type", "covariate"}, {"name", name}, {"lag", lag}}; }
json tlag(const std::string& name, int lag = 1) { return {{"type", "treatment_lag"}, {"name", name}, {"lag", lag}}; }
json product(json a, json b) { return {{"type", "product"}, {"terms", json::array({a, b})}}; }

json coarse_staggered() {
  const json basis = {{"constructor", "deregulation"}, {"covariate", "L"}};
  return {
      {"name", "coarse-staggered"},
      {"K", 3},
      {"covariate", {{"name", "L"}, {"law", "gaussian_ar"}, {"mean", 0.0}, {"sd", 1.0}, {"rho", 0.6}}},
      {"treatment", {{"name", "a"}, {"mode", "staggered"}, {"intercept", -1.5}, {"z", 0.8}}},
      {"outcome",
       {{"y0_mean", 10.0}, {"y0_sd", 2.0}, {"trend", {0.0, 0.5, 0.3, 0.4}}, {"theta", 1.0}, {"lambda", 2.0}, {"sigma", 1.0}}},
      {"effect", {{"flavor", "coarse"}, {"basis", basis}, {"psi", {1.0, 1.5, 2.0, 0.8, 1.2, 0.5, 0.5}}}},
      {"analysis_model", {{"flavor", "coarse"}, {"basis", basis}}},
      {"analysis_nuisance",
       {{"treatment", {{"basis", json::array({term("intercept"), cov("L")})}, {"stratify", "time"}}},
        {"trend", {{"basis", json::array({term("intercept"), cov("L")})}, {"stratify", "pair"}}},
        {"folds", 2},
        {"seed", 1}}}};
}

json standard_general() {
  const json basis = {{"constructor", "flood"}, {"covariate", "rate"}, {"centre", 1992}, {"lag", 1}};
  return {
      {"name", "standard-general"},
      {"K", 4},
      {"time_labels", {1990, 1991, 1992, 1993, 1994}},
      {"covariate", {{"name", "rate"}, {"law", "gaussian_ar"}, {"mean", 0.0}, {"sd", 1.0}, {"rho", 0.5}}},
      {"treatment", {{"name", "a"}, {"mode", "general"}, {"intercept", -0.5}, {"z", 0.7}, {"prev", 1.0}}},
      {"outcome", {{"y0_mean", 5.0}, {"y0_sd", 1.0}, {"trend", 0.3}, {"theta", 0.8}, {"lambda", 1.5}, {"sigma", 1.0}}},
      {"effect", {{"flavor", "standard"}, {"basis", basis}, {"psi", {1.0, 0.2, 0.5, -0.05, 0.3}}}},
      {"analysis_model", {{"flavor", "standard"}, {"basis", basis}}},
      {"analysis_nuisance",
       {{"treatment", {{"basis", json::array({term("intercept"), cov("rate"), tlag("a")})}, {"stratify", "time"}}},
        {"trend",
         {{"basis", json::array({term("intercept"), cov("rate"), {{"type", "treatment_count"}, {"name", "a"}},
                                 {{"type", "treatment_time_sum"}, {"name", "a"}}})},
          {"stratify", "pair"}}},
        {"folds", 2},
        {"seed", 1}}}};
}

json multiplicative() {
  const json basis = json::array({term("intercept"), cov("z")});
  return {
      {"name", "multiplicative"},
      {"K", 3},
      {"covariate", {{"name", "z"}, {"law", "gaussian_ar"}, {"mean", 0.0}, {"sd", 1.0}, {"rho", 0.5}}},
      {"treatment", {{"name", "a"}, {"mode", "general"}, {"intercept", -0.5}, {"z", 0.6}, {"prev", 0.8}}},
      {"outcome", {{"y0_mean", 20.0}, {"y0_sd", 1.0}, {"trend", 1.0}, {"theta", 0.5}, {"lambda", 1.0}, {"sigma", 1.0}}},
      {"effect", {{"flavor", "multiplicative"}, {"basis", basis}, {"psi", {0.15, -0.1}}}},
      {"analysis_model", {{"flavor", "multiplicative"}, {"basis", basis}}},
      {"analysis_nuisance",
       {{"treatment", {{"basis", json::array({term("intercept"), cov("z"), tlag("a")})}, {"stratify", "time"}}},
        {"trend", {{"basis", json::array({term("intercept"), cov("z")})}, {"stratify", "pair"}}},
        {"folds", 2},
        {"seed", 1}}}};
}

json cde_two_treatment() {
  return {
      {"name", "cde-two-treatment"},
      {"K", 3},
      {"covariate", {{"name", "z"}, {"law", "gaussian_ar"}, {"mean", 0.0}, {"sd", 1.0}, {"rho", 0.5}}},
      {"treatment", {{"name", "a"}, {"mode", "staggered"}, {"intercept", -1.2}, {"z", 0.7}}},
      {"outcome", {{"y0_mean", 10.0}, {"y0_sd", 1.0}, {"trend", 0.5}, {"theta", 0.8}, {"lambda", 1.5}, {"sigma", 1.0}}},
      {"effect",
       {{"flavor", "coarse"},
        {"basis", json::array({{{"type", "pair_indicators"}}})},
        {"psi", {1.0, 1.2, 1.4, 0.9, 1.1, 0.7}}}},
      {"second_treatment", {{"name", "r"}, {"intercept", -0.5}, {"lambda", 1.0}, {"effect", {0.6, 0.9, 1.1}}}},
      {"analysis_model",
       {{"flavor", "coarse"},
        {"basis", json::array({{{"type", "pair_indicators"}}})},
        {"components", {"a"}},
        {"initiation_components", {"a", "r"}}}},
      {"analysis_nuisance",
       {{"treatment", {{"basis", json::array({term("intercept"), cov("z")})}, {"stratify", "time"}}},
        {"trend", {{"basis", json::array({term("intercept"), cov("z")})}, {"stratify", "pair"}}},
        {"folds", 2},
        {"seed", 1}}}};
}

json optimal_regime() {
  const json pairs = {{"type", "pair_indicators"}};
  const json basis = json::array({pairs, product(pairs, cov("z"))});
  const json regime = {{"actions", json::array({json::array({0}), json::array({1})})}, {"utility", {0.0, 1.0, 1.0}}};
  return {
      {"name", "optimal-regime"},
      {"K", 2},
      {"covariate", {{"name", "z"}, {"law", "binary_markov"}, {"p0", 0.5}, {"stay", 0.7}}},
      {"treatment", {{"name", "a"}, {"mode", "general"}, {"intercept", -0.3}, {"z", 0.8}, {"prev", 0.5}}},
      {"outcome", {{"y0_mean", 0.0}, {"y0_sd", 1.0}, {"trend", {0.0, 0.5, 0.5}}, {"theta", 0.5}, {"lambda", 1.0}, {"sigma", 1.0}}},
      {"effect", {{"flavor", "regime"}, {"basis", basis}, {"psi", {0.4, -0.8, 0.5, 0.9, 0.3, -1.2}}}},
      {"regime", regime},
      {"analysis_model", {{"flavor", "regime"}, {"basis", basis}, {"regime", regime}}},
      {"analysis_nuisance",
       {{"treatment",
         {{"family", "saturated"},
          {"basis", json::array({term("intercept"), cov("z"), tlag("a"), product(cov("z"), tlag("a"))})},
          {"stratify", "time"}}},
        {"trend",
         {{"basis", json::array({term("intercept"), cov("z"), cov("z", 1), tlag("a"), product(tlag("a"), cov("z", 1))})},
          {"stratify", "pair"}}},
        {"folds", 2},
        {"seed", 1}}}};
}

}  // namespace

DgpConfig gallery(const std::string& name) {
  json j;
  if (name == "coarse-staggered") {
    j = coarse_staggered();
  } else if (name == "null") {
    j = coarse_staggered();
    j["name"] = "null";
    j["effect"]["psi"] = std::vector<double>(7, 0.0);
  } else if (name == "violation") {
    j = coarse_staggered();
    j["name"] = "violation";
    j["outcome"]["violation_c0"] = 0.5;
  } else if (name == "standard-general") {
    j = standard_general();
  } else if (name == "multiplicative") {
    j = multiplicative();
  } else if (name == "cde-two-treatment") {
    j = cde_two_treatment();
  } else if (name == "optimal-regime") {
    j = optimal_regime();
  } else {
    std::string known;
    for (auto& g : gallery_names()) known += (known.empty() ? "" : ", ") + g;
    throw ConfigError("unknown DGP '" + name + "' (known: " + known + ")", "/dgp");
  }
  return DgpConfig::from_json(j);
}

json misspecify(const json& nuisance, const std::string& mode) {
  json out = nuisance;
  const json intercept = json::array({term("intercept")});
  if (mode == "treatment-wrong" || mode == "both-wrong") {
    out["treatment"]["basis"] = intercept;
    out["treatment"]["family"] = "auto";
  }
  if (mode == "trend-wrong" || mode == "both-wrong") out["trend"]["basis"] = intercept;
  if (mode != "treatment-wrong" && mode != "trend-wrong" && mode != "both-wrong" && mode != "correct")
    throw ConfigError("misspecification mode must be correct, treatment-wrong, trend-wrong or both-wrong");
  return out;
}

}  // namespace didsnmm
