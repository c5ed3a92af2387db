#include "didsnmm/derived.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "didsnmm/error.hpp"
#include "didsnmm/random.hpp"

namespace didsnmm {

namespace {

const char* kDelta = "delta (approximate)";

int column_kind(const PanelDataset& d, const std::string& col, int* index) {
  if (col == "y" || col == "outcome") return 0;
  if ((*index = d.treatment_index(col)) >= 0) return 1;
  if ((*index = d.covariate_index(col)) >= 0) return 2;
  return -1;
}

double column_value(const PanelDataset& d, int kind, int c, int i, int t) {
  switch (kind) {
    case 0: return d.y(i, t);
    case 1: return d.a(i, c, t);
    default: return d.z(i, c, t);
  }
}

}  // namespace

Predicate Predicate::from_json(const json& j, const std::string& p) {
  if (!j.is_object()) throw ConfigError("predicate must be an object", p);
  Predicate r;
  if (!j.contains("column")) throw ConfigError("predicate needs 'column'", p);
  r.column = j["column"].get<std::string>();
  r.op = j.value("op", std::string("=="));
  static const std::vector<std::string> ops{"==", "!=", "<", "<=", ">", ">="};
  if (std::find(ops.begin(), ops.end(), r.op) == ops.end()) throw ConfigError("unknown comparator '" + r.op + "'", p + "/op");
  if (!j.contains("value") || !j["value"].is_number()) throw ConfigError("predicate needs a numeric 'value'", p + "/value");
  r.value = j["value"].get<double>();
  if (j.contains("time") && j.contains("lag")) throw ConfigError("give either 'time' or 'lag', not both", p);
  if (j.contains("lag")) {
    r.relative = true;
    r.time = j["lag"].get<int>();
  } else {
    r.time = j.value("time", 0);
  }
  return r;
}

json Predicate::to_json() const {
  json j = {{"column", column}, {"op", op}, {"value", value}};
  j[relative ? "lag" : "time"] = time;
  return j;
}

std::string Predicate::label() const {
  return column + (relative ? "[m-" + std::to_string(time) + "]" : "[" + std::to_string(time) + "]") + op +
         format_number(value);
}

void Predicate::validate(const PanelDataset& d, int m, const std::string& p) const {
  int c = -1;
  const int kind = column_kind(d, column, &c);
  if (kind < 0) throw ConfigError("predicate column '" + column + "' is not in the data", p + "/column");
  const int t = relative ? m - time : time;
  if (t < 0) throw ConfigError("predicate " + label() + " refers to a time before 0", p);
  // L̄_m holds Z up to m, Y and A up to m-1
  const int last = kind == 2 ? m : m - 1;
  if (t > last)
    throw ConfigError("predicate " + label() + " is not part of the history at m=" + std::to_string(m), p);
}

bool Predicate::holds(const PanelDataset& d, int i, int m) const {
  int c = -1;
  const int kind = column_kind(d, column, &c);
  const double x = column_value(d, kind, c, i, relative ? m - time : time);
  if (op == "==") return x == value;
  if (op == "!=") return x != value;
  if (op == "<") return x < value;
  if (op == "<=") return x <= value;
  if (op == ">") return x > value;
  return x >= value;
}

std::string to_string(CounterfactualQuery::Target t) {
  switch (t) {
    case CounterfactualQuery::Target::mean_never_treated: return "mean_never_treated";
    case CounterfactualQuery::Target::conditional_mean: return "conditional_mean";
    case CounterfactualQuery::Target::observed_vs_never: return "observed_vs_never";
    case CounterfactualQuery::Target::lag_average: return "lag_average";
    case CounterfactualQuery::Target::blip: return "blip";
  }
  return "?";
}

CounterfactualQuery CounterfactualQuery::from_json(const json& j, const std::string& p) {
  if (!j.is_object()) throw ConfigError("query must be an object", p);
  CounterfactualQuery q;
  const std::string t = j.value("target", std::string());
  using T = Target;
  if (t == "mean_never_treated") q.target = T::mean_never_treated;
  else if (t == "conditional_mean") q.target = T::conditional_mean;
  else if (t == "observed_vs_never") q.target = T::observed_vs_never;
  else if (t == "lag_average") q.target = T::lag_average;
  else if (t == "blip") q.target = T::blip;
  else throw ConfigError("unknown query target '" + t + "'", p + "/target");
  q.k = j.value("k", 0);
  q.m = j.value("m", 0);
  q.lag = j.value("lag", 1);
  q.cohort = j.value("cohort", std::string("initiated"));
  if (q.cohort != "initiated" && q.cohort != "all") throw ConfigError("cohort must be initiated or all", p + "/cohort");
  if (j.contains("where")) {
    if (!j["where"].is_array()) throw ConfigError("'where' must be an array", p + "/where");
    for (size_t w = 0; w < j["where"].size(); ++w)
      q.where.push_back(Predicate::from_json(j["where"][w], p + "/where/" + std::to_string(w)));
  }
  q.history = j.value("history", json::object());
  if (j.contains("action")) {
    const json& a = j["action"];
    q.action = a.is_number() ? std::vector<double>{a.get<double>()} : a.get<std::vector<double>>();
  }
  if (q.k < 0 || q.m < 0 || q.lag < 0) throw ConfigError("k, m and lag must be non-negative", p);
  return q;
}

json CounterfactualQuery::to_json() const {
  json j = {{"target", to_string(target)}};
  switch (target) {
    case Target::mean_never_treated:
    case Target::observed_vs_never: j["k"] = k; break;
    case Target::lag_average: j["lag"] = lag; break;
    case Target::conditional_mean: {
      j["m"] = m;
      j["k"] = k;
      j["cohort"] = cohort;
      json w = json::array();
      for (auto& p : where) w.push_back(p.to_json());
      j["where"] = w;
      break;
    }
    case Target::blip:
      j["m"] = m;
      j["k"] = k;
      j["history"] = history;
      j["action"] = action;
      break;
  }
  return j;
}

std::string CounterfactualQuery::label() const {
  std::ostringstream s;
  switch (target) {
    case Target::mean_never_treated: s << "E[Y_" << k << "(0)]"; break;
    case Target::observed_vs_never: s << "E[Y_" << k << " - Y_" << k << "(0)]"; break;
    case Target::lag_average: s << "lag_average(" << lag << ")"; break;
    case Target::conditional_mean: {
      s << "E[Y_" << k << "(0) | " << (cohort == "initiated" ? "T=" + std::to_string(m) : "m=" + std::to_string(m));
      for (auto& p : where) s << ", " << p.label();
      s << "]";
      break;
    }
    case Target::blip: s << "gamma_" << m << "," << k; break;
  }
  return s.str();
}

json DerivedEstimate::to_json() const {
  json j = {{"label", label},     {"query", query.to_json()}, {"estimate", estimate}, {"se", se},
            {"ci", {{"lo", lo}, {"hi", hi}, {"level", level}, {"method", ci_method}}},
            {"n_used", n_used}, {"warnings", warnings}};
  return j;
}

namespace {

// θ(ψ) = Σ w_i v_i / Σ w_i over subjects
struct SubjectValues {
  Eigen::VectorXd v, w;
  double value() const {
    const double sw = w.sum();
    return sw > 0 ? w.dot(v) / sw : std::nan("");
  }
};

void check_horizon(const PanelDataset& d, int m, int k) {
  if (k > d.K() || k < m) throw ConfigError("query needs m <= k <= K (got m=" + std::to_string(m) + ", k=" +
                                            std::to_string(k) + ", K=" + std::to_string(d.K()) + ")");
}

SubjectValues subject_values(const CounterfactualQuery& q, const BlipModel& model, const Eigen::VectorXd& psi,
                             const PanelDataset& d) {
  using T = CounterfactualQuery::Target;
  const int n = d.n();
  SubjectValues s{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  switch (q.target) {
    case T::mean_never_treated:
    case T::observed_vs_never:
      check_horizon(d, 0, q.k);
      for (int i = 0; i < n; ++i) {
        const double h = blip_down(model, psi, d, i, 0, q.k);
        s.v[i] = q.target == T::mean_never_treated ? h : d.y(i, q.k) - h;
        s.w[i] = 1;
      }
      break;
    case T::conditional_mean: {
      check_horizon(d, q.m, q.k);
      for (size_t p = 0; p < q.where.size(); ++p) q.where[p].validate(d, q.m, "/where/" + std::to_string(p));
      for (int i = 0; i < n; ++i) {
        bool in = true;
        if (q.cohort == "initiated") in = initiation_time(d, i, model.initiation_components).equals(q.m);
        for (auto& p : q.where) in = in && p.holds(d, i, q.m);
        if (!in) continue;
        s.w[i] = 1;
        s.v[i] = blip_down(model, psi, d, i, q.m, q.k);
      }
      if (s.w.sum() == 0) {
        std::string what = q.cohort == "initiated" ? "T=" + std::to_string(q.m) : "m=" + std::to_string(q.m);
        for (auto& p : q.where) what += ", " + p.label();
        throw DataError("no subjects match the subgroup (" + what + ")");
      }
      break;
    }
    case T::lag_average: {
      if (model.flavor != Flavor::coarse) throw ConfigError("lag_average_effect needs a coarse fit", "/flavor");
      if (q.lag < 1) throw ConfigError("lag must be at least 1", "/lag");
      for (int i = 0; i < n; ++i) {
        const InitiationTime T0 = initiation_time(d, i, model.initiation_components);
        if (T0.is_never()) continue;
        const int m = T0.time();
        if (m < model.min_anchor || m + q.lag > d.K()) continue;
        s.w[i] = 1;
        s.v[i] = model.eval(HistoryView(d, i, m), m + q.lag, d.action(i, m), psi);
      }
      if (s.w.sum() == 0)
        throw DataError("no subjects initiated early enough to be observed " + std::to_string(q.lag) +
                        " periods after initiation");
      break;
    }
    case T::blip: throw std::logic_error("blip queries are not subject averages");
  }
  return s;
}

double percentile_or_nan(std::vector<double> v, double level, bool lo) {
  const auto [a, b] = percentile_interval(std::move(v), level);
  return lo ? a : b;
}

DerivedEstimate delta_estimate(const CounterfactualQuery& q, const GEstimate& fit, const BlipModel& model,
                               const PanelDataset& d, double level) {
  if (fit.influence.rows() != d.n())
    throw ConfigError("fit does not belong to this dataset (influence has " + std::to_string(fit.influence.rows()) +
                      " rows, data has " + std::to_string(d.n()) + ")");
  const SubjectValues s = subject_values(q, model, fit.psi, d);
  DerivedEstimate out;
  out.query = q;
  out.label = q.label();
  out.level = level;
  out.estimate = s.value();
  out.n_used = static_cast<int>(s.w.sum());
  const int n = d.n(), dim = static_cast<int>(fit.psi.size());
  Eigen::VectorXd G(dim);
  for (int j = 0; j < dim; ++j) {
    const double h = 1e-5 * (1 + std::abs(fit.psi[j]));
    Eigen::VectorXd up = fit.psi, dn = fit.psi;
    up[j] += h;
    dn[j] -= h;
    G[j] = (subject_values(q, model, up, d).value() - subject_values(q, model, dn, d).value()) / (2 * h);
  }
  const double sw = s.w.sum();
  Eigen::VectorXd phi(n);
  for (int i = 0; i < n; ++i) phi[i] = n * s.w[i] * (s.v[i] - out.estimate) / sw;
  phi += fit.influence * G;
  out.se = std::sqrt(phi.squaredNorm()) / n;
  const double z = normal_quantile(0.5 + level / 2);
  out.lo = out.estimate - z * out.se;
  out.hi = out.estimate + z * out.se;
  out.ci_method = kDelta;
  return out;
}

}  // namespace

double point_estimate(const CounterfactualQuery& q, const BlipModel& model, const Eigen::VectorXd& psi,
                      const PanelDataset& d) {
  if (q.target == CounterfactualQuery::Target::blip) {
    GEstimate g;
    g.psi = psi;
    g.covariance = Eigen::MatrixXd::Zero(psi.size(), psi.size());
    return blip_query(g, model, d, q).estimate;
  }
  return subject_values(q, model, psi, d).value();
}

DerivedEstimate evaluate_query(const CounterfactualQuery& q, const GEstimate& fit, const BlipModel& model,
                               const PanelDataset& d, double level) {
  if (q.target == CounterfactualQuery::Target::blip) {
    DerivedEstimate e = blip_query(fit, model, d, q);
    const double z = normal_quantile(0.5 + level / 2);
    e.level = level;
    e.lo = e.estimate - z * e.se;
    e.hi = e.estimate + z * e.se;
    return e;
  }
  return delta_estimate(q, fit, model, d, level);
}

DerivedEstimate mean_never_treated(const GEstimate& fit, const BlipModel& model, const PanelDataset& d, int k) {
  CounterfactualQuery q;
  q.target = CounterfactualQuery::Target::mean_never_treated;
  q.k = k;
  return evaluate_query(q, fit, model, d);
}

DerivedEstimate conditional_mean(const GEstimate& fit, const BlipModel& model, const PanelDataset& d,
                                 const CounterfactualQuery& q) {
  CounterfactualQuery c = q;
  c.target = CounterfactualQuery::Target::conditional_mean;
  return evaluate_query(c, fit, model, d);
}

DerivedEstimate observed_vs_never(const GEstimate& fit, const BlipModel& model, const PanelDataset& d, int k) {
  CounterfactualQuery q;
  q.target = CounterfactualQuery::Target::observed_vs_never;
  q.k = k;
  return evaluate_query(q, fit, model, d);
}

DerivedEstimate lag_average_effect(const GEstimate& fit, const BlipModel& model, const PanelDataset& d, int lag) {
  CounterfactualQuery q;
  q.target = CounterfactualQuery::Target::lag_average;
  q.lag = lag;
  return evaluate_query(q, fit, model, d);
}

DerivedEstimate blip_query(const GEstimate& fit, const BlipModel& model, const PanelDataset& d,
                           const CounterfactualQuery& q) {
  const int m = q.m, k = q.k;
  if (m >= k || k > d.K()) throw ConfigError("blip query needs m < k <= K", "/k");
  DerivedEstimate out;
  out.query = q;
  out.label = q.label();
  PanelDataset one(1, d.K(), d.treatment_names(), d.covariate_names());
  one.set_time_labels(d.time_labels());
  if (!q.history.is_object()) throw ConfigError("history must be an object of column -> values", "/history");
  for (auto& [col, vals] : q.history.items()) {
    int c = -1;
    const int kind = column_kind(d, col, &c);
    if (kind < 0) throw ConfigError("history column '" + col + "' is not in the data", "/history/" + col);
    const int last = kind == 2 ? m : m - 1;
    const json arr = vals.is_array() ? vals : json::array({vals});
    if (static_cast<int>(arr.size()) > last + 1)
      throw ConfigError("history for '" + col + "' runs past the anchor time", "/history/" + col);
    // right-align: the final entry is the most recent time in L̄_m
    const int t0 = last + 1 - static_cast<int>(arr.size());
    for (size_t s = 0; s < arr.size(); ++s) {
      const int t = t0 + static_cast<int>(s);
      std::vector<double> column(d.n());
      for (int i = 0; i < d.n(); ++i) column[i] = column_value(d, kind, c, i, t);
      double x;
      if (arr[s].is_string()) {
        if (arr[s].get<std::string>() != "median")
          throw ConfigError("history values must be numbers or \"median\"", "/history/" + col);
        if (column.empty()) throw DataError("median needs data");
        std::sort(column.begin(), column.end());
        const size_t h = column.size() / 2;
        x = column.size() % 2 ? column[h] : 0.5 * (column[h - 1] + column[h]);
      } else {
        x = arr[s].get<double>();
        if (!column.empty()) {
          const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
          if (x < *lo || x > *hi)
            out.warnings.push_back("support: " + col + " at time " + std::to_string(t) + " = " + format_number(x) +
                                   " is outside the observed range [" + format_number(*lo) + ", " +
                                   format_number(*hi) + "]");
        }
      }
      if (kind == 0) one.set_y(0, t, x);
      else if (kind == 1) one.set_a(0, c, t, x);
      else one.set_z(0, c, t, x);
    }
  }
  Action a = Action::Zero(d.q());
  if (q.action.size() == 1 && !model.components.empty()) {
    a[model.components[0]] = q.action[0];
  } else if (static_cast<int>(q.action.size()) == d.q()) {
    for (int c = 0; c < d.q(); ++c) a[c] = q.action[c];
  } else if (!q.action.empty()) {
    throw ConfigError("action has " + std::to_string(q.action.size()) + " entries, data has " +
                          std::to_string(d.q()) + " treatments",
                      "/action");
  }
  for (int c = 0; c < d.q(); ++c) one.set_a(0, c, m, a[c]);
  if (d.n() > 0) {
    bool seen = false;
    for (int i = 0; i < d.n() && !seen; ++i) seen = d.action(i, m) == a;
    if (!seen) out.warnings.push_back("support: action never observed at time " + std::to_string(m));
  }
  const HistoryView h(one, 0, m);
  out.estimate = model.eval(h, k, a, fit.psi);
  out.n_used = 0;
  Eigen::VectorXd g(fit.psi.size());
  if (model.linear()) {
    g = model.features(h, k, a);
  } else {
    for (int j = 0; j < g.size(); ++j) {
      const double st = 1e-5 * (1 + std::abs(fit.psi[j]));
      Eigen::VectorXd up = fit.psi, dn = fit.psi;
      up[j] += st;
      dn[j] -= st;
      g[j] = (model.eval(h, k, a, up) - model.eval(h, k, a, dn)) / (2 * st);
    }
  }
  const double var = fit.covariance.size() ? g.dot(fit.covariance * g) : 0.0;
  out.se = std::sqrt(std::max(var, 0.0));
  const double z = normal_quantile(0.975);
  out.lo = out.estimate - z * out.se;
  out.hi = out.estimate + z * out.se;
  out.ci_method = kDelta;
  return out;
}

std::vector<DerivedEstimate> pipeline_bootstrap(const std::vector<CounterfactualQuery>& queries, const GEstimate& fit,
                                                const PanelDataset& d, const BlipModel& model,
                                                const NuisanceSpec& spec, const FitOptions& options,
                                                const PipelineOptions& boot, BootstrapResult* raw) {
  const int Q = static_cast<int>(queries.size());
  Eigen::VectorXd est(Q);
  std::vector<DerivedEstimate> out(Q);
  for (int q = 0; q < Q; ++q) {
    if (queries[q].target == CounterfactualQuery::Target::blip) {
      out[q] = blip_query(fit, model, d, queries[q]);
    } else {
      out[q].query = queries[q];
      out[q].label = queries[q].label();
      out[q].n_used = static_cast<int>(subject_values(queries[q], model, fit.psi, d).w.sum());
    }
    est[q] = point_estimate(queries[q], model, fit.psi, d);
    out[q].estimate = est[q];
  }
  FitClosure closure = [&](const PanelDataset& db) {
    const GEstimate g = didsnmm::fit(db, model, spec, options);
    Eigen::VectorXd v(Q);
    for (int q = 0; q < Q; ++q) v[q] = point_estimate(queries[q], model, g.psi, db);
    return v;
  };
  BootstrapResult r = bootstrap(d, closure, boot.B, boot.seed, est);
  for (int q = 0; q < Q; ++q) {
    const Eigen::VectorXd col = r.replicates.col(q);
    std::vector<double> draws(col.data(), col.data() + col.size());
    out[q].lo = percentile_or_nan(draws, boot.level, true);
    out[q].hi = percentile_or_nan(draws, boot.level, false);
    out[q].se = r.se[q];
    out[q].level = boot.level;
    out[q].ci_method = "pipeline bootstrap";
    if (!r.failures.empty())
      out[q].warnings.push_back(std::to_string(r.failures.size()) + " of " + std::to_string(boot.B) +
                                " bootstrap replicates failed");
  }
  if (raw) *raw = std::move(r);
  return out;
}

json CdeResult::to_json() const {
  return {{"effect", effect.to_json()},
          {"treated_without_r", treated_without_r},
          {"never", never},
          {"cohort_size", cohort_size},
          {"stage1", stage1.to_json()},
          {"stage2", stage2.to_json()}};
}

namespace {

struct CdeStages {
  BlipModel model2;
  NuisanceSpec spec2;
  std::vector<int> cohort;
};

CdeStages cde_setup(const PanelDataset& d, const BlipModel& stage1, const std::string& r_component,
                    const json& spec1_json, const json& stage2_json, int m, int k) {
  const int K = d.K();
  if (stage1.flavor != Flavor::coarse) throw ConfigError("coarse_cde needs a coarse stage-1 model", "/flavor");
  const int rc = d.treatment_index(r_component);
  if (rc < 0) throw ConfigError("treatment '" + r_component + "' is not in the data", "/r_component");
  if (stage1.components.size() != 1 || stage1.components[0] == rc)
    throw ConfigError("stage-1 model must have the single component A (not R)", "/components");
  if (std::find(stage1.initiation_components.begin(), stage1.initiation_components.end(), rc) ==
      stage1.initiation_components.end())
    throw ConfigError("stage-1 initiation components must include R", "/initiation_components");
  if (m < 0 || k <= m || k > K) throw ConfigError("coarse_cde needs 0 <= m < k <= K", "/k");
  if (m > K - 2) throw ConfigError("coarse_cde needs m <= K-2 so that R can start after m and before K", "/m");
  const int ac = stage1.components[0];
  CdeStages s;
  for (int i = 0; i < d.n(); ++i)
    if (initiation_time(d, i, {ac}).equals(m)) s.cohort.push_back(i);
  if (s.cohort.empty()) throw DataError("empty cohort: nobody initiates A at m=" + std::to_string(m));
  bool any_r = false;
  for (int i : s.cohort) {
    const InitiationTime tr = initiation_time(d, i, {rc});
    if (!tr.is_never() && tr.time() > m && tr.time() < k) any_r = true;
    if (!tr.is_never() && tr.time() <= m)
      throw DataError("R initiated at or before A's initiation for subject " + d.subject_id(i));
  }
  if (!any_r)
    throw DataError("R is never initiated in the T_A=" + std::to_string(m) + " cohort before k=" + std::to_string(k) +
                    "; the second-stage model is unidentifiable");
  const json m2 = {{"flavor", "coarse"},
                   {"basis", json::array({{{"type", "lag_indicators"}, {"min_lag", 1}, {"max_lag", K - m - 1}}})},
                   {"components", json::array({r_component})},
                   {"initiation_components", json::array({r_component})},
                   {"min_anchor", m}};
  s.model2 = BlipModel::from_json(m2, d, "/stage2");
  json n2 = stage2_json;
  if (n2.is_null()) {
    n2 = spec1_json;
    n2["treatment"] = {{"basis", json::array({{{"type", "intercept"}}})}, {"stratify", "time"}};
  }
  s.spec2 = NuisanceSpec::from_json(n2, d, "/stage2_nuisance");
  return s;
}

struct CdeValues {
  double treated = 0, never = 0;
};

CdeValues cde_values(const PanelDataset& d, const std::vector<int>& cohort, const BlipModel& m1,
                     const Eigen::VectorXd& psi1, const PanelDataset& dc, const BlipModel& m2,
                     const Eigen::VectorXd& psi2, int m, int k) {
  CdeValues v;
  for (int i : cohort) v.never += blip_down_coarse(m1, psi1, d, i, m, k);
  for (int i = 0; i < dc.n(); ++i) v.treated += blip_down_coarse(m2, psi2, dc, i, m, k);
  v.never /= cohort.size();
  v.treated /= dc.n();
  return v;
}

}  // namespace

CdeResult coarse_cde(const PanelDataset& d, const BlipModel& stage1, const NuisanceSpec& spec1,
                     const std::string& r_component, int m, int k, const CdeOptions& opt) {
  const CdeStages s = cde_setup(d, stage1, r_component, spec1.to_json(), opt.stage2_nuisance, m, k);
  const PanelDataset dc = d.subset(s.cohort);
  CdeResult out;
  out.cohort_size = static_cast<int>(s.cohort.size());
  out.stage1 = fit(d, stage1, spec1, opt.fit);
  try {
    out.stage2 = fit(dc, s.model2, s.spec2, opt.fit);
  } catch (const Error& e) {
    throw EstimationError(std::string("second stage: ") + e.what());
  }
  const CdeValues v = cde_values(d, s.cohort, stage1, out.stage1.psi, dc, s.model2, out.stage2.psi, m, k);
  out.treated_without_r = v.treated;
  out.never = v.never;
  DerivedEstimate& e = out.effect;
  e.label = "cde_" + std::to_string(m) + "," + std::to_string(k);
  e.query.target = CounterfactualQuery::Target::conditional_mean;
  e.query.m = m;
  e.query.k = k;
  e.estimate = v.treated - v.never;
  e.n_used = out.cohort_size;
  e.level = opt.level;

  if (opt.bootstrap > 0) {
    FitClosure closure = [&](const PanelDataset& db) {
      const CdeStages sb = cde_setup(db, stage1, r_component, spec1.to_json(), opt.stage2_nuisance, m, k);
      const PanelDataset dcb = db.subset(sb.cohort);
      const GEstimate g1 = fit(db, stage1, spec1, opt.fit);
      const GEstimate g2 = fit(dcb, sb.model2, sb.spec2, opt.fit);
      const CdeValues vb = cde_values(db, sb.cohort, stage1, g1.psi, dcb, sb.model2, g2.psi, m, k);
      return Eigen::VectorXd::Constant(1, vb.treated - vb.never);
    };
    const BootstrapResult r = bootstrap(d, closure, opt.bootstrap, opt.seed, Eigen::VectorXd::Constant(1, e.estimate));
    const Eigen::VectorXd col = r.replicates.col(0);
    std::vector<double> draws(col.data(), col.data() + col.size());
    e.lo = percentile_or_nan(draws, opt.level, true);
    e.hi = percentile_or_nan(draws, opt.level, false);
    e.se = r.se[0];
    e.ci_method = "pipeline bootstrap";
    return out;
  }

  // delta: cohort contrast + both parameter influences, mapped to all n subjects
  const int n = d.n(), nc = dc.n();
  auto grad = [&](int stage) {
    const Eigen::VectorXd& p = stage == 1 ? out.stage1.psi : out.stage2.psi;
    Eigen::VectorXd G(p.size());
    for (int j = 0; j < p.size(); ++j) {
      const double h = 1e-5 * (1 + std::abs(p[j]));
      Eigen::VectorXd up = p, dn = p;
      up[j] += h;
      dn[j] -= h;
      CdeValues a, b;
      if (stage == 1) {
        a = cde_values(d, s.cohort, stage1, up, dc, s.model2, out.stage2.psi, m, k);
        b = cde_values(d, s.cohort, stage1, dn, dc, s.model2, out.stage2.psi, m, k);
      } else {
        a = cde_values(d, s.cohort, stage1, out.stage1.psi, dc, s.model2, up, m, k);
        b = cde_values(d, s.cohort, stage1, out.stage1.psi, dc, s.model2, dn, m, k);
      }
      G[j] = ((a.treated - a.never) - (b.treated - b.never)) / (2 * h);
    }
    return G;
  };
  Eigen::VectorXd phi = out.stage1.influence * grad(1);
  const Eigen::VectorXd phi2 = out.stage2.influence * grad(2);
  for (int c = 0; c < nc; ++c) {
    const int i = s.cohort[c];
    const double diff = blip_down_coarse(s.model2, out.stage2.psi, dc, c, m, k) -
                        blip_down_coarse(stage1, out.stage1.psi, d, i, m, k);
    phi[i] += static_cast<double>(n) / nc * (diff - e.estimate + phi2[c]);
  }
  e.se = std::sqrt(phi.squaredNorm()) / n;
  const double z = normal_quantile(0.5 + opt.level / 2);
  e.lo = e.estimate - z * e.se;
  e.hi = e.estimate + z * e.se;
  e.ci_method = kDelta;
  return out;
}

std::string plot_csv(const std::string& x_name, const std::vector<double>& x, const std::vector<DerivedEstimate>& rows) {
  if (x.size() != rows.size()) throw std::invalid_argument("plot_csv: x and rows differ in length");
  std::ostringstream s;
  s << x_name << ",estimate,lo,hi\n";
  for (size_t r = 0; r < rows.size(); ++r)
    s << format_number(x[r]) << "," << format_number(rows[r].estimate) << "," << format_number(rows[r].lo) << ","
      << format_number(rows[r].hi) << "\n";
  return s.str();
}

}  // namespace didsnmm
