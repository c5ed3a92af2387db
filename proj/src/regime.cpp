#include "didsnmm/regime.hpp"

#include <cmath>
#include <map>

#include "didsnmm/error.hpp"
#include "didsnmm/random.hpp"

namespace didsnmm {

std::string regime_assumptions() {
  return "Optimal-regime estimates assume that parallel trends hold for every regime, not only for the "
         "never-treated path: given the observed history, untreated outcome trends must not depend on treatment "
         "under any sequence of decisions the rule could prescribe. This is a much stronger premise than "
         "parallel trends for the baseline regime. It is implied when an unobserved confounder U drives "
         "treatment, U satisfies sequential exchangeability jointly with the observed history, and U does not "
         "additively modify treatment effects on the outcome. None of these premises can be checked from the "
         "data; the decision rule is the blip-level argmax over the declared action grid, with ties going to "
         "the earliest (baseline-most) action.";
}

json RegimeFit::to_json() const {
  json g = json::array();
  for (auto& a : grid) g.push_back(std::vector<double>(a.data(), a.data() + a.size()));
  json t = json::array();
  for (auto& r : table)
    t.push_back({{"m", r.m},
                 {"count", r.count},
                 {"example_subject", r.example},
                 {"history", r.history},
                 {"scores", r.scores},
                 {"action_index", r.action},
                 {"action", g[r.action]}});
  return {{"estimate", estimate.to_json()},
          {"action_grid", g},
          {"utility", utility},
          {"decision_table", t},
          {"decision_table_truncated", table_truncated},
          {"value", value.to_json()},
          {"assumptions", assumptions}};
}

std::vector<DecisionRow> decision_table(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d,
                                        int max_rows, bool* truncated) {
  if (model.flavor != Flavor::regime) throw ConfigError("decision tables need a regime model", "/flavor");
  if (model.action_grid.empty()) throw ConfigError("regime action grid is empty", "/regime/actions");
  const int K = d.K(), p = model.basis.dim();
  const auto names = model.basis.names();
  std::vector<DecisionRow> rows;
  std::map<std::pair<int, std::vector<double>>, int> index;
  bool cut = false;
  for (int m = 0; m < K; ++m) {
    for (int i = 0; i < d.n(); ++i) {
      const HistoryView h(d, i, m);
      std::vector<double> key((K - m) * p);
      for (int k = m + 1; k <= K; ++k) model.basis.eval(h, k, key.data() + (k - m - 1) * p);
      auto it = index.find({m, key});
      if (it != index.end()) {
        ++rows[it->second].count;
        continue;
      }
      if (static_cast<int>(rows.size()) >= max_rows) {
        cut = true;
        continue;
      }
      DecisionRow r;
      r.m = m;
      r.count = 1;
      r.example = d.subject_id(i);
      json hist = json::object();
      for (int k = m + 1; k <= K; ++k) {
        json at = json::object();
        for (int c = 0; c < p; ++c) at[names[c]] = key[(k - m - 1) * p + c];
        hist["k=" + std::to_string(k)] = at;
      }
      r.history = hist;
      const Action best = optimal_action(model, psi, h);
      for (size_t a = 0; a < model.action_grid.size(); ++a) {
        double s = 0;
        for (int k = m + 1; k <= K; ++k) s += model.utility[k] * model.eval(h, k, model.action_grid[a], psi);
        r.scores.push_back(s);
      }
      for (size_t a = model.action_grid.size(); a-- > 0;)
        if (model.action_grid[a] == best) r.action = static_cast<int>(a);
      index[{m, key}] = static_cast<int>(rows.size());
      rows.push_back(std::move(r));
    }
  }
  if (truncated) *truncated = cut;
  return rows;
}

namespace {

Eigen::VectorXd value_terms(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d,
                            const std::vector<double>& tau) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d.n());
  for (int i = 0; i < d.n(); ++i)
    for (int k = 0; k <= d.K(); ++k)
      if (tau[k] != 0) v[i] += tau[k] * blip_down(model, psi, d, i, 0, k);
  return v;
}

}  // namespace

DerivedEstimate regime_value(const GEstimate& fit, const BlipModel& model, const PanelDataset& d,
                             const std::vector<double>& utility) {
  const std::vector<double> tau = utility.empty() ? model.utility : utility;
  if (static_cast<int>(tau.size()) != d.K() + 1)
    throw ConfigError("utility needs K+1 = " + std::to_string(d.K() + 1) + " weights", "/utility");
  if (fit.influence.rows() != d.n()) throw ConfigError("fit does not belong to this dataset");
  const int n = d.n();
  DerivedEstimate out;
  out.label = "E[Y(g)]";
  out.query.target = CounterfactualQuery::Target::mean_never_treated;
  out.n_used = n;
  const Eigen::VectorXd v = value_terms(model, fit.psi, d, tau);
  out.estimate = v.mean();
  Eigen::VectorXd G(fit.psi.size());
  for (int j = 0; j < G.size(); ++j) {
    const double h = 1e-5 * (1 + std::abs(fit.psi[j]));
    Eigen::VectorXd up = fit.psi, dn = fit.psi;
    up[j] += h;
    dn[j] -= h;
    G[j] = (value_terms(model, up, d, tau).mean() - value_terms(model, dn, d, tau).mean()) / (2 * h);
  }
  const Eigen::VectorXd phi = (v.array() - out.estimate).matrix() + fit.influence * G;
  out.se = phi.norm() / n;
  const double z = normal_quantile(0.975);
  out.lo = out.estimate - z * out.se;
  out.hi = out.estimate + z * out.se;
  out.ci_method = "delta (approximate)";
  return out;
}

RegimeFit fit_optimal_regime(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec,
                             const RegimeOptions& options) {
  if (model.flavor != Flavor::regime) throw ConfigError("fit_optimal_regime needs a regime-flavor blip", "/flavor");
  if (model.reference) throw ConfigError("fit_optimal_regime estimates the optimal regime; drop the fixed reference");
  model.validate(d);
  FitOptions fo = options.fit;
  if (fo.method == Method::closed_form) fo.method = Method::iterative;
  fo.solver.starts = std::max(fo.solver.starts, options.min_starts);
  fo.solver.uniqueness_probe = true;
  RegimeFit out;
  out.estimate = fit(d, model, spec, fo);
  out.grid = model.action_grid;
  out.utility = model.utility;
  out.table = decision_table(model, out.estimate.psi, d, options.max_table_rows, &out.table_truncated);
  out.assumptions = regime_assumptions();
  if (options.bootstrap > 0) {
    FitClosure closure = [&](const PanelDataset& db) {
      const GEstimate g = fit(db, model, spec, fo);
      return Eigen::VectorXd::Constant(1, value_terms(model, g.psi, db, model.utility).mean());
    };
    out.value = regime_value(out.estimate, model, d);
    const BootstrapResult r =
        bootstrap(d, closure, options.bootstrap, options.seed, Eigen::VectorXd::Constant(1, out.value.estimate));
    out.value.lo = r.lo[0];
    out.value.hi = r.hi[0];
    out.value.se = r.se[0];
    out.value.ci_method = "pipeline bootstrap";
  } else {
    out.value = regime_value(out.estimate, model, d);
  }
  out.estimate.diagnostics["assumptions"] = out.assumptions;
  return out;
}

}  // namespace didsnmm
