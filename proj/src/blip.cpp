#include "didsnmm/blip.hpp"

#include <cmath>

#include "didsnmm/bias.hpp"
#include "didsnmm/error.hpp"

namespace didsnmm {

std::string to_string(Flavor f) {
  switch (f) {
    case Flavor::standard: return "standard";
    case Flavor::coarse: return "coarse";
    case Flavor::multiplicative: return "multiplicative";
    case Flavor::regime: return "regime";
  }
  return "?";
}

Flavor flavor_from_string(const std::string& s, const std::string& pointer) {
  if (s == "standard") return Flavor::standard;
  if (s == "coarse") return Flavor::coarse;
  if (s == "multiplicative") return Flavor::multiplicative;
  if (s == "regime") return Flavor::regime;
  throw ConfigError("unknown flavor '" + s + "' (expected standard, coarse, multiplicative or regime)", pointer);
}

namespace {

std::vector<int> component_list(const json& j, const PanelDataset& d, const std::string& ptr) {
  std::vector<int> out;
  if (!j.is_array()) throw ConfigError("expected an array of treatment names", ptr);
  for (size_t t = 0; t < j.size(); ++t) {
    const std::string name = j[t].get<std::string>();
    const int c = d.treatment_index(name);
    if (c < 0) throw ConfigError("unknown treatment '" + name + "'", ptr + "/" + std::to_string(t));
    out.push_back(c);
  }
  return out;
}

std::vector<int> all_components(const PanelDataset& d) {
  std::vector<int> c(d.q());
  for (int i = 0; i < d.q(); ++i) c[i] = i;
  return c;
}

}  // namespace

BlipModel BlipModel::from_json(const json& j, const PanelDataset& layout, const std::string& pointer) {
  if (!j.is_object()) throw ConfigError("blip model must be a JSON object", pointer);
  BlipModel b;
  b.flavor = flavor_from_string(j.value("flavor", std::string("coarse")), pointer + "/flavor");
  if (!j.contains("basis")) throw ConfigError("blip model needs a 'basis'", pointer);
  if (j["basis"].is_string() && j["basis"].get<std::string>() == "custom")
    throw ConfigError("a custom basis must be supplied through the library API", pointer + "/basis");
  b.basis = Basis::from_json(j["basis"], layout, pointer + "/basis");
  b.n_treatments = layout.q();
  b.components = j.contains("components") ? component_list(j["components"], layout, pointer + "/components")
                                          : all_components(layout);
  b.initiation_components = j.contains("initiation_components")
                                ? component_list(j["initiation_components"], layout, pointer + "/initiation_components")
                                : all_components(layout);
  b.min_anchor = j.value("min_anchor", 0);
  if (b.flavor == Flavor::regime) {
    const json r = j.value("regime", json::object());
    if (!r.contains("actions")) throw ConfigError("regime blip needs regime.actions", pointer + "/regime");
    for (size_t t = 0; t < r["actions"].size(); ++t) {
      const json& a = r["actions"][t];
      Action act = Action::Zero(layout.q());
      if (a.is_number()) {
        if (layout.q() != 1) throw ConfigError("scalar action needs a single treatment", pointer + "/regime/actions");
        act[0] = a.get<double>();
      } else {
        if (static_cast<int>(a.size()) != layout.q())
          throw ConfigError("action length must equal the number of treatments",
                            pointer + "/regime/actions/" + std::to_string(t));
        for (int c = 0; c < layout.q(); ++c) act[c] = a[c].get<double>();
      }
      b.action_grid.push_back(act);
    }
    if (!r.contains("utility")) throw ConfigError("regime blip needs regime.utility", pointer + "/regime");
    b.utility = r["utility"].get<std::vector<double>>();
  }
  if (j.contains("d") && j["d"].get<int>() != b.dim())
    throw ConfigError("declared d=" + std::to_string(j["d"].get<int>()) + " but basis gives " +
                          std::to_string(b.dim()),
                      pointer + "/d");
  b.validate(layout);
  return b;
}

json BlipModel::to_json() const {
  json j;
  j["flavor"] = to_string(flavor);
  j["basis"] = basis.source().is_null() ? basis.to_json() : basis.source();
  j["d"] = dim();
  j["min_anchor"] = min_anchor;
  if (flavor == Flavor::regime) {
    json acts = json::array();
    for (const auto& a : action_grid) {
      json v = json::array();
      for (Eigen::Index c = 0; c < a.size(); ++c) v.push_back(a[c]);
      acts.push_back(v);
    }
    j["regime"] = {{"actions", acts}, {"utility", utility}};
  }
  return j;
}

int BlipModel::dim() const {
  if (generic) return generic_dim;
  return basis.dim() * static_cast<int>(components.size());
}

std::vector<std::string> BlipModel::parameter_names() const {
  if (generic) {
    if (!generic_names.empty()) return generic_names;
    std::vector<std::string> n;
    for (int t = 0; t < generic_dim; ++t) n.push_back("psi" + std::to_string(t));
    return n;
  }
  std::vector<std::string> base = basis.names(), out;
  for (size_t c = 0; c < components.size(); ++c)
    for (auto& s : base) out.push_back(components.size() == 1 ? s : "c" + std::to_string(components[c]) + ":" + s);
  return out;
}

bool BlipModel::acts(const Action& a) const {
  for (int c : components)
    if (a[c] != 0.0) return true;
  return false;
}

void BlipModel::features(const HistoryView& h, int k, const Action& a, double* out) const {
  if (generic) throw ConfigError("features are undefined for a generic blip evaluator");
  const int p = basis.dim();
  if (!acts(a)) {
    std::fill(out, out + dim(), 0.0);
    return;
  }
  basis.eval(h, k, out);
  for (size_t c = components.size(); c-- > 0;) {
    const double ac = a[components[c]];
    for (int t = 0; t < p; ++t) out[c * p + t] = ac * out[t];
  }
}

Eigen::VectorXd BlipModel::features(const HistoryView& h, int k, const Action& a) const {
  Eigen::VectorXd v(dim());
  features(h, k, a, v.data());
  return v;
}

double BlipModel::eval(const HistoryView& h, int k, const Action& a, const Eigen::VectorXd& psi) const {
  if (!acts(a)) return 0.0;
  if (generic) return generic(h, k, a, psi);
  double buf[512];
  const int d = dim();
  if (d > 512) {
    return psi.dot(features(h, k, a));
  }
  features(h, k, a, buf);
  double s = 0;
  for (int t = 0; t < d; ++t) s += psi[t] * buf[t];
  return s;
}

void BlipModel::validate(const PanelDataset& d) const {
  if (components.empty()) throw ConfigError("blip model needs at least one treatment component", "/components");
  if (initiation_components.empty()) throw ConfigError("initiation components must be non-empty", "/initiation_components");
  if (min_anchor < 0 || (d.K() > 0 && min_anchor >= d.K())) throw ConfigError("min_anchor out of range", "/min_anchor");
  if (dim() == 0) throw ConfigError("blip model has no parameters", "/basis");
  if (flavor == Flavor::regime) {
    if (action_grid.empty()) throw ConfigError("regime action grid is empty", "/regime/actions");
    if (static_cast<int>(utility.size()) != d.K() + 1)
      throw ConfigError("utility needs K+1 = " + std::to_string(d.K() + 1) + " weights", "/regime/utility");
    bool any = false;
    for (double t : utility) any = any || t != 0.0;
    if (!any) throw ConfigError("at least one utility weight must be non-zero", "/regime/utility");
  }
}

double eval_blip(const BlipModel& model, const Eigen::VectorXd& psi, const HistoryView& h, int m, int k) {
  if (psi.size() != model.dim())
    throw ConfigError("psi has length " + std::to_string(psi.size()) + ", model expects " + std::to_string(model.dim()));
  if (h.time() != m) throw ConfigError("history view time does not match m");
  if (k <= m || k > h.data().K()) throw ConfigError("blip needs m < k <= K");
  return model.eval(h, k, h.action(), psi);
}

namespace {

void check(const BlipModel& model, Flavor f, const Eigen::VectorXd& psi, const PanelDataset& d, int m, int k) {
  if (model.flavor != f)
    throw ConfigError("blip_down_" + to_string(f) + " called on a " + to_string(model.flavor) + " model");
  if (psi.size() != model.dim()) throw ConfigError("psi length does not match the blip model");
  if (m < 0 || k < m || k > d.K()) throw ConfigError("blip-down needs 0 <= m <= k <= K");
}

double standard_sum(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m, int k) {
  double s = 0;
  for (int j = m; j < k; ++j) {
    HistoryView h(d, i, j);
    s += model.eval(h, k, h.action(), psi);
  }
  return s;
}

}  // namespace

double blip_down_standard(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m,
                          int k) {
  check(model, Flavor::standard, psi, d, m, k);
  return d.y(i, k) - standard_sum(model, psi, d, i, m, k);
}

double blip_down_coarse(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m,
                        int k) {
  check(model, Flavor::coarse, psi, d, m, k);
  const InitiationTime T = initiation_time(d, i, model.initiation_components);
  if (T.is_never() || T.time() < m || T.time() >= k) return d.y(i, k);
  HistoryView h(d, i, T.time());
  return d.y(i, k) - model.eval(h, k, T.value(), psi);
}

double blip_down_multiplicative(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i,
                                int m, int k) {
  check(model, Flavor::multiplicative, psi, d, m, k);
  const double s = standard_sum(model, psi, d, i, m, k);
  if (!(std::abs(s) <= 700.0))
    throw EstimationError("multiplicative blip exponent " + format_number(s) + " exceeds 700 in magnitude (subject " +
                          d.subject_id(i) + ", m=" + std::to_string(m) + ", k=" + std::to_string(k) + ")");
  return d.y(i, k) * std::exp(-s);
}

Action optimal_action(const BlipModel& model, const Eigen::VectorXd& psi, const HistoryView& h) {
  if (model.action_grid.empty()) throw ConfigError("empty action grid for argmax");
  const int K = h.data().K();
  size_t best = 0;
  double best_score = 0;
  for (size_t g = 0; g < model.action_grid.size(); ++g) {
    double score = 0;
    for (int r = h.time() + 1; r <= K; ++r)
      if (model.utility[r] != 0.0) score += model.utility[r] * model.eval(h, r, model.action_grid[g], psi);
    if (g == 0 || score > best_score + 1e-12 * (1.0 + std::abs(best_score))) {
      best = g;
      best_score = score;
    }
  }
  return model.action_grid[best];
}

double blip_down_regime(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m,
                        int k) {
  check(model, Flavor::regime, psi, d, m, k);
  if (model.action_grid.empty() && !model.reference) throw ConfigError("empty action grid for argmax");
  double s = 0;
  for (int j = m; j < k; ++j) {
    HistoryView h(d, i, j);
    const Action g = model.reference ? model.reference(h) : optimal_action(model, psi, h);
    s += model.eval(h, k, h.action(), psi) - model.eval(h, k, g, psi);
  }
  return d.y(i, k) - s;
}

double blip_down(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m, int k) {
  switch (model.flavor) {
    case Flavor::standard: return blip_down_standard(model, psi, d, i, m, k);
    case Flavor::coarse: return blip_down_coarse(model, psi, d, i, m, k);
    case Flavor::multiplicative: return blip_down_multiplicative(model, psi, d, i, m, k);
    case Flavor::regime: return blip_down_regime(model, psi, d, i, m, k);
  }
  return 0;
}

double bias_adjustment(const BlipModel& model, const PanelDataset& d, int i, int m, int k, const BiasFunction& c,
                       const PropensityFn& propensity) {
  if (model.components.size() != 1) throw ConfigError("bias adjustment supports a single binary treatment");
  const int comp = model.components[0];
  const InitiationTime T = initiation_time(d, i, model.initiation_components);
  double s = 0;
  for (int j = m; j <= k; ++j) {
    if (!T.at_or_after(j)) break;
    const double a = d.a(i, comp, j);
    if (a != 0.0 && a != 1.0)
      throw ConfigError("bias-adjusted transform requires a binary treatment (subject " + d.subject_id(i) + ")");
    const double p1 = propensity(i, j);
    const double pr_other = a == 1.0 ? 1.0 - p1 : p1;
    s += pr_other * (2 * a - 1) * c(HistoryView(d, i, j), k);
  }
  return s;
}

double bias_adjusted_coarse(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m,
                            int k, const BiasFunction& c, const PropensityFn& propensity) {
  const double h = blip_down_coarse(model, psi, d, i, m, k);
  if (c.is_zero()) return h;
  return h - bias_adjustment(model, d, i, m, k, c, propensity);
}

}  // namespace didsnmm
