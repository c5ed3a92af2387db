#include "didsnmm/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "didsnmm/error.hpp"
#include "didsnmm/parallel.hpp"
#include "didsnmm/random.hpp"

namespace didsnmm {

GEstimate sensitivity_fit(const PanelDataset& d, const BlipModel& model, const BiasFunction& c,
                          const NuisanceSpec& spec, const FitOptions& options) {
  if (model.flavor != Flavor::coarse) throw ConfigError("sensitivity analysis needs a coarse model", "/flavor");
  if (model.components.size() != 1) throw ConfigError("sensitivity analysis needs a single treatment component");
  const int c0 = model.components[0];
  for (int i = 0; i < d.n(); ++i)
    for (int m = 0; m <= d.K(); ++m) {
      const double a = d.a(i, c0, m);
      if (a != 0.0 && a != 1.0)
        throw DataError("sensitivity analysis needs a binary treatment (subject " + d.subject_id(i) + ", time " +
                        std::to_string(m) + " has " + format_number(a) + ")");
    }
  FitOptions o = options;
  o.bias = c;
  return fit(d, model, spec, o);
}

SensitivityTarget SensitivityTarget::psi(int j, std::string label) {
  SensitivityTarget t;
  t.psi_index = j;
  t.label = label.empty() ? "psi[" + std::to_string(j) + "]" : label;
  return t;
}

SensitivityTarget SensitivityTarget::derived(CounterfactualQuery q) {
  SensitivityTarget t;
  t.label = q.label();
  t.query = std::move(q);
  return t;
}

SensitivityTarget SensitivityTarget::from_json(const json& j, const BlipModel& model, const std::string& p) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s.rfind("psi:", 0) != 0) throw ConfigError("target strings look like psi:<name or index>", p);
    const std::string key = s.substr(4);
    const auto names = model.parameter_names();
    for (size_t c = 0; c < names.size(); ++c)
      if (names[c] == key) return psi(static_cast<int>(c), names[c]);
    try {
      size_t used = 0;
      const int c = std::stoi(key, &used);
      if (used == key.size() && c >= 0 && c < model.dim()) return psi(c, names[c]);
    } catch (const std::exception&) {
    }
    throw ConfigError("no parameter named '" + key + "'", p);
  }
  return derived(CounterfactualQuery::from_json(j, p));
}

DerivedEstimate SensitivityTarget::evaluate(const GEstimate& fit, const BlipModel& model, const PanelDataset& d) const {
  if (query) {
    DerivedEstimate e = evaluate_query(*query, fit, model, d);
    e.label = label;
    return e;
  }
  const int j = *psi_index;
  DerivedEstimate e;
  e.label = label;
  e.estimate = fit.psi[j];
  e.se = fit.se()[j];
  const auto [lo, hi] = fit.wald_ci();
  e.lo = lo[j];
  e.hi = hi[j];
  e.n_used = d.n();
  e.ci_method = "wald";
  return e;
}

json SensitivityCurve::to_json() const {
  json pts = json::array();
  for (auto& p : points) {
    json q = {{"c0", p.c0}, {"ok", p.ok}};
    if (!p.ok) {
      q["error"] = p.error;
    } else {
      q["fit"] = p.fit.to_json();
      json t = json::array();
      for (auto& e : p.targets) t.push_back(e.to_json());
      q["targets"] = t;
    }
    pts.push_back(q);
  }
  json j = {{"family", family.to_json()}, {"points", pts}};
  if (affinity_residual) j["affinity_residual"] = *affinity_residual;
  json b = json::array();
  for (auto& r : breakdown) {
    json x = {{"target", r.target}, {"found", r.found}, {"evaluations", r.evaluations}, {"note", r.note}};
    if (r.found) x["c0"] = r.c0;
    b.push_back(x);
  }
  j["breakdown"] = b;
  return j;
}

std::string SensitivityCurve::csv() const {
  std::ostringstream s;
  s << "c0,target,estimate,lo,hi\n";
  for (auto& p : points) {
    if (!p.ok) continue;
    for (auto& t : p.targets)
      s << format_number(p.c0) << ",\"" << t.label << "\"," << format_number(t.estimate) << "," << format_number(t.lo)
        << "," << format_number(t.hi) << "\n";
  }
  return s.str();
}

namespace {

bool contains_zero(const DerivedEstimate& e) { return e.lo <= 0 && e.hi >= 0; }

}  // namespace

Breakdown find_breakdown(const PanelDataset& d, const BlipModel& model, const BiasFunction& family,
                         const SensitivityTarget& target, double lo, double hi, const NuisanceSpec& spec,
                         const FitOptions& options, double tol, int scan_points) {
  if (scan_points < 1) throw ConfigError("breakdown scan needs at least one point");
  Breakdown out;
  out.target = target.label;
  if (lo > 0 || hi < 0) {
    out.note = "grid hull does not contain 0";
    return out;
  }
  auto covers = [&](double c0) {
    ++out.evaluations;
    const GEstimate g = sensitivity_fit(d, model, family.with_c0(c0), spec, options);
    return contains_zero(target.evaluate(g, model, d));
  };
  if (covers(0.0)) {
    out.found = true;
    out.c0 = 0;
    out.note = "interval already contains 0 without adjustment";
    return out;
  }
  // the covering set is an interval around the crossing, not a half-line,
  // so scan outward from 0 first and bisect the first bracket found
  std::optional<double> best;
  for (double end : {hi, lo}) {
    if (end == 0) continue;
    double a = 0, b = 0;
    bool hit = false;
    for (int s = 1; s <= scan_points && !hit; ++s) {
      b = end * s / scan_points;
      if (best && std::abs(b) >= std::abs(*best)) break;
      if (covers(b)) hit = true;
      else a = b;
    }
    if (!hit) continue;
    while (std::abs(b - a) > tol) {  // covers(a) false, covers(b) true
      const double mid = 0.5 * (a + b);
      if (covers(mid)) b = mid;
      else a = mid;
    }
    if (!best || std::abs(b) < std::abs(*best)) best = b;
  }
  if (best) {
    out.found = true;
    out.c0 = *best;
  } else {
    out.note = "interval excludes 0 at every scanned point of the grid hull";
  }
  return out;
}

SensitivityCurve sensitivity_grid(const PanelDataset& d, const BlipModel& model, const BiasFunction& family,
                                  const std::vector<double>& grid, const std::vector<SensitivityTarget>& targets,
                                  const NuisanceSpec& spec, const SensitivityOptions& options) {
  if (grid.empty()) throw ConfigError("sensitivity grid is empty", "/grid");
  if (family.family() == BiasFunction::Family::custom)
    throw ConfigError("custom bias functions have no parameter to vary; fit them one at a time", "/family");
  SensitivityCurve curve;
  curve.family = family;
  curve.points.resize(grid.size());
  parallel_for(grid.size(), [&](size_t g) {
    SensitivityPoint& p = curve.points[g];
    p.c0 = grid[g];
    try {
      p.fit = sensitivity_fit(d, model, family.with_c0(grid[g]), spec, options.fit);
      for (auto& t : targets) p.targets.push_back(t.evaluate(p.fit, model, d));
      p.ok = true;
    } catch (const Error& e) {
      p.error = e.what();
    }
  });
  int ok = 0;
  for (auto& p : curve.points) ok += p.ok;
  if (ok < options.min_success * static_cast<double>(grid.size())) {
    std::string first;
    for (auto& p : curve.points)
      if (!p.ok) {
        first = "c0=" + format_number(p.c0) + ": " + p.error;
        break;
      }
    throw EstimationError(std::to_string(grid.size() - ok) + " of " + std::to_string(grid.size()) +
                          " sensitivity points failed (first: " + first + ")");
  }

  // ψ̂ is affine in c0 for linear models with the constant family
  if (family.family() == BiasFunction::Family::constant && model.linear()) {
    std::vector<const SensitivityPoint*> good;
    for (auto& p : curve.points)
      if (p.ok) good.push_back(&p);
    std::sort(good.begin(), good.end(), [](auto* a, auto* b) { return a->c0 < b->c0; });
    if (good.size() >= 3 && good.front()->c0 < good.back()->c0) {
      const auto* a = good.front();
      const auto* b = good[good.size() / 2];
      const auto* c = good.back();
      if (a->c0 < b->c0 && b->c0 < c->c0) {
        const double t = (b->c0 - a->c0) / (c->c0 - a->c0);
        const Eigen::VectorXd interp = (1 - t) * a->fit.psi + t * c->fit.psi;
        curve.affinity_residual = (b->fit.psi - interp).cwiseAbs().maxCoeff();
      }
    }
  }

  if (options.breakdown && family.family() != BiasFunction::Family::custom) {
    const auto [lo, hi] = std::minmax_element(grid.begin(), grid.end());
    for (auto& t : targets) {
      try {
        curve.breakdown.push_back(
            find_breakdown(d, model, family, t, std::min(*lo, 0.0), std::max(*hi, 0.0), spec, options.fit,
                           options.breakdown_tol));
      } catch (const Error& e) {
        Breakdown b;
        b.target = t.label;
        b.note = std::string("failed: ") + e.what();
        curve.breakdown.push_back(b);
      }
    }
  }
  return curve;
}

}  // namespace didsnmm
