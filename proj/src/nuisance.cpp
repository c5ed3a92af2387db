#include "didsnmm/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

#include "didsnmm/error.hpp"
#include "didsnmm/parallel.hpp"
#include "didsnmm/random.hpp"

namespace didsnmm {

std::vector<int> FoldAssignment::members(int f) const {
  std::vector<int> out;
  for (size_t i = 0; i < fold.size(); ++i)
    if (fold[i] == f) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> FoldAssignment::sizes() const {
  std::vector<int> s(n_folds, 0);
  for (int f : fold) ++s[f];
  return s;
}

json FoldAssignment::to_json() const { return {{"n_folds", n_folds}, {"seed", seed}, {"sizes", sizes()}}; }

FoldAssignment split_folds(int n, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("cross-fitting needs at least 2 folds", "/folds");
  if (n_folds > n)
    throw ConfigError(std::to_string(n_folds) + " folds requested for " + std::to_string(n) + " subjects", "/folds");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(stream_seed(seed, 0x666f6c64));
  std::shuffle(perm.begin(), perm.end(), rng);
  FoldAssignment fa;
  fa.n_folds = n_folds;
  fa.seed = seed;
  fa.fold.assign(n, 0);
  for (int t = 0; t < n; ++t) fa.fold[perm[t]] = t % n_folds;
  return fa;
}

FoldAssignment split_folds(const PanelDataset& d, int n_folds, std::uint64_t seed) {
  std::map<int, int> group;
  for (int i = 0; i < d.n(); ++i) group.emplace(d.source(i), 0);
  int g = 0;
  for (auto& kv : group) kv.second = g++;
  if (n_folds > g)
    throw ConfigError(std::to_string(n_folds) + " folds requested for " + std::to_string(g) + " distinct subjects",
                      "/folds");
  FoldAssignment by_group = split_folds(g, n_folds, seed);
  FoldAssignment fa;
  fa.n_folds = n_folds;
  fa.seed = seed;
  fa.fold.resize(d.n());
  for (int i = 0; i < d.n(); ++i) fa.fold[i] = by_group.fold[group[d.source(i)]];
  return fa;
}

FoldAssignment single_fold(int n) {
  FoldAssignment fa;
  fa.n_folds = 1;
  fa.fold.assign(n, 0);
  return fa;
}

namespace {

std::mutex registry_mutex;
std::map<std::string, Trainer>& registry() {
  static std::map<std::string, Trainer> r;
  return r;
}

Trainer find_learner(const std::string& name) {
  std::lock_guard<std::mutex> lock(registry_mutex);
  auto it = registry().find(name);
  return it == registry().end() ? Trainer() : it->second;
}

bool is_builtin_treatment(const std::string& f) {
  return f == "auto" || f == "saturated" || f == "linear" || f == "logistic";
}

}  // namespace

void register_learner(const std::string& name, Trainer trainer) {
  if (is_builtin_treatment(name)) throw ConfigError("'" + name + "' is a built-in family name");
  std::lock_guard<std::mutex> lock(registry_mutex);
  registry()[name] = std::move(trainer);
}

bool has_learner(const std::string& name) { return static_cast<bool>(find_learner(name)); }

NuisanceSpec NuisanceSpec::from_json(const json& j, const PanelDataset& layout, const std::string& pointer) {
  NuisanceSpec s;
  const json intercept = json::array({{{"type", "intercept"}}});
  if (!j.is_null() && !j.is_object()) throw ConfigError("nuisance spec must be a JSON object", pointer);
  const json t = j.is_object() ? j.value("treatment", json::object()) : json::object();
  const json v = j.is_object() ? j.value("trend", json::object()) : json::object();
  s.treatment.family = t.value("family", std::string("auto"));
  if (!is_builtin_treatment(s.treatment.family) && !has_learner(s.treatment.family))
    throw ConfigError("unknown treatment family '" + s.treatment.family + "'", pointer + "/treatment/family");
  s.treatment.basis = Basis::from_json(t.contains("basis") ? t["basis"] : intercept, layout, pointer + "/treatment/basis");
  if (s.treatment.basis.depends_on_k())
    throw ConfigError("treatment basis may not depend on the horizon k", pointer + "/treatment/basis");
  const std::string ts = t.value("stratify", std::string("time"));
  if (ts != "time" && ts != "none") throw ConfigError("stratify must be 'time' or 'none'", pointer + "/treatment/stratify");
  s.treatment.stratify_time = ts == "time";

  s.trend.family = v.value("family", std::string("linear"));
  if (s.trend.family != "linear" && !has_learner(s.trend.family))
    throw ConfigError("unknown trend family '" + s.trend.family + "'", pointer + "/trend/family");
  s.trend.basis = Basis::from_json(v.contains("basis") ? v["basis"] : intercept, layout, pointer + "/trend/basis");
  const std::string vs = v.value("stratify", std::string("pair"));
  if (vs != "pair" && vs != "none") throw ConfigError("stratify must be 'pair' or 'none'", pointer + "/trend/stratify");
  s.trend.stratify_pair = vs == "pair";

  if (j.is_object()) {
    s.folds = j.value("folds", 2);
    s.seed = j.value("seed", static_cast<std::uint64_t>(1));
  }
  if (s.folds < 2) throw ConfigError("folds must be at least 2", pointer + "/folds");
  return s;
}

json NuisanceSpec::to_json() const {
  auto basis_json = [](const Basis& b) { return b.source().is_null() ? b.to_json() : b.source(); };
  return {{"treatment",
           {{"family", treatment.family},
            {"basis", basis_json(treatment.basis)},
            {"stratify", treatment.stratify_time ? "time" : "none"}}},
          {"trend",
           {{"family", trend.family},
            {"basis", basis_json(trend.basis)},
            {"stratify", trend.stratify_pair ? "pair" : "none"}}},
          {"folds", folds},
          {"seed", seed}};
}

std::vector<char> risk_set(const PanelDataset& d, Conditioning conditioning,
                           const std::vector<int>& initiation_components) {
  const int P = d.periods();
  std::vector<char> r(static_cast<size_t>(d.n()) * P, 1);
  if (conditioning == Conditioning::full_history) return r;
  for (int i = 0; i < d.n(); ++i) {
    const InitiationTime T = initiation_time(d, i, initiation_components);
    for (int m = 0; m < P; ++m) r[static_cast<size_t>(i) * P + m] = T.at_or_after(m);
  }
  return r;
}

std::vector<std::pair<int, int>> anchor_pairs(int K, int min_anchor) {
  std::vector<std::pair<int, int>> out;
  for (int m = min_anchor; m < K; ++m)
    for (int k = m + 1; k <= K; ++k) out.emplace_back(m, k);
  return out;
}

namespace {

json coef_table(const std::vector<std::string>& names, const Eigen::VectorXd& coef) {
  json t = json::object();
  for (Eigen::Index c = 0; c < coef.size(); ++c) t[names[c]] = coef[c];
  return t;
}

Predictor fit_treatment(const std::string& family, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const std::vector<std::string>& names, const std::string& where) {
  const Eigen::Index n = X.rows(), p = X.cols();
  const double y0 = y[0];
  bool constant = true, binary = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    constant = constant && y[i] == y0;
    binary = binary && (y[i] == 0.0 || y[i] == 1.0);
  }
  std::string fam = family;
  if (fam == "auto") fam = binary ? "logistic" : "linear";
  if (fam == "logistic" && !binary) throw ConfigError("logistic treatment model needs a binary treatment (" + where + ")");
  Predictor out;
  if (constant && fam != "saturated" && is_builtin_treatment(family)) {
    // Everyone made the same choice: the fitted mean is that value.
    out.predict = [y0](const double*) { return y0; };
    out.audit = {{"family", fam}, {"constant", y0}};
    return out;
  }
  if (fam == "logistic") {
    const LogisticFit f = logistic_regression(X, y, Eigen::VectorXd::Ones(n));
    if (f.separated_column >= 0)
      throw EstimationError("perfect separation in the treatment model at " + where + ", basis column '" +
                            names[f.separated_column] + "'");
    if (!f.converged) throw EstimationError("treatment model did not converge at " + where);
    const Eigen::VectorXd b = f.coef;
    out.predict = [b, p](const double* x) {
      double e = 0;
      for (Eigen::Index c = 0; c < p; ++c) e += b[c] * x[c];
      return expit(e);
    };
    out.audit = {{"family", "logistic"}, {"coef", coef_table(names, b)}, {"iterations", f.iterations}};
    return out;
  }
  if (fam == "linear") {
    const LeastSquares f = least_squares(X, y);
    const Eigen::VectorXd b = f.coef;
    out.predict = [b, p](const double* x) {
      double e = 0;
      for (Eigen::Index c = 0; c < p; ++c) e += b[c] * x[c];
      return e;
    };
    out.audit = {{"family", "linear"}, {"coef", coef_table(names, b)}};
    return out;
  }
  if (fam == "saturated") {
    auto cells = std::make_shared<std::map<std::vector<double>, std::pair<double, double>>>();
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> key(p);
      for (Eigen::Index c = 0; c < p; ++c) key[c] = X(i, c);
      auto& cell = (*cells)[key];
      cell.first += y[i];
      cell.second += 1;
    }
    const double overall = y.mean();
    out.predict = [cells, overall, p](const double* x) {
      auto it = cells->find(std::vector<double>(x, x + p));
      return it == cells->end() ? overall : it->second.first / it->second.second;
    };
    json tab = json::array();
    for (auto& [key, v] : *cells) tab.push_back({{"cell", key}, {"mean", v.first / v.second}, {"n", v.second}});
    out.audit = {{"family", "saturated"}, {"cells", tab}, {"fallback", overall}};
    return out;
  }
  Trainer t = find_learner(fam);
  if (!t) throw ConfigError("unknown treatment family '" + fam + "'");
  out = t(X, y, Eigen::VectorXd::Ones(n));
  if (!out.predict) throw ConfigError("learner '" + fam + "' returned no predictor");
  out.audit["family"] = fam;
  return out;
}

}  // namespace

TreatmentFit fit_treatment_model(const PanelDataset& d, const NuisanceSpec& spec, const FoldAssignment& folds,
                                 Conditioning conditioning, const std::vector<int>& components,
                                 const std::vector<int>& initiation_components, int min_anchor, int last_time) {
  const int n = d.n(), K = d.K(), P = d.periods();
  const int last = last_time < 0 ? K - 1 : std::min(last_time, K);
  if (static_cast<int>(folds.fold.size()) != n) throw ConfigError("fold assignment does not match the dataset");
  const Basis& basis = spec.treatment.basis;
  if (basis.depends_on_k()) throw ConfigError("treatment basis may not depend on the horizon k", "/treatment/basis");
  const int p = basis.dim();
  TreatmentFit fit(n, d.q(), K);
  fit.folds = folds;
  fit.conditioning = conditioning;
  fit.components = components;
  const auto risk = risk_set(d, conditioning, initiation_components);

  RowMatrix X(static_cast<Eigen::Index>(n) * P, p);
  for (int i = 0; i < n; ++i)
    for (int m = min_anchor; m <= last; ++m)
      if (risk[static_cast<size_t>(i) * P + m]) basis.eval(HistoryView(d, i, m), m, X.row(static_cast<Eigen::Index>(i) * P + m).data());

  std::vector<std::vector<int>> strata;  // list of times per stratum
  if (spec.treatment.stratify_time) {
    for (int m = min_anchor; m <= last; ++m) strata.push_back({m});
  } else {
    std::vector<int> all;
    for (int m = min_anchor; m <= last; ++m) all.push_back(m);
    strata.push_back(all);
  }
  const std::vector<std::string> names = basis.names();
  struct Unit {
    int s, c, f;
  };
  std::vector<Unit> units;
  for (int s = 0; s < static_cast<int>(strata.size()); ++s)
    for (int c : components)
      for (int f = 0; f < folds.n_folds; ++f) units.push_back({s, c, f});
  std::vector<json> audits(units.size());
  std::vector<std::vector<int>> empty_times(units.size());

  parallel_for(units.size(), [&](size_t u) {
    const Unit& un = units[u];
    std::vector<Eigen::Index> train, eval;
    for (int m : strata[un.s])
      for (int i = 0; i < n; ++i) {
        if (!risk[static_cast<size_t>(i) * P + m]) continue;
        const Eigen::Index r = static_cast<Eigen::Index>(i) * P + m;
        if (folds.fold[i] == un.f) eval.push_back(r);
        if (folds.n_folds == 1 || folds.fold[i] != un.f) train.push_back(r);
      }
    std::string where = spec.treatment.stratify_time ? "m=" + std::to_string(strata[un.s][0]) : "pooled times";
    if (d.q() > 1) where += ", treatment '" + d.treatment_names()[un.c] + "'";
    if (train.empty()) {
      empty_times[u] = strata[un.s];
      return;
    }
    if (eval.empty()) return;
    Eigen::MatrixXd Xt(train.size(), p);
    Eigen::VectorXd yt(train.size());
    for (size_t t = 0; t < train.size(); ++t) {
      Xt.row(t) = X.row(train[t]);
      const int i = static_cast<int>(train[t] / P), m = static_cast<int>(train[t] % P);
      yt[t] = d.a(i, un.c, m);
    }
    Predictor pr = fit_treatment(spec.treatment.family, Xt, yt, names, where);
    for (Eigen::Index r : eval) {
      const int i = static_cast<int>(r / P), m = static_cast<int>(r % P);
      fit.set_mean(i, un.c, m, pr.predict(X.row(r).data()));
    }
    json a = pr.audit;
    a["stratum"] = where;
    a["fold"] = un.f;
    a["n_train"] = train.size();
    audits[u] = std::move(a);
  });
  for (size_t u = 0; u < units.size(); ++u) {
    if (!audits[u].is_null()) fit.audit.push_back(audits[u]);
    for (int m : empty_times[u])
      if (std::find(fit.flagged_times.begin(), fit.flagged_times.end(), m) == fit.flagged_times.end())
        fit.flagged_times.push_back(m);
  }
  std::sort(fit.flagged_times.begin(), fit.flagged_times.end());
  return fit;
}

TrendDesign::TrendDesign(const PanelDataset& d, const TrendSpec& spec, const FoldAssignment& folds,
                         const std::vector<std::pair<int, int>>& pairs, const std::vector<char>& at_risk)
    : pairs_(pairs) {
  const int P = d.periods();
  p_ = spec.basis.dim();
  names_ = spec.basis.names();
  if (spec.family != "linear") learner_ = spec.family;
  n_strata_ = spec.stratify_pair ? static_cast<int>(pairs.size()) : 1;
  for (int i = 0; i < d.n(); ++i)
    for (int q = 0; q < static_cast<int>(pairs.size()); ++q)
      if (at_risk[static_cast<size_t>(i) * P + pairs[q].first])
        rows_.push_back({i, q, folds.fold[i], spec.stratify_pair ? q : 0});
  D_.resize(rows_.size(), p_);
  for (size_t r = 0; r < rows_.size(); ++r) {
    const auto [m, k] = pairs[rows_[r].pair];
    spec.basis.eval(HistoryView(d, rows_[r].i, m), k, D_.row(r).data());
  }
  valid_.assign(rows_.size(), 1);

  std::vector<std::vector<int>> by_stratum(n_strata_);
  for (size_t r = 0; r < rows_.size(); ++r) by_stratum[rows_[r].stratum].push_back(static_cast<int>(r));
  for (int s = 0; s < n_strata_; ++s)
    for (int f = 0; f < folds.n_folds; ++f) {
      Block b;
      b.fold = f;
      b.stratum = s;
      for (int r : by_stratum[s]) {
        if (rows_[r].fold == f) b.eval.push_back(r);
        if (folds.n_folds == 1 || rows_[r].fold != f) b.train.push_back(r);
      }
      if (b.eval.empty()) continue;
      const std::string label =
          spec.stratify_pair ? "(m=" + std::to_string(pairs[s].first) + ",k=" + std::to_string(pairs[s].second) + ")"
                             : "pooled pairs";
      if (b.train.empty()) {
        flagged_.push_back(label + (folds.n_folds > 1 ? " fold " + std::to_string(f) : ""));
        for (int r : b.eval) valid_[r] = 0;
        continue;
      }
      if (static_cast<int>(b.train.size()) < p_)
        throw DataError("trend model at " + label + " has " + std::to_string(b.train.size()) +
                        " at-risk rows for a basis of dimension " + std::to_string(p_));
      b.X.resize(b.train.size(), p_);
      for (size_t t = 0; t < b.train.size(); ++t) b.X.row(t) = D_.row(b.train[t]);
      if (linear()) {
        b.qr.setThreshold(1e-10);
        b.qr.compute(b.X);
      }
      b.ok = true;
      blocks_.push_back(std::move(b));
    }
}

Eigen::MatrixXd TrendDesign::predict(const Eigen::MatrixXd& response) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows_.size(), response.cols());
  for (const Block& b : blocks_) {
    Eigen::MatrixXd Y(b.train.size(), response.cols());
    for (size_t t = 0; t < b.train.size(); ++t) Y.row(t) = response.row(b.train[t]);
    if (linear()) {
      const Eigen::MatrixXd coef = b.qr.solve(Y);
      for (int r : b.eval) out.row(r) = D_.row(r) * coef;
    } else {
      Trainer t = find_learner(learner_);
      for (Eigen::Index c = 0; c < response.cols(); ++c) {
        Predictor pr = t(b.X, Y.col(c), Eigen::VectorXd::Ones(b.X.rows()));
        for (int r : b.eval) out(r, c) = pr.predict(D_.row(r).data());
      }
    }
  }
  return out;
}

Eigen::VectorXd TrendDesign::predict(const Eigen::VectorXd& response) const {
  Eigen::MatrixXd m = response;
  return predict(m).col(0);
}

json TrendDesign::audit(const Eigen::VectorXd& response) const {
  json out = json::array();
  for (const Block& b : blocks_) {
    json a;
    a["stratum"] = n_strata_ > 1 ? json::array({pairs_[b.stratum].first, pairs_[b.stratum].second}) : json("pooled");
    a["fold"] = b.fold;
    a["n_train"] = b.train.size();
    if (linear()) {
      Eigen::VectorXd y(b.train.size());
      for (size_t t = 0; t < b.train.size(); ++t) y[t] = response[b.train[t]];
      a["coef"] = coef_table(names_, b.qr.solve(y));
    } else {
      a["learner"] = learner_;
    }
    out.push_back(a);
  }
  return out;
}

}  // namespace didsnmm
