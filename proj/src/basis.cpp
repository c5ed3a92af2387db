#include "didsnmm/basis.hpp"

#include "didsnmm/error.hpp"

namespace didsnmm {

namespace {

std::string label(const PanelDataset& d, int m) { return format_number(d.time_label(m)); }

double or_zero(const std::optional<double>& v) { return v ? *v : 0.0; }

class Intercept : public BasisTerm {
 public:
  int dim() const override { return 1; }
  void eval(const HistoryView&, int, double* out) const override { out[0] = 1.0; }
  std::vector<std::string> names() const override { return {"(intercept)"}; }
  json to_json() const override { return {{"type", "intercept"}}; }
};

class PairIndicators : public BasisTerm {
 public:
  PairIndicators(const PanelDataset& d, int min_anchor) : K_(d.K()), min_anchor_(min_anchor) {
    for (int m = min_anchor; m < K_; ++m)
      for (int k = m + 1; k <= K_; ++k) names_.push_back("pair[" + label(d, m) + "," + label(d, k) + "]");
  }
  int dim() const override { return static_cast<int>(names_.size()); }
  void eval(const HistoryView& h, int k, double* out) const override {
    std::fill(out, out + dim(), 0.0);
    const int m = h.time();
    if (m < min_anchor_ || k <= m || k > K_) return;
    // pairs are laid out anchor-major
    int idx = 0;
    for (int a = min_anchor_; a < m; ++a) idx += K_ - a;
    out[idx + (k - m - 1)] = 1.0;
  }
  std::vector<std::string> names() const override { return names_; }
  bool depends_on_k() const override { return true; }
  json to_json() const override { return {{"type", "pair_indicators"}, {"min_anchor", min_anchor_}}; }

 private:
  int K_, min_anchor_;
  std::vector<std::string> names_;
};

class AnchorIndicators : public BasisTerm {
 public:
  explicit AnchorIndicators(const PanelDataset& d) : K_(d.K()) {
    for (int m = 0; m < std::max(K_, 1); ++m) names_.push_back("anchor[" + label(d, m) + "]");
  }
  int dim() const override { return static_cast<int>(names_.size()); }
  void eval(const HistoryView& h, int, double* out) const override {
    std::fill(out, out + dim(), 0.0);
    if (h.time() < dim()) out[h.time()] = 1.0;
  }
  std::vector<std::string> names() const override { return names_; }
  json to_json() const override { return {{"type", "anchor_indicators"}}; }

 private:
  int K_;
  std::vector<std::string> names_;
};

class LagIndicators : public BasisTerm {
 public:
  LagIndicators(int min_lag, int max_lag) : min_(min_lag), max_(max_lag) {}
  int dim() const override { return max_ - min_ + 1; }
  void eval(const HistoryView& h, int k, double* out) const override {
    std::fill(out, out + dim(), 0.0);
    const int lag = k - h.time();
    if (lag >= min_ && lag <= max_) out[lag - min_] = 1.0;
  }
  std::vector<std::string> names() const override {
    std::vector<std::string> n;
    for (int l = min_; l <= max_; ++l) n.push_back("lag[" + std::to_string(l) + "]");
    return n;
  }
  bool depends_on_k() const override { return true; }
  json to_json() const override { return {{"type", "lag_indicators"}, {"min_lag", min_}, {"max_lag", max_}}; }

 private:
  int min_, max_;
};

class Lag : public BasisTerm {
 public:
  explicit Lag(int power) : power_(power) {}
  int dim() const override { return 1; }
  void eval(const HistoryView& h, int k, double* out) const override {
    const double l = k - h.time();
    out[0] = power_ == 1 ? l : l * l;
  }
  std::vector<std::string> names() const override { return {power_ == 1 ? "lag" : "lag^2"}; }
  bool depends_on_k() const override { return true; }
  json to_json() const override { return {{"type", power_ == 1 ? "lag" : "lag_sq"}}; }

 private:
  int power_;
};

class Calendar : public BasisTerm {
 public:
  explicit Calendar(double centre) : centre_(centre) {}
  int dim() const override { return 1; }
  void eval(const HistoryView& h, int, double* out) const override { out[0] = h.time_label() - centre_; }
  std::vector<std::string> names() const override { return {"calendar-" + format_number(centre_)}; }
  json to_json() const override { return {{"type", "calendar"}, {"centre", centre_}}; }

 private:
  double centre_;
};

class Covariate : public BasisTerm {
 public:
  Covariate(int index, std::string name, int lag, int power)
      : c_(index), name_(std::move(name)), lag_(lag), power_(power) {}
  int dim() const override { return 1; }
  void eval(const HistoryView& h, int, double* out) const override {
    const double v = or_zero(h.covariate(c_, lag_));
    double r = 1.0;
    for (int e = 0; e < power_; ++e) r *= v;
    out[0] = r;
  }
  std::vector<std::string> names() const override {
    std::string n = name_;
    if (lag_ > 0) n += "[m-" + std::to_string(lag_) + "]";
    if (power_ != 1) n += "^" + std::to_string(power_);
    return {n};
  }
  json to_json() const override {
    return {{"type", "covariate"}, {"name", name_}, {"lag", lag_}, {"power", power_}};
  }

 private:
  int c_;
  std::string name_;
  int lag_, power_;
};

class OutcomeLag : public BasisTerm {
 public:
  explicit OutcomeLag(int lag) : lag_(lag) {}
  int dim() const override { return 1; }
  void eval(const HistoryView& h, int, double* out) const override { out[0] = or_zero(h.outcome_lag(lag_)); }
  std::vector<std::string> names() const override { return {"y[m-" + std::to_string(lag_) + "]"}; }
  bool uses_outcome() const override { return true; }
  json to_json() const override { return {{"type", "outcome_lag"}, {"lag", lag_}}; }

 private:
  int lag_;
};

class TreatmentLag : public BasisTerm {
 public:
  TreatmentLag(int c, std::string name, int lag) : c_(c), name_(std::move(name)), lag_(lag) {}
  int dim() const override { return 1; }
  void eval(const HistoryView& h, int, double* out) const override { out[0] = or_zero(h.treatment_lag(c_, lag_)); }
  std::vector<std::string> names() const override { return {name_ + "[m-" + std::to_string(lag_) + "]"}; }
  json to_json() const override { return {{"type", "treatment_lag"}, {"name", name_}, {"lag", lag_}}; }

 private:
  int c_;
  std::string name_;
  int lag_;
};

class TreatmentSummary : public BasisTerm {
 public:
  enum Kind { count, time_sum, rate };
  TreatmentSummary(Kind kind, int c, std::string name) : kind_(kind), c_(c), name_(std::move(name)) {}
  int dim() const override { return 1; }
  void eval(const HistoryView& h, int, double* out) const override {
    switch (kind_) {
      case count: out[0] = h.treatment_count(c_); break;
      case time_sum: out[0] = h.treatment_time_sum(c_); break;
      case rate: out[0] = h.time() > 0 ? h.treatment_count(c_) / h.time() : 0.0; break;
    }
  }
  std::vector<std::string> names() const override {
    static const char* k[] = {"count", "time_sum", "rate"};
    return {std::string(k[kind_]) + "(" + name_ + ")"};
  }
  json to_json() const override {
    static const char* k[] = {"treatment_count", "treatment_time_sum", "treatment_rate"};
    return {{"type", k[kind_]}, {"name", name_}};
  }

 private:
  Kind kind_;
  int c_;
  std::string name_;
};

class Product : public BasisTerm {
 public:
  explicit Product(std::vector<std::shared_ptr<const BasisTerm>> f) : factors_(std::move(f)) {
    dim_ = 1;
    for (auto& t : factors_) dim_ *= t->dim();
  }
  int dim() const override { return dim_; }
  void eval(const HistoryView& h, int k, double* out) const override {
    // outer product, first factor varies slowest
    double buf[256];
    out[0] = 1.0;
    int cur = 1;
    for (auto& t : factors_) {
      const int fd = t->dim();
      if (fd > 256) throw ConfigError("product factor too wide");
      t->eval(h, k, buf);
      for (int a = cur - 1; a >= 0; --a)
        for (int b = fd - 1; b >= 0; --b) out[a * fd + b] = out[a] * buf[b];
      cur *= fd;
    }
  }
  std::vector<std::string> names() const override {
    std::vector<std::string> n{""};
    for (auto& t : factors_) {
      std::vector<std::string> next;
      for (auto& a : n)
        for (auto& b : t->names()) next.push_back(a.empty() ? b : a + "*" + b);
      n = std::move(next);
    }
    return n;
  }
  bool depends_on_k() const override {
    for (auto& t : factors_)
      if (t->depends_on_k()) return true;
    return false;
  }
  bool uses_outcome() const override {
    for (auto& t : factors_)
      if (t->uses_outcome()) return true;
    return false;
  }
  json to_json() const override {
    json f = json::array();
    for (auto& t : factors_) f.push_back(t->to_json());
    return {{"type", "product"}, {"terms", f}};
  }

 private:
  std::vector<std::shared_ptr<const BasisTerm>> factors_;
  int dim_;
};

int get_int(const json& j, const char* key, int def, const std::string& ptr) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number_integer()) throw ConfigError("expected an integer", ptr + "/" + key);
  return j[key].get<int>();
}

double get_double(const json& j, const char* key, double def, const std::string& ptr) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number()) throw ConfigError("expected a number", ptr + "/" + key);
  return j[key].get<double>();
}

int treatment_component(const json& j, const PanelDataset& d, const std::string& ptr, std::string& name) {
  if (!j.contains("name")) {
    name = d.treatment_names()[0];
    return 0;
  }
  name = j["name"].get<std::string>();
  const int c = d.treatment_index(name);
  if (c < 0) throw ConfigError("unknown treatment '" + name + "'", ptr + "/name");
  return c;
}

std::shared_ptr<const BasisTerm> make_term(const json& j, const PanelDataset& d, const std::string& ptr) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    throw ConfigError("basis term needs a string 'type'", ptr);
  const std::string type = j["type"].get<std::string>();
  if (type == "intercept") return std::make_shared<Intercept>();
  if (type == "pair_indicators") {
    const int a = get_int(j, "min_anchor", 0, ptr);
    if (a < 0 || a >= std::max(d.K(), 1)) throw ConfigError("min_anchor out of range", ptr + "/min_anchor");
    return std::make_shared<PairIndicators>(d, a);
  }
  if (type == "anchor_indicators") return std::make_shared<AnchorIndicators>(d);
  if (type == "lag_indicators") {
    const int lo = get_int(j, "min_lag", 1, ptr), hi = get_int(j, "max_lag", d.K(), ptr);
    if (lo < 1 || hi < lo) throw ConfigError("lag range must satisfy 1 <= min_lag <= max_lag", ptr);
    return std::make_shared<LagIndicators>(lo, hi);
  }
  if (type == "lag") return std::make_shared<Lag>(1);
  if (type == "lag_sq") return std::make_shared<Lag>(2);
  if (type == "calendar") return std::make_shared<Calendar>(get_double(j, "centre", 0.0, ptr));
  if (type == "covariate") {
    if (!j.contains("name")) throw ConfigError("covariate term needs 'name'", ptr);
    const std::string name = j["name"].get<std::string>();
    const int c = d.covariate_index(name);
    if (c < 0) throw ConfigError("unknown covariate '" + name + "'", ptr + "/name");
    const int lag = get_int(j, "lag", 0, ptr), power = get_int(j, "power", 1, ptr);
    if (lag < 0) throw ConfigError("lag must be >= 0", ptr + "/lag");
    if (power < 1 || power > 8) throw ConfigError("power must be in 1..8", ptr + "/power");
    return std::make_shared<Covariate>(c, name, lag, power);
  }
  if (type == "outcome_lag") {
    const int lag = get_int(j, "lag", 1, ptr);
    if (lag < 1) throw ConfigError("outcome lag must be >= 1 (Y_m is not in the history)", ptr + "/lag");
    return std::make_shared<OutcomeLag>(lag);
  }
  if (type == "treatment_lag") {
    std::string name;
    const int c = treatment_component(j, d, ptr, name);
    const int lag = get_int(j, "lag", 1, ptr);
    if (lag < 1) throw ConfigError("treatment lag must be >= 1 (A_m is not in the history)", ptr + "/lag");
    return std::make_shared<TreatmentLag>(c, name, lag);
  }
  if (type == "treatment_count" || type == "treatment_time_sum" || type == "treatment_rate") {
    std::string name;
    const int c = treatment_component(j, d, ptr, name);
    const auto kind = type == "treatment_count"      ? TreatmentSummary::count
                      : type == "treatment_time_sum" ? TreatmentSummary::time_sum
                                                     : TreatmentSummary::rate;
    return std::make_shared<TreatmentSummary>(kind, c, name);
  }
  if (type == "product") {
    if (!j.contains("terms") || !j["terms"].is_array() || j["terms"].empty())
      throw ConfigError("product needs a non-empty 'terms' array", ptr);
    std::vector<std::shared_ptr<const BasisTerm>> f;
    for (size_t t = 0; t < j["terms"].size(); ++t)
      f.push_back(make_term(j["terms"][t], d, ptr + "/terms/" + std::to_string(t)));
    return std::make_shared<Product>(std::move(f));
  }
  throw ConfigError("unknown basis term type '" + type + "'", ptr + "/type");
}

json expand_constructor(const json& j, const std::string& ptr) {
  const std::string name = j["constructor"].get<std::string>();
  if (name == "deregulation") {
    // per-(m,k) effects plus a shared slope in one covariate
    json terms = json::array({{{"type", "pair_indicators"}}});
    if (j.contains("covariate"))
      terms.push_back({{"type", "covariate"}, {"name", j["covariate"]}, {"lag", j.value("lag", 0)}});
    return terms;
  }
  if (name == "flood") {
    if (!j.contains("covariate")) throw ConfigError("flood constructor needs 'covariate'", ptr);
    return json::array({{{"type", "intercept"}},
                        {{"type", "calendar"}, {"centre", j.value("centre", 1980.0)}},
                        {{"type", "lag"}},
                        {{"type", "lag_sq"}},
                        {{"type", "covariate"}, {"name", j["covariate"]}, {"lag", j.value("lag", 1)}}});
  }
  if (name == "pair_indicators") return json::array({{{"type", "pair_indicators"}}});
  throw ConfigError("unknown basis constructor '" + name + "'", ptr + "/constructor");
}

}  // namespace

Basis Basis::from_json(const json& j, const PanelDataset& layout, const std::string& pointer) {
  Basis b;
  b.source_ = j;
  json terms;
  std::string tptr = pointer;
  if (j.is_null()) {
    terms = json::array();
  } else if (j.is_array()) {
    terms = j;
  } else if (j.is_object() && j.contains("constructor")) {
    terms = expand_constructor(j, pointer);
    tptr = pointer + "/constructor";
  } else if (j.is_object() && j.contains("terms")) {
    terms = j["terms"];
    tptr = pointer + "/terms";
    if (!terms.is_array()) throw ConfigError("'terms' must be an array", tptr);
  } else {
    throw ConfigError("basis must be an array of terms, {\"terms\": [...]}, or {\"constructor\": ...}",
                      pointer);
  }
  for (size_t t = 0; t < terms.size(); ++t) {
    const std::string p = j.is_object() && j.contains("constructor") ? tptr : tptr + "/" + std::to_string(t);
    b.terms_.push_back(make_term(terms[t], layout, p));
    b.dim_ += b.terms_.back()->dim();
  }
  return b;
}

void Basis::eval(const HistoryView& h, int k, double* out) const {
  for (auto& t : terms_) {
    t->eval(h, k, out);
    out += t->dim();
  }
}

Eigen::VectorXd Basis::eval(const HistoryView& h, int k) const {
  Eigen::VectorXd v(dim_);
  eval(h, k, v.data());
  return v;
}

std::vector<std::string> Basis::names() const {
  std::vector<std::string> n;
  for (auto& t : terms_)
    for (auto& s : t->names()) n.push_back(s);
  return n;
}

bool Basis::depends_on_k() const {
  for (auto& t : terms_)
    if (t->depends_on_k()) return true;
  return false;
}

bool Basis::uses_outcome() const {
  for (auto& t : terms_)
    if (t->uses_outcome()) return true;
  return false;
}

json Basis::to_json() const {
  json terms = json::array();
  for (auto& t : terms_) terms.push_back(t->to_json());
  return {{"terms", terms}};
}

}  // namespace didsnmm
