#include "didsnmm/bias.hpp"

#include "didsnmm/error.hpp"

namespace didsnmm {

BiasFunction BiasFunction::constant(double c0) {
  BiasFunction b;
  b.family_ = Family::constant;
  b.c0_ = c0;
  return b;
}

BiasFunction BiasFunction::horizon_scaled(double c0) {
  BiasFunction b;
  b.family_ = Family::horizon_scaled;
  b.c0_ = c0;
  return b;
}

BiasFunction BiasFunction::covariate_linear(double c0, std::vector<std::pair<std::string, double>> slopes) {
  BiasFunction b;
  b.family_ = Family::covariate_linear;
  b.c0_ = c0;
  b.slopes_ = std::move(slopes);
  return b;
}

BiasFunction BiasFunction::custom(std::function<double(const HistoryView&, int)> fn, std::string label) {
  BiasFunction b;
  b.family_ = Family::custom;
  b.fn_ = std::move(fn);
  b.label_ = std::move(label);
  return b;
}

BiasFunction BiasFunction::from_json(const json& j, const std::string& pointer) {
  if (j.is_null()) return zero();
  if (j.is_number()) return constant(j.get<double>());
  if (!j.is_object()) throw ConfigError("bias function must be a number or an object", pointer);
  const std::string fam = j.value("family", std::string("constant"));
  const double c0 = j.value("c0", 0.0);
  if (fam == "constant") return constant(c0);
  if (fam == "horizon_scaled") return horizon_scaled(c0);
  if (fam == "covariate_linear") {
    std::vector<std::pair<std::string, double>> slopes;
    if (j.contains("c1")) {
      if (!j["c1"].is_object()) throw ConfigError("c1 must map covariate names to slopes", pointer + "/c1");
      for (auto it = j["c1"].begin(); it != j["c1"].end(); ++it) slopes.emplace_back(it.key(), it.value().get<double>());
    }
    return covariate_linear(c0, std::move(slopes));
  }
  if (fam == "custom") throw ConfigError("a custom bias function must be supplied through the library API", pointer);
  throw ConfigError("unknown bias family '" + fam + "'", pointer + "/family");
}

json BiasFunction::to_json() const {
  switch (family_) {
    case Family::constant: return {{"family", "constant"}, {"c0", c0_}};
    case Family::horizon_scaled: return {{"family", "horizon_scaled"}, {"c0", c0_}};
    case Family::covariate_linear: {
      json c1 = json::object();
      for (auto& [n, v] : slopes_) c1[n] = v;
      return {{"family", "covariate_linear"}, {"c0", c0_}, {"c1", c1}};
    }
    case Family::custom: return {{"family", "custom"}, {"label", label_}};
  }
  return nullptr;
}

BiasFunction BiasFunction::with_c0(double c0) const {
  if (family_ == Family::custom) throw ConfigError("a custom bias function has no c0 to vary");
  BiasFunction b = *this;
  b.c0_ = c0;
  return b;
}

double BiasFunction::operator()(const HistoryView& h, int k) const {
  switch (family_) {
    case Family::constant: return c0_;
    case Family::horizon_scaled: return c0_ * (k - h.time());
    case Family::covariate_linear: {
      double v = c0_;
      for (auto& [name, s] : slopes_) {
        const int c = h.data().covariate_index(name);
        if (c < 0) throw ConfigError("bias function refers to unknown covariate '" + name + "'");
        v += s * h.covariate(c, 0).value_or(0.0);
      }
      return v;
    }
    case Family::custom: return fn_(h, k);
  }
  return 0;
}

bool BiasFunction::is_zero() const {
  if (family_ == Family::custom) return false;
  if (c0_ != 0.0) return false;
  for (auto& s : slopes_)
    if (s.second != 0.0) return false;
  return true;
}

}  // namespace didsnmm
