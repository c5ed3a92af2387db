#pragma once

#include <functional>
#include <string>
#include <vector>

#include "didsnmm/basis.hpp"

namespace didsnmm {

/// Deviation from parallel trends c(l̄_m, k): the treated-minus-untreated
/// gap in expected untreated outcome trends among those still at risk.
class BiasFunction {
 public:
  enum class Family { constant, horizon_scaled, covariate_linear, custom };

  static BiasFunction zero() { return constant(0.0); }
  static BiasFunction constant(double c0);
  static BiasFunction horizon_scaled(double c0);
  /// c0 + Σ c1[name]·Z_name,m
  static BiasFunction covariate_linear(double c0, std::vector<std::pair<std::string, double>> slopes);
  static BiasFunction custom(std::function<double(const HistoryView&, int)> fn, std::string label = "custom");

  static BiasFunction from_json(const json& j, const std::string& pointer = "");
  json to_json() const;

  /// Same family with the leading parameter c0 replaced.
  BiasFunction with_c0(double c0) const;

  double operator()(const HistoryView& h, int k) const;
  bool is_zero() const;
  Family family() const { return family_; }
  double c0() const { return c0_; }

 private:
  Family family_ = Family::constant;
  double c0_ = 0.0;
  std::vector<std::pair<std::string, double>> slopes_;
  std::function<double(const HistoryView&, int)> fn_;
  std::string label_;
};

}  // namespace didsnmm
