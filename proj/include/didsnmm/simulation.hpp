#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "didsnmm/blip.hpp"
#include "didsnmm/panel.hpp"

namespace didsnmm {

/// Synthetic panel law. Z is exogenous (Gaussian AR(1) or a binary Markov
/// chain); a fresh logistic latent U_t drives treatment at t and shifts the
/// outcome level at t, so untreated trends given the observed history do not
/// depend on treatment while levels are confounded.
struct DgpConfig {
  std::string name;
  int K = 3;
  std::vector<double> time_labels;  // empty: 0..K

  // covariate
  std::string z_name = "L";
  std::string z_law = "gaussian_ar";  // gaussian_ar | binary_markov
  double z_mean = 0, z_sd = 1, z_rho = 0.5;
  double z_p0 = 0.5, z_stay = 0.7;

  // treatment: A_t = 1{alpha_t + a_z Z_t + a_prev A_{t-1} + U_t > 0}
  std::string treatment_name = "a";
  bool staggered = true;
  std::vector<double> alpha;
  double a_z = 0, a_prev = 0;

  // untreated outcome
  double y0_mean = 0, y0_sd = 1;
  std::vector<double> beta;  // trend increments, index 0 unused
  double theta = 0;          // weight of Z_{t-1} in the increment at t
  double lambda = 1;         // level effect of U_t on Y_t
  double sigma = 1;
  double violation_c0 = 0;   // planted constant deviation from parallel trends

  // treatment effects
  Flavor effect_flavor = Flavor::coarse;
  json effect_basis;
  Eigen::VectorXd psi;
  double u_modification = 0;  // effect multiplied by (1 + u_mod U)

  // optional second treatment R, initiated only after A
  bool has_second = false;
  std::string second_name = "r";
  std::vector<double> r_alpha;
  double lambda_r = 0;
  std::vector<double> r_effect;  // by lag 1..K

  // analysis defaults shipped with the config
  json analysis_model;
  json analysis_nuisance;
  json regime;  // {actions, utility} for regime configs

  static DgpConfig from_json(const json& j, const std::string& pointer = "");
  json to_json() const;
  void validate() const;
  /// Empty dataset with this config's names, horizon and labels.
  PanelDataset layout(int n = 0) const;
};

/// Treatment assignment used when simulating a counterfactual arm. All arms
/// share the subject's random draws (common random numbers).
struct ArmSpec {
  enum class Kind { natural, never, truncate, rule, a_only };
  Kind kind = Kind::natural;
  int m = 0;         // truncate: natural before m, no new treatment from m
  RegimeRule rule;   // rule: A_t = rule(history at t)
  static ArmSpec natural() { return {}; }
  static ArmSpec never() { return {Kind::never, 0, {}}; }
  static ArmSpec truncate_at(int m) { return {Kind::truncate, m, {}}; }
  static ArmSpec follow(RegimeRule g) { return {Kind::rule, 0, std::move(g)}; }
  /// A as observed, second treatment held at baseline.
  static ArmSpec a_only() { return {Kind::a_only, 0, {}}; }
};

/// Factual panel; deterministic in (cfg, n, seed).
PanelDataset simulate_panel(const DgpConfig& cfg, int n, std::uint64_t seed);
PanelDataset simulate_arm(const DgpConfig& cfg, int n, std::uint64_t seed, const ArmSpec& arm);

struct Moment {
  double mean = 0;
  double se = 0;
};
Moment sample_moment(const std::vector<double>& x);

struct RegimeCell {
  int m;
  double z;
  double a_prev;
};

struct RegimeOracle {
  std::vector<RegimeCell> cells;
  std::vector<std::vector<int>> rules;  // action index per cell
  std::vector<Moment> values;
  int best = 0;
  json to_json() const;
};

struct OracleTruth {
  Eigen::VectorXd psi;
  std::vector<Moment> never_mean;     // E[Y_k(0̄)] / E[Y_k(∞)]
  std::vector<Moment> observed_mean;  // E[Y_k]
  std::map<std::pair<int, int>, Moment> never_given_initiation;  // E[Y_k(∞) | T=m], staggered configs
  std::optional<RegimeOracle> regime;
  int mc_size = 0;
  std::uint64_t seed = 0;
  json to_json() const;
};

OracleTruth oracle_truth(const DgpConfig& cfg, int mc_size, std::uint64_t seed);

/// Decision cells (m, Z_m, A_{m-1}) for a binary treatment with binary Z.
std::vector<RegimeCell> regime_cells(const DgpConfig& cfg);
int cell_index(const std::vector<RegimeCell>& cells, int m, double z, double a_prev);
/// Values of all 2^cells deterministic rules on the counterfactual arms.
RegimeOracle enumerate_regimes(const DgpConfig& cfg, int mc_size, std::uint64_t seed);

/// Coefficient on A_m from regressing y on (A_m, X) with HC0 standard error.
struct ResidualizedCoef {
  double coef = 0;
  double se = 0;
  int rows = 0;
};
ResidualizedCoef residualized_coefficient(const Eigen::MatrixXd& X, const Eigen::VectorXd& a, const Eigen::VectorXd& y);

/// Construction check: per (m, k), regress the increment of the relevant
/// untreated counterfactual on A_m and the config's trend basis among those
/// at risk. Returns one entry per pair.
struct TrendCheck {
  int m, k;
  ResidualizedCoef fit;
};
std::vector<TrendCheck> trend_independence_check(const DgpConfig& cfg, int n, std::uint64_t seed);

/// Shipped configs: coarse-staggered, null, standard-general, multiplicative,
/// cde-two-treatment, violation, optimal-regime.
std::vector<std::string> gallery_names();
DgpConfig gallery(const std::string& name);

/// Nuisance spec with the named component(s) replaced by an intercept.
json misspecify(const json& nuisance, const std::string& mode);

}  // namespace didsnmm
