#pragma once

#include <string>
#include <vector>

#include "didsnmm/gestimation.hpp"

namespace didsnmm {

/// Declarative subgroup condition on L̄_m: column ("y", a treatment or a
/// covariate name), comparator, threshold and absolute time index.
struct Predicate {
  std::string column;
  std::string op = "==";  // == != < <= > >=
  double value = 0;
  int time = 0;
  bool relative = false;  // time counts back from the anchor m (0 = m)

  static Predicate from_json(const json& j, const std::string& pointer = "");
  json to_json() const;
  std::string label() const;
  /// Checks that the column exists and lies in L̄_m.
  void validate(const PanelDataset& d, int m, const std::string& pointer = "") const;
  bool holds(const PanelDataset& d, int i, int m) const;
};

struct CounterfactualQuery {
  enum class Target { mean_never_treated, conditional_mean, observed_vs_never, lag_average, blip };
  Target target = Target::mean_never_treated;
  int k = 0;
  int m = 0;
  int lag = 1;
  /// conditional_mean: "initiated" restricts to T = m (coarse), "all" uses
  /// everyone with H_mk.
  std::string cohort = "initiated";
  std::vector<Predicate> where;
  // blip query: history values by column (arrays over times 0..m, or
  // "median" for the sample median at that time) and the action at m
  json history = json::object();
  std::vector<double> action;

  static CounterfactualQuery from_json(const json& j, const std::string& pointer = "");
  json to_json() const;
  std::string label() const;
};
std::string to_string(CounterfactualQuery::Target t);

struct DerivedEstimate {
  std::string label;
  CounterfactualQuery query;
  double estimate = 0;
  double se = 0;
  double lo = 0, hi = 0;
  double level = 0.95;
  std::string ci_method;  // "delta (approximate)", "pipeline bootstrap", "none"
  int n_used = 0;
  std::vector<std::string> warnings;
  json to_json() const;
};

/// Pure plug-in value at ψ (no inference).
double point_estimate(const CounterfactualQuery& q, const BlipModel& model, const Eigen::VectorXd& psi,
                      const PanelDataset& d);

/// Plug-in estimate with a delta-method interval built from the fit's
/// influence function (the fit must come from the same dataset).
DerivedEstimate evaluate_query(const CounterfactualQuery& q, const GEstimate& fit, const BlipModel& model,
                               const PanelDataset& d, double level = 0.95);

DerivedEstimate mean_never_treated(const GEstimate& fit, const BlipModel& model, const PanelDataset& d, int k);
DerivedEstimate conditional_mean(const GEstimate& fit, const BlipModel& model, const PanelDataset& d,
                                 const CounterfactualQuery& q);
DerivedEstimate observed_vs_never(const GEstimate& fit, const BlipModel& model, const PanelDataset& d, int k);
DerivedEstimate lag_average_effect(const GEstimate& fit, const BlipModel& model, const PanelDataset& d, int lag);
/// γ at user-supplied history values. Values outside the observed range at
/// that time raise a support warning.
DerivedEstimate blip_query(const GEstimate& fit, const BlipModel& model, const PanelDataset& d,
                           const CounterfactualQuery& q);

struct PipelineOptions {
  int B = 200;
  std::uint64_t seed = 1;
  double level = 0.95;
};

/// Refit ψ inside each bootstrap replicate and recompute every query;
/// percentile intervals. Point estimates come from `fit`.
std::vector<DerivedEstimate> pipeline_bootstrap(const std::vector<CounterfactualQuery>& queries, const GEstimate& fit,
                                                const PanelDataset& d, const BlipModel& model,
                                                const NuisanceSpec& spec, const FitOptions& options,
                                                const PipelineOptions& boot, BootstrapResult* raw = nullptr);

/// Two-stage coarse controlled direct effect of A initiated at m, with R held
/// at baseline, at horizon k.
struct CdeOptions {
  /// Stage-2 nuisance spec (JSON, evaluated on the cohort); defaults to the
  /// stage-1 spec with an intercept-only treatment model.
  json stage2_nuisance;
  FitOptions fit;
  int bootstrap = 0;  // > 0: pipeline bootstrap over both stages
  std::uint64_t seed = 1;
  double level = 0.95;
};
struct CdeResult {
  DerivedEstimate effect;
  double treated_without_r = 0;  // cohort mean of H^{R,c}_mk
  double never = 0;              // cohort mean of stage-1 H^c_mk
  GEstimate stage1, stage2;
  int cohort_size = 0;
  json to_json() const;
};
/// `stage1` is a coarse model with components {A} and initiation components
/// {A, R}; `r_component` names R.
CdeResult coarse_cde(const PanelDataset& d, const BlipModel& stage1, const NuisanceSpec& spec1,
                     const std::string& r_component, int m, int k, const CdeOptions& options = {});

/// Plot-ready CSV with columns x, estimate, lo, hi.
std::string plot_csv(const std::string& x_name, const std::vector<double>& x,
                     const std::vector<DerivedEstimate>& rows);

}  // namespace didsnmm
