#pragma once

#include <functional>
#include <string>
#include <vector>

#include "didsnmm/basis.hpp"
#include "didsnmm/panel.hpp"

namespace didsnmm {

enum class Flavor { standard, coarse, multiplicative, regime };

std::string to_string(Flavor f);
Flavor flavor_from_string(const std::string& s, const std::string& pointer = "");

/// γ_mk(h, a; ψ) for models outside the linear family. Must return 0 when
/// a is the baseline.
using BlipEvaluator = std::function<double(const HistoryView& h, int k, const Action& a, const Eigen::VectorXd& psi)>;

/// Decision rule g_m(L̄_m, Ā_{m-1}) used by regime blips with a fixed
/// reference regime.
using RegimeRule = std::function<Action(const HistoryView& h)>;

class BlipModel {
 public:
  static BlipModel from_json(const json& j, const PanelDataset& layout, const std::string& pointer = "");
  json to_json() const;

  Flavor flavor = Flavor::coarse;
  Basis basis;
  /// Treatment components whose values enter γ (blocks a_c·R_mk).
  std::vector<int> components;
  /// Components whose first departure from baseline defines T (coarse).
  std::vector<int> initiation_components;
  int min_anchor = 0;
  int n_treatments = 1;

  // Regime flavor: finite action grid and utility weights τ_0..τ_K. When
  // `reference` is empty the reference regime is the optimal one.
  std::vector<Action> action_grid;
  std::vector<double> utility;
  RegimeRule reference;

  // Generic (nonlinear) evaluator; disables the closed form.
  BlipEvaluator generic;
  int generic_dim = 0;
  std::vector<std::string> generic_names;

  int dim() const;
  bool linear() const { return !generic; }
  std::vector<std::string> parameter_names() const;

  /// Linear features F_mk(h, a) with γ = ψᵀF. Only for linear models.
  void features(const HistoryView& h, int k, const Action& a, double* out) const;
  Eigen::VectorXd features(const HistoryView& h, int k, const Action& a) const;

  /// γ_mk(h, a; ψ). Zero at the baseline action for every ψ.
  double eval(const HistoryView& h, int k, const Action& a, const Eigen::VectorXd& psi) const;

  /// Action restricted to the model's components (others zeroed), used for
  /// checking the baseline.
  bool acts(const Action& a) const;

  void validate(const PanelDataset& d) const;
};

/// γ evaluated at subject i's observed history and action at time m.
double eval_blip(const BlipModel& model, const Eigen::VectorXd& psi, const HistoryView& h, int m, int k);

/// Blipped-down outcomes. Each returns Y_m when k == m.
double blip_down_standard(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m, int k);
double blip_down_coarse(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m, int k);
double blip_down_multiplicative(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m,
                                int k);
double blip_down_regime(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m, int k);
/// Dispatch on model.flavor.
double blip_down(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m, int k);

/// Action maximizing Σ_{r>m} τ_r γ_mr(h, a; ψ) over the grid; ties go to the
/// earliest (smallest) grid entry.
Action optimal_action(const BlipModel& model, const Eigen::VectorXd& psi, const HistoryView& h);

class BiasFunction;
/// Pr(A_j = 1 | L̄_j, T >= j) for subject i at time j.
using PropensityFn = std::function<double(int i, int j)>;

/// H^{c,a}_mk: the coarse transform minus
/// Σ_{j=m}^{k} Pr(1-A_j|·)(2A_j-1) c(L̄_j, k) 1{T>=j}.
double bias_adjusted_coarse(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d, int i, int m,
                            int k, const BiasFunction& c, const PropensityFn& propensity);
/// Only the adjustment sum (ψ-free), shared with the estimating equations.
double bias_adjustment(const BlipModel& model, const PanelDataset& d, int i, int m, int k, const BiasFunction& c,
                       const PropensityFn& propensity);

}  // namespace didsnmm
