#pragma once

#include <string>
#include <vector>

#include "didsnmm/derived.hpp"
#include "didsnmm/gestimation.hpp"

namespace didsnmm {

/// Report text attached to every optimal-regime output: the premises the
/// estimate rests on, which the data cannot check.
std::string regime_assumptions();

struct DecisionRow {
  int m = 0;
  int count = 0;          // subjects whose observed history falls in this row
  std::string example;    // subject id of the first such subject
  json history;           // basis values at (m, k) for k > m, by name
  std::vector<double> scores;  // Σ_{k>m} τ_k γ_mk(h, a) per grid action
  int action = 0;         // index into the grid
};

struct RegimeFit {
  GEstimate estimate;
  std::vector<Action> grid;
  std::vector<double> utility;
  std::vector<DecisionRow> table;
  bool table_truncated = false;
  DerivedEstimate value;  // Σ_k τ_k P_n[H_0k(ψ̂)]
  std::string assumptions;
  json to_json() const;
};

struct RegimeOptions {
  FitOptions fit;  // closed form is switched to iterative (the argmax is not linear in psi)
  int min_starts = 5;
  int max_table_rows = 2000;
  int bootstrap = 0;  // > 0: pipeline bootstrap CI for the value
  std::uint64_t seed = 1;
};

/// g-estimate ψ for the optimal-regime blip (argmax re-evaluated at every
/// candidate ψ; multi-start with a uniqueness probe), the implied rule as a
/// decision table over observed histories, and the value estimate.
RegimeFit fit_optimal_regime(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec,
                             const RegimeOptions& options = {});

/// Ê[Y(g)] = Σ_k τ_k P_n[H_0k(ψ̂)] with a delta interval from the fit's
/// influence function. `utility` empty: the model's weights.
DerivedEstimate regime_value(const GEstimate& fit, const BlipModel& model, const PanelDataset& d,
                             const std::vector<double>& utility = {});

/// Decision table over the distinct basis patterns observed in the data.
std::vector<DecisionRow> decision_table(const BlipModel& model, const Eigen::VectorXd& psi, const PanelDataset& d,
                                        int max_rows, bool* truncated = nullptr);

}  // namespace didsnmm
