#pragma once

#include <optional>
#include <string>
#include <vector>

#include "didsnmm/bias.hpp"
#include "didsnmm/derived.hpp"
#include "didsnmm/gestimation.hpp"

namespace didsnmm {

/// Coarse g-estimate with the bias-adjusted transform. Binary treatment only.
GEstimate sensitivity_fit(const PanelDataset& d, const BlipModel& model, const BiasFunction& c,
                          const NuisanceSpec& spec, const FitOptions& options = {});

/// What a sensitivity curve tracks: a ψ coordinate or a derived query.
struct SensitivityTarget {
  std::optional<int> psi_index;
  std::optional<CounterfactualQuery> query;
  std::string label;

  static SensitivityTarget psi(int j, std::string label = "");
  static SensitivityTarget derived(CounterfactualQuery q);
  /// "psi:<name or index>" or a query object.
  static SensitivityTarget from_json(const json& j, const BlipModel& model, const std::string& pointer = "");
  DerivedEstimate evaluate(const GEstimate& fit, const BlipModel& model, const PanelDataset& d) const;
};

struct SensitivityPoint {
  double c0 = 0;
  bool ok = false;
  std::string error;
  GEstimate fit;
  std::vector<DerivedEstimate> targets;
};

struct Breakdown {
  std::string target;
  bool found = false;
  double c0 = 0;  // smallest |c0| whose interval contains 0 (signed)
  std::string note;
  int evaluations = 0;
};

struct SensitivityCurve {
  BiasFunction family;
  std::vector<SensitivityPoint> points;  // grid order
  std::optional<double> affinity_residual;
  std::vector<Breakdown> breakdown;
  json to_json() const;
  /// Plot-ready rows: c0, target, estimate, lo, hi.
  std::string csv() const;
};

struct SensitivityOptions {
  FitOptions fit;
  bool breakdown = true;
  double breakdown_tol = 1e-4;
  double min_success = 0.8;
};

/// One adjusted fit per grid value of the family's leading parameter c0.
/// Grid points run as independent work units. Throws EstimationError when
/// fewer than 80% of the points succeed.
SensitivityCurve sensitivity_grid(const PanelDataset& d, const BlipModel& model, const BiasFunction& family,
                                  const std::vector<double>& grid, const std::vector<SensitivityTarget>& targets,
                                  const NuisanceSpec& spec, const SensitivityOptions& options = {});

/// Smallest |c0| within [lo, hi] (which must contain 0) at which the target's
/// interval contains 0. Each side of 0 is scanned at `scan_points` evenly
/// spaced values, then the first bracket is bisected to `tol`. A covering
/// window narrower than the scan spacing can be missed.
Breakdown find_breakdown(const PanelDataset& d, const BlipModel& model, const BiasFunction& family,
                         const SensitivityTarget& target, double lo, double hi, const NuisanceSpec& spec,
                         const FitOptions& options = {}, double tol = 1e-4, int scan_points = 64);

}  // namespace didsnmm
