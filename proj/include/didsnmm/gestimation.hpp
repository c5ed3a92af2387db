#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "didsnmm/bias.hpp"
#include "didsnmm/blip.hpp"
#include "didsnmm/nuisance.hpp"

namespace didsnmm {

/// s_m(k, history, a): the instrument direction multiplying the trend
/// residual. `affine` means affine in a, so E[s | history] = s(E[A | history]).
struct SFunction {
  int dim = 0;
  bool affine = true;
  std::function<void(const HistoryView& h, int k, const Action& a, double* out)> eval;

  /// The blip's own features for linear models; for generic blips the
  /// ψ-gradient of γ at ψ = 0 (central differences).
  static SFunction default_for(const BlipModel& model);
};

enum class Method { closed_form, iterative, crossfit };
std::string to_string(Method m);
Method method_from_string(const std::string& s, const std::string& pointer = "");

struct SolverOptions {
  int max_iter = 100;
  double tol = 1e-8;        // scaled by (1 + max |Y|)
  double damping = 0.5;     // backtracking factor
  double fd_step = 1e-6;    // relative
  int starts = 5;           // random restarts for the fallback and the uniqueness probe
  bool uniqueness_probe = false;
  double root_tol = 1e-6;   // distinct-root threshold
  std::uint64_t seed = 7;
};

struct FitOptions {
  Method method = Method::closed_form;
  /// Solve each cross-fit fold in closed form when the model allows it.
  bool crossfit_closed_form = true;
  double ridge = 0.0;
  SolverOptions solver;
  std::optional<SFunction> s;
  /// Bias-adjusted transform for sensitivity analysis (coarse, binary A).
  std::optional<BiasFunction> bias;
  /// Starting value for the iterative solver (zeros by default).
  Eigen::VectorXd start;
};

struct GEstimate {
  Eigen::VectorXd psi;
  std::vector<std::string> names;
  std::string method;
  std::string flavor;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd jacobian;
  /// n x d, scaled so covariance = IFᵀIF / n².
  Eigen::MatrixXd influence;
  std::vector<Eigen::VectorXd> fold_estimates;
  double residual_norm = 0;
  int iterations = 0;
  double ridge = 0;
  std::vector<std::string> warnings;
  json diagnostics = json::object();

  Eigen::VectorXd se() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
  /// Wald interval from the influence-function covariance.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> wald_ci(double level = 0.95) const;
  json to_json() const;
};

/// Dispatch on options.method.
GEstimate fit(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec, const FitOptions& options = {});
GEstimate closed_form_fit(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec,
                          const FitOptions& options = {});
GEstimate solve_iterative(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec,
                          const FitOptions& options = {});
GEstimate crossfit_estimate(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec,
                            const FitOptions& options = {});

/// Per-subject estimating-function values (n x d) at ψ, with nuisances fit
/// on the full sample (or the given folds) and the trend refit at ψ.
Eigen::MatrixXd evaluate_U(const PanelDataset& d, const BlipModel& model, const Eigen::VectorXd& psi,
                           const NuisanceSpec& spec, const FitOptions& options = {},
                           const FoldAssignment* folds = nullptr);

/// Fitted trend v̂_m(k, history; γ(ψ)) for every at-risk (i, m, k).
struct TrendFit {
  std::vector<std::pair<int, int>> pairs;
  std::vector<TrendDesign::Row> rows;
  Eigen::VectorXd fitted;
  Eigen::VectorXd response;
  json audit;
  /// NaN when (i, m, k) is not an at-risk row.
  double predict(int i, int m, int k) const;
};
TrendFit fit_trend_model(const PanelDataset& d, const BlipModel& model, const Eigen::VectorXd& psi,
                         const NuisanceSpec& spec, const FoldAssignment& folds, const FitOptions& options = {});

struct BootstrapFailure {
  int replicate;
  std::string kind;
  std::string message;
};

struct BootstrapResult {
  Eigen::MatrixXd replicates;  // successful replicates x d
  Eigen::VectorXd estimate;    // full-sample estimate the normal CI is centred on
  Eigen::VectorXd lo, hi;      // percentile
  Eigen::VectorXd normal_lo, normal_hi;
  Eigen::VectorXd se;
  std::vector<BootstrapFailure> failures;
  int B = 0;
  std::uint64_t seed = 0;
  json to_json() const;
};

using FitClosure = std::function<Eigen::VectorXd(const PanelDataset& resampled)>;

/// Subject-level nonparametric bootstrap. Replicate b resamples with its own
/// seed stream, so results do not depend on the worker count.
BootstrapResult bootstrap(const PanelDataset& d, const FitClosure& closure, int B, std::uint64_t seed,
                          const Eigen::VectorXd& estimate = {});

/// Percentile interval from the order statistics floor(0.025 B) and
/// ceil(0.975 B) (1-based) of the sorted draws.
std::pair<double, double> percentile_interval(std::vector<double> draws, double level = 0.95);

}  // namespace didsnmm
