#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "didsnmm/basis.hpp"
#include "didsnmm/linalg.hpp"
#include "didsnmm/panel.hpp"

namespace didsnmm {

struct FoldAssignment {
  int n_folds = 1;
  std::uint64_t seed = 0;
  std::vector<int> fold;  // subject -> fold

  std::vector<int> members(int f) const;
  std::vector<int> sizes() const;
  json to_json() const;
};

/// Balanced random partition of n subjects, deterministic in seed.
FoldAssignment split_folds(int n, int n_folds, std::uint64_t seed);
/// Same, but rows copied from one source subject (bootstrap duplicates)
/// always share a fold.
FoldAssignment split_folds(const PanelDataset& d, int n_folds, std::uint64_t seed);
/// Everyone in fold 0; models train and predict on the full sample.
FoldAssignment single_fold(int n);

/// Learner hook: a trainer takes (design, response, weights) and returns a
/// predictor over design rows.
struct Predictor {
  std::function<double(const double* x)> predict;
  json audit;
};
using Trainer = std::function<Predictor(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w)>;

void register_learner(const std::string& name, Trainer trainer);
bool has_learner(const std::string& name);

enum class Conditioning { full_history, at_risk };

struct TreatmentSpec {
  std::string family = "auto";  // auto | saturated | linear | logistic | <registered learner>
  Basis basis;
  bool stratify_time = true;
};

struct TrendSpec {
  std::string family = "linear";  // linear | <registered learner>
  Basis basis;
  bool stratify_pair = true;
};

struct NuisanceSpec {
  TreatmentSpec treatment;
  TrendSpec trend;
  int folds = 2;
  std::uint64_t seed = 1;

  /// Missing bases default to an intercept.
  static NuisanceSpec from_json(const json& j, const PanelDataset& layout, const std::string& pointer = "");
  json to_json() const;
};

/// Fitted E[A_{c,m} | history] (at-risk or full-history conditioning).
/// Each subject's predictions come from the model trained without its fold.
class TreatmentFit {
 public:
  TreatmentFit() = default;
  TreatmentFit(int n, int q, int K) : q_(q), K_(K), pred_(RowMatrix::Constant(n, q * (K + 1), std::nan(""))) {}

  /// NaN when the subject was not at risk or time m was flagged.
  double mean(int i, int c, int m) const { return pred_(i, c * (K_ + 1) + m); }
  void set_mean(int i, int c, int m, double v) { pred_(i, c * (K_ + 1) + m) = v; }

  FoldAssignment folds;
  Conditioning conditioning = Conditioning::full_history;
  std::vector<int> components;
  std::vector<int> flagged_times;  // no at-risk training rows
  json audit = json::array();

 private:
  int q_ = 0;
  int K_ = 0;
  RowMatrix pred_;
};

/// Treatment model at times min_anchor..last_time (default K-1) for the
/// listed components.
TreatmentFit fit_treatment_model(const PanelDataset& d, const NuisanceSpec& spec, const FoldAssignment& folds,
                                 Conditioning conditioning, const std::vector<int>& components,
                                 const std::vector<int>& initiation_components, int min_anchor = 0,
                                 int last_time = -1);

/// (m, k) pairs with min_anchor <= m < k <= K in anchor-major order.
std::vector<std::pair<int, int>> anchor_pairs(int K, int min_anchor = 0);

/// Rows (i, m, k) that enter the trend regression and the estimating
/// equations, with their trend features D_mk. Regressions are fitted per
/// (fold complement, stratum) so every prediction is out of fold.
class TrendDesign {
 public:
  struct Row {
    int i;
    int pair;
    int fold;
    int stratum;
  };

  TrendDesign(const PanelDataset& d, const TrendSpec& spec, const FoldAssignment& folds,
              const std::vector<std::pair<int, int>>& pairs, const std::vector<char>& at_risk);

  const std::vector<Row>& rows() const { return rows_; }
  int dim() const { return p_; }
  /// False for rows whose training stratum was empty (excluded downstream).
  bool valid(size_t r) const { return valid_[r]; }
  const std::vector<std::string>& flagged() const { return flagged_; }

  /// Out-of-fold fitted values of each response column on D.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& response) const;
  Eigen::VectorXd predict(const Eigen::VectorXd& response) const;
  /// Coefficient tables for audit, fitted to the given response.
  json audit(const Eigen::VectorXd& response) const;
  bool linear() const { return learner_.empty(); }

 private:
  struct Block {
    std::vector<int> train;  // row indices
    std::vector<int> eval;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
    Eigen::MatrixXd X;
    bool ok = false;
    int fold, stratum;
  };
  std::vector<Row> rows_;
  RowMatrix D_;
  std::vector<char> valid_;
  std::vector<Block> blocks_;
  std::vector<std::string> flagged_;
  std::vector<std::string> names_;
  std::vector<std::pair<int, int>> pairs_;
  std::string learner_;
  int p_ = 0;
  int n_strata_ = 1;
};

/// Subjects at risk at anchor m: T >= m for at-risk conditioning, everyone
/// otherwise. Layout n x (K+1).
std::vector<char> risk_set(const PanelDataset& d, Conditioning conditioning,
                           const std::vector<int>& initiation_components);

}  // namespace didsnmm
