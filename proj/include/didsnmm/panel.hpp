#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace didsnmm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Treatment value at one time point, one entry per treatment component.
/// Capacity is fixed so that hot loops never allocate.
using Action = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 8, 1>;

bool is_baseline(const Action& a);

/// Column roles for CSV ingestion. Empty role names mean "use the canonical
/// column names" (subject_id, time, y, a_<name>, z_<name>).
struct CsvSchema {
  std::string subject_id = "subject_id";
  std::string time = "time";
  std::string outcome = "y";
  // role name -> CSV column
  std::vector<std::pair<std::string, std::string>> treatments;
  std::vector<std::pair<std::string, std::string>> covariates;
  bool infer_prefixed = true;  // pick up a_* and z_* columns when the lists are empty
};

class PanelDataset {
 public:
  PanelDataset() = default;
  PanelDataset(int n_subjects, int K, std::vector<std::string> treatment_names,
               std::vector<std::string> covariate_names);

  int n() const { return n_; }
  int K() const { return K_; }
  int periods() const { return K_ + 1; }
  int q() const { return static_cast<int>(treatment_names_.size()); }
  int p() const { return static_cast<int>(covariate_names_.size()); }

  double y(int i, int m) const { return Y_(i, m); }
  double a(int i, int c, int m) const { return A_(i, c * periods() + m); }
  double z(int i, int c, int m) const { return Z_(i, c * periods() + m); }
  void set_y(int i, int m, double v) { Y_(i, m) = v; }
  void set_a(int i, int c, int m, double v) { A_(i, c * periods() + m) = v; }
  void set_z(int i, int c, int m, double v) { Z_(i, c * periods() + m) = v; }

  Action action(int i, int m) const;

  const std::vector<std::string>& treatment_names() const { return treatment_names_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  int treatment_index(const std::string& name) const;  // -1 if absent
  int covariate_index(const std::string& name) const;

  /// Calendar label of time index m (defaults to m itself).
  double time_label(int m) const { return labels_[m]; }
  const std::vector<double>& time_labels() const { return labels_; }
  void set_time_labels(std::vector<double> labels);

  const std::string& subject_id(int i) const { return ids_[i]; }
  void set_subject_id(int i, std::string id) { ids_[i] = std::move(id); }

  /// Index of the subject this row was copied from (identity unless the
  /// dataset came from subset()); resampling keeps duplicates grouped by it.
  int source(int i) const { return source_[i]; }

  /// Rows `idx` in order; duplicates allowed.
  PanelDataset subset(const std::vector<int>& idx) const;

  double max_abs_outcome() const;

 private:
  int n_ = 0;
  int K_ = 0;
  RowMatrix Y_, A_, Z_;
  std::vector<std::string> treatment_names_, covariate_names_;
  std::vector<double> labels_;
  std::vector<std::string> ids_;
  std::vector<int> source_;
};

/// Read-only view of subject i's history at time m. The L̄_m accessors never
/// reach Y_m or A_m; the current action is exposed separately.
class HistoryView {
 public:
  HistoryView(const PanelDataset& d, int i, int m) : d_(&d), i_(i), m_(m) {}

  int subject() const { return i_; }
  int time() const { return m_; }
  double time_label() const { return d_->time_label(m_); }
  const PanelDataset& data() const { return *d_; }

  /// Z_{m-lag}, lag >= 0; nullopt when the index falls before time 0.
  std::optional<double> covariate(int c, int lag = 0) const;
  /// Y_{m-lag}, lag >= 1.
  std::optional<double> outcome_lag(int lag) const;
  /// A_{m-lag} for component c, lag >= 1.
  std::optional<double> treatment_lag(int c, int lag) const;
  /// Σ_{j<m} A_j and Σ_{j<m} j·A_j for component c.
  double treatment_count(int c) const;
  double treatment_time_sum(int c) const;

  /// A_m (not part of L̄_m).
  Action action() const { return d_->action(i_, m_); }

 private:
  const PanelDataset* d_;
  int i_;
  int m_;
};

/// First departure from baseline. NEVER is a separate state, not a number.
class InitiationTime {
 public:
  static InitiationTime never() { return InitiationTime(); }
  static InitiationTime at(int m, Action value) { return InitiationTime(m, std::move(value)); }

  bool is_never() const { return !time_.has_value(); }
  int time() const;  // throws when never
  const Action& value() const { return value_; }
  /// T >= m (true for NEVER).
  bool at_or_after(int m) const { return is_never() || *time_ >= m; }
  bool equals(int m) const { return !is_never() && *time_ == m; }
  bool before(int m) const { return !is_never() && *time_ < m; }

 private:
  InitiationTime() = default;
  InitiationTime(int m, Action v) : time_(m), value_(std::move(v)) {}
  std::optional<int> time_;
  Action value_;
};

/// T for subject i using the listed treatment components (all when empty).
InitiationTime initiation_time(const PanelDataset& d, int i, const std::vector<int>& components = {});
bool is_staggered_adoption(const PanelDataset& d, const std::vector<int>& components = {});
/// Histogram keyed by calendar label; NEVER counted under key "never".
std::map<std::string, int> initiation_histogram(const PanelDataset& d,
                                                const std::vector<int>& components = {});

PanelDataset load_csv(const std::string& path, const CsvSchema& schema = {});
PanelDataset parse_csv(const std::string& text, const CsvSchema& schema = {});
std::string to_csv(const PanelDataset& d);
void write_csv(const PanelDataset& d, const std::string& path);

/// Shortest decimal that round-trips to the same double.
std::string format_number(double v);

}  // namespace didsnmm
