#pragma once

#include <memory>
#include <string>
#include <vector>

#include "didsnmm/panel.hpp"
#include "json.hpp"

namespace didsnmm {

using json = nlohmann::json;

/// One block of basis columns evaluated on (history at m, horizon k).
class BasisTerm {
 public:
  virtual ~BasisTerm() = default;
  virtual int dim() const = 0;
  virtual void eval(const HistoryView& h, int k, double* out) const = 0;
  virtual std::vector<std::string> names() const = 0;
  virtual bool depends_on_k() const { return false; }
  virtual bool uses_outcome() const { return false; }
  virtual json to_json() const = 0;
};

/// A feature map built from declarative terms. Null history values (indices
/// before time 0) contribute 0.
///
/// JSON forms:
///   {"terms": [ {"type": "intercept"}, {"type": "covariate", "name": "L"} ]}
///   {"constructor": "deregulation", "covariate": "L", "lag": 0}
///   {"constructor": "flood", "covariate": "rate", "lag": 1, "centre": 1980}
///   [ ...terms... ]
class Basis {
 public:
  Basis() = default;
  static Basis from_json(const json& j, const PanelDataset& layout, const std::string& pointer = "");

  int dim() const { return dim_; }
  bool empty() const { return dim_ == 0; }
  void eval(const HistoryView& h, int k, double* out) const;
  Eigen::VectorXd eval(const HistoryView& h, int k) const;
  std::vector<std::string> names() const;
  bool depends_on_k() const;
  bool uses_outcome() const;
  json to_json() const;
  const json& source() const { return source_; }

 private:
  std::vector<std::shared_ptr<const BasisTerm>> terms_;
  int dim_ = 0;
  json source_;
};

}  // namespace didsnmm
