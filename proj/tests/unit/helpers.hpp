#pragma once

#include <doctest.h>

#include <Eigen/Dense>
#include <cstring>

#include "didsnmm/derived.hpp"
#include "didsnmm/simulation.hpp"

namespace testutil {

using namespace didsnmm;

inline bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

struct Setup {
  DgpConfig cfg;
  PanelDataset data;
  BlipModel model;
  NuisanceSpec spec;
};

inline Setup setup(const std::string& name, int n, std::uint64_t seed) {
  Setup s;
  s.cfg = gallery(name);
  s.data = simulate_panel(s.cfg, n, seed);
  s.model = BlipModel::from_json(s.cfg.analysis_model, s.data);
  s.spec = NuisanceSpec::from_json(s.cfg.analysis_nuisance, s.data);
  return s;
}

inline int param(const BlipModel& m, const std::string& name) {
  const auto names = m.parameter_names();
  for (size_t j = 0; j < names.size(); ++j)
    if (names[j] == name) return static_cast<int>(j);
  FAIL("no parameter " << name);
  return -1;
}

// plain OLS: coefficient on column `col` and its classical standard error
inline std::pair<double, double> ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int col) {
  const Eigen::MatrixXd XtX = X.transpose() * X;
  const Eigen::VectorXd b = XtX.ldlt().solve(X.transpose() * y);
  const Eigen::VectorXd r = y - X * b;
  const double s2 = r.squaredNorm() / static_cast<double>(X.rows() - X.cols());
  const Eigen::MatrixXd inv = XtX.ldlt().solve(Eigen::MatrixXd::Identity(X.cols(), X.cols()));
  return {b[col], std::sqrt(s2 * inv(col, col))};
}

}  // namespace testutil
