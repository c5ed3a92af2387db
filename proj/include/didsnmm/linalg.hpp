#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace didsnmm {

/// Least squares via column-pivoted QR. Aliased columns (exact linear
/// dependence) get coefficient 0 and are listed in `dropped`; callers decide
/// whether too few rows is an error.
struct LeastSquares {
  Eigen::VectorXd coef;
  std::vector<int> dropped;
  int rank = 0;
};

LeastSquares least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
/// Same decomposition applied to several right-hand sides at once.
Eigen::MatrixXd least_squares_multi(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::vector<int>* dropped = nullptr);

struct LogisticFit {
  Eigen::VectorXd coef;
  std::vector<int> dropped;
  int iterations = 0;
  bool converged = false;
  int separated_column = -1;  // >= 0 when (quasi-)complete separation was detected
};

/// Binary logistic regression by IRLS with step halving.
LogisticFit logistic_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                int max_iter = 50, double tol = 1e-10);

/// Heteroskedasticity-robust (HC0) standard errors for an OLS fit.
Eigen::VectorXd hc0_standard_errors(const Eigen::MatrixXd& X, const Eigen::VectorXd& resid);

}  // namespace didsnmm
