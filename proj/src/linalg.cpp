#include "didsnmm/linalg.hpp"

#include <cmath>

#include "didsnmm/random.hpp"

namespace didsnmm {

namespace {

Eigen::ColPivHouseholderQR<Eigen::MatrixXd> decompose(const Eigen::MatrixXd& X) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X.rows(), X.cols());
  qr.setThreshold(1e-10);
  qr.compute(X);
  return qr;
}

std::vector<int> aliased(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr) {
  std::vector<int> out;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index c = qr.rank(); c < perm.size(); ++c) out.push_back(perm[c]);
  return out;
}

}  // namespace

LeastSquares least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  LeastSquares out;
  if (X.cols() == 0) {
    out.coef.resize(0);
    return out;
  }
  auto qr = decompose(X);
  out.rank = static_cast<int>(qr.rank());
  out.dropped = aliased(qr);
  out.coef = qr.solve(y);
  for (int c : out.dropped) out.coef[c] = 0.0;
  return out;
}

Eigen::MatrixXd least_squares_multi(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::vector<int>* dropped) {
  if (X.cols() == 0) return Eigen::MatrixXd::Zero(0, Y.cols());
  auto qr = decompose(X);
  Eigen::MatrixXd coef = qr.solve(Y);
  const auto d = aliased(qr);
  for (int c : d) coef.row(c).setZero();
  if (dropped) *dropped = d;
  return coef;
}

LogisticFit logistic_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                int max_iter, double tol) {
  LogisticFit out;
  const Eigen::Index p = X.cols(), n = X.rows();
  out.coef = Eigen::VectorXd::Zero(p);
  if (p == 0) {
    out.converged = true;
    return out;
  }
  // Work on the non-aliased columns only.
  auto qr = decompose(X);
  out.dropped = aliased(qr);
  std::vector<int> keep;
  {
    std::vector<char> drop(p, 0);
    for (int c : out.dropped) drop[c] = 1;
    for (int c = 0; c < p; ++c)
      if (!drop[c]) keep.push_back(c);
  }
  const Eigen::Index r = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd Xk(n, r);
  for (Eigen::Index c = 0; c < r; ++c) Xk.col(c) = X.col(keep[c]);

  auto deviance = [&](const Eigen::VectorXd& eta) {
    double dev = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      // log(1 + exp(eta)) - y*eta, computed stably
      const double e = eta[i];
      const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      dev += w[i] * (softplus - y[i] * e);
    }
    return 2 * dev;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(r);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  double dev = deviance(eta);
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    Eigen::VectorXd mu(n), W(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = expit(eta[i]);
      W[i] = std::max(w[i] * mu[i] * (1 - mu[i]), 1e-300);
    }
    const Eigen::MatrixXd XtW = Xk.transpose() * W.asDiagonal();
    const Eigen::MatrixXd H = XtW * Xk;
    const Eigen::VectorXd g = Xk.transpose() * (w.cwiseProduct(y - mu));
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step = ldlt.solve(g);
    if (!step.allFinite()) break;
    double t = 1.0;
    Eigen::VectorXd nb, neta;
    double ndev = dev;
    for (int h = 0; h < 30; ++h) {
      nb = beta + t * step;
      neta = Xk * nb;
      ndev = deviance(neta);
      if (ndev <= dev + 1e-12 * std::abs(dev)) break;
      t *= 0.5;
    }
    const double change = std::abs(dev - ndev);
    beta = nb;
    eta = neta;
    const double prev = dev;
    dev = ndev;
    if (change <= tol * (std::abs(prev) + 0.1)) {
      out.converged = true;
      break;
    }
  }
  for (Eigen::Index c = 0; c < r; ++c) out.coef[keep[c]] = beta[c];

  // Separation: fitted probabilities pinned at 0/1 together with a diverging
  // standardized coefficient.
  bool pinned = false;
  for (Eigen::Index i = 0; i < n && !pinned; ++i) pinned = std::abs(eta[i]) > 25;
  if (pinned || !out.converged) {
    double worst = 0;
    for (Eigen::Index c = 0; c < r; ++c) {
      const auto col = Xk.col(c);
      const double mean = col.mean();
      double sd = std::sqrt((col.array() - mean).square().mean());
      if (sd == 0) sd = std::abs(mean);
      const double s = std::abs(beta[c]) * sd;
      if (s > 10 && s > worst) {
        worst = s;
        out.separated_column = keep[c];
      }
    }
  }
  return out;
}

Eigen::VectorXd hc0_standard_errors(const Eigen::MatrixXd& X, const Eigen::VectorXd& resid) {
  const Eigen::MatrixXd bread = (X.transpose() * X).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(X.cols(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) meat.noalias() += resid[i] * resid[i] * X.row(i).transpose() * X.row(i);
  return (bread * meat * bread).diagonal().cwiseSqrt();
}

}  // namespace didsnmm
