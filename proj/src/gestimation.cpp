#include "didsnmm/gestimation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "didsnmm/error.hpp"
#include "didsnmm/parallel.hpp"
#include "didsnmm/random.hpp"

namespace didsnmm {

std::string to_string(Method m) {
  switch (m) {
    case Method::closed_form: return "closed-form";
    case Method::iterative: return "iterative";
    case Method::crossfit: return "crossfit";
  }
  return "?";
}

Method method_from_string(const std::string& s, const std::string& pointer) {
  if (s == "closed-form" || s == "closed_form") return Method::closed_form;
  if (s == "iterative") return Method::iterative;
  if (s == "crossfit" || s == "cross-fit") return Method::crossfit;
  throw ConfigError("unknown method '" + s + "' (expected closed-form, iterative or crossfit)", pointer);
}

SFunction SFunction::default_for(const BlipModel& model) {
  SFunction s;
  s.dim = model.dim();
  if (model.linear()) {
    s.affine = true;
    s.eval = [&model](const HistoryView& h, int k, const Action& a, double* out) { model.features(h, k, a, out); };
    return s;
  }
  s.affine = false;
  s.eval = [&model](const HistoryView& h, int k, const Action& a, double* out) {
    const int d = model.dim();
    Eigen::VectorXd psi = Eigen::VectorXd::Zero(d);
    for (int t = 0; t < d; ++t) {
      const double e = 1e-5;
      psi[t] = e;
      const double up = model.eval(h, k, a, psi);
      psi[t] = -e;
      const double dn = model.eval(h, k, a, psi);
      psi[t] = 0;
      out[t] = (up - dn) / (2 * e);
    }
  };
  return s;
}

namespace {

Conditioning conditioning_for(const BlipModel& model) {
  return model.flavor == Flavor::coarse ? Conditioning::at_risk : Conditioning::full_history;
}

bool closed_form_possible(const BlipModel& model, const NuisanceSpec& spec, std::string* why) {
  auto no = [&](const std::string& w) {
    if (why) *why = w;
    return false;
  };
  if (!model.linear()) return no("the blip model is not linear in psi");
  if (model.flavor == Flavor::multiplicative) return no("multiplicative blips are nonlinear in psi");
  if (model.flavor == Flavor::regime && !model.reference)
    return no("optimal-regime blips depend on psi through the argmax");
  if (spec.trend.family != "linear") return no("the trend model is not linear");
  return true;
}

// All quantities needed to evaluate the estimating equations for one fold
// assignment: nuisance fits, at-risk rows, centred instruments.
class Problem {
 public:
  Problem(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec, const FitOptions& opt,
          const FoldAssignment& folds)
      : d_(d), model_(model), opt_(opt), folds_(folds) {
    model.validate(d);
    dim_ = model.dim();
    s_ = opt.s ? *opt.s : SFunction::default_for(model);
    if (s_.dim != dim_) throw ConfigError("s-function dimension " + std::to_string(s_.dim) + " does not match d=" +
                                          std::to_string(dim_));
    if (opt.bias && model.flavor != Flavor::coarse)
      throw ConfigError("bias-adjusted fits are only defined for coarse models");
    biased_ = opt.bias && !opt.bias->is_zero();
    const Conditioning cond = conditioning_for(model);
    pairs_ = anchor_pairs(d.K(), model.min_anchor);
    if (pairs_.empty()) throw DataError("no (m, k) pairs: need K > min_anchor");
    risk_ = risk_set(d, cond, model.initiation_components);
    pi_ = fit_treatment_model(d, spec, folds, cond, model.components, model.initiation_components, model.min_anchor,
                              biased_ ? d.K() : -1);
    trend_ = std::make_unique<TrendDesign>(d, spec.trend, folds, pairs_, risk_);
    const auto& rows = trend_->rows();
    ok_.assign(rows.size(), 0);
    S_.resize(rows.size(), dim_);
    adjust_ = Eigen::VectorXd::Zero(rows.size());
    std::vector<std::string> errors(rows.size());
    parallel_for(rows.size(), [&](size_t r) {
      try {
        build_row(r);
      } catch (const std::exception& e) {
        errors[r] = e.what();
      }
    });
    for (size_t r = 0; r < rows.size(); ++r)
      if (!errors[r].empty()) throw EstimationError(errors[r]);
    for (auto& f : trend_->flagged()) warnings_.push_back("trend stratum " + f + " had no training rows; excluded");
    for (int m : pi_.flagged_times)
      warnings_.push_back("no at-risk subjects to train the treatment model at m=" + std::to_string(m) + "; excluded");
    fold_n_ = folds.sizes();
  }

  int dim() const { return dim_; }
  int n_folds() const { return folds_.n_folds; }
  int fold_size(int f) const { return fold_n_[f]; }
  const FoldAssignment& folds() const { return folds_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const TreatmentFit& treatment() const { return pi_; }
  const TrendDesign& trend() const { return *trend_; }
  const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }

  // H_mk − H_{m,k−1} at ψ for every row, through the blip-down transforms.
  Eigen::VectorXd delta_H(const Eigen::VectorXd& psi) const {
    const auto& rows = trend_->rows();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(rows.size());
    std::vector<std::string> errors(rows.size());
    parallel_for(rows.size(), [&](size_t r) {
      if (!trend_->valid(r)) return;
      const auto [m, k] = pairs_[rows[r].pair];
      const int i = rows[r].i;
      try {
        double hk = blip_down(model_, psi, d_, i, m, k);
        if (biased_) hk -= adjust_[r];
        out[r] = hk - blip_down(model_, psi, d_, i, m, k - 1);
      } catch (const std::exception& e) {
        errors[r] = e.what();
      }
    });
    for (auto& e : errors)
      if (!e.empty()) throw EstimationError(e);
    return out;
  }

  // ΔH(ψ) = ΔY − Wψ for models linear in ψ, assembled from the features.
  void linear_pieces(Eigen::VectorXd& dY, Eigen::MatrixXd& W) const {
    const auto& rows = trend_->rows();
    dY = Eigen::VectorXd::Zero(rows.size());
    W = Eigen::MatrixXd::Zero(rows.size(), dim_);
    parallel_for(rows.size(), [&](size_t r) {
      if (!trend_->valid(r)) return;
      const auto [m, k] = pairs_[rows[r].pair];
      const int i = rows[r].i;
      dY[r] = d_.y(i, k) - d_.y(i, k - 1);
      if (biased_) dY[r] -= adjust_[r];
      Eigen::VectorXd w = Eigen::VectorXd::Zero(dim_);
      auto add_terms = [&](int horizon, double sign) {
        if (model_.flavor == Flavor::coarse) {
          const InitiationTime T = initiation_time(d_, i, model_.initiation_components);
          if (!T.is_never() && T.time() >= m && T.time() < horizon) {
            HistoryView h(d_, i, T.time());
            w += sign * model_.features(h, horizon, T.value());
          }
          return;
        }
        for (int j = m; j < horizon; ++j) {
          HistoryView h(d_, i, j);
          w += sign * model_.features(h, horizon, h.action());
          if (model_.flavor == Flavor::regime) w -= sign * model_.features(h, horizon, model_.reference(h));
        }
      };
      add_terms(k, 1.0);
      add_terms(k - 1, -1.0);
      W.row(r) = w.transpose();
    });
  }

  // Per-subject U_i from trend residuals of every row.
  Eigen::MatrixXd subject_U(const Eigen::VectorXd& resid) const {
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(d_.n(), dim_);
    const auto& rows = trend_->rows();
    for (size_t r = 0; r < rows.size(); ++r)
      if (ok_[r]) U.row(rows[r].i) += resid[r] * S_.row(r);
    return U;
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& psi) const {
    const Eigen::VectorXd dH = delta_H(psi);
    return dH - trend_->predict(dH);
  }

  // Mean of U over the subjects of fold f (all subjects when f < 0).
  Eigen::VectorXd mean_U(const Eigen::MatrixXd& U, int f) const {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(dim_);
    int cnt = 0;
    for (int i = 0; i < d_.n(); ++i)
      if (f < 0 || folds_.fold[i] == f) {
        s += U.row(i).transpose();
        ++cnt;
      }
    return cnt ? Eigen::VectorXd(s / cnt) : s;
  }

  // Linear system pieces for fold f: M ψ = b (sums over the fold's rows).
  void normal_equations(const Eigen::VectorXd& dY, const Eigen::MatrixXd& W, int f, Eigen::MatrixXd& M,
                        Eigen::VectorXd& b, Eigen::VectorXd& Yt, Eigen::MatrixXd& Wt) const {
    Eigen::MatrixXd R(dY.size(), 1 + dim_);
    R.col(0) = dY;
    R.rightCols(dim_) = W;
    const Eigen::MatrixXd P = trend_->predict(R);
    Yt = dY - P.col(0);
    Wt = W - P.rightCols(dim_);
    M = Eigen::MatrixXd::Zero(dim_, dim_);
    b = Eigen::VectorXd::Zero(dim_);
    const auto& rows = trend_->rows();
    for (size_t r = 0; r < rows.size(); ++r) {
      if (!ok_[r] || (f >= 0 && rows[r].fold != f)) continue;
      b += Yt[r] * S_.row(r).transpose();
      M += S_.row(r).transpose() * Wt.row(r);
    }
  }

  bool ok(size_t r) const { return ok_[r]; }
  double adjustment(size_t r) const { return adjust_[r]; }

 private:
  void build_row(size_t r) {
    const auto& row = trend_->rows()[r];
    if (!trend_->valid(r)) return;
    const auto [m, k] = pairs_[row.pair];
    const int i = row.i;
    for (int c : model_.components)
      if (std::isnan(pi_.mean(i, c, m))) return;
    HistoryView h(d_, i, m);
    const Action a = h.action();
    Eigen::VectorXd s1(dim_), s0(dim_);
    s_.eval(h, k, a, s1.data());
    if (s_.affine) {
      Action e = a;
      for (int c : model_.components) e[c] = pi_.mean(i, c, m);
      s_.eval(h, k, e, s0.data());
    } else {
      if (model_.components.size() != 1)
        throw ConfigError("a non-affine s-function needs a single binary treatment component");
      const int c = model_.components[0];
      if (a[c] != 0.0 && a[c] != 1.0) throw ConfigError("a non-affine s-function needs a binary treatment");
      const double p = pi_.mean(i, c, m);
      Action a1 = a, a0 = a;
      a1[c] = 1;
      a0[c] = 0;
      Eigen::VectorXd v1(dim_), v0(dim_);
      s_.eval(h, k, a1, v1.data());
      s_.eval(h, k, a0, v0.data());
      s0 = p * v1 + (1 - p) * v0;
    }
    S_.row(r) = (s1 - s0).transpose();
    if (biased_) {
      const int comp = model_.components[0];
      PropensityFn prop = [&](int ii, int j) {
        const double p = pi_.mean(ii, comp, j);
        if (std::isnan(p))
          throw EstimationError("bias adjustment needs a treatment-model prediction at m=" + std::to_string(j));
        return p;
      };
      adjust_[r] = bias_adjustment(model_, d_, i, m, k, *opt_.bias, prop);
    }
    ok_[r] = 1;
  }

  const PanelDataset& d_;
  const BlipModel& model_;
  const FitOptions& opt_;
  FoldAssignment folds_;
  int dim_ = 0;
  SFunction s_;
  bool biased_ = false;
  std::vector<std::pair<int, int>> pairs_;
  std::vector<char> risk_;
  TreatmentFit pi_;
  std::unique_ptr<TrendDesign> trend_;
  std::vector<char> ok_;
  RowMatrix S_;
  Eigen::VectorXd adjust_;
  std::vector<std::string> warnings_;
  std::vector<int> fold_n_;
};

double tolerance(const PanelDataset& d, const SolverOptions& o) { return o.tol * (1.0 + d.max_abs_outcome()); }

std::string describe_null_space(const Eigen::MatrixXd& A, const std::vector<std::string>& names) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double top = sv.size() ? sv[0] : 0.0;
  std::vector<std::string> involved;
  int rank = 0;
  for (Eigen::Index t = 0; t < sv.size(); ++t)
    if (sv[t] > 1e-10 * std::max(top, 1e-300)) ++rank;
  for (Eigen::Index t = rank; t < sv.size(); ++t)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      if (std::abs(svd.matrixV()(j, t)) > 0.1 &&
          std::find(involved.begin(), involved.end(), names[j]) == involved.end())
        involved.push_back(names[j]);
  std::string out = "rank " + std::to_string(rank) + " of " + std::to_string(A.cols());
  if (!involved.empty()) {
    out += "; unidentified directions involve";
    for (auto& n : involved) out += " " + n;
  }
  return out;
}

bool singular(const Eigen::MatrixXd& A) {
  if (A.size() == 0) return true;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto& sv = svd.singularValues();
  return !(sv[sv.size() - 1] > 1e-10 * sv[0]) || !A.allFinite();
}

Eigen::VectorXd solve_square(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  return A.fullPivLu().solve(b);
}

// Influence values −J⁻¹U_i for the subjects of fold f (rows of others zero).
Eigen::MatrixXd influence_rows(const Eigen::MatrixXd& U, const Eigen::MatrixXd& J, const FoldAssignment& folds,
                               int f) {
  const Eigen::MatrixXd Jinv = J.fullPivLu().inverse();
  Eigen::MatrixXd IF = Eigen::MatrixXd::Zero(U.rows(), U.cols());
  for (Eigen::Index i = 0; i < U.rows(); ++i)
    if (f < 0 || folds.fold[i] == f) IF.row(i) = -(Jinv * U.row(i).transpose()).transpose();
  return IF;
}

struct FoldSolution {
  Eigen::VectorXd psi;
  Eigen::MatrixXd J;
  Eigen::MatrixXd U;  // n x d at psi, all subjects (only fold rows used)
  double residual = 0;
  int iterations = 0;
  json trace = json::array();
  std::vector<std::string> warnings;
};

FoldSolution closed_form_fold(const Problem& pb, const Eigen::VectorXd& dY, const Eigen::MatrixXd& W, int f,
                              double ridge, const std::vector<std::string>& names) {
  Eigen::MatrixXd M, Wt;
  Eigen::VectorXd b, Yt;
  pb.normal_equations(dY, W, f, M, b, Yt, Wt);
  const int nf = f < 0 ? static_cast<int>(pb.folds().fold.size()) : pb.fold_size(f);
  Eigen::MatrixXd A = M / nf;
  const Eigen::VectorXd rhs = b / nf;
  if (ridge > 0) A += ridge * Eigen::MatrixXd::Identity(A.rows(), A.cols());
  if (singular(A))
    throw EstimationError("closed-form system is singular (" + describe_null_space(A, names) +
                          "); check treatment variation and the blip basis, or pass --ridge for exploration");
  FoldSolution out;
  out.psi = solve_square(A, rhs);
  out.J = -A;
  const Eigen::VectorXd resid = Yt - Wt * out.psi;
  out.U = pb.subject_U(resid);
  out.residual = pb.mean_U(out.U, f).cwiseAbs().maxCoeff();
  return out;
}

struct NewtonResult {
  Eigen::VectorXd x;
  bool converged = false;
  int iterations = 0;
  double residual = INFINITY;
  json trace = json::array();
  std::string failure;
};

Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& F, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& fx, double step) {
  const Eigen::Index d = x.size();
  Eigen::MatrixXd J(fx.size(), d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::VectorXd xp = x;
    const double h = step * std::max(1.0, std::abs(x[j]));
    xp[j] += h;
    J.col(j) = (F(xp) - fx) / (xp[j] - x[j]);
  }
  return J;
}

NewtonResult newton(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& F, Eigen::VectorXd x,
                    const SolverOptions& o, double tol) {
  NewtonResult out;
  Eigen::VectorXd fx;
  try {
    fx = F(x);
  } catch (const Error& e) {
    out.failure = e.what();
    out.x = x;
    return out;
  }
  double norm = fx.cwiseAbs().maxCoeff();
  int polish = 0;
  for (int it = 0; it < o.max_iter; ++it) {
    out.iterations = it + 1;
    if (norm <= tol) {
      out.converged = true;
      // A few extra full steps drive linear problems to machine precision.
      if (polish >= 3) break;
    }
    Eigen::MatrixXd J;
    try {
      J = fd_jacobian(F, x, fx, o.fd_step);
    } catch (const Error& e) {
      out.failure = e.what();
      break;
    }
    if (singular(J)) {
      if (!out.converged) out.failure = "singular Jacobian at iteration " + std::to_string(it + 1);
      break;
    }
    const Eigen::VectorXd step = -solve_square(J, fx);
    double t = 1.0;
    Eigen::VectorXd xn, fn;
    double nn = INFINITY;
    bool accepted = false;
    const int halvings = out.converged ? 1 : 40;
    for (int h = 0; h < halvings; ++h) {
      xn = x + t * step;
      try {
        fn = F(xn);
        nn = fn.cwiseAbs().maxCoeff();
      } catch (const Error&) {
        nn = INFINITY;
      }
      if (nn < norm || (out.converged && nn <= norm)) {
        accepted = true;
        break;
      }
      t *= o.damping;
    }
    out.trace.push_back({{"iteration", it + 1}, {"residual", norm}, {"step", t}, {"accepted", accepted}});
    if (!accepted) {
      if (!out.converged) out.failure = "line search stalled at residual " + format_number(norm);
      break;
    }
    if (out.converged) {
      ++polish;
      if (nn > 0.5 * norm) {
        x = xn;
        fx = fn;
        norm = nn;
        break;
      }
    }
    x = xn;
    fx = fn;
    norm = nn;
  }
  if (norm <= tol) out.converged = true;
  if (out.converged) out.failure.clear();
  else if (out.failure.empty())
    out.failure = "no convergence after " + std::to_string(o.max_iter) + " iterations (residual " +
                  format_number(norm) + ")";
  out.x = x;
  out.residual = norm;
  return out;
}

FoldSolution iterative_fold(const Problem& pb, const PanelDataset& d, int f, const FitOptions& opt, bool probe,
                            const std::vector<std::string>& names) {
  const int dim = pb.dim();
  auto F = [&](const Eigen::VectorXd& psi) {
    const Eigen::VectorXd U = pb.mean_U(pb.subject_U(pb.residual(psi)), f);
    if (opt.ridge > 0) return Eigen::VectorXd(U - opt.ridge * psi);
    return U;
  };
  const double tol = tolerance(d, opt.solver);
  Eigen::VectorXd x0 = opt.start.size() == dim ? opt.start : Eigen::VectorXd::Zero(dim);
  NewtonResult best = newton(F, x0, opt.solver, tol);
  json attempts = json::array();
  attempts.push_back({{"start", "initial"}, {"converged", best.converged}, {"residual", best.residual}});
  Rng rng(stream_seed(opt.solver.seed, 1000 + static_cast<std::uint64_t>(f + 1)));
  for (int s = 0; s < opt.solver.starts && !best.converged; ++s) {
    Eigen::VectorXd x(dim);
    for (int j = 0; j < dim; ++j) x[j] = x0[j] + standard_normal(rng);
    NewtonResult r = newton(F, x, opt.solver, tol);
    attempts.push_back({{"start", "random"}, {"converged", r.converged}, {"residual", r.residual}});
    if (r.converged || r.residual < best.residual) best = r;
  }
  if (!best.converged) {
    std::ostringstream msg;
    msg << "iterative solver failed: " << best.failure << "; trace:";
    for (auto& t : best.trace) msg << " [" << t["iteration"] << ": " << t["residual"] << "]";
    throw EstimationError(msg.str());
  }
  FoldSolution out;
  out.psi = best.x;
  out.iterations = best.iterations;
  out.residual = best.residual;
  out.trace = best.trace;
  if (probe) {
    std::vector<Eigen::VectorXd> roots{best.x};
    for (int s = 0; s < opt.solver.starts; ++s) {
      Eigen::VectorXd x(dim);
      for (int j = 0; j < dim; ++j) x[j] = best.x[j] + 0.5 * (1 + std::abs(best.x[j])) * standard_normal(rng);
      NewtonResult r = newton(F, x, opt.solver, tol);
      attempts.push_back({{"start", "probe"}, {"converged", r.converged}, {"residual", r.residual}});
      if (!r.converged) continue;
      const double scale = 1 + best.x.cwiseAbs().maxCoeff();
      if ((r.x - best.x).cwiseAbs().maxCoeff() > opt.solver.root_tol * scale) {
        std::ostringstream msg;
        msg << "estimating equations have multiple distinct roots:";
        for (auto* v : {&best.x, &r.x}) {
          msg << " (";
          for (int j = 0; j < dim; ++j) msg << (j ? ", " : "") << format_number((*v)[j]);
          msg << ")";
        }
        throw EstimationError(msg.str());
      }
      roots.push_back(r.x);
    }
  }
  out.trace = {{"newton", best.trace}, {"attempts", attempts}};
  const Eigen::VectorXd fx = F(out.psi);
  out.J = fd_jacobian(F, out.psi, fx, opt.solver.fd_step);
  if (singular(out.J))
    throw EstimationError("Jacobian at the root is singular (" + describe_null_space(out.J, names) + ")");
  out.U = pb.subject_U(pb.residual(out.psi));
  return out;
}

GEstimate assemble(const Problem& pb, const BlipModel& model, const std::vector<FoldSolution>& sols,
                   const std::string& method, const FitOptions& opt) {
  GEstimate g;
  g.names = model.parameter_names();
  g.method = method;
  g.flavor = to_string(model.flavor);
  g.ridge = opt.ridge;
  const int dim = pb.dim(), F = static_cast<int>(sols.size());
  const int n = static_cast<int>(pb.folds().fold.size());
  g.psi = Eigen::VectorXd::Zero(dim);
  g.covariance = Eigen::MatrixXd::Zero(dim, dim);
  g.jacobian = Eigen::MatrixXd::Zero(dim, dim);
  g.influence = Eigen::MatrixXd::Zero(n, dim);
  json fold_diag = json::array();
  for (int f = 0; f < F; ++f) {
    const FoldSolution& s = sols[f];
    const int fid = F == 1 ? -1 : f;
    const int nf = fid < 0 ? n : pb.fold_size(f);
    g.psi += s.psi / F;
    g.jacobian += s.J / F;
    Eigen::MatrixXd IF = influence_rows(s.U, s.J, pb.folds(), fid);
    g.covariance += (IF.transpose() * IF) / (static_cast<double>(nf) * nf) / (static_cast<double>(F) * F);
    g.influence += IF * (static_cast<double>(n) / (static_cast<double>(F) * nf));
    g.residual_norm = std::max(g.residual_norm, s.residual);
    g.iterations += s.iterations;
    if (F > 1) g.fold_estimates.push_back(s.psi);
    fold_diag.push_back({{"fold", f}, {"n", nf}, {"residual_norm", s.residual}, {"iterations", s.iterations},
                         {"trace", s.trace}});
  }
  g.warnings = pb.warnings();
  g.diagnostics["folds"] = fold_diag;
  g.diagnostics["seeds"] = {{"fold_seed", pb.folds().seed}, {"solver_seed", opt.solver.seed}};
  g.diagnostics["treatment_model"] = pb.treatment().audit;
  if (opt.ridge > 0) g.warnings.push_back("ridge " + format_number(opt.ridge) + " added to the estimating equations");
  if (opt.bias) g.diagnostics["bias"] = opt.bias->to_json();
  return g;
}

void require_closed_form(const BlipModel& model, const NuisanceSpec& spec) {
  std::string why;
  if (!closed_form_possible(model, spec, &why)) throw ConfigError("closed form unavailable: " + why, "/method");
}

}  // namespace

std::pair<Eigen::VectorXd, Eigen::VectorXd> GEstimate::wald_ci(double level) const {
  const double z = normal_quantile(0.5 + level / 2);
  const Eigen::VectorXd s = se();
  return {psi - z * s, psi + z * s};
}

json GEstimate::to_json() const {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto mat = [&](const Eigen::MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vec(m.row(r).transpose()));
    return a;
  };
  const auto [lo, hi] = wald_ci();
  json j;
  j["psi_hat"] = vec(psi);
  j["names"] = names;
  j["method"] = method;
  j["flavor"] = flavor;
  j["covariance"] = mat(covariance);
  j["se"] = vec(se());
  j["ci"] = {{"wald", {{"lo", vec(lo)}, {"hi", vec(hi)}, {"level", 0.95}}}};
  j["jacobian"] = mat(jacobian);
  if (!fold_estimates.empty()) {
    json f = json::array();
    for (auto& v : fold_estimates) f.push_back(vec(v));
    j["fold_estimates"] = f;
  }
  json diag = diagnostics;
  diag["residual_norm"] = residual_norm;
  diag["iterations"] = iterations;
  diag["ridge"] = ridge;
  diag["warnings"] = warnings;
  j["diagnostics"] = diag;
  return j;
}

GEstimate closed_form_fit(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec,
                          const FitOptions& options) {
  require_closed_form(model, spec);
  const Problem pb(d, model, spec, options, single_fold(d.n()));
  Eigen::VectorXd dY;
  Eigen::MatrixXd W;
  pb.linear_pieces(dY, W);
  std::vector<FoldSolution> sols{closed_form_fold(pb, dY, W, -1, options.ridge, model.parameter_names())};
  return assemble(pb, model, sols, "closed-form", options);
}

GEstimate solve_iterative(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec,
                          const FitOptions& options) {
  const Problem pb(d, model, spec, options, single_fold(d.n()));
  const bool probe = options.solver.uniqueness_probe || model.flavor == Flavor::regime;
  std::vector<FoldSolution> sols{iterative_fold(pb, d, -1, options, probe, model.parameter_names())};
  return assemble(pb, model, sols, "iterative", options);
}

GEstimate crossfit_estimate(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec,
                            const FitOptions& options) {
  const FoldAssignment folds = split_folds(d, spec.folds, spec.seed);
  const Problem pb(d, model, spec, options, folds);
  const bool closed = options.crossfit_closed_form && closed_form_possible(model, spec, nullptr);
  const bool probe = options.solver.uniqueness_probe || model.flavor == Flavor::regime;
  std::vector<FoldSolution> sols(folds.n_folds);
  Eigen::VectorXd dY;
  Eigen::MatrixXd W;
  if (closed) pb.linear_pieces(dY, W);
  for (int f = 0; f < folds.n_folds; ++f) {
    try {
      sols[f] = closed ? closed_form_fold(pb, dY, W, f, options.ridge, model.parameter_names())
                       : iterative_fold(pb, d, f, options, probe, model.parameter_names());
    } catch (const Error& e) {
      throw Error(e.code(), "fold " + std::to_string(f) + ": " + e.what());
    }
  }
  GEstimate g = assemble(pb, model, sols, "crossfit", options);
  g.diagnostics["fold_solver"] = closed ? "closed-form" : "iterative";
  return g;
}

GEstimate fit(const PanelDataset& d, const BlipModel& model, const NuisanceSpec& spec, const FitOptions& options) {
  switch (options.method) {
    case Method::closed_form: return closed_form_fit(d, model, spec, options);
    case Method::iterative: return solve_iterative(d, model, spec, options);
    case Method::crossfit: return crossfit_estimate(d, model, spec, options);
  }
  return {};
}

Eigen::MatrixXd evaluate_U(const PanelDataset& d, const BlipModel& model, const Eigen::VectorXd& psi,
                           const NuisanceSpec& spec, const FitOptions& options, const FoldAssignment* folds) {
  if (psi.size() != model.dim()) throw ConfigError("psi length does not match the blip model");
  const Problem pb(d, model, spec, options, folds ? *folds : single_fold(d.n()));
  return pb.subject_U(pb.residual(psi));
}

double TrendFit::predict(int i, int m, int k) const {
  for (size_t q = 0; q < pairs.size(); ++q)
    if (pairs[q].first == m && pairs[q].second == k) {
      for (size_t r = 0; r < rows.size(); ++r)
        if (rows[r].i == i && rows[r].pair == static_cast<int>(q)) return fitted[r];
    }
  return std::nan("");
}

TrendFit fit_trend_model(const PanelDataset& d, const BlipModel& model, const Eigen::VectorXd& psi,
                         const NuisanceSpec& spec, const FoldAssignment& folds, const FitOptions& options) {
  if (psi.size() != model.dim()) throw ConfigError("psi length does not match the blip model");
  const Problem pb(d, model, spec, options, folds);
  TrendFit t;
  t.pairs = pb.pairs();
  t.rows = pb.trend().rows();
  t.response = pb.delta_H(psi);
  t.fitted = pb.trend().predict(t.response);
  t.audit = pb.trend().audit(t.response);
  return t;
}

std::pair<double, double> percentile_interval(std::vector<double> draws, double level) {
  if (draws.empty()) return {std::nan(""), std::nan("")};
  std::sort(draws.begin(), draws.end());
  const int B = static_cast<int>(draws.size());
  const double a = (1 - level) / 2;
  int lo = static_cast<int>(std::floor(a * B + 1e-9));
  int hi = static_cast<int>(std::ceil((1 - a) * B - 1e-9));
  lo = std::clamp(lo, 1, B);
  hi = std::clamp(hi, 1, B);
  return {draws[lo - 1], draws[hi - 1]};
}

BootstrapResult bootstrap(const PanelDataset& d, const FitClosure& closure, int B, std::uint64_t seed,
                          const Eigen::VectorXd& estimate) {
  if (B < 100) throw ConfigError("bootstrap needs B >= 100 (got " + std::to_string(B) + ")", "/bootstrap");
  std::vector<Eigen::VectorXd> reps(B);
  std::vector<std::string> kind(B), message(B);
  parallel_for(static_cast<size_t>(B), [&](size_t b) {
    Rng rng = make_stream(seed, b);
    std::uniform_int_distribution<int> pick(0, d.n() - 1);
    std::vector<int> idx(d.n());
    for (int& v : idx) v = pick(rng);
    try {
      reps[b] = closure(d.subset(idx));
      if (!reps[b].allFinite()) {
        kind[b] = "non-finite";
        message[b] = "replicate produced a non-finite estimate";
      }
    } catch (const EstimationError& e) {
      kind[b] = "estimation";
      message[b] = e.what();
    } catch (const DataError& e) {
      kind[b] = "data";
      message[b] = e.what();
    } catch (const std::exception& e) {
      kind[b] = "other";
      message[b] = e.what();
    }
  });
  BootstrapResult out;
  out.B = B;
  out.seed = seed;
  std::vector<int> good;
  for (int b = 0; b < B; ++b) {
    if (kind[b].empty()) good.push_back(b);
    else out.failures.push_back({b, kind[b], message[b]});
  }
  if (out.failures.size() * 20 > static_cast<size_t>(B)) {
    std::map<std::string, int> tax;
    for (auto& f : out.failures) ++tax[f.kind];
    std::string msg = std::to_string(out.failures.size()) + " of " + std::to_string(B) +
                      " bootstrap replicates failed (budget 5%):";
    for (auto& [k, c] : tax) msg += " " + k + "=" + std::to_string(c);
    msg += "; first: " + out.failures.front().message;
    throw EstimationError(msg);
  }
  const int dim = static_cast<int>(reps[good.front()].size());
  out.replicates.resize(good.size(), dim);
  for (size_t t = 0; t < good.size(); ++t) out.replicates.row(t) = reps[good[t]].transpose();
  out.lo.resize(dim);
  out.hi.resize(dim);
  out.se.resize(dim);
  out.normal_lo.resize(dim);
  out.normal_hi.resize(dim);
  out.estimate = estimate.size() == dim ? estimate : Eigen::VectorXd(out.replicates.colwise().mean().transpose());
  const double z = normal_quantile(0.975);
  for (int j = 0; j < dim; ++j) {
    const Eigen::VectorXd col = out.replicates.col(j);
    std::vector<double> draws(col.data(), col.data() + col.size());
    std::tie(out.lo[j], out.hi[j]) = percentile_interval(draws);
    const double mean = col.mean();
    out.se[j] = col.size() > 1 ? std::sqrt((col.array() - mean).square().sum() / (col.size() - 1)) : 0.0;
    out.normal_lo[j] = out.estimate[j] - z * out.se[j];
    out.normal_hi[j] = out.estimate[j] + z * out.se[j];
  }
  return out;
}

json BootstrapResult::to_json() const {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json fails = json::array();
  for (auto& f : failures) fails.push_back({{"replicate", f.replicate}, {"kind", f.kind}, {"message", f.message}});
  return {{"B", B},
          {"seed", seed},
          {"successful", replicates.rows()},
          {"se", vec(se)},
          {"percentile", {{"lo", vec(lo)}, {"hi", vec(hi)}}},
          {"normal", {{"lo", vec(normal_lo)}, {"hi", vec(normal_hi)}}},
          {"failures", fails}};
}

}  // namespace didsnmm
