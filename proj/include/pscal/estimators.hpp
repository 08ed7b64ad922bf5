#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pscal/calibration.hpp"
#include "pscal/data.hpp"
#include "pscal/errors.hpp"
#include "pscal/stats.hpp"

namespace pscal {

struct FitDiagnostics {
  int calibration_iterations = 0;
  double balancing_residual = 0.0;
  int theta_iterations = 0;
  bool converged = true;
};

struct EstimateResult {
  Vector theta;
  std::optional<Matrix> cov;
  Vector se;  // sqrt(diag(cov)) once cov is known
  std::string method;
  FitDiagnostics diagnostics;

  void set_covariance(Matrix c) {
    se = c.diagonal().cwiseMax(0.0).cwiseSqrt();
    cov = std::move(c);
  }
};

struct ThetaSolveOptions {
  double tol = 1e-10;
  int max_iter = 100;
  Vector start;  // empty = zeros
};

namespace detail {

struct ThetaSolve {
  Vector theta;
  int iterations = 0;
};

// Newton with analytic Jacobian on h(theta) = 0; for scalar theta a bracketing
// bisection fallback covers monotone cases where Newton stalls.
template <typename EvalH, typename EvalJ>
ThetaSolve solve_estimating_equation(const EvalH& eval_h, const EvalJ& eval_j,
                                     Eigen::Index p, const ThetaSolveOptions& opts) {
  Vector theta = opts.start.size() == p ? opts.start : Vector::Zero(p);
  Vector h = eval_h(theta);
  double h2 = h.squaredNorm();
  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    if (h.cwiseAbs().maxCoeff() <= opts.tol) return ThetaSolve{theta, iter - 1};
    Matrix J = eval_j(theta);
    Eigen::PartialPivLU<Matrix> lu(J);
    Vector step = -lu.solve(h);
    bool accepted = false;
    if (step.allFinite()) {
      double alpha = 1.0;
      for (int k = 0; k < 40; ++k) {
        Vector trial = theta + alpha * step;
        Vector ht = eval_h(trial);
        if (ht.allFinite() && ht.squaredNorm() < h2) {
          theta = std::move(trial);
          h = std::move(ht);
          h2 = h.squaredNorm();
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
    }
    if (!accepted) break;
  }
  if (h.cwiseAbs().maxCoeff() <= opts.tol) return ThetaSolve{theta, opts.max_iter};

  if (p == 1) {
    // expanding bracket around the current iterate, then bisection
    double lo = theta(0) - 1.0, hi = theta(0) + 1.0;
    auto f = [&](double t) {
      Vector v(1);
      v(0) = t;
      return eval_h(v)(0);
    };
    double flo = f(lo), fhi = f(hi);
    for (int k = 0; k < 200 && flo * fhi > 0.0; ++k) {
      const double w = hi - lo;
      lo -= w;
      hi += w;
      flo = f(lo);
      fhi = f(hi);
    }
    if (flo * fhi <= 0.0) {
      for (int k = 0; k < 200; ++k) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (std::abs(fm) <= opts.tol || hi - lo < 1e-15 * (1.0 + std::abs(mid))) {
          Vector v(1);
          v(0) = mid;
          return ThetaSolve{v, opts.max_iter};
        }
        if (flo * fm <= 0.0) {
          hi = mid;
          fhi = fm;
        } else {
          lo = mid;
          flo = fm;
        }
      }
    }
  }
  throw NoRoot("estimating equation solve failed");
}

// Solves (1/N) sum over respondents of w_i U(theta; x_i, y_i) = 0.
inline ThetaSolve solve_weighted_ee(const Sample& s, const Vector& omega,
                                    const EstimatingFunction& estfun,
                                    const ThetaSolveOptions& opts = {}) {
  const auto idx = s.respondent_indices();
  const double N = static_cast<double>(s.n());
  auto eval_h = [&](const Vector& theta) {
    Vector h = Vector::Zero(estfun.p);
    for (std::size_t k = 0; k < idx.size(); ++k)
      h += omega(static_cast<Eigen::Index>(k)) *
           estfun.eval(theta, s.X.row(idx[k]).transpose(), s.y(idx[k]));
    return Vector(h / N);
  };
  auto eval_j = [&](const Vector& theta) {
    Matrix J = Matrix::Zero(estfun.p, estfun.p);
    for (std::size_t k = 0; k < idx.size(); ++k)
      J += omega(static_cast<Eigen::Index>(k)) *
           estfun.jac(theta, s.X.row(idx[k]).transpose(), s.y(idx[k]));
    return Matrix(J / N);
  };
  return solve_estimating_equation(eval_h, eval_j, estfun.p, opts);
}

}  // namespace detail

// Smoothed propensity score estimator: two-step fit (calibration, then the
// weighted estimating equation).
inline EstimateResult sps_estimate(const Sample& s, const BalancingDesign& design,
                                   const EstimatingFunction& estfun,
                                   const SolverOptions& cal_opts = {},
                                   const ThetaSolveOptions& theta_opts = {}) {
  TiltingParams params = solve_tilting(s, design, cal_opts);
  SmoothedWeights w = smoothed_weights(s, design, params);
  auto sol = detail::solve_weighted_ee(s, w.omega, estfun, theta_opts);
  EstimateResult r;
  r.theta = sol.theta;
  r.method = "ip";
  r.diagnostics.calibration_iterations = params.iterations;
  r.diagnostics.balancing_residual = w.residual;
  r.diagnostics.theta_iterations = sol.iterations;
  return r;
}

// Mean-functional identity route: fit the exp-tilt weighted regression of y
// on (1, b(x)) and impute nonrespondents with it.
inline double regression_imputation_form(const Sample& s, const BalancingDesign& design,
                                         const SmoothedWeights& w) {
  validate(s);
  const auto idx = s.respondent_indices();
  const double N = static_cast<double>(s.n());
  if (w.c <= 0.0 || idx.size() == static_cast<std::size_t>(s.n())) {
    double sum = 0.0;
    for (auto i : idx) sum += s.y(i);
    return sum / static_cast<double>(idx.size());
  }

  Matrix Zr = design_matrix(s, design, /*respondents_only=*/true);
  Matrix Z = design_matrix(s, design, /*respondents_only=*/false);
  Vector r = (w.omega.array() - 1.0) / w.c;  // exp-tilt values at respondents

  const auto K = Zr.cols();
  Matrix A = Zr.transpose() * r.asDiagonal() * Zr;
  Vector b = Vector::Zero(K);
  for (std::size_t k = 0; k < idx.size(); ++k)
    b += r(static_cast<Eigen::Index>(k)) * s.y(idx[k]) * Zr.row(static_cast<Eigen::Index>(k)).transpose();
  if (detail::matrix_rank(r.cwiseSqrt().asDiagonal() * Zr) < K)
    throw RankDeficient("tilt-weighted regression is rank deficient");
  Vector beta = A.ldlt().solve(b);

  double total = 0.0;
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    if (s.delta[static_cast<std::size_t>(i)])
      total += s.y(i);
    else
      total += Z.row(i).dot(beta);
  }
  return total / N;
}

// Inverse probability weighting with a logistic response model fit by
// maximum likelihood.
inline EstimateResult mle_ipw_estimate(const Sample& s,
                                       const std::vector<Eigen::Index>& covariate_cols,
                                       const EstimatingFunction& estfun,
                                       const ThetaSolveOptions& theta_opts = {}) {
  validate(s);
  const auto n = s.n();
  const auto d = static_cast<Eigen::Index>(covariate_cols.size());
  Matrix Xm(n, d + 1);
  Xm.col(0).setOnes();
  for (Eigen::Index j = 0; j < d; ++j)
    Xm.col(j + 1) = s.X.col(covariate_cols[static_cast<std::size_t>(j)]);
  Standardization st = Standardization::fit(Xm.rightCols(d));
  st.apply(Xm);

  Vector gamma = Vector::Zero(d + 1);
  Vector pi(n);
  double prev_step = -1.0;
  int growth = 0;
  bool done = false;
  for (int iter = 0; iter < 100; ++iter) {
    Vector eta = Xm * gamma;
    for (Eigen::Index i = 0; i < n; ++i) pi(i) = sigmoid(eta(i));
    Vector grad = Vector::Zero(d + 1);
    for (Eigen::Index i = 0; i < n; ++i)
      grad += (static_cast<double>(s.delta[static_cast<std::size_t>(i)]) - pi(i)) *
              Xm.row(i).transpose();
    if (grad.cwiseAbs().maxCoeff() <= 1e-10 * static_cast<double>(n)) {
      done = true;
      break;
    }
    Matrix H = Matrix::Zero(d + 1, d + 1);
    for (Eigen::Index i = 0; i < n; ++i)
      H += pi(i) * (1.0 - pi(i)) * Xm.row(i).transpose() * Xm.row(i);
    Eigen::LDLT<Matrix> ldlt(H);
    Vector step = ldlt.solve(grad);
    if (!step.allFinite()) throw Separation("logistic information matrix is singular");
    gamma += step;
    const double s_norm = step.norm();
    growth = (prev_step >= 0.0 && s_norm > prev_step) ? growth + 1 : 0;
    prev_step = s_norm;
    if (gamma.cwiseAbs().maxCoeff() > 30.0 || growth >= 10)
      throw Separation("logistic MLE diverges (separated response)");
  }
  if (!done) throw Separation("logistic MLE did not converge");

  const auto idx = s.respondent_indices();
  Vector w(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double p = sigmoid(Xm.row(idx[k]).dot(gamma));
    if (p <= 0.0) throw Separation("fitted response probability is zero");
    w(static_cast<Eigen::Index>(k)) = 1.0 / p;
  }
  auto sol = detail::solve_weighted_ee(s, w, estfun, theta_opts);
  EstimateResult r;
  r.theta = sol.theta;
  r.method = "mle";
  r.diagnostics.theta_iterations = sol.iterations;
  return r;
}

// Empirical-likelihood calibration weighting: maximize sum log(omega_i)
// subject to the same balancing constraints.
inline EstimateResult cbps_el_estimate(const Sample& s, const BalancingDesign& design,
                                       const EstimatingFunction& estfun,
                                       const ThetaSolveOptions& theta_opts = {}) {
  validate(s);
  Matrix Zr = design_matrix(s, design, /*respondents_only=*/true);
  Matrix Z = design_matrix(s, design, /*respondents_only=*/false);
  const auto L = design.L();
  Standardization st = Standardization::fit(Zr.rightCols(L));
  st.apply(Zr);
  st.apply(Z);

  const auto m = Zr.rows();
  const double N = static_cast<double>(s.n());
  Vector center = Z.rightCols(L).colwise().mean().transpose();
  Matrix G(m, L);
  for (Eigen::Index i = 0; i < m; ++i)
    G.row(i) = Zr.row(i).tail(L) - center.transpose();

  // dual: maximize sum log(1 + eta'g_i) over the region where all masses stay
  // positive; steps are shortened to remain inside it
  Vector eta = Vector::Zero(L);
  Vector denom = Vector::Ones(m);
  const auto refresh = [&](const Vector& e, Vector& out) {
    out = (G * e).array() + 1.0;
    return out.minCoeff() > 1e-12;
  };
  const auto grad_at = [&](const Vector& dn) {
    Vector g = Vector::Zero(L);
    for (Eigen::Index i = 0; i < m; ++i) g += G.row(i).transpose() / dn(i);
    return g;
  };
  bool converged = L == 0;
  for (int iter = 0; iter < 200 && !converged; ++iter) {
    Vector grad = grad_at(denom);
    Matrix H = Matrix::Zero(L, L);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vector g = G.row(i).transpose();
      H += g * g.transpose() / (denom(i) * denom(i));
    }
    const double gnorm = grad.cwiseAbs().maxCoeff();
    if (gnorm <= 1e-12 * static_cast<double>(m)) {
      converged = true;
      break;
    }
    Eigen::LDLT<Matrix> ldlt(H);
    Vector step = ldlt.solve(grad);
    if (!step.allFinite()) throw Infeasible("EL dual Hessian is singular");
    double alpha = 1.0;
    bool moved = false;
    for (int k = 0; k < 60; ++k) {
      Vector trial = eta + alpha * step;
      Vector dt;
      if (refresh(trial, dt)) {
        // accept any positive-mass point with a larger dual objective
        const double obj_new = dt.array().log().sum();
        const double obj_old = denom.array().log().sum();
        if (obj_new > obj_old) {
          eta = std::move(trial);
          denom = std::move(dt);
          moved = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!moved) {
      // objective improvements are below float resolution; the full Newton
      // step still contracts the gradient near the optimum
      Vector trial = eta + step;
      Vector dt;
      if (refresh(trial, dt) &&
          grad_at(dt).cwiseAbs().maxCoeff() < 0.5 * gnorm) {
        eta = std::move(trial);
        denom = std::move(dt);
        moved = true;
      } else if (gnorm <= 1e-9 * static_cast<double>(m)) {
        converged = true;
        break;
      }
    }
    if (!moved || eta.cwiseAbs().maxCoeff() > 1e6) {
      if (denom.minCoeff() < 1e-8)
        throw NonPositiveWeight("EL multiplier path reached the mass-positivity boundary");
      throw Infeasible("EL calibration constraints appear unattainable");
    }
  }
  if (!converged) {
    if (denom.minCoeff() < 1e-8)
      throw NonPositiveWeight("EL multiplier path reached the mass-positivity boundary");
    throw Infeasible("EL dual did not converge");
  }

  Vector omega(m);
  for (Eigen::Index i = 0; i < m; ++i)
    omega(i) = (N / static_cast<double>(m)) / denom(i);
  auto sol = detail::solve_weighted_ee(s, omega, estfun, theta_opts);
  EstimateResult r;
  r.theta = sol.theta;
  r.method = "cbps";
  r.diagnostics.balancing_residual = balancing_residual(s, design, omega);
  r.diagnostics.theta_iterations = sol.iterations;
  return r;
}

// Entropy balancing: exponential-family weights meeting the balancing
// constraints, normalized to total N by the intercept row.
inline EstimateResult ebps_estimate(const Sample& s, const BalancingDesign& design,
                                    const EstimatingFunction& estfun,
                                    const SolverOptions& cal_opts = {},
                                    const ThetaSolveOptions& theta_opts = {}) {
  validate(s);
  Matrix Zr = design_matrix(s, design, /*respondents_only=*/true);
  Matrix Z = design_matrix(s, design, /*respondents_only=*/false);
  const auto L = design.L();
  Standardization st = Standardization::fit(Zr.rightCols(L));
  st.apply(Zr);
  st.apply(Z);
  Vector target = Z.colwise().sum().transpose();

  auto res = detail::solve_exp_moment(Zr, 1.0, target, static_cast<double>(s.n()), cal_opts);
  Vector omega = (Zr * res.lambda).array().exp();

  auto sol = detail::solve_weighted_ee(s, omega, estfun, theta_opts);
  EstimateResult r;
  r.theta = sol.theta;
  r.method = "ebps";
  r.diagnostics.calibration_iterations = res.iterations;
  r.diagnostics.balancing_residual = balancing_residual(s, design, omega);
  r.diagnostics.theta_iterations = sol.iterations;
  return r;
}

// Doubly robust estimator with externally supplied selection probabilities;
// the outcome part is the exp-tilt weighted linear fit on (1, b(x)).
inline EstimateResult true_pi_dr_estimate(const Sample& s, const Vector& true_pi,
                                          const BalancingDesign& design,
                                          const EstimatingFunction& estfun,
                                          bool zero_regression = false,
                                          const ThetaSolveOptions& theta_opts = {}) {
  validate(s);
  const auto n = s.n();
  const double N = static_cast<double>(n);
  const auto idx = s.respondent_indices();
  Matrix Zr = design_matrix(s, design, /*respondents_only=*/true);
  Matrix Z = design_matrix(s, design, /*respondents_only=*/false);
  const auto K = Zr.cols();

  Vector tilt = Vector::Ones(static_cast<Eigen::Index>(idx.size()));
  if (!zero_regression && s.n_nonrespondents() > 0) {
    TiltingParams params = solve_tilting(s, design);
    for (std::size_t k = 0; k < idx.size(); ++k)
      tilt(static_cast<Eigen::Index>(k)) =
          std::exp(params.log_ratio(s.X.row(idx[k]).transpose()));
  }
  Eigen::LDLT<Matrix> normal_eq((Zr.transpose() * tilt.asDiagonal() * Zr).eval());

  // beta(theta) solves the tilt-weighted normal equations for U(theta)
  auto fit_beta = [&](const Vector& theta) {
    Matrix B = Matrix::Zero(K, estfun.p);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Vector u = estfun.eval(theta, s.X.row(idx[k]).transpose(), s.y(idx[k]));
      B += tilt(static_cast<Eigen::Index>(k)) *
           Zr.row(static_cast<Eigen::Index>(k)).transpose() * u.transpose();
    }
    Matrix beta = normal_eq.solve(B);
    if (zero_regression) beta.setZero();
    return beta;
  };

  auto eval_h = [&](const Vector& theta) {
    const Matrix beta = fit_beta(theta);
    Vector h = Vector::Zero(estfun.p);
    for (Eigen::Index i = 0; i < n; ++i) h += beta.transpose() * Z.row(i).transpose();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Eigen::Index i = idx[k];
      if (true_pi(i) <= 0.0) throw NoRoot("supplied selection probability is zero");
      const Vector u = estfun.eval(theta, s.X.row(i).transpose(), s.y(i));
      h += (u - beta.transpose() * Z.row(i).transpose()) / true_pi(i);
    }
    return Vector(h / N);
  };
  auto eval_j = [&](const Vector& theta) {
    // central differences; the regression refit makes the analytic form noisy
    Matrix J(estfun.p, estfun.p);
    for (Eigen::Index j = 0; j < estfun.p; ++j) {
      const double h0 = 1e-6 * (1.0 + std::abs(theta(j)));
      Vector tp = theta, tm = theta;
      tp(j) += h0;
      tm(j) -= h0;
      J.col(j) = (eval_h(tp) - eval_h(tm)) / (2.0 * h0);
    }
    return J;
  };

  auto sol = detail::solve_estimating_equation(eval_h, eval_j, estfun.p, theta_opts);
  EstimateResult r;
  r.theta = sol.theta;
  r.method = "dr_true_pi";
  r.diagnostics.theta_iterations = sol.iterations;
  return r;
}

}  // namespace pscal
