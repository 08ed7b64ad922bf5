#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "pscal/calibration.hpp"
#include "pscal/data.hpp"
#include "pscal/errors.hpp"
#include "pscal/estimators.hpp"
#include "pscal/parallel.hpp"
#include "pscal/rng.hpp"
#include "pscal/stats.hpp"

namespace pscal {

// Influence values d_i for the two-step estimator: the tilt-weighted
// projection of U onto span(1, b(x)) plus the weighted respondent residual.
struct InfluenceDecomposition {
  Matrix d;     // n x p
  Matrix beta;  // (L+1) x p, original basis scale
  Matrix tau;   // p x p
};

inline InfluenceDecomposition influence_decomposition(const Sample& s,
                                                      const BalancingDesign& design,
                                                      const TiltingParams& params,
                                                      const Vector& theta_hat,
                                                      const EstimatingFunction& estfun) {
  const auto n = s.n();
  const auto L = design.L();
  const auto p = estfun.p;
  const auto idx = s.respondent_indices();
  const auto m = static_cast<Eigen::Index>(idx.size());

  Matrix Zr = design_matrix(s, design, /*respondents_only=*/true);
  Matrix Z = design_matrix(s, design, /*respondents_only=*/false);
  params.standardization.apply(Zr);
  params.standardization.apply(Z);

  Vector tilt(m);
  Matrix U(m, p);
  for (Eigen::Index k = 0; k < m; ++k) {
    tilt(k) = std::exp(params.log_ratio(s.X.row(idx[k]).transpose()));
    U.row(k) = estfun.eval(theta_hat, s.X.row(idx[k]).transpose(), s.y(idx[k])).transpose();
  }

  Matrix A = Zr.transpose() * tilt.asDiagonal() * Zr;
  Eigen::LDLT<Matrix> ldlt(A);
  if (ldlt.info() != Eigen::Success)
    throw RankDeficient("tilt-weighted normal equations are singular");
  Matrix beta_std = ldlt.solve(Zr.transpose() * (tilt.asDiagonal() * U));
  if (!beta_std.allFinite())
    throw RankDeficient("tilt-weighted regression produced non-finite coefficients");

  InfluenceDecomposition out;
  out.d = Matrix::Zero(n, p);
  Matrix fitted_full = Z * beta_std;  // n x p
  for (Eigen::Index i = 0; i < n; ++i) out.d.row(i) = fitted_full.row(i);
  out.tau = Matrix::Zero(p, p);
  const double N = static_cast<double>(n);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::Index i = idx[k];
    const double omega = 1.0 + params.c * tilt(k);
    out.d.row(i) += omega * (U.row(k) - fitted_full.row(i));
    out.tau += omega * estfun.jac(theta_hat, s.X.row(i).transpose(), s.y(i));
  }
  out.tau /= N;

  // report beta on the original basis scale
  out.beta = Matrix::Zero(L + 1, p);
  out.beta.row(0) = beta_std.row(0);
  for (Eigen::Index j = 0; j < L; ++j) {
    out.beta.row(j + 1) = beta_std.row(j + 1) / params.standardization.sd(j);
    out.beta.row(0) -= beta_std.row(j + 1) * params.standardization.mean(j) /
                       params.standardization.sd(j);
  }
  return out;
}

inline Matrix linearized_variance(const Sample& s, const BalancingDesign& design,
                                  const TiltingParams& params, const Vector& theta_hat,
                                  const EstimatingFunction& estfun) {
  auto dec = influence_decomposition(s, design, params, theta_hat, estfun);
  const auto n = s.n();
  const double N = static_cast<double>(n);
  Eigen::RowVectorXd dbar = dec.d.colwise().mean();
  Matrix centered = dec.d.rowwise() - dbar;
  Matrix sigma_dd = centered.transpose() * centered / (N - 1.0);

  Eigen::FullPivLU<Matrix> lu(dec.tau);
  if (!lu.isInvertible()) throw SingularTau("tau estimate is singular");
  Matrix tau_inv = lu.inverse();
  Matrix V = tau_inv * sigma_dd * tau_inv.transpose() / N;
  return Matrix(0.5 * (V + V.transpose()));
}

struct BootstrapResult {
  Matrix cov;
  int replicates = 0;  // successful refits
  int failures = 0;    // dropped (infeasible or non-convergent) refits
};

// Unit resampling with replacement; each replicate refits the calibration and
// the estimating equation. Replicate streams are derived from (seed, index)
// so results do not depend on thread scheduling.
inline BootstrapResult bootstrap_variance(const Sample& s, const BalancingDesign& design,
                                          const EstimatingFunction& estfun,
                                          int n_replicates, std::uint64_t seed,
                                          int threads = 0) {
  validate(s);
  if (n_replicates < 2) throw NoConvergence("bootstrap needs at least 2 replicates");
  const auto n = s.n();
  std::vector<std::optional<Vector>> draws(static_cast<std::size_t>(n_replicates));

  parallel_for(
      static_cast<std::size_t>(n_replicates),
      [&](std::size_t b) {
        Rng rng = Rng::stream(seed, b);
        Matrix X(n, s.d());
        Vector y(n);
        std::vector<std::uint8_t> delta(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
          const auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
          X.row(i) = s.X.row(j);
          y(i) = s.y(j);
          delta[static_cast<std::size_t>(i)] = s.delta[static_cast<std::size_t>(j)];
        }
        try {
          Sample rs = Sample::masked(std::move(X), std::move(y), std::move(delta));
          auto est = sps_estimate(rs, design, estfun);
          draws[b] = est.theta;
        } catch (const Error&) {
          // dropped and counted below
        }
      },
      threads);

  BootstrapResult out;
  Vector mean = Vector::Zero(estfun.p);
  for (const auto& d : draws) {
    if (d) {
      mean += *d;
      ++out.replicates;
    } else {
      ++out.failures;
    }
  }
  if (out.failures * 10 > n_replicates)
    throw TooManyFailures("more than 10% of bootstrap replicates failed (" +
                          std::to_string(out.failures) + "/" +
                          std::to_string(n_replicates) + ")");
  mean /= static_cast<double>(out.replicates);
  out.cov = Matrix::Zero(estfun.p, estfun.p);
  for (const auto& d : draws)
    if (d) out.cov += (*d - mean) * (*d - mean).transpose();
  out.cov /= static_cast<double>(out.replicates - 1);
  return out;
}

namespace detail {

struct InnerEl {
  bool feasible = false;
  double dual_value = 0.0;  // max of sum log(1 + eta'g_i), >= 0
  Vector eta;
};

// Inner empirical-likelihood dual at fixed multipliers: maximize the concave
// sum log(1 + eta'g_i) over the region keeping all masses positive.
inline InnerEl solve_inner_el(const Matrix& G) {
  const auto m = G.rows();
  const auto q = G.cols();
  InnerEl out;
  out.eta = Vector::Zero(q);
  Vector denom = Vector::Ones(m);
  double value = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    Vector grad = Vector::Zero(q);
    Matrix H = Matrix::Zero(q, q);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vector g = G.row(i).transpose();
      grad += g / denom(i);
      H.noalias() += g * g.transpose() / (denom(i) * denom(i));
    }
    const double gnorm = grad.cwiseAbs().maxCoeff();
    if (gnorm <= 1e-9 * static_cast<double>(m)) {
      out.feasible = true;
      out.dual_value = value;
      return out;
    }
    Eigen::LDLT<Matrix> ldlt(H);
    Vector step = ldlt.solve(grad);
    if (!step.allFinite()) return out;
    double alpha = 1.0;
    // keep masses strictly positive along the step
    Vector Gs = G * step;
    for (Eigen::Index i = 0; i < m; ++i)
      if (Gs(i) < 0.0) alpha = std::min(alpha, -0.99 * denom(i) / Gs(i));
    bool moved = false;
    for (int k = 0; k < 60; ++k) {
      Vector trial = out.eta + alpha * step;
      Vector dt = (G * trial).array() + 1.0;
      if (dt.minCoeff() > 1e-300) {
        const double vt = dt.array().log().sum();
        if (vt > value) {
          out.eta = std::move(trial);
          denom = std::move(dt);
          value = vt;
          moved = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!moved) {
      // boundary stall has a large gradient; a small one just ran out of
      // float resolution in the objective
      out.feasible = gnorm <= 1e-5 * static_cast<double>(m);
      out.dual_value = value;
      return out;
    }
    if (out.eta.cwiseAbs().maxCoeff() > 1e8) return out;
  }
  return out;
}

struct ElProfile {
  bool feasible = false;
  double t_min = 0.0;  // min over lambda of the inner dual value, >= 0
  Vector lambda;       // internal scale
};

// Profile over the density-ratio multipliers at fixed theta. Masses run over
// the whole sample with iid moment rows
//   {delta_i omega_i(lambda) - 1} (1, b_i)   and   delta_i omega_i(lambda) U_i,
// omega(lambda) = 1 + exp(lambda'z); the tilt intercept absorbs N0/N1, and
// the uniform masses satisfy every row exactly at the two-step solution.
// Quasi-Newton descent on the inner dual value, warm-started there.
inline ElProfile profile_el_over_lambda(const Sample& s, const BalancingDesign& design,
                                        const EstimatingFunction& estfun,
                                        const Vector& theta, const TiltingParams& start) {
  const auto n = s.n();
  const auto L = design.L();
  const auto p = estfun.p;
  const auto K = L + 1;

  Matrix Z = design_matrix(s, design, /*respondents_only=*/false);
  start.standardization.apply(Z);

  Matrix U = Matrix::Zero(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    if (s.delta[static_cast<std::size_t>(i)])
      U.row(i) = estfun.eval(theta, s.X.row(i).transpose(), s.y(i)).transpose();

  ElProfile out;
  const auto q = L + 1 + p;
  Matrix G(n, q);

  if (s.n_nonrespondents() == 0) {
    // degenerate tilt: the test reduces to plain empirical likelihood on U
    Matrix Gu = U;
    auto inner = solve_inner_el(Gu);
    if (!inner.feasible) return out;
    out.feasible = true;
    out.t_min = inner.dual_value;
    out.lambda = Vector::Zero(K);
    return out;
  }

  Vector expz(n);
  const auto build_moments = [&](const Vector& lambda) {
    expz = (Z * lambda).array().unaryExpr([](double e) { return clamped_exp(e); });
    for (Eigen::Index i = 0; i < n; ++i) {
      const double omega =
          s.delta[static_cast<std::size_t>(i)] ? 1.0 + expz(i) : 0.0;
      G.row(i).head(L) = (omega - 1.0) * Z.row(i).tail(L);
      G(i, L) = omega - 1.0;
      G.row(i).tail(p) = omega * U.row(i);
    }
  };

  const auto dual_at = [&](const Vector& lambda, InnerEl& inner) {
    build_moments(lambda);
    inner = solve_inner_el(G);
    return inner.feasible ? inner.dual_value
                          : std::numeric_limits<double>::infinity();
  };

  // envelope gradient of the inner dual value with respect to lambda
  const auto gradient = [&](const InnerEl& inner) {
    Vector grad = Vector::Zero(K);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!s.delta[static_cast<std::size_t>(i)]) continue;
      const double denom = 1.0 + inner.eta.dot(G.row(i).transpose());
      const double scale = inner.eta.head(L).dot(Z.row(i).tail(L)) + inner.eta(L) +
                           inner.eta.tail(p).dot(U.row(i));
      grad += (expz(i) * scale / denom) * Z.row(i).transpose();
    }
    return grad;
  };

  // the two-step solution, with the c ratio folded into the intercept
  Vector lambda = start.lambda_std;
  lambda(0) += std::log(start.c);
  InnerEl inner;
  double value = dual_at(lambda, inner);
  if (!std::isfinite(value)) {
    for (double shift : {-1.0, -3.0}) {
      Vector trial = lambda;
      trial(0) += shift;  // shrink the tilt toward zero weight adjustment
      value = dual_at(trial, inner);
      if (std::isfinite(value)) {
        lambda = trial;
        break;
      }
    }
    if (!std::isfinite(value)) return out;
  }

  Matrix Hinv = Matrix::Identity(K, K);
  Vector grad = gradient(inner);
  for (int iter = 0; iter < 200; ++iter) {
    if (grad.cwiseAbs().maxCoeff() <= 1e-8) break;
    Vector dir = -(Hinv * grad);
    if (dir.dot(grad) > 0.0) dir = -grad;  // reset on loss of descent
    double alpha = 1.0;
    bool moved = false;
    Vector lambda_new, grad_new;
    InnerEl inner_new;
    for (int k = 0; k < 40; ++k) {
      lambda_new = lambda + alpha * dir;
      const double vt = dual_at(lambda_new, inner_new);
      if (vt < value - 1e-14 * std::abs(value)) {
        grad_new = gradient(inner_new);
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) break;
    // BFGS update on the inverse approximation
    Vector sk = lambda_new - lambda;
    Vector yk = grad_new - grad;
    const double sy = sk.dot(yk);
    if (sy > 1e-12) {
      Matrix I = Matrix::Identity(K, K);
      Matrix left = I - sk * yk.transpose() / sy;
      Hinv = left * Hinv * left.transpose() + sk * sk.transpose() / sy;
    }
    lambda = lambda_new;
    grad = grad_new;
    value = inner_new.dual_value;
    inner = inner_new;
  }

  // refresh the inner solve at the final multipliers
  InnerEl final_inner;
  const double final_value = dual_at(lambda, final_inner);
  if (!std::isfinite(final_value)) return out;
  out.feasible = true;
  out.t_min = final_value;
  out.lambda = lambda;
  return out;
}

}  // namespace detail

// Profile empirical log-likelihood at fixed theta; the maximum over masses
// subject to the balancing, weight-normalization, and estimating-function
// constraints equals -N log N minus the inner dual value.
inline double el_profile_loglik(const Sample& s, const BalancingDesign& design,
                                const EstimatingFunction& estfun, const Vector& theta) {
  validate(s);
  TiltingParams params = solve_tilting(s, design);
  auto prof = detail::profile_el_over_lambda(s, design, estfun, theta, params);
  if (!prof.feasible)
    throw Infeasible("empirical likelihood constraints infeasible at the supplied theta");
  const double N = static_cast<double>(s.n());
  return -N * std::log(N) - prof.t_min;
}

struct ElTestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool theta0_infeasible = false;
  Vector theta_hat;
};

inline ElTestResult el_ratio_test(const Sample& s, const BalancingDesign& design,
                                  const EstimatingFunction& estfun, const Vector& theta0) {
  validate(s);
  TiltingParams params = solve_tilting(s, design);
  auto est = sps_estimate(s, design, estfun);

  ElTestResult out;
  out.theta_hat = est.theta;
  auto prof_hat = detail::profile_el_over_lambda(s, design, estfun, est.theta, params);
  if (!prof_hat.feasible)
    throw Infeasible("empirical likelihood infeasible at the two-step estimate");
  auto prof_0 = detail::profile_el_over_lambda(s, design, estfun, theta0, params);
  if (!prof_0.feasible) {
    out.theta0_infeasible = true;
    out.statistic = std::numeric_limits<double>::infinity();
    out.p_value = 0.0;
    return out;
  }
  out.statistic = std::max(0.0, 2.0 * (prof_0.t_min - prof_hat.t_min));
  out.p_value = chi_squared_upper_tail(out.statistic, static_cast<int>(estfun.p));
  return out;
}

}  // namespace pscal
