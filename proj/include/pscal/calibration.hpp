#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <utility>

#include "pscal/data.hpp"
#include "pscal/errors.hpp"

namespace pscal {

struct SolverOptions {
  double tol = 1e-10;       // max-abs residual scaled by N
  int max_iter = 100;
  std::optional<double> c_override;  // population N0/N1 ratio, if known externally
  std::optional<Vector> start;       // internal-scale start, size L+1
};

// Fitted log-linear density ratio r*(x) = exp(lambda0 + lambda1' b(x)).
// lambda is reported on the original basis scale; the standardized internal
// coefficients are kept so downstream evaluation reproduces the solver's
// arithmetic exactly.
struct TiltingParams {
  double lambda0 = 0.0;
  Vector lambda1;            // length L, original scale
  Vector lambda_std;         // length L+1, internal scale
  Standardization standardization;
  BalancingDesign design;
  double c = 0.0;            // N0/N1 ratio used
  int iterations = 0;
  double residual = 0.0;     // scaled max-abs balancing residual at the solution

  double log_ratio(const Eigen::Ref<const Vector>& x) const {
    const Vector b = design.evaluate(x);
    double eta = lambda_std(0);
    for (Eigen::Index j = 0; j < b.size(); ++j)
      eta += lambda_std(j + 1) * (b(j) - standardization.mean(j)) / standardization.sd(j);
    return eta;
  }
};

// Per-respondent weights omega_i = 1 + c * r*(x_i).
struct SmoothedWeights {
  Vector omega;       // respondent order
  double c = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

namespace detail {

struct ExpMomentResult {
  Vector lambda;
  int iterations = 0;
  double residual = 0.0;
};

inline double clamped_exp(double eta) { return std::exp(eta < 600.0 ? eta : 600.0); }

// Solves c * sum_i exp(r_i'lambda) r_i = target over rows r_i of R, the
// stationarity system of the strictly convex dual
//   G(lambda) = c * sum_i exp(r_i'lambda) - target'lambda.
// Damped Newton from lambda = 0 with step-halving on the squared residual
// norm. Divergence (targets outside the attainable cone) is detected from
// growing step norms or |lambda| leaving a generous box in standardized
// coordinates, mirroring separation in logistic regression.
inline ExpMomentResult solve_exp_moment(const Matrix& R, double c, const Vector& target,
                                        double scale, const SolverOptions& opts) {
  const Eigen::Index K = R.cols();
  Vector lambda = opts.start.value_or(Vector::Zero(K));
  if (lambda.size() != K) throw SingularJacobian("start vector has wrong dimension");

  const auto residual_at = [&](const Vector& lam, Vector& w_out) {
    w_out = (R * lam).array().unaryExpr([](double e) { return clamped_exp(e); });
    Vector F = (c * (R.transpose() * w_out) - target) / scale;
    return F;
  };

  Vector w;
  Vector F = residual_at(lambda, w);
  double f2 = F.squaredNorm();
  double prev_step_norm = -1.0;
  int growth_streak = 0;

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    if (F.cwiseAbs().maxCoeff() <= opts.tol) {
      // one polishing step: quadratic convergence usually lands the residual
      // near machine precision, which downstream identities rely on
      Matrix H = R.transpose() * w.asDiagonal() * R * (c / scale);
      Eigen::LDLT<Matrix> ldlt(H);
      if (ldlt.info() == Eigen::Success) {
        Vector trial = lambda - ldlt.solve(F);
        Vector wt;
        Vector Ft = residual_at(trial, wt);
        if (Ft.squaredNorm() < f2) {
          lambda = trial;
          F = Ft;
          w = wt;
        }
      }
      return ExpMomentResult{lambda, iter - 1, F.cwiseAbs().maxCoeff()};
    }

    Matrix H = R.transpose() * w.asDiagonal() * R * (c / scale);
    Eigen::LDLT<Matrix> ldlt(H);
    if (ldlt.info() != Eigen::Success)
      throw SingularJacobian("calibration Hessian factorization failed");
    Vector step = -ldlt.solve(F);
    if (!step.allFinite()) throw SingularJacobian("calibration step not finite");

    double alpha = 1.0;
    bool accepted = false;
    for (int h = 0; h < 40; ++h) {
      Vector trial = lambda + alpha * step;
      Vector wt;
      Vector Ft = residual_at(trial, wt);
      const double ft2 = Ft.squaredNorm();
      if (ft2 < f2) {
        lambda = std::move(trial);
        F = std::move(Ft);
        w = std::move(wt);
        f2 = ft2;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }

    const double step_norm = alpha * step.norm();
    if (prev_step_norm >= 0.0 && step_norm > prev_step_norm)
      ++growth_streak;
    else
      growth_streak = 0;
    prev_step_norm = step_norm;

    if (lambda.cwiseAbs().maxCoeff() > 50.0 || growth_streak >= 10 || !accepted)
      throw Infeasible("calibration targets appear unattainable (diverging multipliers)");
  }
  throw MaxIterations("calibration did not converge in " + std::to_string(opts.max_iter) +
                      " iterations");
}

}  // namespace detail

// Solves the calibration equation
//   sum_{delta=1} {1 + c exp(lambda' z_i)} z_i = sum_i z_i,   z_i = (1, b(x_i)),
// equivalently c sum_{delta=1} exp(lambda' z_i) z_i = sum_{delta=0} z_i.
inline TiltingParams solve_tilting(const Sample& s, const BalancingDesign& design,
                                   const SolverOptions& opts = {}) {
  validate(s);
  const auto L = design.L();
  Matrix Zr = design_matrix(s, design, /*respondents_only=*/true);
  Matrix Z = design_matrix(s, design, /*respondents_only=*/false);

  TiltingParams params;
  params.design = design;
  params.standardization = Standardization::fit(Zr.rightCols(L));
  const auto n1 = Zr.rows();
  const auto n0 = s.n() - n1;
  params.c = opts.c_override.value_or(n1 > 0 ? static_cast<double>(n0) / n1 : 0.0);

  if (n0 == 0 && !opts.c_override) {
    // everyone responds: weights are identically one for any lambda
    params.lambda1 = Vector::Zero(L);
    params.lambda_std = Vector::Zero(L + 1);
    return params;
  }

  params.standardization.apply(Zr);
  params.standardization.apply(Z);

  Vector target = Vector::Zero(L + 1);
  for (Eigen::Index i = 0; i < s.n(); ++i)
    if (!s.delta[static_cast<std::size_t>(i)]) target += Z.row(i).transpose();

  auto res = detail::solve_exp_moment(Zr, params.c, target, static_cast<double>(s.n()), opts);
  params.lambda_std = res.lambda;
  params.iterations = res.iterations;
  params.residual = res.residual;

  // back-transform to the original basis scale
  params.lambda1 = Vector::Zero(L);
  params.lambda0 = res.lambda(0);
  for (Eigen::Index j = 0; j < L; ++j) {
    params.lambda1(j) = res.lambda(j + 1) / params.standardization.sd(j);
    params.lambda0 -= res.lambda(j + 1) * params.standardization.mean(j) /
                      params.standardization.sd(j);
  }
  return params;
}

inline double density_ratio(const TiltingParams& params, const Eigen::Ref<const Vector>& x) {
  return std::exp(params.log_ratio(x));
}

// Max-abs calibration discrepancy over the L+1 constraints, scaled by N.
inline double balancing_residual(const Sample& s, const BalancingDesign& design,
                                 const Vector& omega) {
  Matrix Zr = design_matrix(s, design, /*respondents_only=*/true);
  Matrix Z = design_matrix(s, design, /*respondents_only=*/false);
  Vector gap = Zr.transpose() * omega - Z.colwise().sum().transpose();
  return gap.cwiseAbs().maxCoeff() / static_cast<double>(s.n());
}

inline SmoothedWeights smoothed_weights(const Sample& s, const BalancingDesign& design,
                                        const TiltingParams& params) {
  SmoothedWeights w;
  w.c = params.c;
  w.iterations = params.iterations;
  const auto idx = s.respondent_indices();
  w.omega = Vector::Zero(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k)
    w.omega(static_cast<Eigen::Index>(k)) =
        1.0 + params.c * std::exp(params.log_ratio(s.X.row(idx[k]).transpose()));
  w.residual = balancing_residual(s, design, w.omega);
  return w;
}

}  // namespace pscal
