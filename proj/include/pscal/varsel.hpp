#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "pscal/calibration.hpp"
#include "pscal/data.hpp"
#include "pscal/errors.hpp"
#include "pscal/estimators.hpp"
#include "pscal/inference.hpp"

namespace pscal {

// SCAD penalty derivative q_lambda(|alpha|), knot parameter a = 3.7.
inline double scad_penalty_deriv(double alpha_abs, double lambda, double a = 3.7) {
  if (alpha_abs < lambda) return lambda;
  const double excess = a * lambda - alpha_abs;
  return excess > 0.0 ? lambda * excess / ((a - 1.0) * lambda) : 0.0;
}

struct SelectionResult {
  std::vector<Eigen::Index> support;  // selected covariate columns, 0-based
  Vector alpha;                       // d+1 working-model coefficients, intercept first
  double lambda = 0.0;                // criterion-chosen penalty level
  std::vector<std::pair<double, double>> criterion_path;  // (lambda, BIC)
};

struct SelectOptions {
  std::vector<double> lambda_grid;  // empty = automatic log-spaced grid
  int grid_size = 30;
  double a = 3.7;
  double zero_tol = 1e-6;
  double tol = 1e-10;
  int max_iter = 5000;  // iterations are O(d^3); contraction can be slow near lambda
};

namespace detail {

// Iterated local quadratic approximation for the penalized least-squares
// estimating equations; the intercept is never penalized. Coordinates that
// shrink under the pruning cutoff are fixed at zero and dropped from the
// working system; without this the quadratic approximation only reaches
// zero asymptotically.
inline Vector scad_lqa(const Matrix& Xt, const Vector& y, double lambda, double a,
                       const Vector& start, double tol, int max_iter) {
  const auto K = Xt.cols();
  const double n1 = static_cast<double>(Xt.rows());
  Matrix A0 = (2.0 / n1) * (Xt.transpose() * Xt);
  Vector b0 = (2.0 / n1) * (Xt.transpose() * y);
  const double prune_tol = std::max(1e-8, 1e-2 * lambda);

  Vector alpha = start;
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < K; ++j) active.push_back(j);

  for (int iter = 0; iter < max_iter; ++iter) {
    const auto Ka = static_cast<Eigen::Index>(active.size());
    Matrix A(Ka, Ka);
    Vector b(Ka);
    for (Eigen::Index r = 0; r < Ka; ++r) {
      b(r) = b0(active[static_cast<std::size_t>(r)]);
      for (Eigen::Index c = 0; c < Ka; ++c)
        A(r, c) = A0(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(c)]);
    }
    for (Eigen::Index r = 0; r < Ka; ++r) {
      const Eigen::Index j = active[static_cast<std::size_t>(r)];
      if (j == 0) continue;
      const double mag = std::max(std::abs(alpha(j)), 1e-8);
      A(r, r) += scad_penalty_deriv(std::abs(alpha(j)), lambda, a) / mag;
    }
    Vector sol = A.ldlt().solve(b);
    if (!sol.allFinite()) throw NoConvergence("penalized update produced non-finite values");

    Vector next = Vector::Zero(K);
    for (Eigen::Index r = 0; r < Ka; ++r) next(active[static_cast<std::size_t>(r)]) = sol(r);
    const double delta = (next - alpha).cwiseAbs().maxCoeff();
    alpha = std::move(next);

    std::vector<Eigen::Index> still;
    for (auto j : active) {
      if (j != 0 && std::abs(alpha(j)) < prune_tol)
        alpha(j) = 0.0;
      else
        still.push_back(j);
    }
    const bool pruned = still.size() != active.size();
    active = std::move(still);
    if (delta < tol && !pruned) return alpha;
  }
  throw NoConvergence("penalized estimating equations did not stabilize");
}

}  // namespace detail

// SCAD-penalized working regression of y on (1, x) over respondents; the
// penalty level is tuned by a BIC-type criterion over the grid.
inline SelectionResult penalized_select(const Sample& s, const SelectOptions& opts = {}) {
  validate(s);
  const auto idx = s.respondent_indices();
  const auto d = s.d();
  const auto m = static_cast<Eigen::Index>(idx.size());
  if (m < d + 2) throw RankDeficient("need at least d + 2 respondents for selection");

  Matrix Xt(m, d + 1);
  Vector y(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    Xt(k, 0) = 1.0;
    Xt.row(k).tail(d) = s.X.row(idx[static_cast<std::size_t>(k)]);
    y(k) = s.y(idx[static_cast<std::size_t>(k)]);
  }
  if (detail::matrix_rank(Xt) < d + 1)
    throw RankDeficient("respondent covariate matrix is rank deficient");

  Vector ols = (Xt.transpose() * Xt).ldlt().solve(Xt.transpose() * y);

  std::vector<double> grid = opts.lambda_grid;
  if (grid.empty()) {
    const double ybar = y.mean();
    double lambda_max = 0.0;
    for (Eigen::Index j = 1; j <= d; ++j)
      lambda_max = std::max(
          lambda_max, std::abs((2.0 / static_cast<double>(m)) *
                               Xt.col(j).dot(y - Vector::Constant(m, ybar))));
    lambda_max = std::max(lambda_max, 1e-8);
    const double lambda_min = 5e-3 * lambda_max;
    for (int g = 0; g < opts.grid_size; ++g) {
      const double t = static_cast<double>(g) / (opts.grid_size - 1);
      grid.push_back(lambda_max * std::pow(lambda_min / lambda_max, t));
    }
  }

  SelectionResult best;
  double best_bic = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (double lambda : grid) {
    Vector alpha;
    if (lambda <= 0.0) {
      alpha = ols;
    } else {
      try {
        alpha = detail::scad_lqa(Xt, y, lambda, opts.a, ols, opts.tol, opts.max_iter);
      } catch (const NoConvergence&) {
        ++stalled;  // skip this penalty level
        continue;
      }
      for (Eigen::Index j = 1; j <= d; ++j)
        if (std::abs(alpha(j)) < opts.zero_tol) alpha(j) = 0.0;
    }
    const double rss = (y - Xt * alpha).squaredNorm();
    Eigen::Index df = 0;
    for (Eigen::Index j = 1; j <= d; ++j) df += alpha(j) != 0.0 ? 1 : 0;
    const double bic = static_cast<double>(m) *
                           std::log(std::max(rss, 1e-300) / static_cast<double>(m)) +
                       static_cast<double>(df) * std::log(static_cast<double>(m));
    best.criterion_path.emplace_back(lambda, bic);
    if (bic < best_bic) {
      best_bic = bic;
      best.lambda = lambda;
      best.alpha = alpha;
    }
  }

  if (best.alpha.size() == 0)
    throw NoConvergence("no penalty level stabilized (" + std::to_string(stalled) +
                        " grid points stalled)");
  best.support.clear();
  for (Eigen::Index j = 1; j <= d; ++j)
    if (best.alpha(j) != 0.0) best.support.push_back(j - 1);
  return best;
}

struct TwoStageResult {
  SelectionResult selection;
  EstimateResult estimate;
};

// Select the calibration variables by penalized regression, then run the
// smoothed PS fit on the selected columns; selection uncertainty is ignored
// in the reported variance.
inline TwoStageResult two_stage_sps(const Sample& s, const SelectOptions& sel_opts = {},
                                    const SolverOptions& cal_opts = {}) {
  TwoStageResult out;
  out.selection = penalized_select(s, sel_opts);
  BalancingDesign design = out.selection.support.empty()
                               ? BalancingDesign::intercept_only()
                               : BalancingDesign::columns(out.selection.support);
  auto estfun = EstimatingFunction::mean();
  TiltingParams params = solve_tilting(s, design, cal_opts);
  SmoothedWeights w = smoothed_weights(s, design, params);
  auto sol = detail::solve_weighted_ee(s, w.omega, estfun);
  out.estimate.theta = sol.theta;
  out.estimate.method = "ip_two_stage";
  out.estimate.diagnostics.calibration_iterations = params.iterations;
  out.estimate.diagnostics.balancing_residual = w.residual;
  out.estimate.diagnostics.theta_iterations = sol.iterations;
  out.estimate.set_covariance(linearized_variance(s, design, params, sol.theta, estfun));
  return out;
}

}  // namespace pscal
