#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pscal/data.hpp"
#include "pscal/errors.hpp"
#include "pscal/rng.hpp"

namespace pscal {

// Orthonormal projection b(x) = W x found by minimizing the empirical
// conditional covariance trace
//   Trace{ G_Y - G_Y G_W (G_W + n*eps*I)^{-1} }
// with centered Gaussian Gram matrices, over W W' = I on the Grassmann
// manifold.
struct SDRProjection {
  Matrix W;                    // l x d, rows orthonormal
  double objective = 0.0;
  double bandwidth_y = 1.0;
  double bandwidth_wx = 1.0;
  double ridge = 1e-3;
  bool converged = false;
  int iterations = 0;
  std::vector<double> objective_path;  // accepted iterates, best restart
};

struct SdrOptions {
  double ridge = 1e-3;
  int restarts = 5;
  int max_iter = 150;
  double grad_tol = 1e-5;  // relative tangent-gradient norm
  std::uint64_t seed = 0;
};

namespace detail {

inline Matrix pairwise_sqdist(const Matrix& A) {
  Vector sq = A.rowwise().squaredNorm();
  Matrix D = -2.0 * (A * A.transpose());
  D.colwise() += sq;
  D.rowwise() += sq.transpose();
  return D.cwiseMax(0.0);
}

inline double median_distance(const Matrix& sqdist) {
  const auto m = sqdist.rows();
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) vals.push_back(std::sqrt(sqdist(i, j)));
  if (vals.empty()) return 1.0;
  auto mid = vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2);
  std::nth_element(vals.begin(), mid, vals.end());
  return *mid > 1e-12 ? *mid : 1.0;
}

// double-centering: G = H K H
inline void center_gram(Matrix& K) {
  Vector rowmean = K.rowwise().mean();
  const double total = rowmean.mean();
  K.colwise() -= rowmean;
  K.rowwise() -= rowmean.transpose();
  K.array() += total;
}

// Pivoted Cholesky factor R with G ~ R R', truncated at a relative trace
// tolerance; Gaussian Grams decay fast so the rank stays small.
inline Matrix pivoted_cholesky(const Matrix& G, double rel_tol = 1e-12) {
  const auto m = G.rows();
  Vector diag = G.diagonal();
  const double trace0 = std::max(diag.sum(), 1e-300);
  const Eigen::Index rmax = m;
  Matrix R(m, rmax);
  std::vector<Eigen::Index> pivots;
  Eigen::Index r = 0;
  for (; r < rmax; ++r) {
    Eigen::Index piv = 0;
    const double dmax = diag.maxCoeff(&piv);
    if (dmax <= rel_tol * trace0) break;
    Vector col = G.col(piv);
    for (Eigen::Index k = 0; k < r; ++k) col -= R(piv, k) * R.col(k);
    R.col(r) = col / std::sqrt(dmax);
    diag -= R.col(r).cwiseProduct(R.col(r));
    diag = diag.cwiseMax(0.0);
    diag(piv) = 0.0;
  }
  return R.leftCols(r);
}

struct SdrObjectiveParts {
  double value = 0.0;
  double bandwidth = 1.0;
  Matrix Kw;       // uncentered Gaussian Gram of Wx
  Matrix Gw;       // centered
  Eigen::LLT<Matrix> llt;  // of Gw + m*eps*I
  Matrix Q;        // L^{-1} Ry
};

// Objective via Trace{G_Y - G_Y G_w M} = m*eps*Trace(G_Y M) with
// G_Y = Ry Ry'.
inline bool sdr_objective(const Matrix& X, const Matrix& Ry, const Matrix& W, double eps,
                          SdrObjectiveParts& out) {
  const auto m = X.rows();
  Matrix WX = X * W.transpose();
  Matrix D2 = pairwise_sqdist(WX);
  out.bandwidth = median_distance(D2);
  out.Kw = (-D2 / (2.0 * out.bandwidth * out.bandwidth)).array().exp();
  out.Gw = out.Kw;
  center_gram(out.Gw);
  Matrix A = out.Gw + static_cast<double>(m) * eps * Matrix::Identity(m, m);
  out.llt.compute(A);
  if (out.llt.info() != Eigen::Success) return false;
  out.Q = out.llt.matrixL().solve(Ry);
  out.value = static_cast<double>(m) * eps * out.Q.squaredNorm();
  return true;
}

// Euclidean gradient of the objective in W at fixed bandwidth.
inline Matrix sdr_gradient(const Matrix& X, const Matrix& W,
                           const SdrObjectiveParts& parts, double eps) {
  const auto m = X.rows();
  // M G_Y M = P P' with P = L^{-T} Q
  Matrix P = parts.llt.matrixL().transpose().solve(parts.Q);
  // coefficient matrix m*eps * H (M G_Y M) H: center P's columns
  Eigen::RowVectorXd colmean = P.colwise().mean();
  Matrix Pc = P.rowwise() - colmean;
  Matrix C = (static_cast<double>(m) * eps) * (Pc * Pc.transpose());
  C.array() *= parts.Kw.array();
  Vector rowsum = C.rowwise().sum();
  Matrix inner = X.transpose() * (rowsum.asDiagonal() * X) - X.transpose() * (C * X);
  return (2.0 / (parts.bandwidth * parts.bandwidth)) * (W * inner);
}

// QR retraction onto the Stiefel manifold (rows of W orthonormal).
inline Matrix qr_retract(const Matrix& Wt /* d x l */) {
  Eigen::HouseholderQR<Matrix> qr(Wt);
  Matrix Qf = qr.householderQ() * Matrix::Identity(Wt.rows(), Wt.cols());
  Matrix Rf = qr.matrixQR().topRows(Wt.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < Wt.cols(); ++j)
    if (Rf(j, j) < 0.0) Qf.col(j) = -Qf.col(j);
  return Qf;
}

}  // namespace detail

// Objective value at a given W; exposed for diagnostics and tests.
inline double sdr_objective_value(const Matrix& X, const Vector& y, const Matrix& W,
                                  double ridge = 1e-3) {
  Matrix Ky = detail::pairwise_sqdist(y);
  const double by = detail::median_distance(Ky);
  Matrix KyG = (-Ky / (2.0 * by * by)).array().exp();
  detail::center_gram(KyG);
  Matrix Ry = detail::pivoted_cholesky(KyG);
  detail::SdrObjectiveParts parts;
  if (!detail::sdr_objective(X, Ry, W, ridge, parts))
    throw NoConvergence("objective factorization failed");
  return parts.value;
}

namespace detail {

struct RestartFit {
  Matrix W;
  double value = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
  double bandwidth = 1.0;
  std::vector<double> path;
};

inline RestartFit sdr_descend(const Matrix& X, const Matrix& Ry, Matrix W,
                              const SdrOptions& opts) {
  RestartFit fit;
  SdrObjectiveParts parts;
  if (!sdr_objective(X, Ry, W, opts.ridge, parts)) return fit;
  double value = parts.value;
  fit.path.push_back(value);

  Matrix V_prev, T_prev;
  double step = 0.0;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    fit.iterations = iter;
    Matrix grad = sdr_gradient(X, W, parts, opts.ridge);
    // tangent projection on the transposed frame
    Matrix V = W.transpose();            // d x l
    Matrix Gv = grad.transpose();        // d x l
    Matrix S = V.transpose() * Gv;       // l x l
    Matrix tangent = Gv - 0.5 * V * (S + S.transpose());
    const double gnorm = tangent.norm();
    if (gnorm <= opts.grad_tol * std::max(1.0, std::abs(value))) {
      fit.converged = true;
      break;
    }

    // Barzilai-Borwein step, clamped near the last accepted step so the
    // backtracking stays cheap
    if (iter == 0) {
      step = 0.1 * std::max(1.0, std::abs(value)) / (gnorm * gnorm);
    } else {
      Matrix sk = V - V_prev;
      Matrix yk = tangent - T_prev;
      const double sy = std::abs((sk.array() * yk.array()).sum());
      const double yy = (yk.array() * yk.array()).sum();
      if (sy > 1e-300 && yy > 1e-300)
        step = std::min(std::max(sy / yy, step / 16.0), step * 16.0);
    }
    V_prev = V;
    T_prev = tangent;

    bool moved = false;
    double t = step;
    for (int k = 0; k < 30; ++k) {
      Matrix Wc = qr_retract(V - t * tangent).transpose();
      SdrObjectiveParts cand;
      if (sdr_objective(X, Ry, Wc, opts.ridge, cand) &&
          cand.value <= value - 1e-4 * t * gnorm * gnorm) {
        W = std::move(Wc);
        parts = std::move(cand);
        value = parts.value;
        fit.path.push_back(value);
        moved = true;
        step = t;
        break;
      }
      t *= 0.25;
    }
    if (!moved) break;
  }
  fit.W = W;
  fit.value = value;
  fit.bandwidth = parts.bandwidth;
  return fit;
}

}  // namespace detail

// Fits the projection on respondents only, best of opts.restarts random
// orthonormal starts.
inline SDRProjection kernel_sdr(const Sample& s, Eigen::Index l,
                                const SdrOptions& opts = {}) {
  validate(s);
  const auto idx = s.respondent_indices();
  const auto m = static_cast<Eigen::Index>(idx.size());
  const auto d = s.d();
  if (l < 1 || l > d) throw NoConvergence("target dimension must satisfy 1 <= l <= d");

  Matrix X(m, d);
  Vector y(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    X.row(k) = s.X.row(idx[static_cast<std::size_t>(k)]);
    y(k) = s.y(idx[static_cast<std::size_t>(k)]);
  }

  Matrix Ky = detail::pairwise_sqdist(y);
  const double by = detail::median_distance(Ky);
  Matrix KyG = (-Ky / (2.0 * by * by)).array().exp();
  detail::center_gram(KyG);
  Matrix Ry = detail::pivoted_cholesky(KyG);

  detail::RestartFit best;
  for (int r = 0; r < std::max(1, opts.restarts); ++r) {
    Rng rng = Rng::stream(opts.seed, static_cast<std::uint64_t>(r));
    Matrix Wt(d, l);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < l; ++j) Wt(i, j) = rng.normal();
    Matrix W0 = detail::qr_retract(Wt).transpose();
    auto fit = detail::sdr_descend(X, Ry, W0, opts);
    if (fit.value < best.value) best = std::move(fit);
  }
  if (!best.W.size()) throw NoConvergence("all restarts failed to evaluate the objective");

  SDRProjection out;
  out.W = best.W;
  out.objective = best.value;
  out.bandwidth_y = by;
  out.bandwidth_wx = best.bandwidth;
  out.ridge = opts.ridge;
  out.converged = best.converged;
  out.iterations = best.iterations;
  out.objective_path = std::move(best.path);
  return out;
}

}  // namespace pscal
