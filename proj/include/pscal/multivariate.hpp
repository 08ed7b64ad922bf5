#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pscal/calibration.hpp"
#include "pscal/data.hpp"
#include "pscal/errors.hpp"
#include "pscal/estimators.hpp"

namespace pscal {

// Disjoint, exhaustive decomposition by observed-column set; the complete
// pattern comes first, the rest in descending size.
struct PatternPartition {
  std::vector<std::vector<Eigen::Index>> observed_cols;  // per pattern
  std::vector<std::vector<Eigen::Index>> members;        // per pattern, unit ids
  std::vector<Eigen::Index> membership;                  // unit -> pattern
  Eigen::Index T() const { return static_cast<Eigen::Index>(members.size()); }
};

inline PatternPartition partition_patterns(const MultiSample& ms) {
  const auto n = ms.n();
  const auto p = ms.p();
  if (n < 1) throw NoCompleteCases("empty sample");

  std::vector<std::uint64_t> masks(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      if (ms.observed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])
        masks[static_cast<std::size_t>(i)] |= (1ULL << j);

  const std::uint64_t full = p >= 64 ? ~0ULL : ((1ULL << p) - 1);
  std::vector<std::uint64_t> unique_masks;
  std::vector<std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto m = masks[static_cast<std::size_t>(i)];
    auto it = std::find(unique_masks.begin(), unique_masks.end(), m);
    if (it == unique_masks.end()) {
      unique_masks.push_back(m);
      groups.emplace_back();
      groups.back().push_back(i);
    } else {
      groups[static_cast<std::size_t>(it - unique_masks.begin())].push_back(i);
    }
  }

  std::vector<std::size_t> order(unique_masks.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const bool ca = unique_masks[a] == full, cb = unique_masks[b] == full;
    if (ca != cb) return ca;
    if (groups[a].size() != groups[b].size()) return groups[a].size() > groups[b].size();
    return unique_masks[a] < unique_masks[b];
  });
  if (unique_masks[order[0]] != full)
    throw NoCompleteCases("no unit has every outcome observed");

  PatternPartition part;
  part.membership.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto src = order[k];
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < p; ++j)
      if (unique_masks[src] & (1ULL << j)) cols.push_back(j);
    part.observed_cols.push_back(std::move(cols));
    part.members.push_back(groups[src]);
    for (auto i : groups[src])
      part.membership[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(k);
  }
  return part;
}

// Basis specification for one pattern: linear terms in a subset of the
// pattern's observed outcome columns plus fully observed covariate columns.
struct PatternDesignSpec {
  std::vector<Eigen::Index> y_cols;
  std::vector<Eigen::Index> x_cols;
  Eigen::Index L() const {
    return static_cast<Eigen::Index>(y_cols.size() + x_cols.size());
  }
};

// Defaults: every observed outcome component of the pattern, plus every
// covariate column when covariates are supplied.
inline std::vector<PatternDesignSpec> default_pattern_designs(const MultiSample& ms,
                                                              const PatternPartition& part) {
  std::vector<PatternDesignSpec> specs(static_cast<std::size_t>(part.T()));
  for (Eigen::Index t = 1; t < part.T(); ++t) {
    auto& spec = specs[static_cast<std::size_t>(t)];
    spec.y_cols = part.observed_cols[static_cast<std::size_t>(t)];
    for (Eigen::Index j = 0; j < ms.d(); ++j) spec.x_cols.push_back(j);
  }
  return specs;
}

struct PatternTilting {
  // index 0 corresponds to the complete pattern and stays empty
  std::vector<Vector> phi_std;             // internal-scale coefficients
  std::vector<Standardization> scaling;
  std::vector<PatternDesignSpec> designs;  // realized (possibly truncated)
  std::vector<double> ratio;               // N_t / N_1
  std::vector<double> residual;
  std::vector<int> iterations;
  std::vector<bool> truncated;             // basis dropped for a small pattern
};

namespace detail {

inline Vector pattern_basis_row(const MultiSample& ms, const PatternDesignSpec& spec,
                                Eigen::Index i) {
  Vector b(spec.L());
  Eigen::Index k = 0;
  for (auto c : spec.y_cols) b(k++) = ms.Y(i, c);
  for (auto c : spec.x_cols) b(k++) = ms.X(i, c);
  return b;
}

inline Matrix pattern_design_matrix(const MultiSample& ms, const PatternDesignSpec& spec,
                                    const std::vector<Eigen::Index>& rows) {
  Matrix Z(static_cast<Eigen::Index>(rows.size()), spec.L() + 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Z(static_cast<Eigen::Index>(r), 0) = 1.0;
    Z.row(static_cast<Eigen::Index>(r)).tail(spec.L()) =
        pattern_basis_row(ms, spec, rows[r]).transpose();
  }
  return Z;
}

}  // namespace detail

// Per-pattern exponential tilting of the complete cases toward each
// incomplete pattern's observed moments.
inline PatternTilting solve_pattern_tilting(const PatternPartition& part,
                                            const MultiSample& ms,
                                            std::vector<PatternDesignSpec> specs,
                                            const SolverOptions& opts = {}) {
  const auto T = part.T();
  const auto& s1 = part.members[0];
  const auto n1 = static_cast<Eigen::Index>(s1.size());
  PatternTilting out;
  out.phi_std.resize(static_cast<std::size_t>(T));
  out.scaling.resize(static_cast<std::size_t>(T));
  out.designs.resize(static_cast<std::size_t>(T));
  out.ratio.assign(static_cast<std::size_t>(T), 0.0);
  out.residual.assign(static_cast<std::size_t>(T), 0.0);
  out.iterations.assign(static_cast<std::size_t>(T), 0);
  out.truncated.assign(static_cast<std::size_t>(T), false);

  for (Eigen::Index t = 1; t < T; ++t) {
    auto spec = specs[static_cast<std::size_t>(t)];
    const auto& st = part.members[static_cast<std::size_t>(t)];
    const auto nt = static_cast<Eigen::Index>(st.size());

    // small patterns keep only as many basis columns as they can support
    while (spec.L() > 0 && nt < spec.L() + 2) {
      if (!spec.x_cols.empty())
        spec.x_cols.pop_back();
      else
        spec.y_cols.pop_back();
      out.truncated[static_cast<std::size_t>(t)] = true;
    }

    Matrix Z1 = detail::pattern_design_matrix(ms, spec, s1);
    if (detail::matrix_rank(Z1) < spec.L() + 1)
      throw RankDeficient("pattern " + std::to_string(t) +
                          ": complete-case design is rank deficient");
    Standardization scale = Standardization::fit(Z1.rightCols(spec.L()));
    scale.apply(Z1);
    Matrix Zt = detail::pattern_design_matrix(ms, spec, st);
    scale.apply(Zt);

    const double c = static_cast<double>(nt) / static_cast<double>(n1);
    Vector target = Zt.colwise().sum().transpose();
    try {
      auto res = detail::solve_exp_moment(Z1, c, target, static_cast<double>(ms.n()), opts);
      out.phi_std[static_cast<std::size_t>(t)] = res.lambda;
      out.residual[static_cast<std::size_t>(t)] = res.residual;
      out.iterations[static_cast<std::size_t>(t)] = res.iterations;
    } catch (const Infeasible& e) {
      throw Infeasible("pattern " + std::to_string(t) + ": " + e.what());
    }
    out.scaling[static_cast<std::size_t>(t)] = std::move(scale);
    out.designs[static_cast<std::size_t>(t)] = std::move(spec);
    out.ratio[static_cast<std::size_t>(t)] = c;
  }
  return out;
}

namespace detail {

inline double pattern_log_ratio(const MultiSample& ms, const PatternTilting& tilt,
                                Eigen::Index t, Eigen::Index i) {
  const auto& spec = tilt.designs[static_cast<std::size_t>(t)];
  const auto& scale = tilt.scaling[static_cast<std::size_t>(t)];
  const auto& phi = tilt.phi_std[static_cast<std::size_t>(t)];
  const Vector b = pattern_basis_row(ms, spec, i);
  double eta = phi(0);
  for (Eigen::Index j = 0; j < b.size(); ++j)
    eta += phi(j + 1) * (b(j) - scale.mean(j)) / scale.sd(j);
  return eta;
}

}  // namespace detail

// Final weights over the complete cases: 1 + sum_t (N_t/N_1) r_t.
inline Vector mv_weights(const PatternPartition& part, const PatternTilting& tilt,
                         const MultiSample& ms) {
  const auto& s1 = part.members[0];
  Vector omega = Vector::Ones(static_cast<Eigen::Index>(s1.size()));
  for (Eigen::Index t = 1; t < part.T(); ++t) {
    const double c = tilt.ratio[static_cast<std::size_t>(t)];
    for (std::size_t k = 0; k < s1.size(); ++k)
      omega(static_cast<Eigen::Index>(k)) +=
          c * std::exp(detail::pattern_log_ratio(ms, tilt, static_cast<Eigen::Index>(t),
                                                 s1[k]));
  }
  return omega;
}

// Max-abs per-pattern calibration discrepancy, scaled by N.
inline double mv_balancing_residual(const PatternPartition& part, const PatternTilting& tilt,
                                    const MultiSample& ms) {
  double worst = 0.0;
  const auto& s1 = part.members[0];
  for (Eigen::Index t = 1; t < part.T(); ++t) {
    const auto& spec = tilt.designs[static_cast<std::size_t>(t)];
    const double c = tilt.ratio[static_cast<std::size_t>(t)];
    Matrix Z1 = detail::pattern_design_matrix(ms, spec, s1);
    Matrix Zt = detail::pattern_design_matrix(ms, spec,
                                              part.members[static_cast<std::size_t>(t)]);
    Vector lhs = Vector::Zero(spec.L() + 1);
    for (std::size_t k = 0; k < s1.size(); ++k)
      lhs += c * std::exp(detail::pattern_log_ratio(ms, tilt, t, s1[k])) *
             Z1.row(static_cast<Eigen::Index>(k)).transpose();
    Vector gap = lhs - Zt.colwise().sum().transpose();
    worst = std::max(worst, gap.cwiseAbs().maxCoeff() / static_cast<double>(ms.n()));
  }
  return worst;
}

namespace detail {

inline ThetaSolve solve_mv_weighted_ee(const MultiSample& ms,
                                       const std::vector<Eigen::Index>& s1,
                                       const Vector& omega,
                                       const OutcomeEstimatingFunction& estfun,
                                       const ThetaSolveOptions& opts = {}) {
  const double N = static_cast<double>(ms.n());
  auto eval_h = [&](const Vector& theta) {
    Vector h = Vector::Zero(estfun.p);
    for (std::size_t k = 0; k < s1.size(); ++k)
      h += omega(static_cast<Eigen::Index>(k)) *
           estfun.eval(theta, ms.Y.row(s1[k]).transpose());
    return Vector(h / N);
  };
  auto eval_j = [&](const Vector& theta) {
    Matrix J = Matrix::Zero(estfun.p, estfun.p);
    for (std::size_t k = 0; k < s1.size(); ++k)
      J += omega(static_cast<Eigen::Index>(k)) *
           estfun.jac(theta, ms.Y.row(s1[k]).transpose());
    return Matrix(J / N);
  };
  return solve_estimating_equation(eval_h, eval_j, estfun.p, opts);
}

}  // namespace detail

struct MvFit {
  PatternPartition partition;
  PatternTilting tilting;
  Vector omega;  // over complete cases
  EstimateResult estimate;
};

inline MvFit mv_sps_estimate(const MultiSample& ms,
                             const OutcomeEstimatingFunction& estfun,
                             const SolverOptions& cal_opts = {},
                             const ThetaSolveOptions& theta_opts = {}) {
  MvFit fit;
  fit.partition = partition_patterns(ms);
  auto specs = default_pattern_designs(ms, fit.partition);
  fit.tilting = solve_pattern_tilting(fit.partition, ms, specs, cal_opts);
  fit.omega = mv_weights(fit.partition, fit.tilting, ms);
  auto sol = detail::solve_mv_weighted_ee(ms, fit.partition.members[0], fit.omega, estfun,
                                          theta_opts);
  fit.estimate.theta = sol.theta;
  fit.estimate.method = "ip_mv";
  fit.estimate.diagnostics.theta_iterations = sol.iterations;
  fit.estimate.diagnostics.balancing_residual =
      mv_balancing_residual(fit.partition, fit.tilting, ms);
  return fit;
}

// Influence-based variance for the multivariate fit.
inline Matrix mv_linearized_variance(const MultiSample& ms, const PatternPartition& part,
                                     const PatternTilting& tilt, const Vector& theta_hat,
                                     const OutcomeEstimatingFunction& estfun) {
  const auto n = ms.n();
  const double N = static_cast<double>(n);
  const auto p = estfun.p;
  const auto& s1 = part.members[0];
  const auto n1 = static_cast<Eigen::Index>(s1.size());

  Matrix U(n1, p);
  for (Eigen::Index k = 0; k < n1; ++k)
    U.row(k) = estfun.eval(theta_hat, ms.Y.row(s1[static_cast<std::size_t>(k)]).transpose())
                   .transpose();

  Matrix d = Matrix::Zero(n, p);
  Matrix tau = Matrix::Zero(p, p);
  Vector omega = Vector::Ones(n1);

  for (Eigen::Index t = 1; t < part.T(); ++t) {
    const auto& spec = tilt.designs[static_cast<std::size_t>(t)];
    const double c = tilt.ratio[static_cast<std::size_t>(t)];

    Matrix Z1 = detail::pattern_design_matrix(ms, spec, s1);
    tilt.scaling[static_cast<std::size_t>(t)].apply(Z1);
    Vector r(n1);
    for (Eigen::Index k = 0; k < n1; ++k)
      r(k) = std::exp(detail::pattern_log_ratio(ms, tilt, t, s1[static_cast<std::size_t>(k)]));

    Matrix A = Z1.transpose() * r.asDiagonal() * Z1;
    Matrix B = Z1.transpose() * (r.asDiagonal() * U);
    Eigen::LDLT<Matrix> ldlt(A);
    if (ldlt.info() != Eigen::Success)
      throw RankDeficient("pattern regression normal equations are singular");
    Matrix beta = ldlt.solve(B);  // K x p
    Matrix fitted1 = Z1 * beta;   // over complete cases

    for (Eigen::Index k = 0; k < n1; ++k) {
      const Eigen::Index i = s1[static_cast<std::size_t>(k)];
      d.row(i) += c * r(k) * (U.row(k) - fitted1.row(k));
      omega(k) += c * r(k);
    }
    Matrix Zt = detail::pattern_design_matrix(ms, spec,
                                              part.members[static_cast<std::size_t>(t)]);
    tilt.scaling[static_cast<std::size_t>(t)].apply(Zt);
    Matrix fitted_t = Zt * beta;
    const auto& st = part.members[static_cast<std::size_t>(t)];
    for (std::size_t k = 0; k < st.size(); ++k)
      d.row(st[k]) += fitted_t.row(static_cast<Eigen::Index>(k));
  }

  for (Eigen::Index k = 0; k < n1; ++k) {
    const Eigen::Index i = s1[static_cast<std::size_t>(k)];
    d.row(i) += U.row(k);
    tau += omega(k) * estfun.jac(theta_hat, ms.Y.row(i).transpose());
  }
  tau /= N;

  Eigen::RowVectorXd dbar = d.colwise().mean();
  Matrix centered = d.rowwise() - dbar;
  Matrix sigma_dd = centered.transpose() * centered / (N - 1.0);

  Eigen::FullPivLU<Matrix> lu(tau);
  if (!lu.isInvertible()) throw SingularTau("tau estimate is singular");
  Matrix tau_inv = lu.inverse();
  Matrix V = tau_inv * sigma_dd * tau_inv.transpose() / N;
  return Matrix(0.5 * (V + V.transpose()));
}

}  // namespace pscal
