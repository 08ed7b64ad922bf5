#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pscal/calibration.hpp"
#include "pscal/data.hpp"
#include "pscal/errors.hpp"
#include "pscal/estimators.hpp"
#include "pscal/inference.hpp"
#include "pscal/parallel.hpp"
#include "pscal/rng.hpp"
#include "pscal/stats.hpp"

namespace pscal {

enum class RmKind { rm1, rm2 };
enum class OrKind { or1, or2 };

// Simulated dataset together with the generating truth, which only the
// oracle comparators are allowed to see.
struct SimDraw {
  Sample sample;
  Vector true_pi;      // P(delta = 1 | x) per unit
  Vector true_logit;   // its logit, where defined
  Vector y_full;       // outcome before masking
  double theta0 = 0.0;
  double marginal_response = 0.0;  // P(delta = 1)
};

// E[sigmoid(Z)], Z ~ N(mu, sigma^2), by Simpson quadrature.
inline double normal_expect_sigmoid(double mu, double sigma, int points = 4001) {
  const double lo = mu - 10.0 * sigma, hi = mu + 10.0 * sigma;
  const double h = (hi - lo) / (points - 1);
  double acc = 0.0;
  for (int k = 0; k < points; ++k) {
    const double t = lo + h * k;
    const double z = (t - mu) / sigma;
    const double f = sigmoid(t) * std::exp(-0.5 * z * z);
    const double w = (k == 0 || k == points - 1) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    acc += w * f;
  }
  return acc * h / (3.0 * sigma * std::sqrt(2.0 * M_PI));
}

inline double theta0_study_one(RmKind rm, OrKind orm) {
  // moments of the covariate law: x_k ~ N(2,1) except x4 under rm2,
  // a 0.6/0.4 mixture of N(3,1) and N(1,1) with mean 2.2 and E x4^2 = 6.8
  const double m4 = rm == RmKind::rm1 ? 2.0 : 2.2;
  const double m4sq = rm == RmKind::rm1 ? 5.0 : 6.8;
  if (orm == OrKind::or1) return 1.0 + 2.0 + 2.0 + 2.0 + m4;
  return 1.0 + 0.5 * (2.0 * 2.0) + 0.5 * (5.0 * m4sq);
}

inline double rm1_marginal_response_rate() {
  // eta = 1 - x1 + .5 x2 + .5 x3 - .25 x4 with x_k ~ N(2,1)
  const double mu = 1.0 - 2.0 + 1.0 + 1.0 - 0.5;
  const double sd = std::sqrt(1.0 + 0.25 + 0.25 + 0.0625);
  return normal_expect_sigmoid(mu, sd);
}

inline SimDraw gen_study_one(RmKind rm, OrKind orm, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  SimDraw draw;
  Matrix X(n, 4);
  Vector y(n);
  std::vector<std::uint8_t> delta(static_cast<std::size_t>(n));
  draw.true_pi = Vector::Zero(n);
  draw.true_logit = Vector::Zero(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    if (rm == RmKind::rm1) {
      for (int k = 0; k < 4; ++k) X(i, k) = rng.normal(2.0, 1.0);
      const double eta = 1.0 - X(i, 0) + 0.5 * X(i, 1) + 0.5 * X(i, 2) - 0.25 * X(i, 3);
      const double pi = sigmoid(eta);
      delta[static_cast<std::size_t>(i)] = rng.bernoulli(pi) ? 1 : 0;
      draw.true_pi(i) = pi;
      draw.true_logit(i) = eta;
    } else {
      const bool resp = rng.bernoulli(0.6);
      delta[static_cast<std::size_t>(i)] = resp ? 1 : 0;
      for (int k = 0; k < 3; ++k) X(i, k) = rng.normal(2.0, 1.0);
      X(i, 3) = resp ? rng.normal(3.0, 1.0) : rng.normal(1.0, 1.0);
      // P(delta=1 | x) from the mixture, linear in x4 on the logit scale
      const double eta = std::log(1.5) + 2.0 * X(i, 3) - 4.0;
      draw.true_pi(i) = sigmoid(eta);
      draw.true_logit(i) = eta;
    }
    const double e = rng.normal();
    if (orm == OrKind::or1)
      y(i) = 1.0 + X(i, 0) + X(i, 1) + X(i, 2) + X(i, 3) + e;
    else
      y(i) = 1.0 + 0.5 * X(i, 0) * X(i, 1) +
             0.5 * X(i, 2) * X(i, 2) * X(i, 3) * X(i, 3) + e;
  }
  draw.y_full = y;
  draw.sample = Sample::masked(std::move(X), std::move(y), std::move(delta));
  draw.theta0 = theta0_study_one(rm, orm);
  draw.marginal_response =
      rm == RmKind::rm1 ? rm1_marginal_response_rate() : 0.6;
  return draw;
}

inline SimDraw gen_study_two(int scenario, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  SimDraw draw;
  const double phi = scenario == 2 ? 1.0 : 0.0;
  Matrix X(n, 3);
  Vector y(n);
  std::vector<std::uint8_t> delta(static_cast<std::size_t>(n));
  draw.true_pi = Vector::Zero(n);
  draw.true_logit = Vector::Zero(n);

  // var(x) = I except corr(x2, x3) = 0.5
  const double chol22 = 1.0, chol32 = 0.5, chol33 = std::sqrt(0.75);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z1 = rng.normal(), z2 = rng.normal(), z3 = rng.normal();
    X(i, 0) = 1.0 + z1;
    X(i, 1) = 1.0 + chol22 * z2;
    X(i, 2) = 1.0 + chol32 * z2 + chol33 * z3;
    y(i) = 1.0 + 0.5 * X(i, 0) - X(i, 1) + rng.normal();
    const double eta = -X(i, 0) + phi * (X(i, 1) - 1.0) + X(i, 2);
    const double pi = sigmoid(eta);
    delta[static_cast<std::size_t>(i)] = rng.bernoulli(pi) ? 1 : 0;
    draw.true_pi(i) = pi;
    draw.true_logit(i) = eta;
  }
  draw.y_full = y;
  draw.sample = Sample::masked(std::move(X), std::move(y), std::move(delta));
  draw.theta0 = 0.5;
  draw.marginal_response =
      normal_expect_sigmoid(0.0, std::sqrt(scenario == 2 ? 4.0 : 2.0));
  return draw;
}

// Inverse weighting with the generating density ratio itself, no smoothing.
inline EstimateResult raw_ps_estimate(const SimDraw& draw, const EstimatingFunction& estfun) {
  const Sample& s = draw.sample;
  const auto idx = s.respondent_indices();
  const double n1 = static_cast<double>(idx.size());
  const double n0 = static_cast<double>(s.n()) - n1;
  const double p = draw.marginal_response;
  Vector w(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double r = std::exp(-draw.true_logit(idx[k])) * p / (1.0 - p);
    w(static_cast<Eigen::Index>(k)) = 1.0 + (n0 / n1) * r;
  }
  auto sol = detail::solve_weighted_ee(s, w, estfun);
  EstimateResult out;
  out.theta = sol.theta;
  out.method = "raw_ps";
  out.diagnostics.theta_iterations = sol.iterations;
  return out;
}

enum class MethodKind { ip, mle, cbps, ebps, dr_true_pi, raw_ps };

inline const char* method_name(MethodKind k) {
  switch (k) {
    case MethodKind::ip: return "ip";
    case MethodKind::mle: return "mle";
    case MethodKind::cbps: return "cbps";
    case MethodKind::ebps: return "ebps";
    case MethodKind::dr_true_pi: return "dr_true_pi";
    case MethodKind::raw_ps: return "raw_ps";
  }
  return "?";
}

struct MethodSpec {
  MethodKind kind = MethodKind::ip;
  std::vector<Eigen::Index> design_cols;  // balancing (or logistic) covariate columns
  std::string label;
};

struct SimConfig {
  std::string study = "two";  // "one" | "two"
  RmKind rm = RmKind::rm1;
  OrKind orm = OrKind::or1;
  int scenario = 1;
  Eigen::Index n = 1000;
  int replications = 1000;
  std::uint64_t seed = 1;
  std::vector<MethodSpec> methods;
  bool with_variance = false;  // linearized variance + coverage for ip methods
  int threads = 0;
  double max_failure_rate = 0.05;
};

struct MetricsRow {
  std::string method;
  std::string design;
  int replications = 0;
  int failures = 0;
  double theta0 = 0.0;
  double bias = 0.0;
  double se = 0.0;
  double rmse = 0.0;
  double mean_var = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double max_residual = 0.0;
  std::vector<double> draws;  // successful replicate estimates, replicate order
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  double theta0 = 0.0;
};

inline std::string design_label(const std::vector<Eigen::Index>& cols) {
  if (cols.empty()) return "1";
  std::string out = "1";
  for (auto c : cols) out += ",x" + std::to_string(c + 1);
  return out;
}

inline std::vector<MethodSpec> default_methods_study_one() {
  std::vector<Eigen::Index> all{0, 1, 2, 3};
  return {MethodSpec{MethodKind::ip, all, "ip"},
          MethodSpec{MethodKind::mle, all, "mle"},
          MethodSpec{MethodKind::cbps, all, "cbps"},
          MethodSpec{MethodKind::ebps, all, "ebps"}};
}

inline std::vector<MethodSpec> default_methods_study_two() {
  return {MethodSpec{MethodKind::ip, {0, 1}, "ip_x1x2"},
          MethodSpec{MethodKind::ip, {0, 2}, "ip_x1x3"},
          MethodSpec{MethodKind::ip, {0, 1, 2}, "ip_x1x2x3"}};
}

inline MetricsTable run_monte_carlo(const SimConfig& cfg) {
  if (cfg.replications < 1) throw NoConvergence("need at least one replication");
  if (cfg.n < 10) throw NoConvergence("sample size too small");
  const auto n_methods = cfg.methods.size();
  if (n_methods == 0) throw NoConvergence("no methods configured");

  struct Cell {
    std::optional<double> theta;
    double var = std::numeric_limits<double>::quiet_NaN();
    double residual = 0.0;
  };
  std::vector<std::vector<Cell>> cells(
      static_cast<std::size_t>(cfg.replications),
      std::vector<Cell>(n_methods));
  double theta0 = 0.0;

  {
    // the truth does not depend on the replicate
    theta0 = cfg.study == "one" ? theta0_study_one(cfg.rm, cfg.orm) : 0.5;
  }

  auto estfun = EstimatingFunction::mean();
  parallel_for(
      static_cast<std::size_t>(cfg.replications),
      [&](std::size_t rep) {
        const std::uint64_t rep_seed = derive_stream_seed(cfg.seed, rep);
        SimDraw draw = cfg.study == "one"
                           ? gen_study_one(cfg.rm, cfg.orm, cfg.n, rep_seed)
                           : gen_study_two(cfg.scenario, cfg.n, rep_seed);
        for (std::size_t m = 0; m < n_methods; ++m) {
          const auto& spec = cfg.methods[m];
          Cell& cell = cells[rep][m];
          try {
            switch (spec.kind) {
              case MethodKind::ip: {
                auto design = BalancingDesign::columns(spec.design_cols);
                TiltingParams params = solve_tilting(draw.sample, design);
                SmoothedWeights w = smoothed_weights(draw.sample, design, params);
                auto sol = detail::solve_weighted_ee(draw.sample, w.omega, estfun);
                cell.theta = sol.theta(0);
                cell.residual = w.residual;
                if (cfg.with_variance)
                  cell.var = linearized_variance(draw.sample, design, params, sol.theta,
                                                 estfun)(0, 0);
                break;
              }
              case MethodKind::mle: {
                auto est = mle_ipw_estimate(draw.sample, spec.design_cols, estfun);
                cell.theta = est.theta(0);
                break;
              }
              case MethodKind::cbps: {
                auto design = BalancingDesign::columns(spec.design_cols);
                auto est = cbps_el_estimate(draw.sample, design, estfun);
                cell.theta = est.theta(0);
                cell.residual = est.diagnostics.balancing_residual;
                break;
              }
              case MethodKind::ebps: {
                auto design = BalancingDesign::columns(spec.design_cols);
                auto est = ebps_estimate(draw.sample, design, estfun);
                cell.theta = est.theta(0);
                cell.residual = est.diagnostics.balancing_residual;
                break;
              }
              case MethodKind::dr_true_pi: {
                auto design = BalancingDesign::columns(spec.design_cols);
                auto est = true_pi_dr_estimate(draw.sample, draw.true_pi, design, estfun);
                cell.theta = est.theta(0);
                break;
              }
              case MethodKind::raw_ps: {
                auto est = raw_ps_estimate(draw, estfun);
                cell.theta = est.theta(0);
                break;
              }
            }
          } catch (const Error&) {
            // failed fit: excluded and counted
          }
        }
      },
      cfg.threads);

  MetricsTable table;
  table.theta0 = theta0;
  for (std::size_t m = 0; m < n_methods; ++m) {
    MetricsRow row;
    row.method = cfg.methods[m].label.empty() ? method_name(cfg.methods[m].kind)
                                              : cfg.methods[m].label;
    row.design = design_label(cfg.methods[m].design_cols);
    row.theta0 = theta0;

    double sum = 0.0;
    for (int rep = 0; rep < cfg.replications; ++rep) {
      const Cell& cell = cells[static_cast<std::size_t>(rep)][m];
      if (cell.theta) {
        row.draws.push_back(*cell.theta);
        sum += *cell.theta;
        row.max_residual = std::max(row.max_residual, cell.residual);
      } else {
        ++row.failures;
      }
    }
    row.replications = static_cast<int>(row.draws.size());
    if (row.failures >
        static_cast<int>(cfg.max_failure_rate * cfg.replications))
      throw TooManyFailures(row.method + ": " + std::to_string(row.failures) + " of " +
                            std::to_string(cfg.replications) + " replicates failed");
    if (row.replications == 0) throw TooManyFailures(row.method + ": no replicate succeeded");

    const double mean = sum / row.replications;
    row.bias = mean - theta0;
    double ss = 0.0;
    for (double t : row.draws) ss += (t - mean) * (t - mean);
    row.se = row.replications > 1 ? std::sqrt(ss / (row.replications - 1)) : 0.0;
    row.rmse = std::sqrt(row.bias * row.bias + row.se * row.se);

    if (cfg.with_variance && cfg.methods[m].kind == MethodKind::ip) {
      double var_sum = 0.0;
      int var_count = 0, cover = 0;
      const double z = normal_quantile(0.975);
      for (int rep = 0; rep < cfg.replications; ++rep) {
        const Cell& cell = cells[static_cast<std::size_t>(rep)][m];
        if (!cell.theta || !std::isfinite(cell.var)) continue;
        var_sum += cell.var;
        ++var_count;
        if (std::abs(*cell.theta - theta0) <= z * std::sqrt(cell.var)) ++cover;
      }
      if (var_count > 0) {
        row.mean_var = var_sum / var_count;
        row.coverage = static_cast<double>(cover) / var_count;
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace pscal
