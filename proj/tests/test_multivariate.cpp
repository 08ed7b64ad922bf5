#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pscal/multivariate.hpp"
#include "pscal/rng.hpp"
#include "pscal/stats.hpp"
#include "testutil.hpp"

using namespace pscal;

namespace {

MultiSample make_ms(const std::vector<std::vector<double>>& yrows,
                    const std::vector<std::vector<int>>& obs,
                    const std::vector<std::vector<double>>& xrows = {}) {
  MultiSample ms;
  const auto n = static_cast<Eigen::Index>(yrows.size());
  const auto p = static_cast<Eigen::Index>(yrows[0].size());
  ms.Y = Matrix::Zero(n, p);
  ms.observed.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    ms.observed[i].assign(static_cast<std::size_t>(p), 0);
    for (Eigen::Index j = 0; j < p; ++j) {
      if (obs[i][j]) {
        ms.Y(i, j) = yrows[i][j];
        ms.observed[i][j] = 1;
      }
    }
  }
  if (!xrows.empty()) {
    const auto d = static_cast<Eigen::Index>(xrows[0].size());
    ms.X = Matrix(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j) ms.X(i, j) = xrows[i][j];
  } else {
    ms.X = Matrix(n, 0);
  }
  return ms;
}

// y2 observed always; y1 missing when the coin driven by y2 says so
MultiSample mar_bivariate(Rng& rng, Eigen::Index n) {
  std::vector<std::vector<double>> yrows;
  std::vector<std::vector<int>> obs;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y2 = 1.0 + rng.normal();
    const double y1 = 0.5 + 1.5 * y2 + 0.5 * rng.normal();
    const double pr = sigmoid(1.8 - 1.2 * y2);
    obs.push_back({rng.bernoulli(pr) ? 1 : 0, 1});
    yrows.push_back({y1, y2});
  }
  return make_ms(yrows, obs);
}

}  // namespace

TEST_CASE("all four bivariate patterns are found") {
  auto ms = make_ms({{1, 2}, {3, 4}, {5, 0}, {0, 6}, {0, 0}, {7, 8}},
                    {{1, 1}, {1, 1}, {1, 0}, {0, 1}, {0, 0}, {1, 1}});
  auto part = partition_patterns(ms);
  REQUIRE(part.T() == 4);
  REQUIRE(part.observed_cols[0].size() == 2);  // complete first
  REQUIRE(part.members[0].size() == 3);
}

TEST_CASE("fully observed data is a single pattern") {
  auto ms = make_ms({{1, 2}, {3, 4}}, {{1, 1}, {1, 1}});
  auto part = partition_patterns(ms);
  REQUIRE(part.T() == 1);
}

TEST_CASE("monotone missingness yields three patterns") {
  // col 1 missing implies col 2 missing
  auto ms = make_ms({{1, 2, 3}, {4, 5, 6}, {7, 8, 0}, {9, 10, 0}, {11, 0, 0}, {12, 0, 0}},
                    {{1, 1, 1}, {1, 1, 1}, {1, 1, 0}, {1, 1, 0}, {1, 0, 0}, {1, 0, 0}});
  auto part = partition_patterns(ms);
  REQUIRE(part.T() == 3);
}

TEST_CASE("missing complete cases throw") {
  auto ms = make_ms({{1, 0}, {0, 2}}, {{1, 0}, {0, 1}});
  REQUIRE_THROWS_AS(partition_patterns(ms), NoCompleteCases);
}

TEST_CASE("single pattern is a no-op tilting with unit weights") {
  auto ms = make_ms({{1, 2}, {3, 4}, {5, 6}}, {{1, 1}, {1, 1}, {1, 1}});
  auto fit = mv_sps_estimate(ms, OutcomeEstimatingFunction::mean_of(0));
  REQUIRE((fit.omega.array() == 1.0).all());
  REQUIRE(fit.estimate.theta(0) == Catch::Approx(3.0));
}

TEST_CASE("pattern identical in distribution to complete cases gives phi near zero") {
  Rng rng(17);
  const Eigen::Index n = 4000;
  std::vector<std::vector<double>> yrows;
  std::vector<std::vector<int>> obs;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y1 = rng.normal(1.0, 1.0);
    const double y2 = rng.normal(-1.0, 2.0);
    yrows.push_back({y1, y2});
    obs.push_back({1, rng.bernoulli(0.5) ? 1 : 0});  // missingness free of everything
  }
  auto ms = make_ms(yrows, obs);
  auto part = partition_patterns(ms);
  auto tilt = solve_pattern_tilting(part, ms, default_pattern_designs(ms, part));
  REQUIRE(tilt.phi_std[1].cwiseAbs().maxCoeff() < 0.15);  // MC-scale noise only
}

TEST_CASE("two-point pattern oracle matches the univariate case") {
  // complete cases with y1 = (1, 2); pattern-2 rows concentrated at 1.5:
  // required tilted weights are (2, 2) exactly as in the scalar oracle
  auto ms = make_ms({{1.0, 1.0}, {2.0, 1.0}, {1.5, 0.0}, {1.5, 0.0}},
                    {{1, 1}, {1, 1}, {1, 0}, {1, 0}});
  auto part = partition_patterns(ms);
  auto tilt = solve_pattern_tilting(part, ms, default_pattern_designs(ms, part));
  auto omega = mv_weights(part, tilt, ms);
  REQUIRE(omega(0) == Catch::Approx(2.0).margin(1e-8));
  REQUIRE(omega(1) == Catch::Approx(2.0).margin(1e-8));
}

TEST_CASE("weights over complete cases sum to N") {
  Rng rng(23);
  auto ms = mar_bivariate(rng, 600);
  auto fit = mv_sps_estimate(ms, OutcomeEstimatingFunction::mean_of(0));
  REQUIRE(fit.omega.sum() == Catch::Approx(static_cast<double>(ms.n())).epsilon(1e-10));
  REQUIRE(fit.estimate.diagnostics.balancing_residual <= 1e-8);
}

TEST_CASE("row order does not change the estimate") {
  Rng rng(29);
  auto ms = mar_bivariate(rng, 300);
  auto fit = mv_sps_estimate(ms, OutcomeEstimatingFunction::mean_of(0));

  // rotate rows so pattern-2 units come first
  const auto n = ms.n();
  MultiSample rot;
  rot.Y = Matrix(n, ms.p());
  rot.X = Matrix(n, 0);
  rot.observed.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = (i + 157) % n;
    rot.Y.row(i) = ms.Y.row(src);
    rot.observed[i] = ms.observed[static_cast<std::size_t>(src)];
  }
  auto fit2 = mv_sps_estimate(rot, OutcomeEstimatingFunction::mean_of(0));
  REQUIRE(fit2.estimate.theta(0) == Catch::Approx(fit.estimate.theta(0)).epsilon(1e-10));
}

TEST_CASE("p = 1 reduces to the univariate smoothed fit bit for bit") {
  Rng rng(31);
  auto s = testutil::random_feasible_sample(rng, 200, 2);
  auto est_uni = sps_estimate(s, BalancingDesign::all_columns(2),
                              EstimatingFunction::mean());

  MultiSample ms;
  ms.Y = Matrix(s.n(), 1);
  ms.X = s.X;
  ms.observed.resize(static_cast<std::size_t>(s.n()));
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    ms.Y(i, 0) = s.y(i);
    ms.observed[i] = {s.delta[static_cast<std::size_t>(i)]};
  }
  auto fit = mv_sps_estimate(ms, OutcomeEstimatingFunction::mean_of(0));
  REQUIRE(fit.estimate.theta(0) == est_uni.theta(0));  // exact
}

TEST_CASE("mv estimate corrects complete-case bias") {
  Rng rng(37);
  const int reps = 60;
  double cc_err = 0.0, mv_err = 0.0;
  const double truth = 0.5 + 1.5 * 1.0;  // E[y1]
  for (int rep = 0; rep < reps; ++rep) {
    auto ms = mar_bivariate(rng, 800);
    auto part = partition_patterns(ms);
    double cc = 0;
    for (auto i : part.members[0]) cc += ms.Y(i, 0);
    cc /= static_cast<double>(part.members[0].size());
    auto fit = mv_sps_estimate(ms, OutcomeEstimatingFunction::mean_of(0));
    cc_err += cc - truth;
    mv_err += fit.estimate.theta(0) - truth;
  }
  cc_err /= reps;
  mv_err /= reps;
  REQUIRE(std::abs(cc_err) > 0.08);   // complete-case mean is visibly biased
  REQUIRE(std::abs(mv_err) < 0.04);   // tilted fit is not
}

TEST_CASE("influence-based variance is psd and sane") {
  Rng rng(41);
  auto ms = mar_bivariate(rng, 700);
  auto fit = mv_sps_estimate(ms, OutcomeEstimatingFunction::mean_of(0));
  Matrix V = mv_linearized_variance(ms, fit.partition, fit.tilting, fit.estimate.theta,
                                    OutcomeEstimatingFunction::mean_of(0));
  REQUIRE(V(0, 0) > 0.0);
  REQUIRE(V(0, 0) < 0.1);

  // single pattern: variance of the plain mean
  auto full = make_ms({{1.0, 0.0}, {2.0, 0.0}, {6.0, 0.0}},
                      {{1, 1}, {1, 1}, {1, 1}});
  auto pf = partition_patterns(full);
  auto tf = solve_pattern_tilting(pf, full, default_pattern_designs(full, pf));
  Vector theta(1);
  theta(0) = 3.0;
  Matrix Vf = mv_linearized_variance(full, pf, tf, theta, OutcomeEstimatingFunction::mean_of(0));
  const double var_y = ((1.0 - 3.0) * (1.0 - 3.0) + (2.0 - 3.0) * (2.0 - 3.0) +
                        (6.0 - 3.0) * (6.0 - 3.0)) / 2.0;
  REQUIRE(Vf(0, 0) == Catch::Approx(var_y / 3.0));
}

TEST_CASE("indicator estimand runs on the same machinery") {
  Rng rng(43);
  auto ms = mar_bivariate(rng, 800);
  auto fit = mv_sps_estimate(ms, OutcomeEstimatingFunction::prob_le(1, 0));
  REQUIRE(fit.estimate.theta(0) > 0.0);
  REQUIRE(fit.estimate.theta(0) < 1.0);
}
