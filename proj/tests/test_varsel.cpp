#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pscal/rng.hpp"
#include "pscal/varsel.hpp"
#include "testutil.hpp"

using namespace pscal;

namespace {

// linear model with the given coefficients, all units responding
Sample regression_sample(Rng& rng, Eigen::Index n, const Vector& coef, double intercept,
                         double sigma) {
  const auto d = coef.size();
  Matrix X(n, d);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal();
    y(i) = intercept + X.row(i).dot(coef) + sigma * rng.normal();
  }
  return Sample::masked(std::move(X), std::move(y), std::vector<std::uint8_t>(n, 1));
}

}  // namespace

TEST_CASE("scad derivative values") {
  REQUIRE(scad_penalty_deriv(0.5, 1.0) == Catch::Approx(1.0));
  REQUIRE(scad_penalty_deriv(2.0, 1.0, 3.7) == Catch::Approx((3.7 - 2.0) / 2.7));
  REQUIRE(scad_penalty_deriv(5.0, 1.0, 3.7) == 0.0);
}

TEST_CASE("scad derivative is continuous at the knots") {
  const double lambda = 0.8, a = 3.7, eps = 1e-9;
  REQUIRE(std::abs(scad_penalty_deriv(lambda - eps, lambda, a) -
                   scad_penalty_deriv(lambda + eps, lambda, a)) < 1e-6);
  REQUIRE(std::abs(scad_penalty_deriv(a * lambda - eps, lambda, a) -
                   scad_penalty_deriv(a * lambda + eps, lambda, a)) < 1e-6);
}

TEST_CASE("zero penalty reproduces least squares") {
  Rng rng(5);
  Vector coef(4);
  coef << 0.8, -0.6, 0.4, 0.2;
  auto s = regression_sample(rng, 400, coef, 1.0, 0.5);
  SelectOptions opts;
  opts.lambda_grid = {0.0};
  auto sel = penalized_select(s, opts);
  REQUIRE(sel.support.size() == 4);  // all coefficients nonzero generically
  // matches the normal-equations solution
  Matrix Xt(400, 5);
  Xt.col(0).setOnes();
  Xt.rightCols(4) = s.X;
  Vector ols = (Xt.transpose() * Xt).ldlt().solve(Xt.transpose() * s.y);
  REQUIRE((sel.alpha - ols).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("pure noise with a large penalty selects nothing") {
  Rng rng(6);
  auto s = regression_sample(rng, 500, Vector::Zero(5), 0.3, 1.0);
  auto sel = penalized_select(s);
  REQUIRE(sel.support.empty());
}

TEST_CASE("single active covariate is recovered") {
  int hits = 0;
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    Vector coef = Vector::Zero(5);
    coef(0) = 1.0;
    auto s = regression_sample(rng, 2000, coef, 0.0, 0.1);
    auto sel = penalized_select(s);
    if (sel.support.size() == 1 && sel.support[0] == 0) ++hits;
  }
  REQUIRE(hits >= 9);
}

TEST_CASE("stationarity holds on the nonzero coordinates") {
  Rng rng(7);
  Vector coef(6);
  coef << 1.0, -0.8, 0.0, 0.0, 0.6, 0.0;
  auto s = regression_sample(rng, 800, coef, 0.5, 1.0);
  auto sel = penalized_select(s);
  REQUIRE(sel.lambda > 0.0);

  const auto m = s.n();
  Matrix Xt(m, 7);
  Xt.col(0).setOnes();
  Xt.rightCols(6) = s.X;
  Vector resid = Xt * sel.alpha - s.y;
  for (Eigen::Index j = 1; j <= 6; ++j) {
    if (sel.alpha(j) == 0.0) continue;
    const double score = (2.0 / static_cast<double>(m)) * Xt.col(j).dot(resid);
    const double pen = scad_penalty_deriv(std::abs(sel.alpha(j)), sel.lambda) *
                       (sel.alpha(j) > 0 ? 1.0 : -1.0);
    REQUIRE(std::abs(score + pen) < 1e-6);
  }
}

TEST_CASE("selection requires enough respondents") {
  Rng rng(8);
  auto s = regression_sample(rng, 5, Vector::Zero(4), 0.0, 1.0);
  REQUIRE_THROWS_AS(penalized_select(s), RankDeficient);
}

TEST_CASE("two-stage estimate with empty selection is the respondent mean") {
  Rng rng(9);
  const Eigen::Index n = 300;
  Matrix X(n, 3);
  Vector y(n);
  std::vector<std::uint8_t> delta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) X(i, j) = rng.normal();
    y(i) = 2.0 + rng.normal();  // outcome free of x
    delta[i] = rng.bernoulli(0.7) ? 1 : 0;
  }
  auto s = Sample::masked(std::move(X), std::move(y), std::move(delta));
  auto ts = two_stage_sps(s);
  REQUIRE(ts.selection.support.empty());
  double sum = 0.0;
  Eigen::Index m = 0;
  for (Eigen::Index i = 0; i < s.n(); ++i)
    if (s.delta[static_cast<std::size_t>(i)]) {
      sum += s.y(i);
      ++m;
    }
  REQUIRE(ts.estimate.theta(0) == Catch::Approx(sum / m).margin(1e-9));
  REQUIRE(ts.estimate.se.size() == 1);
}

TEST_CASE("two-stage on outcome-model data picks the outcome columns") {
  // y = 1 + 0.5 x1 - x2 + e with selection driven through x3: the two-stage
  // fit should calibrate on (1, x1, x2) and match that design's efficiency
  int correct = 0;
  double se_two_stage = 0.0, se_oracle = 0.0;
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(500 + seed);
    const Eigen::Index n = 1000;
    Matrix X(n, 3);
    Vector y(n);
    std::vector<std::uint8_t> delta(n);
    const double c22 = 1.0, c32 = 0.5, c33 = std::sqrt(0.75);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z1 = rng.normal(), z2 = rng.normal(), z3 = rng.normal();
      X(i, 0) = 1.0 + z1;
      X(i, 1) = 1.0 + c22 * z2;
      X(i, 2) = 1.0 + c32 * z2 + c33 * z3;
      y(i) = 1.0 + 0.5 * X(i, 0) - X(i, 1) + rng.normal();
      delta[i] = rng.bernoulli(1.0 / (1.0 + std::exp(X(i, 0) - X(i, 2)))) ? 1 : 0;
    }
    auto s = Sample::masked(std::move(X), std::move(y), std::move(delta));
    auto ts = two_stage_sps(s);
    if (ts.selection.support == std::vector<Eigen::Index>{0, 1}) {
      ++correct;
      se_two_stage += ts.estimate.se(0);
      auto design = BalancingDesign::columns({0, 1});
      auto params = solve_tilting(s, design);
      auto oracle = sps_estimate(s, design, EstimatingFunction::mean());
      se_oracle += std::sqrt(
          linearized_variance(s, design, params, oracle.theta, EstimatingFunction::mean())(0, 0));
      REQUIRE(ts.estimate.theta(0) == Catch::Approx(oracle.theta(0)).margin(1e-9));
    }
  }
  REQUIRE(correct >= 4);
  REQUIRE(se_two_stage == Catch::Approx(se_oracle).margin(1e-9));
}

TEST_CASE("two-stage with full selection matches the full-design fit") {
  Rng rng(10);
  const Eigen::Index n = 400;
  Matrix X(n, 2);
  Vector y(n);
  std::vector<std::uint8_t> delta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = rng.normal(1.0, 1.0);
    X(i, 1) = rng.normal(1.0, 1.0);
    y(i) = 1.0 + X(i, 0) - 2.0 * X(i, 1) + 0.3 * rng.normal();
    const double eta = 0.4 * (X(i, 0) - 1.0) - 0.4 * (X(i, 1) - 1.0) + 0.4;
    delta[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-eta))) ? 1 : 0;
  }
  auto s = Sample::masked(std::move(X), std::move(y), std::move(delta));
  auto ts = two_stage_sps(s);
  REQUIRE(ts.selection.support.size() == 2);
  auto full = sps_estimate(s, BalancingDesign::all_columns(2), EstimatingFunction::mean());
  REQUIRE(ts.estimate.theta(0) == Catch::Approx(full.theta(0)).margin(1e-9));
}
