#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pscal/simulation.hpp"
#include "testutil.hpp"

using namespace pscal;

TEST_CASE("study one draws are bit-identical for a fixed seed") {
  auto a = gen_study_one(RmKind::rm1, OrKind::or1, 200, 77);
  auto b = gen_study_one(RmKind::rm1, OrKind::or1, 200, 77);
  REQUIRE(a.sample.X == b.sample.X);
  REQUIRE(a.sample.y == b.sample.y);
  REQUIRE(a.sample.delta == b.sample.delta);
  auto c = gen_study_one(RmKind::rm1, OrKind::or1, 200, 78);
  REQUIRE(a.sample.X != c.sample.X);
}

TEST_CASE("study one population means match the moment calculation") {
  // large-sample averages of the unmasked outcome against the analytic values
  const Eigen::Index n = 400000;
  auto d11 = gen_study_one(RmKind::rm1, OrKind::or1, n, 5);
  REQUIRE(d11.y_full.mean() == Catch::Approx(9.0).margin(0.05));
  auto d21 = gen_study_one(RmKind::rm2, OrKind::or1, n, 6);
  REQUIRE(d21.y_full.mean() == Catch::Approx(9.2).margin(0.05));
  auto d12 = gen_study_one(RmKind::rm1, OrKind::or2, n, 7);
  REQUIRE(d12.y_full.mean() == Catch::Approx(15.5).margin(0.3));
  auto d22 = gen_study_one(RmKind::rm2, OrKind::or2, n, 8);
  REQUIRE(d22.y_full.mean() == Catch::Approx(20.0).margin(0.3));
}

TEST_CASE("rm1 marginal response rate matches the quadrature value") {
  const double quad = rm1_marginal_response_rate();
  // frozen value cross-checked against independent quadrature and simulation
  REQUIRE(quad == Catch::Approx(0.5946278).margin(5e-5));
  const Eigen::Index n = 500000;
  auto draw = gen_study_one(RmKind::rm1, OrKind::or1, n, 9);
  const double rate =
      static_cast<double>(draw.sample.n_respondents()) / static_cast<double>(n);
  REQUIRE(rate == Catch::Approx(quad).margin(0.003));
}

TEST_CASE("rm2 mixture keeps the stated response probability") {
  auto draw = gen_study_one(RmKind::rm2, OrKind::or1, 200000, 10);
  const double rate = static_cast<double>(draw.sample.n_respondents()) / 200000.0;
  REQUIRE(rate == Catch::Approx(0.6).margin(0.005));
}

TEST_CASE("study two targets theta = 0.5 with the displayed covariance") {
  const Eigen::Index n = 300000;
  auto draw = gen_study_two(1, n, 11);
  REQUIRE(draw.theta0 == 0.5);
  REQUIRE(draw.y_full.mean() == Catch::Approx(0.5).margin(0.02));
  // sample covariance of (x2, x3) near 0.5; (x1, x2) near 0
  const auto& X = draw.sample.X;
  Vector m = X.colwise().mean();
  double c23 = 0.0, c12 = 0.0, v2 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    c23 += (X(i, 1) - m(1)) * (X(i, 2) - m(2));
    c12 += (X(i, 0) - m(0)) * (X(i, 1) - m(1));
    v2 += (X(i, 1) - m(1)) * (X(i, 1) - m(1));
  }
  REQUIRE(c23 / n == Catch::Approx(0.5).margin(0.01));
  REQUIRE(c12 / n == Catch::Approx(0.0).margin(0.01));
  REQUIRE(v2 / n == Catch::Approx(1.0).margin(0.01));
}

TEST_CASE("scenarios differ only through the response mechanism") {
  auto a = gen_study_two(1, 500, 42);
  auto b = gen_study_two(2, 500, 42);
  REQUIRE(a.sample.X == b.sample.X);
  Eigen::Index diff = 0;
  for (Eigen::Index i = 0; i < 500; ++i) {
    if (a.sample.delta[static_cast<std::size_t>(i)] &&
        b.sample.delta[static_cast<std::size_t>(i)])
      REQUIRE(a.sample.y(i) == b.sample.y(i));
    diff += a.sample.delta[static_cast<std::size_t>(i)] !=
            b.sample.delta[static_cast<std::size_t>(i)];
  }
  REQUIRE(diff > 0);
}

TEST_CASE("monte carlo tables are deterministic given the config") {
  SimConfig cfg;
  cfg.study = "two";
  cfg.scenario = 1;
  cfg.n = 300;
  cfg.replications = 20;
  cfg.seed = 31;
  cfg.methods = default_methods_study_two();
  auto a = run_monte_carlo(cfg);
  cfg.threads = 2;
  auto b = run_monte_carlo(cfg);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    REQUIRE(a.rows[r].bias == b.rows[r].bias);
    REQUIRE(a.rows[r].se == b.rows[r].se);
  }
}

TEST_CASE("rmse identity holds for every row") {
  SimConfig cfg;
  cfg.study = "one";
  cfg.rm = RmKind::rm1;
  cfg.orm = OrKind::or1;
  cfg.n = 400;
  cfg.replications = 15;
  cfg.seed = 8;
  cfg.methods = default_methods_study_one();
  auto table = run_monte_carlo(cfg);
  for (const auto& row : table.rows) {
    REQUIRE(row.rmse * row.rmse ==
            Catch::Approx(row.bias * row.bias + row.se * row.se).margin(1e-14));
    REQUIRE(row.max_residual <= 1e-8);
  }
}

TEST_CASE("single replication reports zero spread") {
  SimConfig cfg;
  cfg.study = "two";
  cfg.scenario = 1;
  cfg.n = 200;
  cfg.replications = 1;
  cfg.seed = 5;
  cfg.methods = {MethodSpec{MethodKind::ip, {0, 1}, "ip"}};
  auto table = run_monte_carlo(cfg);
  REQUIRE(table.rows[0].se == 0.0);
  REQUIRE(table.rows[0].rmse == Catch::Approx(std::abs(table.rows[0].bias)));
}

TEST_CASE("oracle comparators run inside the harness") {
  SimConfig cfg;
  cfg.study = "one";
  cfg.rm = RmKind::rm1;
  cfg.orm = OrKind::or1;
  cfg.n = 600;
  cfg.replications = 30;
  cfg.seed = 12;
  std::vector<Eigen::Index> all{0, 1, 2, 3};
  cfg.methods = {MethodSpec{MethodKind::ip, all, "ip"},
                 MethodSpec{MethodKind::raw_ps, all, "raw_ps"},
                 MethodSpec{MethodKind::dr_true_pi, all, "dr"}};
  auto table = run_monte_carlo(cfg);
  for (const auto& row : table.rows)
    REQUIRE(std::abs(row.bias) < 0.5);  // all three target the same truth
}
