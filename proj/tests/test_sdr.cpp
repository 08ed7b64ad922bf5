#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pscal/rng.hpp"
#include "pscal/sdr.hpp"
#include "testutil.hpp"

using namespace pscal;

namespace {

Matrix random_orthonormal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix A(cols, rows);  // tall frame, then transpose
  for (Eigen::Index i = 0; i < cols; ++i)
    for (Eigen::Index j = 0; j < rows; ++j) A(i, j) = rng.normal();
  return detail::qr_retract(A).transpose();
}

Sample single_index_sample(Rng& rng, Eigen::Index n, Eigen::Index d, const Vector& w0,
                           double noise) {
  Matrix X(n, d);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal();
    const double u = X.row(i).dot(w0);
    y(i) = u * u * u / 2.0 + u + noise * rng.normal();
  }
  return Sample::masked(std::move(X), std::move(y), std::vector<std::uint8_t>(n, 1));
}

double principal_angle(const Vector& a, const Vector& b) {
  const double cosv = std::abs(a.dot(b)) / (a.norm() * b.norm());
  return std::acos(std::min(1.0, cosv));
}

}  // namespace

TEST_CASE("objective is invariant to left rotation of W") {
  Rng rng(3);
  const Eigen::Index m = 120, d = 4, l = 2;
  Matrix X(m, d);
  Vector y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal();
    y(i) = X(i, 0) + 0.5 * rng.normal();
  }
  Matrix W = random_orthonormal(rng, l, d);
  Matrix Q = random_orthonormal(rng, l, l);
  const double t1 = sdr_objective_value(X, y, W);
  const double t2 = sdr_objective_value(X, y, Q * W);
  REQUIRE(std::abs(t1 - t2) / std::max(1.0, std::abs(t1)) < 1e-10);
}

TEST_CASE("full-dimensional projections share one objective value") {
  Rng rng(4);
  const Eigen::Index m = 100, d = 3;
  Matrix X(m, d);
  Vector y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal();
    y(i) = X(i, 1) - X(i, 2) + 0.3 * rng.normal();
  }
  Matrix I = Matrix::Identity(d, d);
  Matrix Q = random_orthonormal(rng, d, d);
  const double t1 = sdr_objective_value(X, y, I);
  const double t2 = sdr_objective_value(X, y, Q);
  REQUIRE(std::abs(t1 - t2) / std::max(1.0, std::abs(t1)) < 1e-10);
}

TEST_CASE("fit keeps rows orthonormal and the objective monotone") {
  Rng rng(5);
  Vector w0(4);
  w0 << 1.0, -1.0, 0.5, 0.0;
  w0.normalize();
  auto s = single_index_sample(rng, 250, 4, w0, 0.3);
  SdrOptions opts;
  opts.restarts = 2;
  opts.max_iter = 40;
  opts.seed = 11;
  auto fit = kernel_sdr(s, 2, opts);

  Matrix gram = fit.W * fit.W.transpose();
  REQUIRE((gram - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
  for (std::size_t k = 1; k < fit.objective_path.size(); ++k)
    REQUIRE(fit.objective_path[k] <= fit.objective_path[k - 1] + 1e-12);
}

TEST_CASE("single-index direction is recovered") {
  int hits = 0;
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(900 + seed);
    Vector w0(4);
    w0 << 1.0, 1.0, 0.0, 0.0;
    w0.normalize();
    auto s = single_index_sample(rng, 300, 4, w0, 0.2);
    SdrOptions opts;
    opts.restarts = 3;
    opts.max_iter = 60;
    opts.seed = static_cast<std::uint64_t>(seed);
    auto fit = kernel_sdr(s, 1, opts);
    if (principal_angle(fit.W.row(0).transpose(), w0) <= 0.35) ++hits;
  }
  REQUIRE(hits >= 4);
}

TEST_CASE("target dimension is validated") {
  Rng rng(6);
  auto s = single_index_sample(rng, 50, 3, Vector::Ones(3).normalized(), 0.2);
  REQUIRE_THROWS_AS(kernel_sdr(s, 0, {}), NoConvergence);
  REQUIRE_THROWS_AS(kernel_sdr(s, 4, {}), NoConvergence);
}
