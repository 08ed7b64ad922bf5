#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "pscal/data.hpp"
#include "pscal/rng.hpp"
#include "testutil.hpp"

using namespace pscal;

TEST_CASE("validate accepts consistent coding") {
  auto s = testutil::make_sample({{1.0}, {2.0}, {3.0}}, {2.0, 3.0, 0.0}, {1, 1, 0});
  REQUIRE_NOTHROW(validate(s));
}

TEST_CASE("validate rejects respondent without outcome") {
  Sample s;
  s.X = Matrix::Zero(2, 1);
  s.y = Vector::Zero(2);
  s.y_present = {0, 0};
  s.delta = {1, 0};
  REQUIRE_THROWS_AS(validate(s), MissingObservedOutcome);
}

TEST_CASE("validate rejects empty respondent set") {
  auto s = testutil::make_sample({{1.0}, {2.0}}, {0.0, 0.0}, {0, 0});
  REQUIRE_THROWS_AS(validate(s), EmptyRespondents);
}

TEST_CASE("design matrix rows are (1, b(x))") {
  auto s = testutil::make_sample({{2.0}}, {1.0}, {1});
  auto design = BalancingDesign::all_columns(1);
  Matrix Z = design_matrix(s, design, false);
  REQUIRE(Z.rows() == 1);
  REQUIRE(Z(0, 0) == 1.0);
  REQUIRE(Z(0, 1) == 2.0);
}

TEST_CASE("intercept-only design gives a column of ones") {
  auto s = testutil::make_sample({{2.0}, {5.0}}, {1.0, 1.0}, {1, 1});
  Matrix Z = design_matrix(s, BalancingDesign::intercept_only(), false);
  REQUIRE(Z.cols() == 1);
  REQUIRE((Z.array() == 1.0).all());
}

TEST_CASE("duplicated basis column is rank deficient") {
  auto s = testutil::make_sample({{1.0}, {2.0}, {3.0}}, {1.0, 1.0, 1.0}, {1, 1, 1});
  BalancingDesign design;
  design.basis.push_back({"x1", [](const Eigen::Ref<const Vector>& x) { return x(0); }});
  design.basis.push_back({"x1_dup", [](const Eigen::Ref<const Vector>& x) { return x(0); }});
  REQUIRE_THROWS_AS(design_matrix(s, design, true), RankDeficient);
}

TEST_CASE("design matrix is permutation equivariant") {
  Rng rng(11);
  const Eigen::Index n = 17, d = 3;
  Matrix X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal();
  Vector y = Vector::Ones(n);
  std::vector<std::uint8_t> delta(n, 1);
  auto s = Sample::masked(X, y, delta);
  auto design = BalancingDesign::all_columns(d);
  Matrix Z = design_matrix(s, design, false);

  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  Matrix Xp(n, d);
  for (Eigen::Index i = 0; i < n; ++i) Xp.row(i) = X.row(perm[i]);
  auto sp = Sample::masked(Xp, y, delta);
  Matrix Zp = design_matrix(sp, design, false);
  for (Eigen::Index i = 0; i < n; ++i)
    REQUIRE((Zp.row(i) - Z.row(perm[i])).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("affine basis reparameterization right-multiplies the design") {
  Rng rng(5);
  const Eigen::Index n = 9;
  Matrix X(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) X(i, j) = rng.normal();
  auto s = Sample::masked(X, Vector::Ones(n), std::vector<std::uint8_t>(n, 1));

  auto base = BalancingDesign::all_columns(2);
  // b'(x) = A b(x) + shift with invertible A
  Eigen::Matrix2d A;
  A << 2.0, 1.0, -1.0, 0.5;
  Eigen::Vector2d shift(0.3, -4.0);
  BalancingDesign reparam;
  for (int k = 0; k < 2; ++k) {
    reparam.basis.push_back({"t" + std::to_string(k),
                             [A, shift, k](const Eigen::Ref<const Vector>& x) {
                               return A(k, 0) * x(0) + A(k, 1) * x(1) + shift(k);
                             }});
  }
  Matrix Z = design_matrix(s, base, false);
  Matrix Zr = design_matrix(s, reparam, false);

  Matrix M = Matrix::Zero(3, 3);
  M(0, 0) = 1.0;
  M.block(0, 1, 1, 2) = shift.transpose();
  M.block(1, 1, 2, 2) = A.transpose();
  REQUIRE((Zr - Z * M).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("estimating function jacobian matches finite differences") {
  // contract check on a nonlinear instance: U = (y - t0, t1 * y - t0 * t1^2)
  EstimatingFunction f;
  f.p = 2;
  f.eval = [](const Vector& t, const Eigen::Ref<const Vector>&, double y) {
    Vector u(2);
    u(0) = y - t(0);
    u(1) = t(1) * y - t(0) * t(1) * t(1);
    return u;
  };
  f.jac = [](const Vector& t, const Eigen::Ref<const Vector>&, double y) {
    Matrix j(2, 2);
    j(0, 0) = -1.0;
    j(0, 1) = 0.0;
    j(1, 0) = -t(1) * t(1);
    j(1, 1) = y - 2.0 * t(0) * t(1);
    return j;
  };

  Rng rng(101);
  Vector x(1);
  x(0) = 0.0;
  for (int probe = 0; probe < 20; ++probe) {
    Vector t(2);
    t << rng.normal(), rng.normal(1.0, 0.5);
    const double y = rng.normal(2.0, 1.0);
    Matrix J = f.jac(t, x, y);
    Matrix Jfd(2, 2);
    for (int j = 0; j < 2; ++j) {
      const double h = 1e-6 * (1.0 + std::abs(t(j)));
      Vector tp = t, tm = t;
      tp(j) += h;
      tm(j) -= h;
      Jfd.col(j) = (f.eval(tp, x, y) - f.eval(tm, x, y)) / (2.0 * h);
    }
    const double scale = std::max(1.0, J.cwiseAbs().maxCoeff());
    REQUIRE((J - Jfd).cwiseAbs().maxCoeff() / scale < 1e-5);
  }
}
