#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pscal/errors.hpp"

namespace pscal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// A sample of n units: always-observed covariates X, outcome y subject to
// missingness, and the response indicator delta. Outcome presence is kept as
// an explicit mask; y entries outside the mask carry no meaning. Instances
// are treated as immutable after construction and may be shared across
// threads.
struct Sample {
  Matrix X;                              // n x d
  Vector y;                              // length n, meaningful where present
  std::vector<std::uint8_t> y_present;   // explicit presence mask
  std::vector<std::uint8_t> delta;       // 1 = respondent

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index d() const { return X.cols(); }

  Eigen::Index n_respondents() const {
    Eigen::Index m = 0;
    for (auto v : delta) m += v;
    return m;
  }
  Eigen::Index n_nonrespondents() const { return n() - n_respondents(); }

  std::vector<Eigen::Index> respondent_indices() const {
    std::vector<Eigen::Index> idx;
    idx.reserve(delta.size());
    for (Eigen::Index i = 0; i < n(); ++i)
      if (delta[static_cast<std::size_t>(i)]) idx.push_back(i);
    return idx;
  }

  // Outcome values masked by delta: the canonical (x, delta*y, delta) coding.
  static Sample masked(Matrix X, Vector y_values, std::vector<std::uint8_t> delta) {
    Sample s;
    s.X = std::move(X);
    s.y = std::move(y_values);
    s.delta = std::move(delta);
    s.y_present = s.delta;
    for (Eigen::Index i = 0; i < s.n(); ++i)
      if (!s.delta[static_cast<std::size_t>(i)]) s.y(i) = 0.0;
    return s;
  }

  // Response indicator derived from outcome presence.
  static Sample from_optional(Matrix X, const std::vector<std::optional<double>>& y_opt) {
    Sample s;
    s.X = std::move(X);
    const auto n = static_cast<Eigen::Index>(y_opt.size());
    s.y = Vector::Zero(n);
    s.y_present.assign(y_opt.size(), 0);
    s.delta.assign(y_opt.size(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (y_opt[static_cast<std::size_t>(i)].has_value()) {
        s.y(i) = *y_opt[static_cast<std::size_t>(i)];
        s.y_present[static_cast<std::size_t>(i)] = 1;
        s.delta[static_cast<std::size_t>(i)] = 1;
      }
    }
    return s;
  }
};

inline void validate(const Sample& s) {
  const auto n = s.n();
  if (n < 1) throw EmptyRespondents("sample has no rows");
  if (s.y.size() != n || static_cast<Eigen::Index>(s.y_present.size()) != n ||
      static_cast<Eigen::Index>(s.delta.size()) != n)
    throw MissingObservedOutcome("field lengths disagree with row count");
  Eigen::Index n1 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (s.delta[k] && !s.y_present[k])
      throw MissingObservedOutcome("unit " + std::to_string(i) +
                                   " marked responding but outcome absent");
    if (!s.delta[k] && s.y_present[k])
      throw MissingObservedOutcome("unit " + std::to_string(i) +
                                   " marked nonresponding but outcome present");
    n1 += s.delta[k];
  }
  if (n1 == 0) throw EmptyRespondents("no complete cases");
}

// One balancing function b_j(x). Must be total and deterministic over the
// covariate domain.
struct BasisFunction {
  std::string name;
  std::function<double(const Eigen::Ref<const Vector>&)> fn;
};

// Ordered basis b_1..b_L spanning the calibration space; the realized design
// row is z_i = (1, b(x_i)).
struct BalancingDesign {
  std::vector<BasisFunction> basis;

  Eigen::Index L() const { return static_cast<Eigen::Index>(basis.size()); }

  Vector evaluate(const Eigen::Ref<const Vector>& xrow) const {
    Vector b(L());
    for (Eigen::Index j = 0; j < L(); ++j)
      b(j) = basis[static_cast<std::size_t>(j)].fn(xrow);
    return b;
  }

  static BalancingDesign intercept_only() { return BalancingDesign{}; }

  // Identity basis on the given covariate columns.
  static BalancingDesign columns(const std::vector<Eigen::Index>& cols) {
    BalancingDesign d;
    d.basis.reserve(cols.size());
    for (auto c : cols) {
      d.basis.push_back(BasisFunction{
          "x" + std::to_string(c + 1),
          [c](const Eigen::Ref<const Vector>& x) { return x(c); }});
    }
    return d;
  }

  static BalancingDesign all_columns(Eigen::Index d) {
    std::vector<Eigen::Index> cols(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j) cols[static_cast<std::size_t>(j)] = j;
    return columns(cols);
  }
};

namespace detail {

inline Eigen::Index matrix_rank(const Matrix& A, double rel_tol = 1e-10) {
  if (A.rows() == 0 || A.cols() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(A);
  const auto& sv = svd.singularValues();
  const double cutoff = rel_tol * sv(0);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++r;
  return r;
}

}  // namespace detail

// Rows z_i = (1, b(x_i)); restricted to respondents when flagged, in which
// case full column rank is required.
inline Matrix design_matrix(const Sample& s, const BalancingDesign& design,
                            bool respondents_only) {
  const auto L = design.L();
  std::vector<Eigen::Index> rows;
  if (respondents_only) {
    rows = s.respondent_indices();
  } else {
    rows.resize(static_cast<std::size_t>(s.n()));
    for (Eigen::Index i = 0; i < s.n(); ++i) rows[static_cast<std::size_t>(i)] = i;
  }
  Matrix Z(static_cast<Eigen::Index>(rows.size()), L + 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Z(static_cast<Eigen::Index>(r), 0) = 1.0;
    Z.row(static_cast<Eigen::Index>(r)).tail(L) =
        design.evaluate(s.X.row(rows[r]).transpose()).transpose();
  }
  if (respondents_only && detail::matrix_rank(Z) < L + 1)
    throw RankDeficient("respondent design matrix rank < " + std::to_string(L + 1));
  return Z;
}

// Z-estimation target: theta solves E{U(theta; X, Y)} = 0. jac is dU/dtheta'.
struct EstimatingFunction {
  Eigen::Index p = 1;
  std::function<Vector(const Vector& theta, const Eigen::Ref<const Vector>& x, double y)> eval;
  std::function<Matrix(const Vector& theta, const Eigen::Ref<const Vector>& x, double y)> jac;

  static EstimatingFunction mean() {
    EstimatingFunction f;
    f.p = 1;
    f.eval = [](const Vector& theta, const Eigen::Ref<const Vector>&, double y) {
      Vector u(1);
      u(0) = y - theta(0);
      return u;
    };
    f.jac = [](const Vector&, const Eigen::Ref<const Vector>&, double) {
      Matrix j(1, 1);
      j(0, 0) = -1.0;
      return j;
    };
    return f;
  }
};

// Multivariate outcomes with per-cell missingness. X, when present, is fully
// observed.
struct MultiSample {
  Matrix Y;                                     // n x p
  std::vector<std::vector<std::uint8_t>> observed;  // n rows of p flags
  Matrix X;                                     // n x d, d may be 0

  Eigen::Index n() const { return Y.rows(); }
  Eigen::Index p() const { return Y.cols(); }
  Eigen::Index d() const { return X.cols(); }

  bool row_complete(Eigen::Index i) const {
    const auto& o = observed[static_cast<std::size_t>(i)];
    for (auto v : o)
      if (!v) return false;
    return true;
  }
};

// Z-estimation target over the outcome vector, evaluated on complete rows.
struct OutcomeEstimatingFunction {
  Eigen::Index p = 1;
  std::function<Vector(const Vector& theta, const Eigen::Ref<const Vector>& y)> eval;
  std::function<Matrix(const Vector& theta, const Eigen::Ref<const Vector>& y)> jac;

  static OutcomeEstimatingFunction mean_of(Eigen::Index component) {
    OutcomeEstimatingFunction f;
    f.p = 1;
    f.eval = [component](const Vector& theta, const Eigen::Ref<const Vector>& y) {
      Vector u(1);
      u(0) = y(component) - theta(0);
      return u;
    };
    f.jac = [](const Vector&, const Eigen::Ref<const Vector>&) {
      Matrix j(1, 1);
      j(0, 0) = -1.0;
      return j;
    };
    return f;
  }

  // P(Y_a <= Y_b) via an indicator moment
  static OutcomeEstimatingFunction prob_le(Eigen::Index a, Eigen::Index b) {
    OutcomeEstimatingFunction f;
    f.p = 1;
    f.eval = [a, b](const Vector& theta, const Eigen::Ref<const Vector>& y) {
      Vector u(1);
      u(0) = (y(a) <= y(b) ? 1.0 : 0.0) - theta(0);
      return u;
    };
    f.jac = [](const Vector&, const Eigen::Ref<const Vector>&) {
      Matrix j(1, 1);
      j(0, 0) = -1.0;
      return j;
    };
    return f;
  }
};

// Respondent-moment standardization of basis columns, for solver
// conditioning; fitted parameters are reported on the original scale.
struct Standardization {
  Vector mean;  // length L
  Vector sd;    // length L, floored away from zero

  static Standardization fit(const Eigen::Ref<const Matrix>& B) {
    Standardization st;
    const auto L = B.cols();
    st.mean = Vector::Zero(L);
    st.sd = Vector::Ones(L);
    if (B.rows() == 0) return st;
    st.mean = B.colwise().mean();
    if (B.rows() > 1) {
      for (Eigen::Index j = 0; j < L; ++j) {
        const double ss = (B.col(j).array() - st.mean(j)).square().sum();
        const double v = ss / static_cast<double>(B.rows() - 1);
        st.sd(j) = v > 1e-24 ? std::sqrt(v) : 1.0;
      }
    }
    return st;
  }

  // Standardizes the b-columns of a (1, b) design matrix in place.
  void apply(Matrix& Z) const {
    for (Eigen::Index j = 0; j < mean.size(); ++j)
      Z.col(j + 1) = (Z.col(j + 1).array() - mean(j)) / sd(j);
  }
};

}  // namespace pscal
