#include "panelbreak/core.hpp"
#include "panelbreak/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace panelbreak;
using test_helpers::random_matrix;
using test_helpers::random_normal_matrix;

TEST_CASE("composite_residual identity and exact-fit cases", "[core]") {
  Philox rng(11, 0);
  Matrix y = random_normal_matrix(3, 5, rng);
  PanelData panel = make_panel(y, {random_matrix(3, 5, rng), random_matrix(3, 5, rng)});

  CHECK(composite_residual(panel, zero_coefs(3, 5, 2)).isApprox(panel.y));

  PanelData no_reg = make_panel(y, {});
  CoefSet exact = zero_coefs(3, 5, 0);
  exact.thetas[0] = y;
  CHECK(composite_residual(no_reg, exact).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("composite_residual matches a scalar loop", "[core]") {
  Philox rng(12, 0);
  Matrix y = random_normal_matrix(3, 4, rng);
  Matrix x1 = random_matrix(3, 4, rng), x2 = random_matrix(3, 4, rng);
  PanelData panel = make_panel(y, {x1, x2});
  CoefSet coefs;
  coefs.thetas = {random_matrix(3, 4, rng), random_matrix(3, 4, rng), random_matrix(3, 4, rng)};
  Matrix r = composite_residual(panel, coefs);
  for (int i = 0; i < 3; ++i)
    for (int t = 0; t < 4; ++t) {
      double expect = y(i, t) - coefs.thetas[0](i, t) - x1(i, t) * coefs.thetas[1](i, t) -
                      x2(i, t) * coefs.thetas[2](i, t);
      CHECK(r(i, t) == Catch::Approx(expect).margin(1e-14));
    }
}

TEST_CASE("composite_residual is linear in the coefficients", "[core]") {
  Philox rng(13, 0);
  PanelData panel = test_helpers::random_panel(4, 6, 2, rng);
  CoefSet c1, c2, sum;
  for (int j = 0; j <= 2; ++j) {
    c1.thetas.push_back(random_matrix(4, 6, rng));
    c2.thetas.push_back(random_matrix(4, 6, rng));
    sum.thetas.push_back(c1.thetas.back() + c2.thetas.back());
  }
  Matrix lhs = composite_residual(panel, sum);
  Matrix rhs = composite_residual(panel, c1) + composite_residual(panel, c2) - panel.y;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("composite_residual rejects mismatched shapes", "[core]") {
  Philox rng(14, 0);
  PanelData panel = test_helpers::random_panel(3, 5, 1, rng);
  CoefSet bad = zero_coefs(3, 5, 2);
  CHECK_THROWS_AS(composite_residual(panel, bad), DimensionError);
  CoefSet bad_shape = zero_coefs(4, 5, 1);
  CHECK_THROWS_AS(composite_residual(panel, bad_shape), DimensionError);
}

TEST_CASE("norms of simple matrices", "[core]") {
  Matrix eye = Matrix::Identity(2, 2);
  Norms n = norms(eye);
  CHECK(n.frobenius == Catch::Approx(std::sqrt(2.0)));
  CHECK(n.operator_norm == Catch::Approx(1.0));
  CHECK(n.nuclear == Catch::Approx(2.0));
  CHECK(n.max_abs == Catch::Approx(1.0));

  Philox rng(15, 0);
  Vector u = random_normal_matrix(5, 1, rng);
  Vector v = random_normal_matrix(3, 1, rng);
  u.normalize();
  v.normalize();
  Norms r1 = norms(u * v.transpose());
  CHECK(r1.operator_norm == Catch::Approx(1.0).margin(1e-12));
  CHECK(r1.nuclear == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("nuclear norm equals the dense SVD sum", "[core]") {
  Philox rng(16, 0);
  Matrix m = random_normal_matrix(4, 3, rng);
  Eigen::JacobiSVD<Matrix> svd(m);
  CHECK(norms(m).nuclear == Catch::Approx(svd.singularValues().sum()).margin(1e-10));
}

TEST_CASE("norms rejects non-finite input", "[core]") {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(norms(m), NumericError);
}

TEST_CASE("svd_truncated on a diagonal matrix", "[core]") {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = 3;
  m(1, 1) = 1;
  SvdTriple t = svd_truncated(m, 1);
  CHECK(t.s(0) == Catch::Approx(3.0));
  CHECK(std::abs(t.u(0, 0)) == Catch::Approx(1.0));
  CHECK(t.u(0, 0) > 0);  // sign convention
  CHECK(t.v(0, 0) == Catch::Approx(t.u(0, 0)));
}

TEST_CASE("svd_truncated full-rank reconstruction", "[core]") {
  Philox rng(17, 0);
  Matrix m = random_normal_matrix(5, 4, rng);
  SvdTriple t = svd_truncated(m, 4);
  Matrix rec = t.u * t.s.asDiagonal() * t.v.transpose();
  CHECK((rec - m).norm() < 1e-10);

  // Truncation error matches the tail singular values (Eckart-Young).
  SvdTriple t2 = svd_truncated(m, 2);
  Eigen::JacobiSVD<Matrix> dense(m);
  double expect = std::sqrt(dense.singularValues()(2) * dense.singularValues()(2) +
                            dense.singularValues()(3) * dense.singularValues()(3));
  Matrix rec2 = t2.u * t2.s.asDiagonal() * t2.v.transpose();
  CHECK((rec2 - m).norm() == Catch::Approx(expect).margin(1e-10));
}

TEST_CASE("svd_truncated reconstruction error is nonincreasing in rank", "[core]") {
  Philox rng(18, 0);
  Matrix m = random_normal_matrix(6, 5, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (int r = 0; r <= 5; ++r) {
    SvdTriple t = svd_truncated(m, r);
    Matrix rec = r == 0 ? Matrix::Zero(6, 5) : Matrix(t.u * t.s.asDiagonal() * t.v.transpose());
    double err = (m - rec).norm();
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
}

TEST_CASE("svd_truncated is deterministic and orthonormal", "[core]") {
  Philox rng(19, 0);
  Matrix m = random_normal_matrix(6, 4, rng);
  SvdTriple a = svd_truncated(m, 3);
  SvdTriple b = svd_truncated(m, 3);
  CHECK(a.u == b.u);
  CHECK(a.v == b.v);
  CHECK(a.s == b.s);
  CHECK((a.u.transpose() * a.u - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((a.v.transpose() * a.v - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-10);
  for (int c = 0; c < 3; ++c) {
    Eigen::Index imax;
    a.u.col(c).cwiseAbs().maxCoeff(&imax);
    CHECK(a.u(imax, c) >= 0);
  }
  CHECK_THROWS_AS(svd_truncated(m, 5), ArgumentError);
  CHECK_THROWS_AS(svd_truncated(m, -1), ArgumentError);
}

TEST_CASE("panel construction validates shape and content", "[core]") {
  Philox rng(20, 0);
  Matrix y = random_normal_matrix(3, 5, rng);
  CHECK_THROWS_AS(make_panel(random_normal_matrix(1, 5, rng), {}), DimensionError);
  CHECK_THROWS_AS(make_panel(random_normal_matrix(3, 3, rng), {}), DimensionError);
  CHECK_THROWS_AS(make_panel(y, {random_normal_matrix(3, 4, rng)}), DimensionError);
  Matrix bad = y;
  bad(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(make_panel(bad, {}), NumericError);

  PanelData panel = make_panel(y, {random_matrix(3, 5, rng)});
  PanelData pre = slice_periods(panel, 0, 2);
  CHECK(pre.t_len == 2);
  CHECK(pre.y(0, 1) == panel.y(0, 1));
  PanelData sub = slice_units(panel, {2, 0});
  CHECK(sub.n == 2);
  CHECK(sub.y.row(0) == panel.y.row(2));
}
