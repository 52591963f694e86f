#pragma once

// Panel containers, matrix norms, and SVD conventions shared by the
// estimation stages.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <stdexcept>
#include <string>
#include <vector>

namespace panelbreak {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rank-deficient design in a per-unit, per-period, or per-group solve.
struct SingularityError : std::runtime_error {
  SingularityError(const std::string& what, int idx) : std::runtime_error(what), index(idx) {}
  int index;
};

// Outcome matrix plus p regressor matrices, all N x T.
struct PanelData {
  Matrix y;
  std::vector<Matrix> x;
  int n = 0;
  int t_len = 0;
  int p = 0;
};

inline PanelData make_panel(Matrix y, std::vector<Matrix> x, bool full_panel = true) {
  PanelData panel;
  panel.n = static_cast<int>(y.rows());
  panel.t_len = static_cast<int>(y.cols());
  panel.p = static_cast<int>(x.size());
  if (panel.n < 2) throw DimensionError("panel requires at least 2 units");
  int min_t = full_panel ? 4 : 2;
  if (panel.t_len < min_t)
    throw DimensionError("panel requires at least " + std::to_string(min_t) + " periods");
  if (!y.allFinite()) throw NumericError("outcome matrix has non-finite entries");
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x[j].rows() != panel.n || x[j].cols() != panel.t_len)
      throw DimensionError("regressor " + std::to_string(j + 1) + " shape mismatch");
    if (!x[j].allFinite())
      throw NumericError("regressor " + std::to_string(j + 1) + " has non-finite entries");
  }
  panel.y = std::move(y);
  panel.x = std::move(x);
  return panel;
}

// Period slice [t_begin, t_end), 0-based columns.
inline PanelData slice_periods(const PanelData& panel, int t_begin, int t_end) {
  if (t_begin < 0 || t_end > panel.t_len || t_end - t_begin < 2)
    throw ArgumentError("period slice out of range");
  int len = t_end - t_begin;
  std::vector<Matrix> x;
  x.reserve(panel.x.size());
  for (const auto& xj : panel.x) x.push_back(xj.middleCols(t_begin, len));
  return make_panel(panel.y.middleCols(t_begin, len), std::move(x), false);
}

inline PanelData slice_units(const PanelData& panel, const std::vector<int>& units) {
  if (units.size() < 2) throw ArgumentError("unit slice requires at least 2 units");
  int m = static_cast<int>(units.size());
  Matrix y(m, panel.t_len);
  std::vector<Matrix> x(panel.x.size(), Matrix(m, panel.t_len));
  for (int r = 0; r < m; ++r) {
    int i = units[static_cast<std::size_t>(r)];
    if (i < 0 || i >= panel.n) throw ArgumentError("unit index out of range");
    y.row(r) = panel.y.row(i);
    for (std::size_t j = 0; j < panel.x.size(); ++j) x[j].row(r) = panel.x[j].row(i);
  }
  return make_panel(std::move(y), std::move(x), false);
}

// p+1 coefficient matrices; index 0 is the intercept matrix.
struct CoefSet {
  std::vector<Matrix> thetas;

  int p() const { return static_cast<int>(thetas.size()) - 1; }
};

inline CoefSet zero_coefs(int n, int t_len, int p) {
  CoefSet c;
  c.thetas.assign(static_cast<std::size_t>(p) + 1, Matrix::Zero(n, t_len));
  return c;
}

inline Matrix composite_residual(const PanelData& panel, const CoefSet& coefs) {
  if (coefs.p() != panel.p) throw DimensionError("coefficient set does not match regressor count");
  for (const auto& th : coefs.thetas)
    if (th.rows() != panel.n || th.cols() != panel.t_len)
      throw DimensionError("coefficient matrix shape mismatch");
  Matrix r = panel.y - coefs.thetas[0];
  for (int j = 1; j <= panel.p; ++j)
    r -= panel.x[static_cast<std::size_t>(j - 1)].cwiseProduct(coefs.thetas[static_cast<std::size_t>(j)]);
  return r;
}

namespace detail {

struct SvdParts {
  Matrix u;
  Vector s;
  Matrix v;
};

// Divide-and-conquer SVD with a validity check and a Jacobi fallback.
// Eigen 3.4.0's BDCSVD can silently mis-deflate on exactly structured
// matrices (repeated entries, proportional rows); the energy identity
// sum(s^2) = ||m||_F^2 and the reconstruction error both expose it.
inline Vector singular_values_safe(const Matrix& m) {
  if (std::min(m.rows(), m.cols()) <= 16) return Eigen::JacobiSVD<Matrix>(m).singularValues();
  Eigen::BDCSVD<Matrix> svd(m);
  double f2 = m.squaredNorm();
  double s2 = svd.singularValues().squaredNorm();
  if (std::abs(f2 - s2) <= 1e-9 * std::max(1.0, f2)) return svd.singularValues();
  return Eigen::JacobiSVD<Matrix>(m).singularValues();
}

inline SvdParts svd_thin_safe(const Matrix& m) {
  SvdParts out;
  if (std::min(m.rows(), m.cols()) <= 16) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.u = svd.matrixU();
    out.s = svd.singularValues();
    out.v = svd.matrixV();
    return out;
  }
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  double f2 = m.squaredNorm();
  double s2 = svd.singularValues().squaredNorm();
  if (std::abs(f2 - s2) <= 1e-9 * std::max(1.0, f2)) {
    double rec = (svd.matrixU() * svd.singularValues().asDiagonal() * svd.matrixV().transpose() - m)
                     .squaredNorm();
    if (rec <= 1e-18 * std::max(1.0, f2)) {
      out.u = svd.matrixU();
      out.s = svd.singularValues();
      out.v = svd.matrixV();
      return out;
    }
  }
  Eigen::JacobiSVD<Matrix> jac(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.u = jac.matrixU();
  out.s = jac.singularValues();
  out.v = jac.matrixV();
  return out;
}

}  // namespace detail

struct Norms {
  double frobenius = 0;
  double operator_norm = 0;
  double nuclear = 0;
  double max_abs = 0;
};

inline Norms norms(const Matrix& m) {
  if (!m.allFinite()) throw NumericError("norms: non-finite entry");
  Norms out;
  out.frobenius = m.norm();
  out.max_abs = m.cwiseAbs().maxCoeff();
  Vector s = detail::singular_values_safe(m);
  out.operator_norm = s.size() > 0 ? s(0) : 0.0;
  out.nuclear = s.sum();
  return out;
}

struct SvdTriple {
  Matrix u;  // N x r
  Vector s;  // nonincreasing, nonnegative
  Matrix v;  // T x r
};

// Sign convention: the largest-magnitude entry of each left vector is made
// nonnegative (first index on ties), flipping the paired right vector too.
inline void apply_sign_convention(Matrix& u, Matrix* v) {
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    Eigen::Index imax = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      double a = std::abs(u(i, c));
      if (a > best) {
        best = a;
        imax = i;
      }
    }
    if (u(imax, c) < 0) {
      u.col(c) = -u.col(c);
      if (v) v->col(c) = -v->col(c);
    }
  }
}

inline SvdTriple svd_truncated(const Matrix& m, int r) {
  int rmax = static_cast<int>(std::min(m.rows(), m.cols()));
  if (r < 0 || r > rmax) throw ArgumentError("svd_truncated: rank out of range");
  SvdTriple out;
  if (r == 0) {
    out.u = Matrix(m.rows(), 0);
    out.s = Vector(0);
    out.v = Matrix(m.cols(), 0);
    return out;
  }
  detail::SvdParts svd = detail::svd_thin_safe(m);
  out.u = svd.u.leftCols(r);
  out.s = svd.s.head(r);
  out.v = svd.v.leftCols(r);
  apply_sign_convention(out.u, &out.v);
  return out;
}

}  // namespace panelbreak
