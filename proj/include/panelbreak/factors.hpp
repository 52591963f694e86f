#pragma once

// Factor extraction from the regularized estimates and the row/column
// least-squares refinement that makes them uniformly consistent.

#include "panelbreak/core.hpp"

#include <cmath>
#include <vector>

namespace panelbreak {

struct FactorPair {
  Matrix u;  // N x r_j
  Matrix v;  // T x r_j
};

struct FactorSet {
  std::vector<FactorPair> pairs;  // index 0 is the intercept block
  std::vector<int> ranks;

  int total_rank() const {
    int r = 0;
    for (int rj : ranks) r += rj;
    return r;
  }
};

// Scaled factor pair from the leading right singular vectors: V = sqrt(T) V_r
// and U = theta V / T, so that U V' is the rank-r truncation of theta.
inline FactorPair extract_factors(const Matrix& theta_tilde, int r_j, int n, int t_len) {
  if (theta_tilde.rows() != n || theta_tilde.cols() != t_len)
    throw DimensionError("extract_factors: theta shape mismatch");
  if (r_j > std::min(n, t_len)) throw ArgumentError("extract_factors: rank exceeds min(N,T)");
  FactorPair pair;
  if (r_j == 0) {
    pair.u = Matrix(n, 0);
    pair.v = Matrix(t_len, 0);
    return pair;
  }
  SvdTriple svd = svd_truncated(theta_tilde, r_j);
  pair.v = std::sqrt(static_cast<double>(t_len)) * svd.v;
  pair.u = theta_tilde * pair.v / static_cast<double>(t_len);
  return pair;
}

struct RowRegResult {
  Matrix u_all;  // N x total_rank, blocks ordered j = 0..p
  std::vector<int> flagged_units;
};

struct ColRegResult {
  Matrix v_all;  // T x total_rank
  std::vector<int> flagged_periods;
};

namespace detail {

// Minimum-norm least squares; flags rank-deficient designs instead of
// aborting so long simulation runs survive degenerate draws.
inline Vector solve_ls(const Matrix& a, const Vector& b, bool* deficient) {
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a);
  *deficient = cod.rank() < a.cols();
  return cod.solve(b);
}

}  // namespace detail

inline RowRegResult row_regressions(const PanelData& panel, const FactorSet& v_set) {
  int total = v_set.total_rank();
  if (total < 1) throw ArgumentError("row_regressions: no factor columns");
  RowRegResult out;
  out.u_all = Matrix(panel.n, total);
  Matrix design(panel.t_len, total);
  for (int i = 0; i < panel.n; ++i) {
    for (int t = 0; t < panel.t_len; ++t) {
      int c = 0;
      for (int j = 0; j <= panel.p; ++j) {
        int rj = v_set.ranks[static_cast<std::size_t>(j)];
        if (rj == 0) continue;
        double scale = j == 0 ? 1.0 : panel.x[static_cast<std::size_t>(j - 1)](i, t);
        design.row(t).segment(c, rj) =
            scale * v_set.pairs[static_cast<std::size_t>(j)].v.row(t);
        c += rj;
      }
    }
    bool deficient = false;
    out.u_all.row(i) = detail::solve_ls(design, panel.y.row(i).transpose(), &deficient).transpose();
    if (deficient) out.flagged_units.push_back(i);
  }
  return out;
}

inline ColRegResult col_regressions(const PanelData& panel, const Matrix& u_all,
                                    const std::vector<int>& ranks) {
  int total = static_cast<int>(u_all.cols());
  if (total < 1) throw ArgumentError("col_regressions: no factor columns");
  ColRegResult out;
  out.v_all = Matrix(panel.t_len, total);
  Matrix design(panel.n, total);
  for (int t = 0; t < panel.t_len; ++t) {
    for (int i = 0; i < panel.n; ++i) {
      int c = 0;
      for (int j = 0; j <= panel.p; ++j) {
        int rj = ranks[static_cast<std::size_t>(j)];
        if (rj == 0) continue;
        double scale = j == 0 ? 1.0 : panel.x[static_cast<std::size_t>(j - 1)](i, t);
        design.row(i).segment(c, rj) = scale * u_all.row(i).segment(c, rj);
        c += rj;
      }
    }
    bool deficient = false;
    out.v_all.row(t) = detail::solve_ls(design, panel.y.col(t), &deficient).transpose();
    if (deficient) out.flagged_periods.push_back(t);
  }
  return out;
}

struct RefineResult {
  CoefSet theta_dot;
  FactorSet factors;
  std::vector<int> flagged_units;
  std::vector<int> flagged_periods;
};

// One row pass then one column pass over the truncated-SVD initialization.
inline RefineResult refine(const PanelData& panel, const CoefSet& nnr_coefs,
                           const std::vector<int>& ranks) {
  if (static_cast<int>(ranks.size()) != panel.p + 1)
    throw ArgumentError("refine: ranks must have p+1 entries");
  RefineResult out;
  out.factors.ranks = ranks;
  out.factors.pairs.reserve(ranks.size());
  for (int j = 0; j <= panel.p; ++j)
    out.factors.pairs.push_back(extract_factors(nnr_coefs.thetas[static_cast<std::size_t>(j)],
                                                ranks[static_cast<std::size_t>(j)], panel.n,
                                                panel.t_len));

  out.theta_dot = zero_coefs(panel.n, panel.t_len, panel.p);
  if (out.factors.total_rank() == 0) return out;

  RowRegResult rows = row_regressions(panel, out.factors);
  ColRegResult cols = col_regressions(panel, rows.u_all, ranks);
  out.flagged_units = std::move(rows.flagged_units);
  out.flagged_periods = std::move(cols.flagged_periods);

  int c = 0;
  for (int j = 0; j <= panel.p; ++j) {
    int rj = ranks[static_cast<std::size_t>(j)];
    auto& pair = out.factors.pairs[static_cast<std::size_t>(j)];
    pair.u = rows.u_all.middleCols(c, rj);
    pair.v = cols.v_all.middleCols(c, rj);
    if (rj > 0) out.theta_dot.thetas[static_cast<std::size_t>(j)] = pair.u * pair.v.transpose();
    c += rj;
  }
  return out;
}

}  // namespace panelbreak
