#pragma once

// Break date estimation by binary segmentation over the refined slope
// matrices or their normalized singular vectors, the sup-F existence test,
// and the sequential multiple-break wrapper.

#include "panelbreak/core.hpp"
#include "panelbreak/factors.hpp"
#include "panelbreak/ife.hpp"
#include "panelbreak/nnr.hpp"
#include "panelbreak/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace panelbreak {

enum class BreakMethod { slope_matrix, singular_vector };

struct BreakResult {
  int t1_hat = 2;     // periods 1..T, break after period t1_hat
  Vector profile;     // objective at s = 2..T-1
  BreakMethod method = BreakMethod::slope_matrix;
};

// Two-segment within-unit variance of the slope matrices at split s; the
// intercept block is excluded.
inline double break_objective(const CoefSet& theta_dot, int s) {
  const int p = theta_dot.p();
  if (p < 1) throw ArgumentError("break_objective: needs at least one slope matrix");
  const int n = static_cast<int>(theta_dot.thetas[0].rows());
  const int t_len = static_cast<int>(theta_dot.thetas[0].cols());
  if (s < 2 || s > t_len - 1) throw ArgumentError("break_objective: split out of range");
  double total = 0.0;
  for (int j = 1; j <= p; ++j) {
    const Matrix& th = theta_dot.thetas[static_cast<std::size_t>(j)];
    for (int i = 0; i < n; ++i) {
      double m1 = th.row(i).head(s).mean();
      double m2 = th.row(i).tail(t_len - s).mean();
      total += (th.row(i).head(s).array() - m1).square().sum();
      total += (th.row(i).tail(t_len - s).array() - m2).square().sum();
    }
  }
  return total / (static_cast<double>(p) * n * t_len);
}

namespace detail {

inline BreakResult argmin_profile(const Vector& profile, BreakMethod method) {
  BreakResult out;
  out.method = method;
  out.profile = profile;
  int best = 0;
  for (int idx = 1; idx < profile.size(); ++idx)
    if (profile(idx) < profile(best)) best = idx;
  out.t1_hat = best + 2;
  return out;
}

// Segmented sums of a row series via prefixes: SSE of [0,s) and [s,T).
inline double two_segment_sse(const Vector& pre1, const Vector& pre2, int s, int t_len) {
  double s1 = pre1(s), q1 = pre2(s);
  double s2 = pre1(t_len) - s1, q2 = pre2(t_len) - q1;
  double sse = q1 - s1 * s1 / s;
  sse += q2 - s2 * s2 / (t_len - s);
  return sse;
}

}  // namespace detail

// Full profile over s in {2, ..., T-1}; ties break to the smallest s.
inline BreakResult estimate_break(const CoefSet& theta_dot) {
  const int p = theta_dot.p();
  if (p < 1) throw ArgumentError("estimate_break: needs at least one slope matrix");
  const int n = static_cast<int>(theta_dot.thetas[0].rows());
  const int t_len = static_cast<int>(theta_dot.thetas[0].cols());
  if (t_len < 4) throw ArgumentError("estimate_break: requires T >= 4");
  Vector profile = Vector::Zero(t_len - 2);
  Vector pre1(t_len + 1), pre2(t_len + 1);
  for (int j = 1; j <= p; ++j) {
    const Matrix& th = theta_dot.thetas[static_cast<std::size_t>(j)];
    for (int i = 0; i < n; ++i) {
      pre1(0) = 0;
      pre2(0) = 0;
      for (int t = 0; t < t_len; ++t) {
        pre1(t + 1) = pre1(t) + th(i, t);
        pre2(t + 1) = pre2(t) + th(i, t) * th(i, t);
      }
      for (int s = 2; s <= t_len - 1; ++s)
        profile(s - 2) += detail::two_segment_sse(pre1, pre2, s, t_len);
    }
  }
  profile /= static_cast<double>(p) * n * t_len;
  return detail::argmin_profile(profile, BreakMethod::slope_matrix);
}

// Variant driven by the normalized right singular vectors; valid when every
// slope rank is at most 2.
inline BreakResult estimate_break_sv(const FactorSet& factors) {
  const int p = static_cast<int>(factors.pairs.size()) - 1;
  if (p < 1) throw ArgumentError("estimate_break_sv: needs at least one slope block");
  int total = 0;
  for (int j = 1; j <= p; ++j) {
    int rj = factors.ranks[static_cast<std::size_t>(j)];
    if (rj > 2) throw ArgumentError("estimate_break_sv: slope rank above 2 is outside this method's domain");
    total += rj;
  }
  if (total == 0) throw ArgumentError("estimate_break_sv: all slope ranks are zero");
  const int t_len = static_cast<int>(factors.pairs[static_cast<std::size_t>(1)].v.rows());
  Matrix vstar(t_len, total);
  int c = 0;
  for (int j = 1; j <= p; ++j) {
    int rj = factors.ranks[static_cast<std::size_t>(j)];
    if (rj == 0) continue;
    const Matrix& v = factors.pairs[static_cast<std::size_t>(j)].v;
    for (int t = 0; t < t_len; ++t) {
      double norm = v.row(t).norm();
      if (norm <= 0)
        throw NumericError("estimate_break_sv: zero factor row at (t=" + std::to_string(t + 1) +
                           ", j=" + std::to_string(j) + ")");
      vstar.row(t).segment(c, rj) = v.row(t) / norm;
    }
    c += rj;
  }
  Vector profile = Vector::Zero(t_len - 2);
  Vector pre1(t_len + 1), pre2(t_len + 1);
  for (int d = 0; d < total; ++d) {
    pre1(0) = 0;
    pre2(0) = 0;
    for (int t = 0; t < t_len; ++t) {
      pre1(t + 1) = pre1(t) + vstar(t, d);
      pre2(t + 1) = pre2(t) + vstar(t, d) * vstar(t, d);
    }
    for (int s = 2; s <= t_len - 1; ++s)
      profile(s - 2) += detail::two_segment_sse(pre1, pre2, s, t_len);
  }
  profile /= static_cast<double>(t_len);
  return detail::argmin_profile(profile, BreakMethod::singular_vector);
}

struct SupFResult {
  double f_nt = 0.0;
  Vector per_unit;         // sup over candidate breaks of F_i
  int candidate_break = 0; // candidate attaining f_nt
  double epsilon = 0.15;
  double critical_value = 15.37;
  bool reject = false;
  int skipped = 0;         // candidates dropped because a sub-fit failed
};

// Chow-type statistic per unit, maximized over trimmed candidate breaks.
// Both regimes are fit with the heterogeneous-slope model; the contrast is
// normalized by the summed per-regime sandwich covariances on the common
// sqrt(T) scale.
inline SupFResult supf_test(const PanelData& panel, int r0, double epsilon, double critical_value,
                            int workers = 0) {
  if (epsilon <= 0 || epsilon >= 0.5) throw ArgumentError("supf_test: epsilon must be in (0, 0.5)");
  const int t_len = panel.t_len;
  const int p = panel.p;
  const int lo = static_cast<int>(std::ceil(epsilon * t_len));
  const int hi = static_cast<int>(std::floor((1.0 - epsilon) * t_len));
  if (lo < p + 2) throw ArgumentError("supf_test: trimming leaves too few periods per regime");

  SupFResult res;
  res.epsilon = epsilon;
  res.critical_value = critical_value;
  res.per_unit = Vector::Constant(panel.n, -std::numeric_limits<double>::infinity());

  const int n_cand = hi - lo + 1;
  if (n_cand < 1) throw ArgumentError("supf_test: empty candidate set");
  Matrix fstats = Matrix::Constant(panel.n, n_cand, std::numeric_limits<double>::quiet_NaN());

  parallel_for(n_cand, workers, [&](int idx) {
    const int t1 = lo + idx;
    if (t1 < 2 || t_len - t1 < 2) return;
    PanelData left = slice_periods(panel, 0, t1);
    PanelData right = slice_periods(panel, t1, t_len);
    if (left.t_len <= p + r0 || right.t_len <= p + r0) return;
    HeteroFit f1, f2;
    try {
      f1 = fit_ife_hetero(left, r0);
      f2 = fit_ife_hetero(right, r0);
    } catch (const SingularityError&) {
      return;
    }
    detail::UnitPanel up1 = detail::split_units(left);
    detail::UnitPanel up2 = detail::split_units(right);
    double tau = static_cast<double>(t1) / t_len;
    for (int i = 0; i < panel.n; ++i) {
      auto sandwich = [&](const HeteroFit& f, const detail::UnitPanel& up, int tl) -> Matrix {
        const Matrix xf = detail::project_out(f.f_hat, up.x[static_cast<std::size_t>(i)]);
        Matrix s_ii = xf.transpose() * xf / static_cast<double>(tl);
        Vector e = up.y[static_cast<std::size_t>(i)] -
                   up.x[static_cast<std::size_t>(i)] * f.thetas.row(i).transpose();
        if (f.f_hat.cols() > 0) e -= f.f_hat * f.lambdas.row(i).transpose();
        HacResult hac = hac_covariance(xf, e, KernelKind::none, 0);
        Eigen::LDLT<Matrix> s_ldlt(s_ii);
        if (detail::ldlt_singular(s_ldlt)) throw SingularityError("supf: singular S_ii", i);
        Matrix sinv_o = s_ldlt.solve(hac.omega);
        return s_ldlt.solve(sinv_o.transpose()).transpose();
      };
      try {
        Matrix sigma = sandwich(f1, up1, t1) / tau + sandwich(f2, up2, t_len - t1) / (1.0 - tau);
        Vector d = (f1.thetas.row(i) - f2.thetas.row(i)).transpose();
        sigma = floor_eigenvalues(sigma, 1e-12);
        double quad = d.dot(sigma.ldlt().solve(d));
        fstats(i, idx) = (static_cast<double>(t_len) - 2 * p) / p * quad;
      } catch (const SingularityError&) {
        fstats(i, idx) = std::numeric_limits<double>::quiet_NaN();
      }
    }
  });

  std::vector<bool> candidate_ok(static_cast<std::size_t>(n_cand), true);
  for (int idx = 0; idx < n_cand; ++idx) {
    bool ok = true;
    for (int i = 0; i < panel.n; ++i)
      if (!std::isfinite(fstats(i, idx))) ok = false;
    candidate_ok[static_cast<std::size_t>(idx)] = ok;
    if (!ok) ++res.skipped;
  }

  double best = -std::numeric_limits<double>::infinity();
  int best_t1 = lo;
  for (int idx = 0; idx < n_cand; ++idx) {
    if (!candidate_ok[static_cast<std::size_t>(idx)]) continue;
    for (int i = 0; i < panel.n; ++i) {
      double f = fstats(i, idx);
      if (f > res.per_unit(i)) res.per_unit(i) = f;
      if (f > best) {
        best = f;
        best_t1 = lo + idx;
      }
    }
  }
  if (!std::isfinite(best)) throw NumericError("supf_test: every candidate break was skipped");
  res.f_nt = best;
  res.candidate_break = best_t1;
  res.reject = res.f_nt > critical_value;
  return res;
}

namespace detail {

// Steps 1-3 on a segment: tuning, regularized solve, rank selection,
// row/column refinement, then the segmented-variance break estimate.
inline int segment_break(const PanelData& segment) {
  TuningResult tuning = select_tuning(segment);
  NnrConfig cfg;
  cfg.nu = tuning.nu;
  NnrResult nnr = solve_nnr(segment, cfg);
  std::vector<int> ranks(static_cast<std::size_t>(segment.p) + 1);
  bool any = false;
  for (int j = 0; j <= segment.p; ++j) {
    ranks[static_cast<std::size_t>(j)] =
        estimate_rank(nnr.coefs.thetas[static_cast<std::size_t>(j)], tuning.nu(j));
    if (j >= 1 && ranks[static_cast<std::size_t>(j)] > 0) any = true;
  }
  if (!any) ranks[1] = 1;  // keep the break objective well defined
  RefineResult refined = refine(segment, nnr.coefs, ranks);
  return estimate_break(refined.theta_dot).t1_hat;
}

inline void sequential_recurse(const PanelData& panel, int t_begin, int t_end, int r0,
                               double epsilon, double critical_value, int max_b,
                               std::vector<int>& breaks, int workers) {
  if (static_cast<int>(breaks.size()) >= max_b) return;
  int seg_len = t_end - t_begin;
  if (seg_len < 4) return;
  if (static_cast<int>(std::ceil(epsilon * seg_len)) < panel.p + 2) return;
  PanelData segment = slice_periods(panel, t_begin, t_end);
  SupFResult test = supf_test(segment, r0, epsilon, critical_value, workers);
  if (!test.reject) return;
  int local_t1 = segment_break(segment);
  breaks.push_back(t_begin + local_t1);
  sequential_recurse(panel, t_begin, t_begin + local_t1, r0, epsilon, critical_value, max_b,
                     breaks, workers);
  sequential_recurse(panel, t_begin + local_t1, t_end, r0, epsilon, critical_value, max_b, breaks,
                     workers);
}

}  // namespace detail

// Test, split, and recurse on each segment until no rejection or max_b
// breaks; each segment is re-estimated from scratch.
inline std::vector<int> sequential_breaks(const PanelData& panel, int r0, double epsilon,
                                          double critical_value, int max_b, int workers = 0) {
  if (max_b < 0) throw ArgumentError("sequential_breaks: max_b must be nonnegative");
  std::vector<int> breaks;
  if (max_b == 0) return breaks;
  detail::sequential_recurse(panel, 0, panel.t_len, r0, epsilon, critical_value, max_b, breaks,
                             workers);
  std::sort(breaks.begin(), breaks.end());
  return breaks;
}

}  // namespace panelbreak
