#pragma once

// Sequential testing K-means: per-unit slope profiles, clustering, the
// group homogeneity statistics, and the loop that returns the number of
// groups and memberships for one regime.

#include "panelbreak/core.hpp"
#include "panelbreak/hac.hpp"
#include "panelbreak/ife.hpp"
#include "panelbreak/rng.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace panelbreak {

struct BetaProfiles {
  enum class Regime { pre, post };
  Regime regime = Regime::pre;
  Matrix betas;  // N x (p * T_l), row i stacks the regime slice of each slope
  int t_len_regime = 0;
};

struct BetaSplit {
  BetaProfiles pre;
  BetaProfiles post;
};

// Slice the refined slope matrices at the break, stack the j blocks per
// unit, and scale by 1/sqrt(T_l).
inline BetaSplit build_beta(const CoefSet& theta_dot, int t1_hat) {
  const int p = theta_dot.p();
  if (p < 1) throw ArgumentError("build_beta: needs at least one slope matrix");
  const int n = static_cast<int>(theta_dot.thetas[0].rows());
  const int t_len = static_cast<int>(theta_dot.thetas[0].cols());
  if (t1_hat < 2 || t1_hat > t_len - 2)
    throw ArgumentError("build_beta: break index leaves a regime with fewer than 2 periods");
  BetaSplit out;
  const int t1 = t1_hat;
  const int t2 = t_len - t1_hat;
  out.pre.regime = BetaProfiles::Regime::pre;
  out.pre.t_len_regime = t1;
  out.pre.betas = Matrix(n, p * t1);
  out.post.regime = BetaProfiles::Regime::post;
  out.post.t_len_regime = t2;
  out.post.betas = Matrix(n, p * t2);
  double s1 = 1.0 / std::sqrt(static_cast<double>(t1));
  double s2 = 1.0 / std::sqrt(static_cast<double>(t2));
  for (int j = 1; j <= p; ++j) {
    const Matrix& th = theta_dot.thetas[static_cast<std::size_t>(j)];
    out.pre.betas.middleCols((j - 1) * t1, t1) = s1 * th.leftCols(t1);
    out.post.betas.middleCols((j - 1) * t2, t2) = s2 * th.rightCols(t2);
  }
  return out;
}

struct GroupStructure {
  int k = 1;
  std::vector<int> labels;  // values in 1..k
  Matrix centers;           // k x dim
};

namespace detail {

inline double kmeans_objective(const Matrix& pts, const Matrix& centers,
                               const std::vector<int>& labels) {
  double obj = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    obj += (pts.row(i) - centers.row(labels[static_cast<std::size_t>(i)] - 1)).squaredNorm();
  return obj / static_cast<double>(pts.rows());
}

inline std::vector<int> assign_labels(const Matrix& pts, const Matrix& centers) {
  std::vector<int> labels(static_cast<std::size_t>(pts.rows()));
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      double d = (pts.row(i) - centers.row(c)).squaredNorm();
      if (d < bd) {
        bd = d;
        best = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = best + 1;
  }
  return labels;
}

inline Matrix kmeanspp_init(const Matrix& pts, int m, Philox& rng) {
  const int n = static_cast<int>(pts.rows());
  Matrix centers(m, pts.cols());
  centers.row(0) = pts.row(rng.uniform_int(0, n - 1));
  Vector d2 = (pts.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < m; ++c) {
    double total = d2.sum();
    int pick = 0;
    if (total > 0) {
      double target = rng.uniform() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<int>(rng.uniform_int(0, n - 1));
    }
    centers.row(c) = pts.row(pick);
    d2 = d2.cwiseMin((pts.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  return centers;
}

// Lloyd iterations from given centers; empty clusters steal the point
// farthest from its assigned center.
inline void lloyd(const Matrix& pts, Matrix& centers, std::vector<int>& labels, int max_sweeps) {
  const int n = static_cast<int>(pts.rows());
  const int m = static_cast<int>(centers.rows());
  labels = assign_labels(pts, centers);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    centers.setZero();
    std::vector<int> count(static_cast<std::size_t>(m), 0);
    for (int i = 0; i < n; ++i) {
      centers.row(labels[static_cast<std::size_t>(i)] - 1) += pts.row(i);
      ++count[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)] - 1)];
    }
    for (int c = 0; c < m; ++c) {
      if (count[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) /= count[static_cast<std::size_t>(c)];
      } else {
        int worst = 0;
        double wd = -1.0;
        for (int i = 0; i < n; ++i) {
          if (count[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)] - 1)] <= 1) continue;
          double d = (pts.row(i) - centers.row(labels[static_cast<std::size_t>(i)] - 1)).squaredNorm();
          if (d > wd) {
            wd = d;
            worst = i;
          }
        }
        --count[static_cast<std::size_t>(labels[static_cast<std::size_t>(worst)] - 1)];
        labels[static_cast<std::size_t>(worst)] = c + 1;
        count[static_cast<std::size_t>(c)] = 1;
        centers.row(c) = pts.row(worst);
      }
    }
    std::vector<int> next = assign_labels(pts, centers);
    if (next == labels) return;
    labels = std::move(next);
  }
  // Sweep cap reached: make labels consistent with the final centers.
  labels = assign_labels(pts, centers);
}

inline GroupStructure kmeans_matrix(const Matrix& pts, int m, int restarts, std::uint64_t seed,
                                    const std::optional<Matrix>& warm_start) {
  const int n = static_cast<int>(pts.rows());
  if (m < 1 || m > n) throw ArgumentError("kmeans: group count out of range");
  GroupStructure best;
  double best_obj = std::numeric_limits<double>::infinity();
  int total = restarts + (warm_start ? 1 : 0);
  for (int rs = 0; rs < total; ++rs) {
    Matrix centers;
    if (warm_start && rs == restarts) {
      centers = *warm_start;
    } else {
      Philox rng(seed, stream_id(StreamKind::kmeans, static_cast<std::uint64_t>(rs)));
      centers = kmeanspp_init(pts, m, rng);
    }
    std::vector<int> labels;
    lloyd(pts, centers, labels, 200);
    double obj = kmeans_objective(pts, centers, labels);
    if (obj < best_obj) {
      best_obj = obj;
      best.k = m;
      best.labels = std::move(labels);
      best.centers = std::move(centers);
    }
  }
  return best;
}

}  // namespace detail

// Best of `restarts` seeded k-means++ runs; an optional warm start adds one
// extra run from the supplied centers.
inline GroupStructure kmeans(const BetaProfiles& profiles, int m, int restarts, std::uint64_t seed,
                             const std::optional<Matrix>& warm_start = std::nullopt) {
  return detail::kmeans_matrix(profiles.betas, m, restarts, seed, warm_start);
}

namespace detail {

// Regularized lower incomplete gamma P(a, x) by series or continued
// fraction, after Numerical Recipes.
inline double gamma_p(double a, double x) {
  if (x < 0 || a <= 0) throw ArgumentError("gamma_p: domain");
  if (x == 0) return 0.0;
  double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  double b = x + 1.0 - a;
  double c = 1e300;
  double d = 1.0 / b;
  double h = d;
  for (int n = 1; n < 500; ++n) {
    double an = -n * (n - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - gln) * h;
}

inline double chisq1_cdf(double z) { return gamma_p(0.5, z / 2.0); }

}  // namespace detail

// z solving P(chi2(1) <= z)^m = 1 - varsigma, by bisection.
inline double critical_value(int m, double varsigma) {
  if (m < 1) throw ArgumentError("critical_value: m must be at least 1");
  if (varsigma <= 0 || varsigma >= 1) throw ArgumentError("critical_value: varsigma must be in (0,1)");
  double target = std::pow(1.0 - varsigma, 1.0 / m);
  double lo = 0.0, hi = 1.0;
  while (detail::chisq1_cdf(hi) < target) {
    hi *= 2.0;
    if (hi > 1e8) break;
  }
  while (hi - lo > 1e-10) {
    double mid = 0.5 * (lo + hi);
    if (detail::chisq1_cdf(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline GroupFit fit_ife_grouped(const PanelData& panel_regime, const GroupStructure& groups,
                                int r0, double tol = 1e-8, int max_iter = 1000) {
  return fit_ife_grouped(panel_regime, groups.labels, groups.k, r0, tol, max_iter);
}

inline void bias_and_variance(GroupFit& fit, const PanelData& panel_regime,
                              const GroupStructure& groups, const KernelConfig& kernel) {
  bias_and_variance(fit, panel_regime, groups.labels, groups.k, kernel);
}

// Homogeneity statistic for one estimated group within a regime panel.
inline double group_gamma(const PanelData& regime_panel, const std::vector<int>& group_units,
                          int r0, const KernelConfig& kernel, int* floored_count = nullptr) {
  if (group_units.size() < 2) throw ArgumentError("group_gamma: group must have at least 2 units");
  if (regime_panel.t_len <= regime_panel.p + r0)
    throw ArgumentError("group_gamma: requires T > p + r0");
  PanelData sub = slice_units(regime_panel, group_units);
  return homogeneity_gamma(sub, r0, kernel, floored_count);
}

struct GammaReport {
  Vector per_group;   // Gamma_{k,m} for each group
  double gamma_m = 0.0;  // max of squares
  double critical = 0.0;
  bool reject = false;
};

struct StkResult {
  int k_hat = 1;
  GroupStructure groups;
  std::vector<GammaReport> reports;  // one per tested m
  bool converged = true;
  int hac_floored = 0;
};

// Cluster with m groups, test within-group homogeneity, increment m until
// the test no longer rejects or max_m is hit.
inline StkResult stk_run(const PanelData& regime_panel, const BetaProfiles& profiles, int r0,
                         double varsigma, int max_m, const KernelConfig& kernel = {},
                         int restarts = 20, std::uint64_t seed = 0) {
  if (max_m < 1) throw ArgumentError("stk_run: max_m must be at least 1");
  StkResult res;
  for (int m = 1; m <= max_m; ++m) {
    GroupStructure gs = m == 1 ? detail::kmeans_matrix(profiles.betas, 1, 1, seed, std::nullopt)
                               : kmeans(profiles, m, restarts, seed + static_cast<std::uint64_t>(m));
    GammaReport report;
    report.per_group = Vector::Zero(m);
    report.critical = critical_value(m, varsigma);
    double gamma_m = 0.0;
    auto members = detail::group_members(gs.labels, m);
    for (int g = 0; g < m; ++g) {
      // Singleton groups carry no within-group contrast.
      if (members[static_cast<std::size_t>(g)].size() < 2) continue;
      int floored = 0;
      double gk = group_gamma(regime_panel, members[static_cast<std::size_t>(g)], r0, kernel, &floored);
      res.hac_floored += floored;
      report.per_group(g) = gk;
      gamma_m = std::max(gamma_m, gk * gk);
    }
    report.gamma_m = gamma_m;
    report.reject = gamma_m > report.critical;
    res.reports.push_back(report);
    res.groups = std::move(gs);
    res.k_hat = m;
    if (!report.reject) return res;
  }
  res.converged = false;
  return res;
}

}  // namespace panelbreak
