#pragma once

// Nuclear-norm-regularized regression by iterative singular value
// thresholding, plus the tuning rule and the rank criterion built on it.

#include "panelbreak/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace panelbreak {

struct NnrConfig {
  Vector nu;             // p+1 tuning parameters, all > 0
  double step = 0.0;     // proximal step size; 0 selects the Lipschitz bound
  double tol = 1e-8;     // relative objective-change stopping threshold
  int max_iter = 5000;
};

struct NnrResult {
  CoefSet coefs;
  std::vector<double> objective_trace;  // one entry per sweep
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// Shrink singular values by lambda; also reports the nuclear norm of the
// result so iterative callers can track the objective without extra SVDs.
inline Matrix soft_threshold_impl(const Matrix& m, double lambda, double* nuclear_out) {
  detail::SvdParts svd = detail::svd_thin_safe(m);
  Vector s = svd.s;
  int keep = 0;
  double nuclear = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    s(i) = std::max(s(i) - lambda, 0.0);
    nuclear += s(i);
    if (s(i) > 0) keep = static_cast<int>(i) + 1;
  }
  if (nuclear_out) *nuclear_out = nuclear;
  if (keep == 0) return Matrix::Zero(m.rows(), m.cols());
  return svd.u.leftCols(keep) * s.head(keep).asDiagonal() * svd.v.leftCols(keep).transpose();
}

}  // namespace detail

// Proximal operator of the nuclear norm: shrink every singular value by
// lambda and drop the ones that hit zero.
inline Matrix soft_threshold_svd(const Matrix& m, double lambda) {
  if (lambda < 0) throw ArgumentError("soft_threshold_svd: lambda must be nonnegative");
  return detail::soft_threshold_impl(m, lambda, nullptr);
}

// Step size bound 0.5 / max_it(1 + sum_j X_j,it^2); keeps every block update
// inside the descent region of its quadratic majorant.
inline double nnr_auto_step(const PanelData& panel) {
  Matrix acc = Matrix::Ones(panel.n, panel.t_len);
  for (const auto& xj : panel.x) acc += xj.cwiseProduct(xj);
  return 0.5 / acc.maxCoeff();
}

inline double nnr_objective(const PanelData& panel, const CoefSet& coefs, const Vector& nu) {
  double nt = static_cast<double>(panel.n) * panel.t_len;
  double obj = composite_residual(panel, coefs).squaredNorm() / nt;
  for (int j = 0; j <= panel.p; ++j)
    obj += nu(j) * detail::singular_values_safe(coefs.thetas[static_cast<std::size_t>(j)]).sum();
  return obj;
}

// Cyclic proximal scheme: the intercept block is an exact prox on the
// partial residual, each slope block takes one gradient step followed by
// singular value thresholding.
inline NnrResult solve_nnr(const PanelData& panel, const NnrConfig& cfg) {
  if (cfg.nu.size() != panel.p + 1) throw ArgumentError("solve_nnr: nu must have p+1 entries");
  if ((cfg.nu.array() <= 0).any()) throw ArgumentError("solve_nnr: nu entries must be positive");
  if (cfg.tol <= 0) throw ArgumentError("solve_nnr: tol must be positive");
  if (cfg.max_iter < 1) throw ArgumentError("solve_nnr: max_iter must be at least 1");

  const double nt = static_cast<double>(panel.n) * panel.t_len;
  const double tau = cfg.step > 0 ? cfg.step : nnr_auto_step(panel);

  NnrResult res;
  res.coefs = zero_coefs(panel.n, panel.t_len, panel.p);
  auto& th = res.coefs.thetas;

  // Full residual Y - Theta_0 - sum X_j (.) Theta_j, updated in place.
  Matrix resid = panel.y;
  Vector nuclear = Vector::Zero(panel.p + 1);

  double prev = resid.squaredNorm() / nt;  // objective at the zero start
  for (int it = 0; it < cfg.max_iter; ++it) {
    // Exact prox for the intercept block.
    resid += th[0];
    th[0] = detail::soft_threshold_impl(resid, cfg.nu(0) * nt / 2.0, &nuclear(0));
    resid -= th[0];

    // Gradient step then prox for each slope block; with the partial
    // residual added back this is Theta_j + tau X_j (.) resid.
    for (int j = 1; j <= panel.p; ++j) {
      const Matrix& xj = panel.x[static_cast<std::size_t>(j - 1)];
      Matrix& tj = th[static_cast<std::size_t>(j)];
      Matrix updated = detail::soft_threshold_impl(tj + tau * xj.cwiseProduct(resid),
                                                   tau * cfg.nu(j) * nt / 2.0, &nuclear(j));
      resid += xj.cwiseProduct(tj - updated);
      tj = std::move(updated);
    }

    // Guard against drift in the running residual.
    if ((it + 1) % 128 == 0) resid = composite_residual(panel, res.coefs);

    double obj = resid.squaredNorm() / nt + cfg.nu.dot(nuclear);
    if (!std::isfinite(obj)) throw NumericError("solve_nnr: objective diverged");
    res.objective_trace.push_back(obj);
    res.iterations = it + 1;
    if (std::abs(prev - obj) <= cfg.tol * std::max(1.0, std::abs(prev))) {
      res.converged = true;
      break;
    }
    prev = obj;
  }
  return res;
}

// nu = c * (sqrt(N) v sqrt(T log T)) / (NT) * sigma
inline double tuning_value(int n, int t_len, double sigma, double c_nu = 4.0) {
  double rate = std::max(std::sqrt(static_cast<double>(n)),
                         std::sqrt(t_len * std::log(static_cast<double>(t_len))));
  return c_nu * rate / (static_cast<double>(n) * t_len) * sigma;
}

namespace detail {

inline double median_inplace(std::vector<double>& v) {
  std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m) - 1, v.end());
  return 0.5 * (hi + v[m - 1]);
}

// 1.4826 * median absolute deviation, a robust residual-scale estimate.
inline double mad_sigma(const Matrix& m) {
  std::vector<double> v(m.data(), m.data() + m.size());
  double med = median_inplace(v);
  for (auto& e : v) e = std::abs(e - med);
  return 1.4826 * median_inplace(v);
}

inline Matrix two_way_demean(const Matrix& m) {
  Vector row_means = m.rowwise().mean();
  Eigen::RowVectorXd col_means = m.colwise().mean();
  double grand = m.mean();
  return (m.colwise() - row_means).rowwise() - (col_means.array() - grand).matrix();
}

}  // namespace detail

struct TuningResult {
  Vector nu;
  bool floored = false;
};

namespace detail {

// Per-block residual scales: the intercept block sees the raw residual,
// each slope block sees X_j (.) residual inflated by the second moment of
// X_j, so that the implied shrinkage sits at the scale of the noise
// operator norm for that block.
inline Vector block_scales(const PanelData& panel, const Matrix& resid) {
  Vector sigma(panel.p + 1);
  sigma(0) = mad_sigma(resid);
  for (int j = 1; j <= panel.p; ++j) {
    const Matrix& xj = panel.x[static_cast<std::size_t>(j - 1)];
    double m2 = xj.cwiseProduct(xj).mean();
    sigma(j) = m2 * mad_sigma(xj.cwiseProduct(resid));
  }
  return sigma;
}

inline Vector nu_from_scales(const PanelData& panel, const Vector& sigma, double c_nu,
                             bool* floored) {
  constexpr double kFloor = 1e-8;
  Vector nu(panel.p + 1);
  for (int j = 0; j <= panel.p; ++j) {
    nu(j) = tuning_value(panel.n, panel.t_len, sigma(j), c_nu);
    if (nu(j) < kFloor) {
      nu(j) = kFloor;
      *floored = true;
    }
  }
  return nu;
}

}  // namespace detail

// Two-pass plug-in: robust block scales of two-way demeaned Y seed a pilot
// solve, whose residuals give the scales used for the returned values.
inline TuningResult select_tuning(const PanelData& panel, double c_nu = 2.0,
                                  double pilot_tol = 1e-8, int pilot_max_iter = 5000) {
  TuningResult out;
  bool floored = false;
  Vector sigma0 = detail::block_scales(panel, detail::two_way_demean(panel.y));
  out.nu = detail::nu_from_scales(panel, sigma0, c_nu, &floored);
  if (floored) {
    out.floored = true;
    return out;
  }

  NnrConfig pilot;
  pilot.nu = out.nu;
  pilot.tol = pilot_tol;
  pilot.max_iter = pilot_max_iter;
  NnrResult fit = solve_nnr(panel, pilot);

  Vector sigma1 = detail::block_scales(panel, composite_residual(panel, fit.coefs));
  out.nu = detail::nu_from_scales(panel, sigma1, c_nu, &out.floored);
  return out;
}

// Singular value thresholding criterion: count singular values at or above
// 0.5 * sqrt(nu * ||theta||_op).
inline int estimate_rank(const Matrix& theta, double nu_j) {
  if (nu_j <= 0) throw ArgumentError("estimate_rank: nu must be positive");
  Vector s = detail::singular_values_safe(theta);
  if (s.size() == 0 || s(0) <= 0) return 0;
  double threshold = 0.5 * std::sqrt(nu_j * s(0));
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) >= threshold) ++r;
  return r;
}

}  // namespace panelbreak
