#pragma once

// Interactive-fixed-effects estimation: heterogeneous-slope PCA fits,
// grouped post-classification fits, slope homogeneity statistic, and the
// bias correction / covariance machinery for group-specific slopes.

#include "panelbreak/core.hpp"
#include "panelbreak/hac.hpp"

#include <cmath>
#include <vector>

namespace panelbreak {

struct HeteroFit {
  Matrix thetas;   // N x p, per-unit slopes
  Matrix f_hat;    // T x r0 with F'F/T = I
  Matrix lambdas;  // N x r0
  Matrix v_nt;     // r0 x r0 diagonal eigenvalue matrix
  double objective = 0.0;
  std::vector<double> objective_trace;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

inline bool ldlt_singular(const Eigen::LDLT<Matrix>& ldlt) {
  if (ldlt.info() != Eigen::Success) return true;
  Vector d = ldlt.vectorD().cwiseAbs();
  double dmax = d.maxCoeff();
  return dmax <= 0.0 || d.minCoeff() < 1e-12 * dmax;
}

// Per-unit data views used by the alternating fits.
struct UnitPanel {
  std::vector<Matrix> x;  // N entries, each T x p
  std::vector<Vector> y;  // N entries, each length T
};

inline UnitPanel split_units(const PanelData& panel) {
  UnitPanel up;
  up.x.reserve(static_cast<std::size_t>(panel.n));
  up.y.reserve(static_cast<std::size_t>(panel.n));
  for (int i = 0; i < panel.n; ++i) {
    Matrix xi(panel.t_len, panel.p);
    for (int j = 0; j < panel.p; ++j) xi.col(j) = panel.x[static_cast<std::size_t>(j)].row(i);
    up.x.push_back(std::move(xi));
    up.y.push_back(panel.y.row(i).transpose());
  }
  return up;
}

// M_F v = v - F (F'v) / T under the normalization F'F/T = I.
inline Matrix project_out(const Matrix& f, const Matrix& w) {
  if (f.cols() == 0) return w;
  return w - f * (f.transpose() * w) / static_cast<double>(f.rows());
}

// Leading-r eigenpairs of sum_i w_i w_i' / (N T); factors scaled by sqrt(T).
inline void pca_factors(const std::vector<Vector>& w, int r, Matrix& f, Matrix& v_nt) {
  const int t_len = static_cast<int>(w.front().size());
  const double scale = static_cast<double>(w.size()) * t_len;
  Matrix cov = Matrix::Zero(t_len, t_len);
  for (const auto& wi : w) cov.selfadjointView<Eigen::Lower>().rankUpdate(wi, 1.0 / scale);
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  f = Matrix(t_len, r);
  v_nt = Matrix::Zero(r, r);
  for (int c = 0; c < r; ++c) {
    f.col(c) = es.eigenvectors().col(t_len - 1 - c);
    v_nt(c, c) = es.eigenvalues()(t_len - 1 - c);
  }
  apply_sign_convention(f, nullptr);
  f *= std::sqrt(static_cast<double>(t_len));
}

// PCA of Y net of per-unit least squares fits; shared warm start.
inline Matrix init_factors(const UnitPanel& up, int r) {
  const int t_len = static_cast<int>(up.y.front().size());
  if (r == 0) return Matrix(t_len, 0);
  std::vector<Vector> w;
  w.reserve(up.y.size());
  for (std::size_t i = 0; i < up.y.size(); ++i) {
    Vector theta = (up.x[i].transpose() * up.x[i])
                       .ldlt()
                       .solve(up.x[i].transpose() * up.y[i]);
    w.push_back(up.y[i] - up.x[i] * theta);
  }
  Matrix f, v_nt;
  pca_factors(w, r, f, v_nt);
  return f;
}

}  // namespace detail

// Alternates per-unit slope updates against PCA factor updates on the
// concentrated objective until the objective stalls.
inline HeteroFit fit_ife_hetero(const PanelData& panel, int r0, double tol = 1e-8,
                                int max_iter = 1000) {
  if (r0 < 0) throw ArgumentError("fit_ife_hetero: r0 must be nonnegative");
  if (panel.t_len <= panel.p + r0)
    throw ArgumentError("fit_ife_hetero: requires T > p + r0");
  if (panel.n < r0) throw ArgumentError("fit_ife_hetero: requires N >= r0");

  detail::UnitPanel up = detail::split_units(panel);
  const double scale = static_cast<double>(panel.n) * panel.t_len;

  HeteroFit fit;
  fit.thetas = Matrix::Zero(panel.n, panel.p);
  fit.f_hat = detail::init_factors(up, r0);
  fit.v_nt = Matrix::Zero(r0, r0);
  fit.lambdas = Matrix::Zero(panel.n, r0);

  std::vector<Vector> resid(static_cast<std::size_t>(panel.n));
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    double obj = 0.0;
    for (int i = 0; i < panel.n; ++i) {
      const Matrix xf = detail::project_out(fit.f_hat, up.x[static_cast<std::size_t>(i)]);
      Matrix a = xf.transpose() * xf;
      Eigen::LDLT<Matrix> ldlt(a);
      if (detail::ldlt_singular(ldlt))
        throw SingularityError("fit_ife_hetero: singular design for unit " + std::to_string(i + 1), i);
      Vector theta = ldlt.solve(xf.transpose() * up.y[static_cast<std::size_t>(i)]);
      fit.thetas.row(i) = theta.transpose();
      resid[static_cast<std::size_t>(i)] =
          up.y[static_cast<std::size_t>(i)] - up.x[static_cast<std::size_t>(i)] * theta;
      Vector proj = detail::project_out(fit.f_hat, resid[static_cast<std::size_t>(i)]);
      obj += proj.squaredNorm() / scale;
    }
    fit.iterations = it + 1;
    fit.objective = obj;
    fit.objective_trace.push_back(obj);
    if (r0 == 0) {
      fit.converged = true;
      break;
    }
    detail::pca_factors(resid, r0, fit.f_hat, fit.v_nt);
    if (it > 0 && std::abs(prev - obj) <= tol * std::max(1.0, std::abs(prev))) {
      fit.converged = true;
      break;
    }
    prev = obj;
  }
  for (int i = 0; i < panel.n; ++i)
    fit.lambdas.row(i) =
        (fit.f_hat.transpose() * resid[static_cast<std::size_t>(i)] / panel.t_len).transpose();
  return fit;
}

// Slope homogeneity statistic for an arbitrary unit set: a standardized
// average of per-unit Wald-type contrasts against the cross-unit mean.
inline double homogeneity_gamma(const PanelData& panel_slice, int r0, const KernelConfig& kernel,
                                int* floored_count = nullptr) {
  HeteroFit fit = fit_ife_hetero(panel_slice, r0);
  const int n = panel_slice.n;
  const int t_len = panel_slice.t_len;
  const int p = panel_slice.p;
  const int bw = resolve_bandwidth(kernel, t_len);

  detail::UnitPanel up = detail::split_units(panel_slice);
  Eigen::RowVectorXd theta_bar = fit.thetas.colwise().mean();

  Matrix lam_gram;
  Eigen::LDLT<Matrix> lam_ldlt;
  if (r0 > 0) {
    lam_gram = fit.lambdas.transpose() * fit.lambdas / static_cast<double>(n);
    lam_ldlt.compute(lam_gram);
  }

  int floored = 0;
  double s_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const Matrix xf = detail::project_out(fit.f_hat, up.x[static_cast<std::size_t>(i)]);
    Matrix s_ii = xf.transpose() * xf / static_cast<double>(t_len);
    Vector e = up.y[static_cast<std::size_t>(i)] -
               up.x[static_cast<std::size_t>(i)] * fit.thetas.row(i).transpose();
    if (r0 > 0) e -= fit.f_hat * fit.lambdas.row(i).transpose();
    HacResult hac = hac_covariance(xf, e, kernel.kind, bw);
    if (hac.floored) ++floored;
    double a_ii = 0.0;
    if (r0 > 0) {
      Vector li = fit.lambdas.row(i).transpose();
      a_ii = li.dot(lam_ldlt.solve(li));
    }
    Vector d = (fit.thetas.row(i) - theta_bar).transpose();
    Vector sd = s_ii * d;
    double quad = sd.dot(hac.omega.ldlt().solve(sd));
    double shrink = 1.0 - a_ii / static_cast<double>(n);
    s_sum += t_len * quad * shrink * shrink;
  }
  if (floored_count) *floored_count = floored;
  double s_mean = s_sum / n;
  return std::sqrt(static_cast<double>(n)) * (s_mean - p) / std::sqrt(2.0 * p);
}

struct GroupFit {
  Matrix alphas;            // K x p group slopes
  Matrix f_hat;             // T_l x r0
  Matrix lambdas;           // N_regime x r0
  Matrix bias;              // K x p, amount subtracted by the correction
  std::vector<Matrix> cov;  // K matrices, p x p
  Matrix se;                // K x p
  Vector rho;               // sqrt(N_k / T_l)
  std::vector<int> sizes;   // group sizes
  double objective = 0.0;
  std::vector<double> objective_trace;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

// Group labels as 0-based index lists; labels are 1-based values 1..k.
inline std::vector<std::vector<int>> group_members(const std::vector<int>& labels, int k) {
  std::vector<std::vector<int>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i)
    members[static_cast<std::size_t>(labels[i] - 1)].push_back(static_cast<int>(i));
  return members;
}

}  // namespace detail

// Pooled within-group slopes alternating with PCA factor updates; the
// regimes are fit separately, loadings are not shared across them.
inline GroupFit fit_ife_grouped(const PanelData& panel_regime, const std::vector<int>& labels,
                                int k, int r0, double tol = 1e-8, int max_iter = 1000) {
  if (k < 1) throw ArgumentError("fit_ife_grouped: k must be at least 1");
  if (static_cast<int>(labels.size()) != panel_regime.n)
    throw ArgumentError("fit_ife_grouped: labels length mismatch");
  if (panel_regime.t_len <= panel_regime.p + r0)
    throw ArgumentError("fit_ife_grouped: requires T > p + r0");
  auto members = detail::group_members(labels, k);
  for (int g = 0; g < k; ++g)
    if (members[static_cast<std::size_t>(g)].empty())
      throw ArgumentError("fit_ife_grouped: empty group " + std::to_string(g + 1));

  detail::UnitPanel up = detail::split_units(panel_regime);
  const int n = panel_regime.n;
  const int t_len = panel_regime.t_len;
  const int p = panel_regime.p;
  const double scale = static_cast<double>(n) * t_len;

  GroupFit fit;
  fit.alphas = Matrix::Zero(k, p);
  fit.f_hat = detail::init_factors(up, r0);
  Matrix v_nt;
  fit.sizes.resize(static_cast<std::size_t>(k));
  fit.rho = Vector(k);
  for (int g = 0; g < k; ++g) {
    fit.sizes[static_cast<std::size_t>(g)] = static_cast<int>(members[static_cast<std::size_t>(g)].size());
    fit.rho(g) = std::sqrt(static_cast<double>(fit.sizes[static_cast<std::size_t>(g)]) / t_len);
  }

  std::vector<Vector> resid(static_cast<std::size_t>(n));
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < max_iter; ++it) {
    for (int g = 0; g < k; ++g) {
      Matrix a = Matrix::Zero(p, p);
      Vector b = Vector::Zero(p);
      for (int i : members[static_cast<std::size_t>(g)]) {
        const Matrix xf = detail::project_out(fit.f_hat, up.x[static_cast<std::size_t>(i)]);
        a.noalias() += xf.transpose() * xf;
        b.noalias() += xf.transpose() * up.y[static_cast<std::size_t>(i)];
      }
      Eigen::LDLT<Matrix> ldlt(a);
      if (detail::ldlt_singular(ldlt))
        throw SingularityError("fit_ife_grouped: singular design for group " + std::to_string(g + 1), g);
      fit.alphas.row(g) = ldlt.solve(b).transpose();
    }
    double obj = 0.0;
    for (int i = 0; i < n; ++i) {
      int g = labels[static_cast<std::size_t>(i)] - 1;
      resid[static_cast<std::size_t>(i)] = up.y[static_cast<std::size_t>(i)] -
                                           up.x[static_cast<std::size_t>(i)] * fit.alphas.row(g).transpose();
      Vector proj = detail::project_out(fit.f_hat, resid[static_cast<std::size_t>(i)]);
      obj += proj.squaredNorm() / scale;
    }
    fit.iterations = it + 1;
    fit.objective = obj;
    fit.objective_trace.push_back(obj);
    if (r0 == 0) {
      fit.converged = true;
      break;
    }
    detail::pca_factors(resid, r0, fit.f_hat, v_nt);
    if (it > 0 && std::abs(prev - obj) <= tol * std::max(1.0, std::abs(prev))) {
      fit.converged = true;
      break;
    }
    prev = obj;
  }
  fit.lambdas = Matrix::Zero(n, r0);
  for (int i = 0; i < n; ++i)
    fit.lambdas.row(i) =
        (fit.f_hat.transpose() * resid[static_cast<std::size_t>(i)] / t_len).transpose();
  return fit;
}

// Plug-in bias components and sandwich covariance for the group slopes.
// Conditional expectations are replaced by residual products, with serial
// terms truncated by the same kernel scheme used elsewhere.
inline void bias_and_variance(GroupFit& fit, const PanelData& panel_regime,
                              const std::vector<int>& labels, int k, const KernelConfig& kernel) {
  const int n = panel_regime.n;
  const int t_len = panel_regime.t_len;
  const int p = panel_regime.p;
  const int r0 = static_cast<int>(fit.f_hat.cols());
  const int bw = resolve_bandwidth(kernel, t_len);
  auto members = detail::group_members(labels, k);

  fit.bias = Matrix::Zero(k, p);
  fit.se = Matrix::Zero(k, p);
  fit.cov.assign(static_cast<std::size_t>(k), Matrix::Zero(p, p));

  for (int g = 0; g < k; ++g) {
    const auto& idx = members[static_cast<std::size_t>(g)];
    const int nk = static_cast<int>(idx.size());
    const double nkt = static_cast<double>(nk) * t_len;

    // Residual and regressor matrices for the group, rows are units.
    Matrix ehat(nk, t_len);
    std::vector<Matrix> xg(static_cast<std::size_t>(p), Matrix(nk, t_len));
    Matrix lam(nk, r0);
    for (int r = 0; r < nk; ++r) {
      int i = idx[static_cast<std::size_t>(r)];
      Vector e = panel_regime.y.row(i).transpose();
      for (int j = 0; j < p; ++j) {
        xg[static_cast<std::size_t>(j)].row(r) = panel_regime.x[static_cast<std::size_t>(j)].row(i);
        e -= fit.alphas(g, j) * panel_regime.x[static_cast<std::size_t>(j)].row(i).transpose();
      }
      if (r0 > 0) e -= fit.f_hat * fit.lambdas.row(i).transpose();
      ehat.row(r) = e.transpose();
      if (r0 > 0) lam.row(r) = fit.lambdas.row(i);
    }

    Eigen::LDLT<Matrix> lam_ldlt;
    if (r0 > 0) lam_ldlt.compute(lam.transpose() * lam);

    // Doubly projected regressors M_Lam X_j M_F.
    std::vector<Matrix> chi(static_cast<std::size_t>(p));
    for (int j = 0; j < p; ++j) {
      Matrix mf = detail::project_out(fit.f_hat, xg[static_cast<std::size_t>(j)].transpose()).transpose();
      if (r0 > 0) mf -= lam * lam_ldlt.solve(lam.transpose() * mf);
      chi[static_cast<std::size_t>(j)] = std::move(mf);
    }

    Matrix w(p, p);
    for (int j1 = 0; j1 < p; ++j1)
      for (int j2 = j1; j2 < p; ++j2) {
        w(j1, j2) = chi[static_cast<std::size_t>(j1)].cwiseProduct(chi[static_cast<std::size_t>(j2)]).sum() / nkt;
        w(j2, j1) = w(j1, j2);
      }

    Matrix omega = Matrix::Zero(p, p);
    Vector xvec(p);
    for (int r = 0; r < nk; ++r)
      for (int t = 0; t < t_len; ++t) {
        for (int j = 0; j < p; ++j) xvec(j) = chi[static_cast<std::size_t>(j)](r, t);
        omega.selfadjointView<Eigen::Lower>().rankUpdate(xvec, ehat(r, t) * ehat(r, t) / nkt);
      }
    omega.triangularView<Eigen::StrictlyUpper>() = omega.transpose();

    Vector bias_raw = Vector::Zero(p);
    if (r0 > 0) {
      // Kernel-weighted time covariance of residuals, sum over group units.
      Matrix sig_t = Matrix::Zero(t_len, t_len);
      for (int lag = 0; lag <= std::min(bw, t_len - 1); ++lag) {
        double wgt = kernel.kind == KernelKind::bartlett && bw > 0
                         ? bartlett_weight(static_cast<double>(lag) / bw)
                         : (lag == 0 ? 1.0 : 0.0);
        if (wgt == 0.0) continue;
        for (int t = lag; t < t_len; ++t) {
          double v = wgt * ehat.col(t - lag).dot(ehat.col(t));
          sig_t(t - lag, t) = v;
          sig_t(t, t - lag) = v;
        }
      }
      Vector de = ehat.rowwise().squaredNorm();  // diagonal of E E'

      for (int j = 0; j < p; ++j) {
        const Matrix& xj = xg[static_cast<std::size_t>(j)];
        // tr[P_F (K (.) E'X_j)] / N_k with P_F = F F' / T.
        Matrix band = Matrix::Zero(t_len, t_len);
        for (int lag = 0; lag <= std::min(bw, t_len - 1); ++lag) {
          double wgt = kernel.kind == KernelKind::bartlett && bw > 0
                           ? bartlett_weight(static_cast<double>(lag) / bw)
                           : (lag == 0 ? 1.0 : 0.0);
          if (wgt == 0.0) continue;
          for (int t = lag; t < t_len; ++t) {
            band(t - lag, t) = wgt * ehat.col(t - lag).dot(xj.col(t));
            if (lag > 0) band(t, t - lag) = wgt * ehat.col(t).dot(xj.col(t - lag));
          }
        }
        double b1 = (fit.f_hat.transpose() * band * fit.f_hat).trace() /
                    (static_cast<double>(t_len) * nk);

        // (1/T) tr[diag(E E') M_Lam X_j F (F'F)^-1 (Lam'Lam)^-1 Lam'].
        Matrix mlx = xj - lam * lam_ldlt.solve(lam.transpose() * xj);
        Matrix bf = mlx * fit.f_hat / static_cast<double>(t_len);
        Matrix gl = lam_ldlt.solve(lam.transpose()).transpose();  // N_k x r0
        double b2 = (de.array() * (bf.cwiseProduct(gl)).rowwise().sum().array()).sum() / t_len;

        // (1/N_k) tr[Sig_T M_F X_j' Lam (Lam'Lam)^-1 (F'F)^-1 F'].
        Matrix xl = detail::project_out(fit.f_hat, xj.transpose()) * lam;  // T x r0
        Matrix h = lam_ldlt.solve(xl.transpose()).transpose() * fit.f_hat.transpose() /
                   static_cast<double>(t_len);  // T x T
        double b3 = sig_t.cwiseProduct(h.transpose()).sum() / nk;

        double rho = fit.rho(g);
        bias_raw(j) = -rho * b1 - b2 / rho - rho * b3;
      }
    }

    Eigen::LDLT<Matrix> w_ldlt(w);
    if (detail::ldlt_singular(w_ldlt))
      throw SingularityError("bias_and_variance: singular weight matrix for group " + std::to_string(g + 1), g);

    fit.bias.row(g) = (w_ldlt.solve(bias_raw) / std::sqrt(nkt)).transpose();
    Matrix winv_omega = w_ldlt.solve(omega);
    Matrix cov = w_ldlt.solve(winv_omega.transpose()).transpose() / nkt;
    fit.cov[static_cast<std::size_t>(g)] = cov;
    for (int j = 0; j < p; ++j) fit.se(g, j) = std::sqrt(std::max(cov(j, j), 0.0));
  }
}

}  // namespace panelbreak
