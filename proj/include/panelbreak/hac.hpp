#pragma once

// Long-run covariance estimation with kernel-weighted truncation.

#include "panelbreak/core.hpp"

#include <cmath>

namespace panelbreak {

enum class KernelKind { bartlett, none };

struct KernelConfig {
  KernelKind kind = KernelKind::bartlett;
  int bandwidth = -1;  // -1 resolves by the 4*(T/100)^(2/9) rule; none forces 0
};

inline int resolve_bandwidth(const KernelConfig& cfg, int t_len) {
  if (cfg.kind == KernelKind::none) return 0;
  if (cfg.bandwidth >= 0) return cfg.bandwidth;
  return static_cast<int>(std::floor(4.0 * std::pow(t_len / 100.0, 2.0 / 9.0)));
}

inline double bartlett_weight(double u) {
  double a = std::abs(u);
  return a <= 1.0 ? 1.0 - a : 0.0;
}

struct HacResult {
  Matrix omega;
  bool floored = false;
};

// Clamp eigenvalues from below; used when a kernel produces an indefinite
// estimate or a matrix must be inverted downstream.
inline Matrix floor_eigenvalues(const Matrix& m, double floor_at, bool* changed = nullptr) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  Vector ev = es.eigenvalues();
  bool any = false;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < floor_at) {
      ev(i) = floor_at;
      any = true;
    }
  }
  if (changed) *changed = any;
  if (!any) return m;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// Kernel-weighted long-run covariance of the moment series z_t * e_t:
//   (1/T) sum_t z_t z_t' e_t^2
//     + (1/T) sum_{j>=1} k(j/S_T) sum_{t>j} [h_{t-j} h_t' + h_t h_{t-j}']
// with h_t = z_t e_t.
inline HacResult hac_covariance(const Matrix& z, const Vector& e, KernelKind kind, int s_t) {
  if (s_t < 0) throw ArgumentError("hac_covariance: bandwidth must be nonnegative");
  if (z.rows() != e.size()) throw DimensionError("hac_covariance: z and e length mismatch");
  const int t_len = static_cast<int>(z.rows());
  const int p = static_cast<int>(z.cols());
  Matrix h = z.array().colwise() * e.array();  // T x p, rows h_t'
  Matrix omega = Matrix::Zero(p, p);
  for (int t = 0; t < t_len; ++t) omega += h.row(t).transpose() * h.row(t);
  if (kind == KernelKind::bartlett && s_t > 0) {
    for (int j = 1; j <= std::min(s_t, t_len - 1); ++j) {
      double w = bartlett_weight(static_cast<double>(j) / s_t);
      if (w == 0.0) continue;
      Matrix g = Matrix::Zero(p, p);
      for (int t = j; t < t_len; ++t) g += h.row(t - j).transpose() * h.row(t);
      omega += w * (g + g.transpose());
    }
  }
  omega /= static_cast<double>(t_len);
  HacResult out;
  Eigen::SelfAdjointEigenSolver<Matrix> es(omega, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < 1e-12) {
    out.omega = floor_eigenvalues(omega, 1e-12);
    out.floored = true;
  } else {
    out.omega = omega;
  }
  return out;
}

}  // namespace panelbreak
