#pragma once

// End-to-end estimation: tuning, regularized solve, rank selection,
// refinement, break estimation, sequential-testing clustering per regime,
// and the post-classification group fits.

#include "panelbreak/breakpoint.hpp"
#include "panelbreak/core.hpp"
#include "panelbreak/factors.hpp"
#include "panelbreak/hac.hpp"
#include "panelbreak/nnr.hpp"
#include "panelbreak/stk.hpp"

#include <optional>
#include <vector>

namespace panelbreak {

struct PipelineConfig {
  std::optional<int> r0_override;     // rank of the intercept block; auto when unset
  double epsilon = 0.15;
  std::optional<double> varsigma;     // defaults to N^-2
  KernelConfig kernel;
  bool bias_correction = true;
  double c_nu = 2.0;
  double nnr_tol = 1e-8;
  int nnr_max_iter = 5000;
  int max_m = 8;
  int kmeans_restarts = 20;
  BreakMethod break_method = BreakMethod::slope_matrix;
  std::uint64_t seed = 0;
  int workers = 0;  // 0 resolves to hardware concurrency
};

struct RegimeEstimate {
  StkResult stk;
  GroupFit fit;
};

struct EstimateResult {
  TuningResult tuning;
  NnrResult nnr;
  std::vector<int> ranks;
  RefineResult refined;
  BreakResult brk;
  RegimeEstimate pre;
  RegimeEstimate post;
  double varsigma_used = 0.0;
  int t1_used = 0;  // break actually used for the regime split
};

inline EstimateResult run_estimate(const PanelData& panel, const PipelineConfig& cfg) {
  EstimateResult res;
  res.tuning = select_tuning(panel, cfg.c_nu, cfg.nnr_tol, cfg.nnr_max_iter);

  NnrConfig ncfg;
  ncfg.nu = res.tuning.nu;
  ncfg.tol = cfg.nnr_tol;
  ncfg.max_iter = cfg.nnr_max_iter;
  res.nnr = solve_nnr(panel, ncfg);

  res.ranks.resize(static_cast<std::size_t>(panel.p) + 1);
  for (int j = 0; j <= panel.p; ++j)
    res.ranks[static_cast<std::size_t>(j)] =
        estimate_rank(res.nnr.coefs.thetas[static_cast<std::size_t>(j)], res.tuning.nu(j));
  if (cfg.r0_override) res.ranks[0] = *cfg.r0_override;

  // The break objective needs at least one nonzero slope block.
  std::vector<int> ranks_used = res.ranks;
  bool any_slope = false;
  for (int j = 1; j <= panel.p; ++j) any_slope = any_slope || ranks_used[static_cast<std::size_t>(j)] > 0;
  if (!any_slope)
    for (int j = 1; j <= panel.p; ++j) ranks_used[static_cast<std::size_t>(j)] = 1;

  res.refined = refine(panel, res.nnr.coefs, ranks_used);

  res.brk = cfg.break_method == BreakMethod::singular_vector
                ? estimate_break_sv(res.refined.factors)
                : estimate_break(res.refined.theta_dot);

  // Both regimes need at least two periods for the profile split.
  res.t1_used = std::min(res.brk.t1_hat, panel.t_len - 2);
  BetaSplit beta = build_beta(res.refined.theta_dot, res.t1_used);

  res.varsigma_used = cfg.varsigma ? *cfg.varsigma
                                   : 1.0 / (static_cast<double>(panel.n) * panel.n);
  const int r0 = res.ranks[0];

  PanelData pre_panel = slice_periods(panel, 0, res.t1_used);
  PanelData post_panel = slice_periods(panel, res.t1_used, panel.t_len);

  auto fit_regime = [&](const PanelData& regime, const BetaProfiles& profiles,
                        std::uint64_t seed_offset) {
    RegimeEstimate out;
    out.stk = stk_run(regime, profiles, r0, res.varsigma_used, cfg.max_m, cfg.kernel,
                      cfg.kmeans_restarts, cfg.seed + seed_offset);
    out.fit = fit_ife_grouped(regime, out.stk.groups, r0);
    bias_and_variance(out.fit, regime, out.stk.groups, cfg.kernel);
    return out;
  };
  res.pre = fit_regime(pre_panel, beta.pre, 0x100);
  res.post = fit_regime(post_panel, beta.post, 0x200);
  return res;
}

// Bias-corrected slopes, or the raw ones when correction is disabled.
inline Matrix corrected_alphas(const GroupFit& fit, bool bias_correction) {
  return bias_correction ? Matrix(fit.alphas - fit.bias) : fit.alphas;
}

}  // namespace panelbreak
