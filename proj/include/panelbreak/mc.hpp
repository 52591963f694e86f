#pragma once

// Data generating processes for the simulation study and the replication
// harness that aggregates frequency and coverage summaries.

#include "panelbreak/core.hpp"
#include "panelbreak/parallel.hpp"
#include "panelbreak/pipeline.hpp"
#include "panelbreak/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace panelbreak {

enum class DgpFamily { dgp1, dgp2, dgp3, dgp4 };
enum class DgpVariant { v1, v2, v3 };

struct DgpSpec {
  DgpFamily family = DgpFamily::dgp1;
  DgpVariant variant = DgpVariant::v1;
  int n = 100;
  int t_len = 100;
  std::uint64_t seed = 0;
};

struct GroundTruth {
  int t1 = 0;  // break after period t1 (1-based count of pre periods)
  int k_pre = 0;
  int k_post = 0;
  std::vector<int> labels_pre;   // values 1..k_pre
  std::vector<int> labels_post;  // values 1..k_post
  Matrix alpha_pre;              // k_pre x p
  Matrix alpha_post;             // k_post x p
  std::vector<int> ranks;        // p+1 true ranks, computed from the matrices
};

namespace detail {

inline int numeric_rank(const Matrix& m) {
  Vector s = singular_values_safe(m);
  if (s.size() == 0 || s(0) <= 0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > 1e-9 * s(0)) ++r;
  return r;
}

// Slope tables per family and variant; rows are groups, columns regressors.
inline void slope_tables(DgpFamily family, DgpVariant variant, Matrix& pre, Matrix& post) {
  const bool dynamic = family == DgpFamily::dgp4;
  switch (variant) {
    case DgpVariant::v1:
      pre = Matrix(2, 2);
      post = Matrix(2, 2);
      pre << 0.1, 0.1, (dynamic ? 0.7 : 0.9), 0.9;
      post << 0.05, 0.05, (dynamic ? 0.35 : 0.45), 0.45;
      break;
    case DgpVariant::v2:
      pre = Matrix(2, 2);
      pre << 0.1, 0.1, (dynamic ? 0.7 : 0.9), 0.9;
      post = pre;
      break;
    case DgpVariant::v3:
      pre = Matrix(2, 2);
      post = Matrix(3, 2);
      pre << 0.1, 0.1, (dynamic ? 0.7 : 0.9), 0.9;
      post << 0.1, 0.1, (dynamic ? 0.4 : 0.5), 0.5, (dynamic ? 0.7 : 0.9), 0.9;
      break;
  }
}

// Seeded shuffle of [N]; group k takes floor(share_k N) units, remainder to
// the last group.
inline std::vector<int> draw_labels(int n, const std::vector<double>& shares, Philox& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<int> labels(static_cast<std::size_t>(n), static_cast<int>(shares.size()));
  int pos = 0;
  for (std::size_t k = 0; k + 1 < shares.size(); ++k) {
    int take = static_cast<int>(std::floor(shares[k] * n));
    for (int c = 0; c < take; ++c) labels[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])] =
        static_cast<int>(k) + 1;
  }
  return labels;
}

}  // namespace detail

// Materialize the piecewise-constant grouped slope matrices; the intercept
// block is left zero (it carries the factor structure, not group slopes).
inline CoefSet theta_from_groups(const GroundTruth& truth, int n, int t_len) {
  const int p = static_cast<int>(truth.alpha_pre.cols());
  CoefSet coefs = zero_coefs(n, t_len, p);
  for (int j = 1; j <= p; ++j) {
    Matrix& th = coefs.thetas[static_cast<std::size_t>(j)];
    for (int i = 0; i < n; ++i) {
      double a1 = truth.alpha_pre(truth.labels_pre[static_cast<std::size_t>(i)] - 1, j - 1);
      double a2 = truth.alpha_post(truth.labels_post[static_cast<std::size_t>(i)] - 1, j - 1);
      th.row(i).head(truth.t1).setConstant(a1);
      th.row(i).tail(t_len - truth.t1).setConstant(a2);
    }
  }
  return coefs;
}

struct Generated {
  PanelData panel;
  GroundTruth truth;
};

// Shocks kept separate so a panel can be rebuilt deterministically from
// them; the lagged-regressor recursion is the only state.
struct DgpShocks {
  Vector lambda;  // N
  Vector f;       // T
  Matrix x2;      // N x T
  Matrix x1_static;  // N x T, unused for the dynamic family
  Matrix e;       // N x T
  Vector y0;      // N, dynamic family only
};

inline PanelData assemble_panel(const DgpSpec& spec, const GroundTruth& truth,
                                const DgpShocks& shocks) {
  const int n = spec.n;
  const int t_len = spec.t_len;
  CoefSet coefs = theta_from_groups(truth, n, t_len);
  Matrix theta0 = shocks.lambda * shocks.f.transpose();
  Matrix y(n, t_len);
  Matrix x1(n, t_len);
  if (spec.family == DgpFamily::dgp4) {
    for (int i = 0; i < n; ++i) {
      double prev = shocks.y0(i);
      for (int t = 0; t < t_len; ++t) {
        x1(i, t) = prev;
        double val = theta0(i, t) + coefs.thetas[1](i, t) * prev +
                     coefs.thetas[2](i, t) * shocks.x2(i, t) + shocks.e(i, t);
        y(i, t) = val;
        prev = val;
      }
    }
  } else {
    x1 = shocks.x1_static;
    y = theta0 + x1.cwiseProduct(coefs.thetas[1]) + shocks.x2.cwiseProduct(coefs.thetas[2]) +
        shocks.e;
  }
  return make_panel(std::move(y), {std::move(x1), shocks.x2});
}

inline Generated generate_with_shocks(const DgpSpec& spec, DgpShocks* shocks_out) {
  if (spec.n < 2 || spec.t_len < 4) throw ArgumentError("generate: panel too small");
  const int n = spec.n;
  const int t_len = spec.t_len;
  Philox rng(spec.seed, stream_id(StreamKind::dgp, 0));

  GroundTruth truth;
  int lo = static_cast<int>(std::floor(0.4 * t_len));
  int hi = static_cast<int>(std::ceil(0.6 * t_len));
  lo = std::max(lo, 2);
  hi = std::min(hi, t_len - 2);
  truth.t1 = static_cast<int>(rng.uniform_int(lo, hi));

  detail::slope_tables(spec.family, spec.variant, truth.alpha_pre, truth.alpha_post);
  truth.k_pre = static_cast<int>(truth.alpha_pre.rows());
  truth.k_post = static_cast<int>(truth.alpha_post.rows());

  std::vector<double> shares_pre(static_cast<std::size_t>(truth.k_pre), 1.0 / truth.k_pre);
  truth.labels_pre = detail::draw_labels(n, shares_pre, rng);
  switch (spec.variant) {
    case DgpVariant::v1:
      truth.labels_post = truth.labels_pre;
      break;
    case DgpVariant::v2: {
      std::vector<double> shares(static_cast<std::size_t>(truth.k_post), 1.0 / truth.k_post);
      truth.labels_post = detail::draw_labels(n, shares, rng);
      break;
    }
    case DgpVariant::v3: {
      std::vector<double> shares = {0.4, 0.3, 0.3};
      truth.labels_post = detail::draw_labels(n, shares, rng);
      break;
    }
  }

  DgpShocks shocks;
  shocks.lambda = Vector(n);
  shocks.f = Vector(t_len);
  for (int i = 0; i < n; ++i) shocks.lambda(i) = rng.normal();
  for (int t = 0; t < t_len; ++t) shocks.f(t) = rng.normal();

  if (spec.family != DgpFamily::dgp4) {
    shocks.x1_static = Matrix(n, t_len);
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < t_len; ++t) shocks.x1_static(i, t) = rng.uniform(-2.0, 2.0);
  }
  shocks.x2 = Matrix(n, t_len);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < t_len; ++t) shocks.x2(i, t) = rng.uniform(-2.0, 2.0);

  shocks.e = Matrix(n, t_len);
  switch (spec.family) {
    case DgpFamily::dgp1:
      for (int i = 0; i < n; ++i)
        for (int t = 0; t < t_len; ++t) shocks.e(i, t) = rng.normal();
      break;
    case DgpFamily::dgp2:
      for (int i = 0; i < n; ++i)
        for (int t = 0; t < t_len; ++t)
          shocks.e(i, t) = std::sqrt(rng.uniform(0.5, 1.0)) * rng.normal();
      break;
    case DgpFamily::dgp3:
      // AR(1) with scaled innovations, zero pre-sample value.
      for (int i = 0; i < n; ++i) {
        double prev = 0.0;
        for (int t = 0; t < t_len; ++t) {
          double innov = std::sqrt(rng.uniform(0.5, 1.0)) * rng.normal();
          prev = 0.2 * prev + innov;
          shocks.e(i, t) = prev;
        }
      }
      break;
    case DgpFamily::dgp4:
      for (int i = 0; i < n; ++i)
        for (int t = 0; t < t_len; ++t) shocks.e(i, t) = std::sqrt(0.5) * rng.normal();
      shocks.y0 = Vector(n);
      for (int i = 0; i < n; ++i) shocks.y0(i) = rng.normal();
      break;
  }

  Generated gen;
  gen.panel = assemble_panel(spec, truth, shocks);
  gen.truth = std::move(truth);

  CoefSet coefs = theta_from_groups(gen.truth, n, t_len);
  gen.truth.ranks.resize(static_cast<std::size_t>(gen.panel.p) + 1);
  gen.truth.ranks[0] = detail::numeric_rank(shocks.lambda * shocks.f.transpose());
  for (int j = 1; j <= gen.panel.p; ++j)
    gen.truth.ranks[static_cast<std::size_t>(j)] =
        detail::numeric_rank(coefs.thetas[static_cast<std::size_t>(j)]);

  if (shocks_out) *shocks_out = std::move(shocks);
  return gen;
}

inline Generated generate(const DgpSpec& spec) { return generate_with_shocks(spec, nullptr); }

// Exact label match up to a permutation of group indices.
inline bool labels_match(const std::vector<int>& est, const std::vector<int>& truth, int k) {
  if (est.size() != truth.size()) return false;
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 1);
  std::sort(perm.begin(), perm.end());
  do {
    bool ok = true;
    for (std::size_t i = 0; i < est.size(); ++i) {
      if (perm[static_cast<std::size_t>(est[i] - 1)] != truth[i]) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

struct ReplicateConfig {
  int reps = 200;
  PipelineConfig pipeline;
  bool run_feasible = true;  // full estimation pipeline per replication
  bool run_oracle = true;    // fits with the true break and memberships
  std::uint64_t master_seed = 0;
  int workers = 0;
};

// Per-cell aggregate; frequencies are over successful replications.
struct CellSummary {
  DgpSpec spec;
  int reps = 0;
  int failures = 0;
  std::vector<double> rank_freq;  // p+1
  double break_freq = 0.0;
  double memb_pre_infeasible = 0.0;
  double memb_post_infeasible = 0.0;
  double memb_pre_feasible = 0.0;
  double memb_post_feasible = 0.0;
  double k_pre_freq = 0.0;
  double k_post_freq = 0.0;
  std::vector<double> k_pre_dist;   // K_hat = 1..max_m
  std::vector<double> k_post_dist;
  double bias_pre_feasible = 0.0, cover_pre_feasible = 0.0;
  double bias_post_feasible = 0.0, cover_post_feasible = 0.0;
  double bias_pre_oracle = 0.0, cover_pre_oracle = 0.0;
  double bias_post_oracle = 0.0, cover_post_oracle = 0.0;
};

namespace detail {

constexpr double kZ975 = 1.959963984540054;

struct RepRecord {
  bool failed = false;
  std::vector<int> rank_correct;
  int break_correct = 0;
  int memb_pre_inf = 0, memb_post_inf = 0;
  int memb_pre_feas = 0, memb_post_feas = 0;
  int k_pre = 0, k_post = 0;
  int k_pre_correct = 0, k_post_correct = 0;
  double bias_pre_feas = 0, cover_pre_feas = 0;
  double bias_post_feas = 0, cover_post_feas = 0;
  double bias_pre_oracle = 0, cover_pre_oracle = 0;
  double bias_post_oracle = 0, cover_post_oracle = 0;
  bool have_feas_slopes = false;
  bool have_oracle = false;
};

// Share-weighted bias and coverage of the first slope, matching estimated
// groups to true ones by best overlap.
inline void slope_metrics(const GroupFit& fit, const std::vector<int>& est_labels, int est_k,
                          const std::vector<int>& true_labels, const Matrix& alpha_true,
                          bool bias_correction, double& bias, double& cover) {
  const int k_true = static_cast<int>(alpha_true.rows());
  const int n = static_cast<int>(true_labels.size());
  Matrix alpha_bc = bias_correction ? Matrix(fit.alphas - fit.bias) : fit.alphas;
  bias = 0.0;
  cover = 0.0;
  for (int k = 0; k < k_true; ++k) {
    std::vector<int> overlap(static_cast<std::size_t>(est_k), 0);
    int nk = 0;
    for (int i = 0; i < n; ++i) {
      if (true_labels[static_cast<std::size_t>(i)] != k + 1) continue;
      ++nk;
      ++overlap[static_cast<std::size_t>(est_labels[static_cast<std::size_t>(i)] - 1)];
    }
    int match = 0;
    for (int g = 1; g < est_k; ++g)
      if (overlap[static_cast<std::size_t>(g)] > overlap[static_cast<std::size_t>(match)]) match = g;
    double share = static_cast<double>(nk) / n;
    double err = alpha_bc(match, 0) - alpha_true(k, 0);
    bias += share * err;
    double half = kZ975 * fit.se(match, 0);
    cover += share * (std::abs(err) <= half ? 1.0 : 0.0);
  }
}

}  // namespace detail

// Run the pipeline per replication with per-replication RNG streams and
// fold the records in index order, so summaries are identical across
// worker counts.
inline CellSummary replicate(const DgpSpec& spec_template, const ReplicateConfig& cfg) {
  if (cfg.reps < 1) throw ArgumentError("replicate: reps must be at least 1");
  std::vector<detail::RepRecord> records(static_cast<std::size_t>(cfg.reps));

  parallel_for(cfg.reps, cfg.workers, [&](int rep) {
    detail::RepRecord& rec = records[static_cast<std::size_t>(rep)];
    DgpSpec spec = spec_template;
    Philox seeder(cfg.master_seed, stream_id(StreamKind::replication, static_cast<std::uint64_t>(rep)));
    spec.seed = seeder.next_u64();
    try {
      Generated gen = generate(spec);
      const auto& truth = gen.truth;

      PipelineConfig pcfg = cfg.pipeline;
      pcfg.seed = spec.seed;
      pcfg.workers = 1;  // parallelism lives at the replication level here
      if (spec.family == DgpFamily::dgp4) pcfg.kernel.bandwidth = 0;

      if (cfg.run_feasible) {
        EstimateResult est = run_estimate(gen.panel, pcfg);
        rec.rank_correct.resize(est.ranks.size());
        for (std::size_t j = 0; j < est.ranks.size(); ++j)
          rec.rank_correct[j] = est.ranks[j] == truth.ranks[j] ? 1 : 0;
        rec.break_correct = est.brk.t1_hat == truth.t1 ? 1 : 0;
        rec.k_pre = est.pre.stk.k_hat;
        rec.k_post = est.post.stk.k_hat;
        rec.k_pre_correct = rec.k_pre == truth.k_pre ? 1 : 0;
        rec.k_post_correct = rec.k_post == truth.k_post ? 1 : 0;

        rec.memb_pre_feas = rec.k_pre_correct &&
                            labels_match(est.pre.stk.groups.labels, truth.labels_pre, truth.k_pre);
        rec.memb_post_feas = rec.k_post_correct && labels_match(est.post.stk.groups.labels,
                                                                truth.labels_post, truth.k_post);

        // Known group count, estimated break and profiles.
        BetaSplit beta = build_beta(est.refined.theta_dot, est.t1_used);
        GroupStructure inf_pre = kmeans(beta.pre, truth.k_pre, pcfg.kmeans_restarts, pcfg.seed + 0x300);
        GroupStructure inf_post = kmeans(beta.post, truth.k_post, pcfg.kmeans_restarts, pcfg.seed + 0x400);
        rec.memb_pre_inf = labels_match(inf_pre.labels, truth.labels_pre, truth.k_pre) ? 1 : 0;
        rec.memb_post_inf = labels_match(inf_post.labels, truth.labels_post, truth.k_post) ? 1 : 0;

        detail::slope_metrics(est.pre.fit, est.pre.stk.groups.labels, est.pre.stk.groups.k,
                              truth.labels_pre, truth.alpha_pre, pcfg.bias_correction,
                              rec.bias_pre_feas, rec.cover_pre_feas);
        detail::slope_metrics(est.post.fit, est.post.stk.groups.labels, est.post.stk.groups.k,
                              truth.labels_post, truth.alpha_post, pcfg.bias_correction,
                              rec.bias_post_feas, rec.cover_post_feas);
        rec.have_feas_slopes = true;
      }

      if (cfg.run_oracle) {
        PanelData pre_panel = slice_periods(gen.panel, 0, truth.t1);
        PanelData post_panel = slice_periods(gen.panel, truth.t1, gen.panel.t_len);
        int r0 = truth.ranks[0];
        GroupFit fit_pre = fit_ife_grouped(pre_panel, truth.labels_pre, truth.k_pre, r0);
        bias_and_variance(fit_pre, pre_panel, truth.labels_pre, truth.k_pre, pcfg.kernel);
        GroupFit fit_post = fit_ife_grouped(post_panel, truth.labels_post, truth.k_post, r0);
        bias_and_variance(fit_post, post_panel, truth.labels_post, truth.k_post, pcfg.kernel);
        detail::slope_metrics(fit_pre, truth.labels_pre, truth.k_pre, truth.labels_pre,
                              truth.alpha_pre, pcfg.bias_correction, rec.bias_pre_oracle,
                              rec.cover_pre_oracle);
        detail::slope_metrics(fit_post, truth.labels_post, truth.k_post, truth.labels_post,
                              truth.alpha_post, pcfg.bias_correction, rec.bias_post_oracle,
                              rec.cover_post_oracle);
        rec.have_oracle = true;
      }
    } catch (const std::exception&) {
      rec.failed = true;
    }
  });

  CellSummary out;
  out.spec = spec_template;
  out.reps = cfg.reps;
  const int max_m = cfg.pipeline.max_m;
  out.k_pre_dist.assign(static_cast<std::size_t>(max_m), 0.0);
  out.k_post_dist.assign(static_cast<std::size_t>(max_m), 0.0);
  int ok_feas = 0, ok_oracle = 0;
  for (const auto& rec : records) {
    if (rec.failed) {
      ++out.failures;
      continue;
    }
    if (rec.have_feas_slopes) {
      ++ok_feas;
      if (out.rank_freq.size() != rec.rank_correct.size())
        out.rank_freq.assign(rec.rank_correct.size(), 0.0);
      for (std::size_t j = 0; j < rec.rank_correct.size(); ++j)
        out.rank_freq[j] += rec.rank_correct[j];
      out.break_freq += rec.break_correct;
      out.memb_pre_infeasible += rec.memb_pre_inf;
      out.memb_post_infeasible += rec.memb_post_inf;
      out.memb_pre_feasible += rec.memb_pre_feas;
      out.memb_post_feasible += rec.memb_post_feas;
      out.k_pre_freq += rec.k_pre_correct;
      out.k_post_freq += rec.k_post_correct;
      if (rec.k_pre >= 1 && rec.k_pre <= max_m) out.k_pre_dist[static_cast<std::size_t>(rec.k_pre - 1)] += 1;
      if (rec.k_post >= 1 && rec.k_post <= max_m) out.k_post_dist[static_cast<std::size_t>(rec.k_post - 1)] += 1;
      out.bias_pre_feasible += rec.bias_pre_feas;
      out.cover_pre_feasible += rec.cover_pre_feas;
      out.bias_post_feasible += rec.bias_post_feas;
      out.cover_post_feasible += rec.cover_post_feas;
    }
    if (rec.have_oracle) {
      ++ok_oracle;
      out.bias_pre_oracle += rec.bias_pre_oracle;
      out.cover_pre_oracle += rec.cover_pre_oracle;
      out.bias_post_oracle += rec.bias_post_oracle;
      out.cover_post_oracle += rec.cover_post_oracle;
    }
  }
  if (cfg.run_feasible && ok_feas > 0) {
    double d = ok_feas;
    for (auto& v : out.rank_freq) v /= d;
    out.break_freq /= d;
    out.memb_pre_infeasible /= d;
    out.memb_post_infeasible /= d;
    out.memb_pre_feasible /= d;
    out.memb_post_feasible /= d;
    out.k_pre_freq /= d;
    out.k_post_freq /= d;
    for (auto& v : out.k_pre_dist) v /= d;
    for (auto& v : out.k_post_dist) v /= d;
    out.bias_pre_feasible /= d;
    out.cover_pre_feasible /= d;
    out.bias_post_feasible /= d;
    out.cover_post_feasible /= d;
  }
  if (cfg.run_oracle && ok_oracle > 0) {
    double d = ok_oracle;
    out.bias_pre_oracle /= d;
    out.cover_pre_oracle /= d;
    out.bias_post_oracle /= d;
    out.cover_post_oracle /= d;
  }
  return out;
}

inline std::string dgp_name(const DgpSpec& spec) {
  int fam = static_cast<int>(spec.family) + 1;
  int var = static_cast<int>(spec.variant) + 1;
  return "dgp" + std::to_string(fam) + "." + std::to_string(var);
}

}  // namespace panelbreak
