#pragma once

// Command-line surface: CSV ingestion, configuration, orchestration of the
// estimation commands, and artifact emission.

#include "panelbreak/core.hpp"
#include "panelbreak/mc.hpp"
#include "panelbreak/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace panelbreak {

struct IngestedPanel {
  PanelData panel;
  std::vector<double> unit_ids;  // sorted original unit labels
  std::vector<double> time_ids;  // sorted original period labels
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_number(const std::string& s, int row, const std::string& col) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ArgumentError("non-numeric value '" + s + "' in column " + col + " at data row " +
                        std::to_string(row));
  }
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Long-format CSV with header unit,time,y,x1..xp; the panel must be
// balanced and complete.
inline IngestedPanel ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open input file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ArgumentError("empty input file: " + path);
  std::vector<std::string> header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "unit" || header[1] != "time" || header[2] != "y")
    throw ArgumentError("expected header unit,time,y,x1..xp");
  const int p = static_cast<int>(header.size()) - 3;
  for (int j = 0; j < p; ++j)
    if (header[static_cast<std::size_t>(3 + j)] != "x" + std::to_string(j + 1))
      throw ArgumentError("expected regressor column x" + std::to_string(j + 1));

  struct Row {
    double unit, time, y;
    std::vector<double> x;
  };
  std::vector<Row> rows;
  std::set<double> units, times;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells = detail::split_csv_line(line);
    if (static_cast<int>(cells.size()) != 3 + p)
      throw ArgumentError("wrong number of columns at data row " + std::to_string(lineno));
    Row r;
    r.unit = detail::parse_number(cells[0], lineno, "unit");
    r.time = detail::parse_number(cells[1], lineno, "time");
    r.y = detail::parse_number(cells[2], lineno, "y");
    for (int j = 0; j < p; ++j)
      r.x.push_back(detail::parse_number(cells[static_cast<std::size_t>(3 + j)], lineno,
                                         "x" + std::to_string(j + 1)));
    units.insert(r.unit);
    times.insert(r.time);
    rows.push_back(std::move(r));
  }

  IngestedPanel out;
  out.unit_ids.assign(units.begin(), units.end());
  out.time_ids.assign(times.begin(), times.end());
  const int n = static_cast<int>(out.unit_ids.size());
  const int t_len = static_cast<int>(out.time_ids.size());
  std::map<double, int> unit_index, time_index;
  for (int i = 0; i < n; ++i) unit_index[out.unit_ids[static_cast<std::size_t>(i)]] = i;
  for (int t = 0; t < t_len; ++t) time_index[out.time_ids[static_cast<std::size_t>(t)]] = t;

  Matrix y(n, t_len);
  std::vector<Matrix> x(static_cast<std::size_t>(p), Matrix(n, t_len));
  Matrix seen = Matrix::Zero(n, t_len);
  for (const auto& r : rows) {
    int i = unit_index[r.unit];
    int t = time_index[r.time];
    if (seen(i, t) > 0)
      throw ArgumentError("duplicate (unit,time) pair (" + detail::format_double(r.unit) + "," +
                          detail::format_double(r.time) + ")");
    seen(i, t) = 1;
    y(i, t) = r.y;
    for (int j = 0; j < p; ++j) x[static_cast<std::size_t>(j)](i, t) = r.x[static_cast<std::size_t>(j)];
  }
  std::string missing;
  int missing_count = 0;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < t_len; ++t)
      if (seen(i, t) == 0) {
        if (missing_count < 8) {
          missing += (missing.empty() ? "" : ", ");
          missing += "(" + detail::format_double(out.unit_ids[static_cast<std::size_t>(i)]) + "," +
                     detail::format_double(out.time_ids[static_cast<std::size_t>(t)]) + ")";
        }
        ++missing_count;
      }
  if (missing_count > 0)
    throw ArgumentError("unbalanced panel, missing " + std::to_string(missing_count) +
                        " (unit,time) pairs: " + missing + (missing_count > 8 ? ", ..." : ""));
  out.panel = make_panel(std::move(y), std::move(x));
  return out;
}

enum class Command { estimate, test, simulate, replicate };

struct RunConfig {
  Command command = Command::estimate;
  std::string input;
  std::string output_dir = ".";
  PipelineConfig pipeline;
  double supf_critical = 15.37;
  int reps = 200;
  DgpSpec dgp;
  std::uint64_t seed = 0;
  int workers = 0;
};

namespace detail {

// Collects emitted paths so a fatal error can remove partial artifacts.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::string dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  ~ArtifactWriter() {
    if (!committed_) {
      for (const auto& p : written_) {
        std::error_code ec;
        std::filesystem::remove(p, ec);
      }
    }
  }

  std::string path(const std::string& name) const { return dir_ + "/" + name; }

  void write(const std::string& name, const std::string& content) {
    std::string full = path(name);
    std::ofstream out(full, std::ios::binary);
    if (!out) throw NumericError("cannot write artifact: " + full);
    out << content;
    written_.push_back(full);
  }

  void commit() { committed_ = true; }

 private:
  std::string dir_;
  std::vector<std::string> written_;
  bool committed_ = false;
};

inline std::string panel_csv(const PanelData& panel, const std::vector<double>& unit_ids,
                             const std::vector<double>& time_ids) {
  std::ostringstream out;
  out << "unit,time,y";
  for (int j = 1; j <= panel.p; ++j) out << ",x" << j;
  out << "\n";
  for (int i = 0; i < panel.n; ++i)
    for (int t = 0; t < panel.t_len; ++t) {
      out << format_double(unit_ids[static_cast<std::size_t>(i)]) << ","
          << format_double(time_ids[static_cast<std::size_t>(t)]) << ","
          << format_double(panel.y(i, t));
      for (int j = 0; j < panel.p; ++j)
        out << "," << format_double(panel.x[static_cast<std::size_t>(j)](i, t));
      out << "\n";
    }
  return out.str();
}

inline std::string groups_csv(const GroupStructure& groups, const std::vector<double>& unit_ids) {
  std::ostringstream out;
  out << "unit,group\n";
  for (std::size_t i = 0; i < groups.labels.size(); ++i)
    out << format_double(unit_ids[i]) << "," << groups.labels[i] << "\n";
  return out.str();
}

inline std::string slopes_csv(const EstimateResult& res, bool bias_correction) {
  std::ostringstream out;
  out << "regime,group,size,j,alpha,alpha_bc,se\n";
  auto emit = [&](const char* regime, const RegimeEstimate& re) {
    Matrix bc = corrected_alphas(re.fit, bias_correction);
    for (int g = 0; g < re.stk.groups.k; ++g)
      for (int j = 0; j < re.fit.alphas.cols(); ++j)
        out << regime << "," << (g + 1) << "," << re.fit.sizes[static_cast<std::size_t>(g)] << ","
            << (j + 1) << "," << format_double(re.fit.alphas(g, j)) << ","
            << format_double(bc(g, j)) << "," << format_double(re.fit.se(g, j)) << "\n";
  };
  emit("pre", res.pre);
  emit("post", res.post);
  return out.str();
}

inline nlohmann::json gamma_trace_json(const StkResult& stk) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& rep : stk.reports) {
    nlohmann::json item;
    item["m"] = rep.per_group.size();
    item["gamma_m"] = rep.gamma_m;
    item["critical"] = rep.critical;
    item["reject"] = rep.reject;
    arr.push_back(item);
  }
  return arr;
}

}  // namespace detail

inline int run(const RunConfig& cfg) {
  detail::ArtifactWriter writer(cfg.output_dir);
  switch (cfg.command) {
    case Command::simulate: {
      DgpSpec spec = cfg.dgp;
      spec.seed = cfg.seed;
      Generated gen = generate(spec);
      std::vector<double> unit_ids(static_cast<std::size_t>(gen.panel.n));
      std::vector<double> time_ids(static_cast<std::size_t>(gen.panel.t_len));
      for (int i = 0; i < gen.panel.n; ++i) unit_ids[static_cast<std::size_t>(i)] = i + 1;
      for (int t = 0; t < gen.panel.t_len; ++t) time_ids[static_cast<std::size_t>(t)] = t + 1;
      writer.write("panel.csv", detail::panel_csv(gen.panel, unit_ids, time_ids));
      nlohmann::json truth;
      truth["t1"] = gen.truth.t1;
      truth["k_pre"] = gen.truth.k_pre;
      truth["k_post"] = gen.truth.k_post;
      truth["labels_pre"] = gen.truth.labels_pre;
      truth["labels_post"] = gen.truth.labels_post;
      truth["ranks"] = gen.truth.ranks;
      writer.write("truth.json", truth.dump(2) + "\n");
      writer.commit();
      return 0;
    }
    case Command::estimate: {
      IngestedPanel ing = ingest_csv(cfg.input);
      PipelineConfig pcfg = cfg.pipeline;
      pcfg.seed = cfg.seed;
      pcfg.workers = cfg.workers;
      EstimateResult res = run_estimate(ing.panel, pcfg);

      std::ostringstream ranks;
      ranks << "j,nu,rank\n";
      for (std::size_t j = 0; j < res.ranks.size(); ++j)
        ranks << j << "," << detail::format_double(res.tuning.nu(static_cast<Eigen::Index>(j)))
              << "," << res.ranks[j] << "\n";
      writer.write("ranks.csv", ranks.str());

      std::ostringstream brk;
      brk << "t1_hat,s,objective\n";
      for (int idx = 0; idx < res.brk.profile.size(); ++idx)
        brk << res.brk.t1_hat << "," << (idx + 2) << ","
            << detail::format_double(res.brk.profile(idx)) << "\n";
      writer.write("break.csv", brk.str());

      writer.write("groups_pre.csv", detail::groups_csv(res.pre.stk.groups, ing.unit_ids));
      writer.write("groups_post.csv", detail::groups_csv(res.post.stk.groups, ing.unit_ids));
      writer.write("slopes.csv", detail::slopes_csv(res, pcfg.bias_correction));

      nlohmann::json diag;
      diag["n"] = ing.panel.n;
      diag["t"] = ing.panel.t_len;
      diag["p"] = ing.panel.p;
      diag["seed"] = cfg.seed;
      diag["nu"] = std::vector<double>(res.tuning.nu.data(), res.tuning.nu.data() + res.tuning.nu.size());
      diag["nu_floored"] = res.tuning.floored;
      diag["ranks"] = res.ranks;
      diag["t1_hat"] = res.brk.t1_hat;
      diag["t1_used"] = res.t1_used;
      diag["nnr_iterations"] = res.nnr.iterations;
      diag["nnr_converged"] = res.nnr.converged;
      diag["varsigma"] = res.varsigma_used;
      diag["k_pre"] = res.pre.stk.k_hat;
      diag["k_post"] = res.post.stk.k_hat;
      diag["stk_pre_converged"] = res.pre.stk.converged;
      diag["stk_post_converged"] = res.post.stk.converged;
      diag["gamma_trace_pre"] = detail::gamma_trace_json(res.pre.stk);
      diag["gamma_trace_post"] = detail::gamma_trace_json(res.post.stk);
      diag["flagged_units"] = res.refined.flagged_units;
      diag["flagged_periods"] = res.refined.flagged_periods;
      diag["bias_correction"] = pcfg.bias_correction;
      writer.write("diagnostics.json", diag.dump(2) + "\n");
      writer.commit();
      return 0;
    }
    case Command::test: {
      IngestedPanel ing = ingest_csv(cfg.input);
      int r0 = cfg.pipeline.r0_override.value_or(1);
      SupFResult sup = supf_test(ing.panel, r0, cfg.pipeline.epsilon, cfg.supf_critical,
                                 cfg.workers);
      std::ostringstream per;
      per << "unit,sup_f\n";
      for (int i = 0; i < sup.per_unit.size(); ++i)
        per << detail::format_double(ing.unit_ids[static_cast<std::size_t>(i)]) << ","
            << detail::format_double(sup.per_unit(i)) << "\n";
      writer.write("supf.csv", per.str());
      nlohmann::json rep;
      rep["f_nt"] = sup.f_nt;
      rep["critical_value"] = sup.critical_value;
      rep["reject"] = sup.reject;
      rep["candidate_break"] = sup.candidate_break;
      rep["epsilon"] = sup.epsilon;
      rep["skipped"] = sup.skipped;
      writer.write("supf_summary.json", rep.dump(2) + "\n");
      writer.commit();
      return 0;
    }
    case Command::replicate: {
      ReplicateConfig rcfg;
      rcfg.reps = cfg.reps;
      rcfg.pipeline = cfg.pipeline;
      rcfg.master_seed = cfg.seed;
      rcfg.workers = cfg.workers;
      CellSummary cell = replicate(cfg.dgp, rcfg);
      std::ostringstream out;
      out << "dgp,n,t,reps,failures";
      for (std::size_t j = 0; j < cell.rank_freq.size(); ++j) out << ",rank_correct_r" << j;
      out << ",break_correct,memb_pre_infeasible,memb_post_infeasible,memb_pre_feasible,"
             "memb_post_feasible,k_pre_correct,k_post_correct";
      for (std::size_t k = 0; k < cell.k_pre_dist.size(); ++k) out << ",k_pre_" << (k + 1);
      for (std::size_t k = 0; k < cell.k_post_dist.size(); ++k) out << ",k_post_" << (k + 1);
      out << ",bias_pre_feasible,cover_pre_feasible,bias_post_feasible,cover_post_feasible"
          << ",bias_pre_oracle,cover_pre_oracle,bias_post_oracle,cover_post_oracle\n";
      out << dgp_name(cell.spec) << "," << cell.spec.n << "," << cell.spec.t_len << ","
          << cell.reps << "," << cell.failures;
      for (double v : cell.rank_freq) out << "," << detail::format_double(v);
      out << "," << detail::format_double(cell.break_freq);
      out << "," << detail::format_double(cell.memb_pre_infeasible);
      out << "," << detail::format_double(cell.memb_post_infeasible);
      out << "," << detail::format_double(cell.memb_pre_feasible);
      out << "," << detail::format_double(cell.memb_post_feasible);
      out << "," << detail::format_double(cell.k_pre_freq);
      out << "," << detail::format_double(cell.k_post_freq);
      for (double v : cell.k_pre_dist) out << "," << detail::format_double(v);
      for (double v : cell.k_post_dist) out << "," << detail::format_double(v);
      out << "," << detail::format_double(cell.bias_pre_feasible);
      out << "," << detail::format_double(cell.cover_pre_feasible);
      out << "," << detail::format_double(cell.bias_post_feasible);
      out << "," << detail::format_double(cell.cover_post_feasible);
      out << "," << detail::format_double(cell.bias_pre_oracle);
      out << "," << detail::format_double(cell.cover_pre_oracle);
      out << "," << detail::format_double(cell.bias_post_oracle);
      out << "," << detail::format_double(cell.cover_post_oracle);
      out << "\n";
      writer.write("summary.csv", out.str());
      writer.commit();
      return 0;
    }
  }
  return 1;
}

}  // namespace panelbreak
