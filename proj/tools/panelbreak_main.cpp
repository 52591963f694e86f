// Command-line driver: estimate, test, simulate, replicate.

#include "panelbreak/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

namespace {

// Flat key=value config file; command-line flags win over file entries.
void apply_config_file(const std::string& path, std::map<std::string, std::string>& kv) {
  std::ifstream in(path);
  if (!in) throw panelbreak::ArgumentError("cannot open config file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw panelbreak::ArgumentError("config line without '=': " + line);
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    kv.emplace(key, value);  // does not overwrite existing (flag-provided) keys
  }
}

panelbreak::DgpFamily parse_family(const std::string& s) {
  if (s == "1" || s == "dgp1") return panelbreak::DgpFamily::dgp1;
  if (s == "2" || s == "dgp2") return panelbreak::DgpFamily::dgp2;
  if (s == "3" || s == "dgp3") return panelbreak::DgpFamily::dgp3;
  if (s == "4" || s == "dgp4") return panelbreak::DgpFamily::dgp4;
  throw panelbreak::ArgumentError("unknown DGP family: " + s);
}

panelbreak::DgpVariant parse_variant(const std::string& s) {
  if (s == "1" || s == "v1") return panelbreak::DgpVariant::v1;
  if (s == "2" || s == "v2") return panelbreak::DgpVariant::v2;
  if (s == "3" || s == "v3") return panelbreak::DgpVariant::v3;
  throw panelbreak::ArgumentError("unknown DGP variant: " + s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Panel regression with grouped slopes and a structural break"};
  app.require_subcommand(1);

  std::string input, output_dir = ".", config_file;
  std::string r0 = "auto", varsigma = "auto", kernel = "bartlett", bandwidth = "auto";
  std::string dgp = "1.1";
  double epsilon = 0.15;
  double critical = 15.37;
  std::uint64_t seed = 0;
  int reps = 200, n = 100, t = 100, workers = 0;
  bool no_bias_correction = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--output-dir", output_dir, "Directory for emitted artifacts");
    cmd->add_option("--config", config_file, "Flat key=value config file");
    cmd->add_option("--r0", r0, "Rank of the intercept block, or 'auto'");
    cmd->add_option("--epsilon", epsilon, "Trimming fraction for the break test");
    cmd->add_option("--varsigma", varsigma, "Significance level, or 'auto' for N^-2");
    cmd->add_option("--kernel", kernel, "Kernel: bartlett or none");
    cmd->add_option("--bandwidth", bandwidth, "Kernel bandwidth: 'auto' or an integer");
    cmd->add_option("--seed", seed, "Master seed");
    cmd->add_option("--workers", workers, "Worker threads (0 = hardware)");
    cmd->add_option("--critical-value", critical, "Critical value for the sup-F test");
    cmd->add_flag("--no-bias-correction", no_bias_correction,
                  "Report uncorrected slope estimates");
  };

  CLI::App* est = app.add_subcommand("estimate", "Estimate ranks, break, groups, and slopes");
  est->add_option("--input", input, "Long-format panel CSV")->required();
  add_common(est);

  CLI::App* test = app.add_subcommand("test", "Sup-F test for a structural break");
  test->add_option("--input", input, "Long-format panel CSV")->required();
  add_common(test);

  CLI::App* sim = app.add_subcommand("simulate", "Write a generated panel");
  sim->add_option("--dgp", dgp, "DGP cell, e.g. 1.1");
  sim->add_option("--n", n, "Units");
  sim->add_option("--t", t, "Periods");
  add_common(sim);

  CLI::App* rep = app.add_subcommand("replicate", "Monte Carlo summary for one DGP cell");
  rep->add_option("--dgp", dgp, "DGP cell, e.g. 1.1");
  rep->add_option("--n", n, "Units");
  rep->add_option("--t", t, "Periods");
  rep->add_option("--reps", reps, "Replications");
  add_common(rep);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_file.empty()) {
      std::map<std::string, std::string> kv;
      apply_config_file(config_file, kv);
      auto get = [&](const char* key, std::string& slot) {
        auto it = kv.find(key);
        if (it != kv.end()) slot = it->second;
      };
      // Flags already parsed win; config fills only defaults left untouched.
      if (input.empty()) get("input", input);
      get("kernel", kernel);
      get("bandwidth", bandwidth);
      get("r0", r0);
      get("varsigma", varsigma);
      if (auto it = kv.find("epsilon"); it != kv.end() && epsilon == 0.15)
        epsilon = std::stod(it->second);
      if (auto it = kv.find("seed"); it != kv.end() && seed == 0)
        seed = std::stoull(it->second);
    }

    panelbreak::RunConfig cfg;
    cfg.input = input;
    cfg.output_dir = output_dir;
    cfg.seed = seed;
    cfg.reps = reps;
    cfg.workers = workers;
    cfg.supf_critical = critical;
    cfg.pipeline.epsilon = epsilon;
    cfg.pipeline.bias_correction = !no_bias_correction;
    cfg.pipeline.workers = workers;
    if (r0 != "auto") cfg.pipeline.r0_override = std::stoi(r0);
    if (varsigma != "auto") cfg.pipeline.varsigma = std::stod(varsigma);
    if (kernel == "bartlett")
      cfg.pipeline.kernel.kind = panelbreak::KernelKind::bartlett;
    else if (kernel == "none")
      cfg.pipeline.kernel.kind = panelbreak::KernelKind::none;
    else
      throw panelbreak::ArgumentError("unknown kernel: " + kernel);
    if (bandwidth != "auto") cfg.pipeline.kernel.bandwidth = std::stoi(bandwidth);

    auto dot = dgp.find('.');
    if (dot != std::string::npos) {
      cfg.dgp.family = parse_family(dgp.substr(0, dot));
      cfg.dgp.variant = parse_variant(dgp.substr(dot + 1));
    } else {
      cfg.dgp.family = parse_family(dgp);
    }
    cfg.dgp.n = n;
    cfg.dgp.t_len = t;

    if (est->parsed()) cfg.command = panelbreak::Command::estimate;
    if (test->parsed()) cfg.command = panelbreak::Command::test;
    if (sim->parsed()) cfg.command = panelbreak::Command::simulate;
    if (rep->parsed()) cfg.command = panelbreak::Command::replicate;

    return panelbreak::run(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
