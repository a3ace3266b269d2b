#pragma once

// The swct subcommands as library calls. The executable only parses flags.

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "swct/digest.hpp"
#include "swct/harness.hpp"
#include "swct/inference.hpp"
#include "swct/methods.hpp"
#include "swct/oracle.hpp"
#include "swct/simgen.hpp"
#include "swct/trial.hpp"

namespace swct::cli {

inline constexpr const char* kVersion = "0.1.0";

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (!std::filesystem::is_directory(p)) throw InputError("cannot create output directory " + dir);
  const auto probe = p / ".swct-write-test";
  {
    std::ofstream f(probe);
    if (!f) throw InputError("output directory " + dir + " is not writable");
  }
  std::filesystem::remove(probe, ec);
  return p;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f << content;
}

inline nlohmann::json manifest(const std::string& command, nlohmann::json config, std::uint64_t seed,
                               nlohmann::json inputs) {
  return nlohmann::json{{"command", command},     {"config", std::move(config)}, {"seed", seed},
                        {"version", kVersion},    {"inputs", std::move(inputs)}, {"timestamp", utc_timestamp()}};
}

inline std::string method_list(const std::vector<Method>& methods) {
  std::string s;
  for (Method m : methods) s += (s.empty() ? "" : ",") + std::string(to_string(m));
  return s;
}

// ---------------------------------------------------------------- analyze

struct AnalyzeOptions {
  std::string data;
  Contrast contrast = Contrast::risk_difference;
  std::vector<Method> methods = nonparametric_methods();
  PermutationPlan plan;
  CiOptions ci = default_ci_options(Contrast::risk_difference);
  bool ci_range_given = false;
  bool with_ci = true;
  std::string out;  // directory; empty writes results to the stream
};

inline std::string results_csv(const std::vector<InferenceResult>& results, Contrast kind, int n_permutations) {
  std::ostringstream os;
  os << "method,contrast,estimate,ci_lower,ci_upper,p_value,estimate_g,ci_lower_g,ci_upper_g,ci_status,inference,"
        "n_permutations\n";
  auto num = [](double x) { return std::isnan(x) ? std::string("NA") : format_number(x); };
  for (const auto& r : results) {
    std::string status = "ok";
    if (r.ci.empty) status = "empty";
    else if (r.ci.lower_at_range && r.ci.upper_at_range) status = "both_at_range";
    else if (r.ci.lower_at_range) status = "lower_at_range";
    else if (r.ci.upper_at_range) status = "upper_at_range";
    else if (std::isnan(r.ci.lower)) status = "not_computed";
    const bool exact = is_exact(r.method);
    os << to_string(r.method) << ',' << to_string(kind) << ',' << num(report(kind, r.estimate)) << ','
       << num(std::isnan(r.ci.lower) ? r.ci.lower : report(kind, r.ci.lower)) << ','
       << num(std::isnan(r.ci.upper) ? r.ci.upper : report(kind, r.ci.upper)) << ',' << num(r.p_value) << ','
       << num(r.estimate) << ',' << num(r.ci.lower) << ',' << num(r.ci.upper) << ',' << status << ','
       << (exact ? (r.exhaustive ? "exhaustive" : "permutation") : "wald") << ','
       << (exact ? static_cast<int>(r.permuted_estimates.size()) : 0) << '\n';
  }
  (void)n_permutations;
  return os.str();
}

inline int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out, std::ostream& err) {
  const Trial trial = read_trial_csv(opt.data);
  for (const auto& w : trial.warnings) err << "warning: " << w << '\n';
  const ContrastSpec spec{opt.contrast, {}};
  check_methods(opt.methods, opt.contrast);
  CiOptions ci = opt.ci;
  if (!opt.ci_range_given) {
    const auto d = default_ci_options(opt.contrast);
    ci.lower = d.lower;
    ci.upper = d.upper;
  }
  const auto prep = prepare(trial.panel, spec);
  for (const auto& [i, j] : prep.clamped)
    err << "note: cluster " << trial.cluster_labels[i] << " period " << j << " clamped off the 0/1 boundary\n";

  const auto results = analyze(trial.design, trial.panel, spec, opt.methods, opt.plan, ci, opt.with_ci);
  const std::string csv = results_csv(results, opt.contrast, opt.plan.n_permutations);
  if (opt.out.empty()) {
    out << csv;
    return 0;
  }
  const auto dir = prepare_out_dir(opt.out);
  write_file(dir / "results.csv", csv);
  nlohmann::json config{{"data", opt.data},
                        {"contrast", std::string(to_string(opt.contrast))},
                        {"methods", method_list(opt.methods)},
                        {"perms", opt.plan.n_permutations},
                        {"permutation_mode", opt.plan.mode == PermutationMode::automatic   ? "auto"
                                             : opt.plan.mode == PermutationMode::sampled ? "sampled"
                                                                                         : "exhaustive"},
                        {"pvalue_add_one", opt.plan.add_one},
                        {"ci_level", ci.level},
                        {"ci_search_range", {ci.lower, ci.upper}},
                        {"ci", opt.with_ci},
                        {"jobs", opt.plan.jobs}};
  const auto m = manifest("analyze", config, opt.plan.seed, {{opt.data, {{"sha256", sha256_file(opt.data)}}}});
  write_file(dir / "manifest.json", m.dump(2) + "\n");
  out << csv;
  return 0;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  std::vector<std::string> presets;
  std::string config_path;
  std::vector<double> betas;  // empty keeps each scenario's beta
  int n_sims = 0;             // 0 keeps each scenario's n_sims
  std::uint64_t seed = 0;
  GridOptions grid;
  std::string out;
};

inline std::vector<ScenarioConfig> resolve_scenarios(const SimulateOptions& opt) {
  std::vector<ScenarioConfig> base;
  for (const auto& name : opt.presets) base.push_back(preset(name));
  if (!opt.config_path.empty()) base.push_back(read_scenario(opt.config_path));
  if (base.empty()) throw InputError("simulate needs --preset or --config");
  std::vector<ScenarioConfig> out;
  for (auto c : base) {
    c.seed = opt.seed;
    if (opt.n_sims > 0) c.n_sims = opt.n_sims;
    if (opt.betas.empty()) {
      out.push_back(c);
      continue;
    }
    for (double b : opt.betas) {
      c.beta = b;
      out.push_back(c);
    }
  }
  return out;
}

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err) {
  const auto scenarios = resolve_scenarios(opt);
  const auto dir = prepare_out_dir(opt.out);
  const auto reports = run_grid(scenarios, opt.grid);
  for (const auto& r : reports)
    for (const auto& n : r.notes) err << "note: " << r.label << ": " << n << '\n';

  std::ostringstream metrics, cov, est;
  write_metrics_csv(metrics, reports);
  write_covariance_csv(cov, reports);
  write_estimates_csv(est, reports);
  write_file(dir / "metrics.csv", metrics.str());
  write_file(dir / "covariance.csv", cov.str());
  write_file(dir / "estimates.csv", est.str());

  nlohmann::json config{{"scenarios", scenarios},
                        {"methods", method_list(opt.grid.methods)},
                        {"perms", opt.grid.n_permutations},
                        {"inference", opt.grid.inference},
                        {"alpha", opt.grid.alpha},
                        {"pvalue_add_one", opt.grid.add_one},
                        {"jobs", opt.grid.jobs}};
  nlohmann::json inputs = nlohmann::json::object();
  if (!opt.config_path.empty()) inputs[opt.config_path] = {{"sha256", sha256_file(opt.config_path)}};
  write_file(dir / "manifest.json", manifest("simulate", config, opt.seed, inputs).dump(2) + "\n");
  out << "wrote " << (dir / "metrics.csv").string() << ", covariance.csv, estimates.csv, manifest.json\n";
  return 0;
}

// ---------------------------------------------------------------- oracle

struct OracleOptions {
  int n_periods = 8;
  double mu = 0.30;
  double tau = 0.06;
  double sigma_sq = 0.3 * 0.7 / 100.0;  // binomial variance at p = 0.3, K = 100
  std::vector<double> v, w;             // empty: equal weights
  int n_reps = 100000;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out;
};

inline std::string oracle_report(const OracleOptions& opt) {
  const int nj = opt.n_periods;
  if (nj < 3) throw InputError("oracle needs J >= 3");
  auto weights = [&](const std::vector<double>& x) {
    if (x.empty()) return oracle::equal_weights(nj);
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return v;
  };
  const Eigen::VectorXd v = weights(opt.v), w = weights(opt.w);
  const double tau_sq = opt.tau * opt.tau;
  const auto check = oracle::ensemble_variance_check(v, w, nj, tau_sq, opt.sigma_sq);

  ScenarioConfig c;
  c.name = "oracle";
  c.n_clusters = nj - 1;
  c.n_periods = nj;
  c.mu = opt.mu;
  c.tau = opt.tau;
  c.sigma = std::sqrt(opt.sigma_sq);
  c.theta_sets = {std::vector<double>(nj, 0.0)};
  c.beta = 0.0;
  c.seed = opt.seed;
  const auto mc = oracle::monte_carlo(c, v, w, opt.n_reps, opt.jobs);

  std::ostringstream os;
  os << "quantity,analytic,monte_carlo,mc_se,agree\n";
  auto row = [&](const char* name, double analytic, const oracle::Moment& m) {
    const bool agree = std::abs(analytic - m.value) <= 3.0 * m.mc_se + 1e-15;
    os << name << ',' << format_number(analytic) << ',' << format_number(m.value) << ',' << format_number(m.mc_se)
       << ',' << (agree ? "true" : "false") << '\n';
  };
  row("var_npwp", check.v_npwp, mc.v_npwp);
  row("var_co", check.v_co, mc.v_co);
  row("cov_npwp_co", check.cov, mc.cov);
  row("var_ens", check.v_ens, mc.v_ens);
  const bool empirical_lower = mc.v_ens.value < std::min(mc.v_npwp.value, mc.v_co.value);
  os << "dominated," << (check.dominated ? "true" : "false") << ",NA,NA,NA\n";
  os << "ensemble_lower_empirically," << (empirical_lower ? "true" : "false") << ",NA,NA,NA\n";
  const auto balance = oracle::balance_tau_sq(v, w, nj, opt.sigma_sq);
  os << "balancing_tau_sq," << (balance ? format_number(*balance) : std::string("NA")) << ",NA,NA,NA\n";
  os << "n_reps," << opt.n_reps << ",NA,NA,NA\n";
  return os.str();
}

inline int cmd_oracle(const OracleOptions& opt, std::ostream& out) {
  const std::string csv = oracle_report(opt);
  if (!opt.out.empty()) {
    const auto dir = prepare_out_dir(opt.out);
    write_file(dir / "oracle.csv", csv);
    nlohmann::json config{{"J", opt.n_periods}, {"mu", opt.mu},    {"tau", opt.tau},   {"sigma_sq", opt.sigma_sq},
                          {"v", opt.v},         {"w", opt.w},      {"reps", opt.n_reps}, {"jobs", opt.jobs}};
    write_file(dir / "manifest.json", manifest("oracle", config, opt.seed, nlohmann::json::object()).dump(2) + "\n");
  }
  out << csv;
  return 0;
}

// ---------------------------------------------------------------- presets

inline int cmd_presets(const std::string& dump, std::ostream& out) {
  if (dump.empty()) {
    for (const auto& c : all_presets()) out << c.name << '\n';
    return 0;
  }
  if (dump == "all") {
    out << nlohmann::json(all_presets()).dump(2) << '\n';
    return 0;
  }
  out << nlohmann::json(preset(dump)).dump(2) << '\n';
  return 0;
}

}  // namespace swct::cli
