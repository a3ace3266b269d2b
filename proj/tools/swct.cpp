#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "swct/commands.hpp"

namespace {

std::vector<double> parse_doubles(const std::string& s, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw swct::InputError(std::string(flag) + ": '" + item + "' is not a number");
    }
  }
  return out;
}

swct::PermutationMode parse_mode(const std::string& s) {
  if (s == "auto") return swct::PermutationMode::automatic;
  if (s == "sampled") return swct::PermutationMode::sampled;
  if (s == "exhaustive") return swct::PermutationMode::exhaustive;
  throw swct::InputError("--perm-mode must be auto, sampled or exhaustive");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stepped-wedge cluster randomized trial analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", swct::cli::kVersion);

  // analyze
  swct::cli::AnalyzeOptions an;
  std::string an_contrast = "rd", an_methods = "npwp,sc1,sc2,co1,co2,co3,cosc1,cosc2,ens", an_range, an_mode = "auto";
  bool an_no_ci = false;
  auto* analyze = app.add_subcommand("analyze", "Estimate effects with permutation p-values and CIs");
  analyze->add_option("--data", an.data, "Trial CSV")->required()->check(CLI::ExistingFile);
  analyze->add_option("--contrast", an_contrast, "rd or lor")->capture_default_str();
  analyze->add_option("--methods", an_methods, "Comma list or 'all'")->capture_default_str();
  analyze->add_option("--perms", an.plan.n_permutations, "Permutations")->capture_default_str();
  analyze->add_option("--perm-mode", an_mode, "auto, sampled or exhaustive")->capture_default_str();
  analyze->add_option("--seed", an.plan.seed, "Seed")->capture_default_str();
  analyze->add_option("--ci-level", an.ci.level, "Confidence level")->capture_default_str();
  analyze->add_option("--ci-search-range", an_range, "lo,hi on the contrast scale");
  analyze->add_flag("--no-ci", an_no_ci, "Skip interval inversion");
  analyze->add_flag("--pvalue-add-one", an.plan.add_one, "Use (1+count)/(1+P)");
  analyze->add_option("--jobs", an.plan.jobs, "Worker threads (0 = all cores)")->capture_default_str();
  analyze->add_option("--out", an.out, "Output directory for results.csv and manifest.json");

  // simulate
  swct::cli::SimulateOptions sim;
  std::string sim_presets, sim_betas, sim_methods = "all";
  bool sim_no_inference = false;
  auto* simulate = app.add_subcommand("simulate", "Run a simulation scenario grid");
  simulate->add_option("--preset", sim_presets, "Comma list of presets (see 'presets')");
  simulate->add_option("--config", sim.config_path, "Scenario JSON")->check(CLI::ExistingFile);
  simulate->add_option("--betas", sim_betas, "Comma list of effects; one scenario per value");
  simulate->add_option("--n-sims", sim.n_sims, "Replicates per scenario (default: from scenario)");
  simulate->add_option("--perms", sim.grid.n_permutations, "Permutations per replicate")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Seed")->required();
  simulate->add_option("--methods", sim_methods, "Comma list or 'all'")->capture_default_str();
  simulate->add_option("--alpha", sim.grid.alpha, "Test level")->capture_default_str();
  simulate->add_flag("--no-inference", sim_no_inference, "Point estimates only");
  simulate->add_flag("--pvalue-add-one", sim.grid.add_one, "Use (1+count)/(1+P)");
  simulate->add_option("--jobs", sim.grid.jobs, "Worker threads (0 = all cores)")->capture_default_str();
  simulate->add_option("--out", sim.out, "Output directory")->required();

  // oracle
  swct::cli::OracleOptions orc;
  std::string orc_v, orc_w;
  auto* oracle = app.add_subcommand("oracle", "Analytic variances vs Monte Carlo for the standard design");
  oracle->add_option("--periods", orc.n_periods, "J")->capture_default_str();
  oracle->add_option("--mu", orc.mu, "Mean")->capture_default_str();
  oracle->add_option("--tau", orc.tau, "Cluster intercept SD")->capture_default_str();
  oracle->add_option("--sigma-sq", orc.sigma_sq, "Residual variance")->capture_default_str();
  oracle->add_option("--v", orc_v, "NPWP weights for periods 2..J-1 (default equal)");
  oracle->add_option("--w", orc_w, "CO weights for periods 2..J-1 (default equal)");
  oracle->add_option("--reps", orc.n_reps, "Monte Carlo replicates")->capture_default_str();
  oracle->add_option("--seed", orc.seed, "Seed")->required();
  oracle->add_option("--jobs", orc.jobs, "Worker threads (0 = all cores)")->capture_default_str();
  oracle->add_option("--out", orc.out, "Output directory for oracle.csv and manifest.json");

  // presets
  std::string dump;
  auto* presets = app.add_subcommand("presets", "List or dump embedded scenario presets");
  presets->add_option("--dump", dump, "Preset name or 'all'");

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) {
      an.contrast = swct::parse_contrast(an_contrast);
      an.methods = swct::parse_methods(an_methods);
      an.plan.mode = parse_mode(an_mode);
      an.with_ci = !an_no_ci;
      if (!an_range.empty()) {
        const auto r = parse_doubles(an_range, "--ci-search-range");
        if (r.size() != 2) throw swct::InputError("--ci-search-range needs lo,hi");
        an.ci.lower = r[0];
        an.ci.upper = r[1];
        an.ci_range_given = true;
      }
      return swct::cli::cmd_analyze(an, std::cout, std::cerr);
    }
    if (simulate->parsed()) {
      std::stringstream ss(sim_presets);
      for (std::string p; std::getline(ss, p, ',');)
        if (!p.empty()) sim.presets.push_back(p);
      if (!sim_betas.empty()) sim.betas = parse_doubles(sim_betas, "--betas");
      sim.grid.methods = swct::parse_methods(sim_methods);
      sim.grid.inference = !sim_no_inference;
      return swct::cli::cmd_simulate(sim, std::cout, std::cerr);
    }
    if (oracle->parsed()) {
      if (!orc_v.empty()) orc.v = parse_doubles(orc_v, "--v");
      if (!orc_w.empty()) orc.w = parse_doubles(orc_w, "--w");
      return swct::cli::cmd_oracle(orc, std::cout);
    }
    if (presets->parsed()) return swct::cli::cmd_presets(dump, std::cout);
  } catch (const swct::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
