#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "swct/commands.hpp"

using namespace swct;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

// Runs the swct binary; stderr is merged into the captured output when requested.
Run swct_run(const std::string& args, bool merge_stderr = false) {
  const std::string cmd = std::string(SWCT_CLI_PATH) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, ""};
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string demo(const char* name) { return std::string(SWCT_DEMO_DIR) + "/" + name; }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("swct_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

std::vector<std::vector<std::string>> rows(const std::string& csv) {
  std::vector<std::vector<std::string>> out;
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  while (std::getline(ss, line))
    if (!line.empty()) out.push_back(split(line));
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  f << s;
}

}  // namespace

TEST(Cli, AnalyzeMatchesLibrary) {
  const auto r = swct_run("analyze --data " + demo("toy3.csv") + " --methods npwp,sc1,co1,ens --perms 200 --seed 9");
  ASSERT_EQ(r.code, 0) << r.out;

  cli::AnalyzeOptions opt;
  opt.data = demo("toy3.csv");
  opt.methods = {Method::npwp, Method::sc1, Method::co1, Method::ens};
  opt.plan.n_permutations = 200;
  opt.plan.seed = 9;
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_analyze(opt, out, err), 0);
  EXPECT_EQ(r.out, out.str());

  const auto trial = read_trial_csv(demo("toy3.csv"));
  const auto res = rows(r.out);
  ASSERT_EQ(res.size(), 4u);
  const ContrastSpec rd{Contrast::risk_difference, {}};
  EXPECT_NEAR(std::stod(res[0][2]), npwp(trial.design, trial.panel, rd).beta_hat, 1e-9);
  for (const auto& row : res) {
    const double p = std::stod(row[5]);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_LE(std::stod(row[3]), std::stod(row[2]));
    EXPECT_GE(std::stod(row[4]), std::stod(row[2]));
  }
}

TEST(Cli, AnalyzeFlatAndNoiseless) {
  const auto dir = scratch("flat");
  fs::create_directories(dir);
  std::string flat = "cluster,period,treated,outcome_mean\n", noiseless = flat;
  const double theta[] = {0.0, 0.05, 0.12, 0.08, 0.1};
  for (int i = 0; i < 4; ++i) {
    for (int j = 1; j <= 5; ++j) {
      const int x = j > i + 1;
      flat += "c" + std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(x) + ",0.3\n";
      noiseless += "c" + std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(x) + "," +
                   format_number(0.3 + theta[j - 1] - 0.1 * x) + "\n";
    }
  }
  write_text(dir / "flat.csv", flat);
  write_text(dir / "noiseless.csv", noiseless);

  auto r = swct_run("analyze --data " + (dir / "flat.csv").string() + " --no-ci --perms 50 --seed 1");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const auto& row : rows(r.out)) {
    EXPECT_EQ(std::stod(row[2]), 0.0) << row[0];
    EXPECT_EQ(std::stod(row[5]), 1.0) << row[0];
  }
  r = swct_run("analyze --data " + (dir / "noiseless.csv").string() + " --methods all --no-ci --perms 50 --seed 1");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const auto& row : rows(r.out)) EXPECT_NEAR(std::stod(row[2]), -0.1, 1e-8) << row[0];
  fs::remove_all(dir);
}

TEST(Cli, AnalyzeCountsLogOddsWithManifest) {
  const auto dir = scratch("lor");
  const auto r = swct_run("analyze --data " + demo("counts_4x5.csv") +
                          " --contrast lor --methods npwp,co2 --perms 100 --seed 4 --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_TRUE(fs::exists(dir / "results.csv"));
  EXPECT_EQ(slurp(dir / "results.csv"), r.out);
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["command"], "analyze");
  EXPECT_EQ(m["seed"], 4);
  EXPECT_EQ(m["version"], cli::kVersion);
  EXPECT_EQ(m["inputs"][demo("counts_4x5.csv")]["sha256"], sha256_file(demo("counts_4x5.csv")));
  for (const auto& row : rows(r.out)) {
    EXPECT_EQ(row[1], "lor");
    // Reported on the odds-ratio scale, g-scale alongside.
    EXPECT_NEAR(std::stod(row[2]), std::exp(std::stod(row[6])), 1e-8);
  }
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(swct_run("analyze --data " + demo("toy3.csv") + " --contrast lor --methods mem").code, 2);
  EXPECT_EQ(swct_run("analyze --data " + demo("toy3.csv") + " --methods nope").code, 2);
  EXPECT_EQ(swct_run("analyze --data " + demo("toy3.csv") + " --ci-search-range 1").code, 2);
  EXPECT_EQ(swct_run("presets --dump sim9-s1").code, 2);
  EXPECT_NE(swct_run("simulate --preset sim1-s1 --out /tmp/swct_cli_noseed").code, 0);
  EXPECT_NE(swct_run("oracle --reps 10").code, 0);
  EXPECT_NE(swct_run("analyze --data /nonexistent.csv").code, 0);

  const auto dir = scratch("bad");
  fs::create_directories(dir);
  write_text(dir / "missing.csv", "cluster,period,treated,outcome_mean\nA,1,0,0.3\nA,2,1,0.2\nB,1,0,0.3\n");
  const auto r = swct_run("analyze --data " + (dir / "missing.csv").string(), true);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error:"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, Presets) {
  auto r = swct_run("presets");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "sim1-s1\nsim1-s2\nsim1-s3\nsim1-s4\nsim2-s1\nsim2-s2\nsim2-s3\nsim2-s4\n");
  r = swct_run("presets --dump sim2-s3");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(nlohmann::json::parse(r.out).get<ScenarioConfig>().name, "sim2-s3");
  r = swct_run("presets --dump all");
  EXPECT_EQ(nlohmann::json::parse(r.out).size(), 8u);
}

TEST(Cli, SimulateSmokeAndReproducible) {
  const auto a = scratch("sim_a"), b = scratch("sim_b");
  const std::string common = "simulate --preset sim1-s1 --n-sims 10 --perms 20 --seed 11 --methods npwp,co1,ens";
  ASSERT_EQ(swct_run(common + " --jobs 1 --out " + a.string()).code, 0);
  ASSERT_EQ(swct_run(common + " --jobs 3 --out " + b.string()).code, 0);
  for (const char* f : {"metrics.csv", "covariance.csv", "estimates.csv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  for (const auto& row : rows(slurp(a / "metrics.csv"))) {
    if (row[2] == "power" || row[2] == "coverage") {
      EXPECT_GE(std::stod(row[3]), 0.0);
      EXPECT_LE(std::stod(row[3]), 1.0);
    }
  }
  const auto m = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(m["command"], "simulate");
  EXPECT_EQ(m["seed"], 11);
  EXPECT_EQ(m["config"]["scenarios"][0]["n_sims"], 10);

  // Library path agrees with the binary.
  cli::SimulateOptions opt;
  opt.presets = {"sim1-s1"};
  opt.n_sims = 10;
  opt.seed = 11;
  opt.grid.n_permutations = 20;
  opt.grid.methods = {Method::npwp, Method::co1, Method::ens};
  const auto reports = run_grid(cli::resolve_scenarios(opt), opt.grid);
  std::ostringstream metrics;
  write_metrics_csv(metrics, reports);
  EXPECT_EQ(metrics.str(), slurp(a / "metrics.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, SimulateBetasAndLogitNote) {
  const auto dir = scratch("sim_logit");
  const auto r = swct_run("simulate --preset sim2-s1 --betas 0,-0.4 --n-sims 3 --perms 10 --seed 2 --methods npwp,mem "
                          "--out " + dir.string(),
                          true);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("mem skipped"), std::string::npos);
  const auto metrics = slurp(dir / "metrics.csv");
  EXPECT_NE(metrics.find("sim2-s1:beta=0,npwp,type1_error"), std::string::npos);
  EXPECT_NE(metrics.find("sim2-s1:beta=-0.4,npwp,power"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, Oracle) {
  const auto r = swct_run("oracle --reps 4000 --seed 3");
  ASSERT_EQ(r.code, 0);
  const auto res = rows(r.out);
  ASSERT_GE(res.size(), 4u);
  EXPECT_EQ(res[0][0], "var_npwp");
  const auto v = oracle::equal_weights(8);
  const auto check = oracle::ensemble_variance_check(v, v, 8, 0.06 * 0.06, 0.0021);
  EXPECT_NEAR(std::stod(res[0][1]), check.v_npwp, 1e-9 * check.v_npwp);
  EXPECT_NEAR(std::stod(res[3][1]), check.v_ens, 1e-9 * check.v_ens);
  EXPECT_EQ(swct_run("oracle --reps 4000 --seed 3 --jobs 2").out, r.out);
}
