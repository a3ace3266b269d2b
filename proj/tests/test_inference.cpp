#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "swct/inference.hpp"
#include "swct/simgen.hpp"

using namespace swct;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const ContrastSpec kRd{Contrast::risk_difference, {}};

std::vector<int> schedule(const TrialDesign& d) {
  return {d.last_control_periods().begin(), d.last_control_periods().end()};
}

OutcomePanel flat(const TrialDesign& d, double c = 0.3) {
  return OutcomePanel::from_means(MatrixXd::Constant(d.n_clusters(), d.n_periods(), c));
}

OutcomePanel sim_panel(std::uint64_t rep, double beta = -0.1) {
  auto cfg = presets::sim1(1);
  cfg.beta = beta;
  return generate(cfg, scenario_design(cfg), rep);
}

}  // namespace

TEST(Permute, SingleClusterIsIdentity) {
  const auto d = build_design({3}, 5);
  auto rng = make_stream(1, 0);
  for (int k = 0; k < 100; ++k) EXPECT_EQ(permute_assignment(d, rng), d);
}

TEST(Permute, UniformOverOrders) {
  const auto d = standard_design(7);
  std::map<std::vector<int>, int> counts;
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    auto rng = make_stream(2024, static_cast<std::uint64_t>(k));
    const auto p = permute_assignment(d, rng);
    EXPECT_EQ(p.n_periods(), 8);
    ++counts[schedule(p)];
  }
  const int cells = 5040;
  ASSERT_LE(static_cast<int>(counts.size()), cells);
  const double expect = static_cast<double>(draws) / cells;
  double chi = (cells - static_cast<double>(counts.size())) * expect;
  for (const auto& [order, n] : counts) chi += (n - expect) * (n - expect) / expect;
  const boost::math::chi_squared dist(cells - 1);
  const double p = boost::math::cdf(boost::math::complement(dist, chi));
  EXPECT_GT(p, 1e-3) << "chi-square " << chi;
}

TEST(Permute, TiedScheduleHasSixAssignments) {
  const auto d = build_design({2, 2, 4, 4}, 5);
  EXPECT_EQ(distinct_assignments(d), 6.0);
  EXPECT_EQ(distinct_assignments(standard_design(7)), 5040.0);
  PermutationPlan plan;
  plan.mode = PermutationMode::exhaustive;
  const auto all = permuted_designs(d, plan);
  EXPECT_TRUE(all.exhaustive);
  ASSERT_EQ(all.designs.size(), 6u);
  std::set<std::vector<int>> seen;
  for (const auto& p : all.designs) seen.insert(schedule(p));
  EXPECT_EQ(seen.size(), 6u);

  plan.mode = PermutationMode::sampled;
  plan.n_permutations = 2000;
  std::set<std::vector<int>> sampled;
  for (const auto& p : permuted_designs(d, plan).designs) sampled.insert(schedule(p));
  EXPECT_EQ(sampled, seen);
}

TEST(Permute, PlanSelection) {
  PermutationPlan plan;
  plan.n_permutations = 24;
  EXPECT_TRUE(permuted_designs(standard_design(4), plan).exhaustive);
  plan.n_permutations = 23;
  const auto s = permuted_designs(standard_design(4), plan);
  EXPECT_FALSE(s.exhaustive);
  EXPECT_EQ(s.designs.size(), 23u);
  plan.mode = PermutationMode::exhaustive;
  EXPECT_THROW(permuted_designs(standard_design(9), plan), InputError);
  plan.n_permutations = 0;
  EXPECT_THROW(permuted_designs(standard_design(4), plan), InputError);
}

TEST(PValue, Definition) {
  VectorXd perm(4);
  perm << 0.1, -0.5, 0.2, -0.05;
  EXPECT_EQ(permutation_p_value(1.0, perm), 0.0);
  EXPECT_EQ(permutation_p_value(0.2, perm), 0.5);    // ties count
  EXPECT_EQ(permutation_p_value(-0.2, perm), 0.5);   // two-sided
  EXPECT_EQ(permutation_p_value(0.0, perm), 1.0);
  EXPECT_EQ(permutation_p_value(1.0, perm, true), 0.2);
  // Round-off in a tied value still counts.
  VectorXd near(1);
  near << 0.30000000000000004;
  EXPECT_EQ(permutation_p_value(0.1 + 0.2 - 1e-16, near), 1.0);
}

TEST(PermutationTest, ConstantPanelGivesOne) {
  const auto d = standard_design(5);
  PermutationPlan plan;
  plan.n_permutations = 50;
  const auto r = analyze(d, flat(d), kRd, nonparametric_methods(), plan, default_ci_options(kRd.kind), false);
  for (const auto& m : r) {
    EXPECT_EQ(m.estimate, 0.0) << to_string(m.method);
    EXPECT_EQ(m.p_value, 1.0) << to_string(m.method);
  }
}

TEST(PermutationTest, ExhaustiveMatchesHandEnumeration) {
  const auto d = standard_design(4);
  MatrixXd y(4, 5);
  y << 0.21, 0.25, 0.30, 0.28, 0.31,
       0.40, 0.38, 0.22, 0.30, 0.27,
       0.18, 0.24, 0.26, 0.19, 0.23,
       0.33, 0.29, 0.35, 0.36, 0.20;
  const auto panel = OutcomePanel::from_means(y);
  PermutationPlan plan;
  plan.n_permutations = 100;
  for (Method m : {Method::npwp, Method::sc1, Method::co2, Method::cosc1}) {
    const auto r = permutation_test(d, panel, kRd, m, plan);
    ASSERT_TRUE(r.exhaustive);
    ASSERT_EQ(r.permuted_estimates.size(), 24);
    const double obs = estimate(d, panel, kRd, m).beta_hat;
    EXPECT_EQ(r.estimate, obs);
    std::vector<int> j{1, 2, 3, 4};
    int count = 0, total = 0;
    do {
      const double b = estimate(build_design(std::span<const int>(j), 5), panel, kRd, m).beta_hat;
      count += std::abs(b) >= std::abs(obs) - 1e-12;
      ++total;
    } while (std::next_permutation(j.begin(), j.end()));
    EXPECT_EQ(total, 24);
    EXPECT_DOUBLE_EQ(r.p_value, count / 24.0) << to_string(m);
    EXPECT_GE(r.p_value, 1.0 / 24.0);  // the identity is among the orders
  }
}

TEST(PermutationTest, SampledAgreesWithExhaustive) {
  const auto d = standard_design(6);
  auto cfg = presets::sim1(1);
  cfg.n_clusters = 6;
  cfg.n_periods = 7;
  for (auto& t : cfg.theta_sets) t.resize(7);
  cfg.beta = -0.03;
  const auto panel = generate(cfg, d, 5);
  PermutationPlan ex;
  ex.mode = PermutationMode::exhaustive;
  PermutationPlan sa;
  sa.mode = PermutationMode::sampled;
  sa.n_permutations = 10000;
  sa.seed = 77;
  for (Method m : {Method::co1, Method::npwp}) {
    const double pe = permutation_test(d, panel, kRd, m, ex).p_value;
    const double ps = permutation_test(d, panel, kRd, m, sa).p_value;
    EXPECT_LE(std::abs(ps - pe), 3 * std::sqrt(pe * (1 - pe) / 1e4) + 1e-12) << to_string(m);
  }
}

TEST(PermutationTest, DeterministicAndJobInvariant) {
  const auto d = standard_design(7);
  const auto panel = sim_panel(11);
  PermutationPlan plan;
  plan.n_permutations = 120;
  plan.seed = 5;
  const auto opt = default_ci_options(kRd.kind);
  const auto a = analyze(d, panel, kRd, nonparametric_methods(), plan, opt, false);
  plan.jobs = 3;
  const auto b = analyze(d, panel, kRd, nonparametric_methods(), plan, opt, false);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].estimate, b[k].estimate);
    EXPECT_EQ(a[k].p_value, b[k].p_value);
    EXPECT_EQ(a[k].permuted_estimates, b[k].permuted_estimates);
  }
  plan.seed = 6;
  const auto c = analyze(d, panel, kRd, {Method::co1}, plan, opt, false);
  EXPECT_NE(c[0].permuted_estimates, a[3].permuted_estimates);
}

TEST(PermutationTest, FailureNamesPermutation) {
  const auto d = standard_design(3);
  PermutationPlan plan;
  plan.mode = PermutationMode::exhaustive;
  const auto set = permuted_designs(d, plan);
  const BatchEstimator est = [&](const TrialDesign& p, const MatrixXd&) -> VectorXd {
    if (p.last_control(0) == 3) throw EstimationError("boom");
    return VectorXd::Zero(1);
  };
  try {
    permutation_test(d, MatrixXd::Zero(3, 4), est, set, false, 1);
    FAIL();
  } catch (const EstimationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("permutation"), std::string::npos);
    EXPECT_NE(msg.find("[3,"), std::string::npos) << msg;
  }
}

TEST(RemoveEffect, Scales) {
  const auto d = build_design({1, 2}, 3);
  MatrixXd y(2, 3);
  y << 0.2, 0.3, 0.4, 0.5, 0.6, 0.7;
  const MatrixXd rd = remove_effect(d, y, Contrast::risk_difference, 0.1);
  EXPECT_DOUBLE_EQ(rd(0, 0), 0.2);
  EXPECT_DOUBLE_EQ(rd(0, 1), 0.3 - 0.1);
  EXPECT_DOUBLE_EQ(rd(1, 1), 0.6);
  EXPECT_DOUBLE_EQ(rd(1, 2), 0.7 - 0.1);
  const MatrixXd lor = remove_effect(d, y, Contrast::log_odds_ratio, std::log(2.0));
  EXPECT_NEAR(logit(lor(0, 2)), logit(0.4) - std::log(2.0), 1e-14);
  EXPECT_DOUBLE_EQ(lor(1, 0), 0.5);
  const MatrixXd back = remove_effect(d, lor, Contrast::log_odds_ratio, -std::log(2.0));
  EXPECT_LT((back - y).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(InvertTest, SyntheticAcceptanceRegion) {
  CiOptions opt;
  auto box = [](double b) { return std::abs(b - 0.2) <= 0.1 ? 0.5 : 0.01; };
  auto ci = invert_test(box, 0.2, opt);
  EXPECT_NEAR(ci.lower, 0.1, 1e-6);
  EXPECT_NEAR(ci.upper, 0.3, 1e-6);
  EXPECT_FALSE(ci.lower_at_range || ci.upper_at_range || ci.empty);

  // Estimate outside the region: found by probing the range.
  ci = invert_test(box, -0.7, opt);
  EXPECT_NEAR(ci.lower, 0.1, 1e-6);
  EXPECT_NEAR(ci.upper, 0.3, 1e-6);

  ci = invert_test([](double) { return 1.0; }, 0.0, opt);
  EXPECT_TRUE(ci.lower_at_range && ci.upper_at_range);
  EXPECT_EQ(ci.lower, -1.0);
  EXPECT_EQ(ci.upper, 1.0);

  ci = invert_test([](double) { return 0.0; }, 0.0, opt);
  EXPECT_TRUE(ci.empty);

  opt.level = 1.0;
  EXPECT_THROW(invert_test(box, 0.2, opt), InputError);
  opt.level = 0.95;
  opt.lower = 1;
  EXPECT_THROW(invert_test(box, 0.2, opt), InputError);
}

TEST(ConfidenceInterval, ContainsEstimateOnSimulatedData) {
  const auto d = standard_design(7);
  PermutationPlan plan;
  plan.n_permutations = 200;
  for (std::uint64_t rep : {1, 2}) {
    const auto panel = sim_panel(rep);
    const auto r = analyze(d, panel, kRd, {Method::co2, Method::sc2}, plan, default_ci_options(kRd.kind));
    for (const auto& m : r) {
      EXPECT_LE(m.ci.lower, m.estimate) << to_string(m.method);
      EXPECT_GE(m.ci.upper, m.estimate) << to_string(m.method);
      EXPECT_LT(m.ci.upper - m.ci.lower, 1.0);
      // Removing the estimate itself leaves a statistic near zero.
      const auto set = permuted_designs(d, plan);
      const double p = p_value_at(d, panel.values(), kRd.kind, method_estimator(kRd.kind, {m.method}), set,
                                  m.estimate, false, 1);
      EXPECT_GT(p, 0.5);
    }
  }
}

// Flat panel, tied orders: the swapped schedule reproduces |b| exactly, so
// every b is accepted.
TEST(ConfidenceInterval, FlatPanelWithTiedOrdersIsWholeRange) {
  const auto d = build_design({1, 2}, 3);
  PermutationPlan plan;
  const auto ci = invert_ci(d, flat(d), kRd, Method::npwp, plan, default_ci_options(kRd.kind));
  EXPECT_TRUE(ci.lower_at_range && ci.upper_at_range);
  EXPECT_EQ(ci.lower, -1.0);
  EXPECT_EQ(ci.upper, 1.0);
}

// Flat panel, observed order uniquely extreme: every b != 0 is rejected.
TEST(ConfidenceInterval, FlatPanelWithUniqueOrderCollapses) {
  const auto d = standard_design(4);
  PermutationPlan plan;
  const auto ci = invert_ci(d, flat(d), kRd, Method::co1, plan, default_ci_options(kRd.kind));
  EXPECT_FALSE(ci.empty);
  EXPECT_LE(ci.lower, 0.0);
  EXPECT_GE(ci.upper, 0.0);
  EXPECT_LT(ci.upper - ci.lower, 1e-5);
}

TEST(ConfidenceInterval, LogOddsRatio) {
  auto cfg = presets::sim2(1);
  const auto d = scenario_design(cfg);
  const auto panel = generate(cfg, d, 3);
  const ContrastSpec lor{Contrast::log_odds_ratio, {}};
  PermutationPlan plan;
  plan.n_permutations = 100;
  const auto r = analyze(d, panel, lor, {Method::co1}, plan, default_ci_options(lor.kind)).front();
  EXPECT_LE(r.ci.lower, r.estimate);
  EXPECT_GE(r.ci.upper, r.estimate);
  EXPECT_FALSE(r.ci.lower_at_range);
  EXPECT_FALSE(r.ci.upper_at_range);
  EXPECT_THROW(analyze(d, panel, lor, {Method::mem}, plan, default_ci_options(lor.kind)), InputError);
}

TEST(Analyze, MixedModelUsesWald) {
  const auto d = standard_design(7);
  const auto panel = sim_panel(4);
  PermutationPlan plan;
  plan.n_permutations = 20;
  const auto r = analyze(d, panel, kRd, {Method::mem_a, Method::mem}, plan, default_ci_options(kRd.kind));
  const auto w = wald(mem_fit(d, panel));
  EXPECT_EQ(r[0].p_value, w.p_value);
  EXPECT_EQ(r[0].ci.lower, w.lower);
  EXPECT_EQ(r[0].permuted_estimates.size(), 0);
  EXPECT_EQ(r[1].estimate, r[0].estimate);
  EXPECT_EQ(r[1].permuted_estimates.size(), 20);
}
