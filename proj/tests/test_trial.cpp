#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "swct/trial.hpp"

using namespace swct;

namespace {

std::vector<int> sorted(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST(BuildDesign, StandardSevenByEight) {
  const auto d = build_design({1, 2, 3, 4, 5, 6, 7}, 8);
  EXPECT_EQ(d.n_clusters(), 7);
  EXPECT_EQ(d.n_periods(), 8);
  EXPECT_TRUE(is_standard_design(d));
  EXPECT_EQ(d, standard_design(7));
  for (int j = 2; j <= 8; ++j) {
    const auto s = cluster_sets(d, j);
    ASSERT_EQ(s.crossing.size(), 1u) << "period " << j;
    EXPECT_EQ(s.crossing[0], j - 2);
  }
}

TEST(BuildDesign, SingleAlwaysTreatedCluster) {
  const auto d = build_design({0}, 1);
  EXPECT_TRUE(d.treated(0, 1));
  EXPECT_EQ(d.n_control(1), 0);
  EXPECT_THROW(cluster_sets(d, 2), InputError);
}

TEST(BuildDesign, TiedCrossovers) {
  const auto d = build_design({2, 2, 4, 4}, 5);
  EXPECT_EQ(cluster_sets(d, 3).crossing.size(), 2u);
  EXPECT_EQ(cluster_sets(d, 5).crossing.size(), 2u);
  EXPECT_EQ(cluster_sets(d, 3).control.size(), 2u);
  EXPECT_EQ(cluster_sets(d, 3).treated.size(), 0u);
  EXPECT_EQ(cluster_sets(d, 5).treated.size(), 2u);
}

TEST(BuildDesign, RejectsBadEntries) {
  EXPECT_THROW(build_design({-1, 2}, 3), InputError);
  EXPECT_THROW(build_design({1, 4}, 3), InputError);
  EXPECT_THROW(build_design(std::initializer_list<int>{}, 3), InputError);
  const std::vector<double> fractional{1.0, 1.5};
  EXPECT_THROW(build_design(std::span<const double>(fractional), 3), InputError);
  const std::vector<double> integral{1.0, 2.0};
  EXPECT_EQ(build_design(std::span<const double>(integral), 3), build_design({1, 2}, 3));
}

TEST(ClusterSets, StandardDesignEnds) {
  const auto d = standard_design(7);
  const auto s2 = cluster_sets(d, 2);
  EXPECT_EQ(s2.crossing, std::vector<int>{0});
  EXPECT_EQ(s2.control, (std::vector<int>{1, 2, 3, 4, 5, 6}));
  EXPECT_TRUE(s2.treated.empty());
  const auto s8 = cluster_sets(d, 8);
  EXPECT_EQ(s8.crossing, std::vector<int>{6});
  EXPECT_TRUE(s8.control.empty());
  EXPECT_EQ(s8.treated, (std::vector<int>{0, 1, 2, 3, 4, 5}));
}

TEST(ClusterSets, AllControl) {
  const auto d = build_design({4, 4, 4}, 4);
  for (int j = 2; j <= 4; ++j) {
    const auto s = cluster_sets(d, j);
    EXPECT_EQ(s.control.size(), 3u);
    EXPECT_TRUE(s.crossing.empty() && s.treated.empty());
  }
  EXPECT_EQ(never_crossing(d).size(), 3u);
}

TEST(ClusterSets, PeriodOutOfRange) {
  const auto d = standard_design(3);
  EXPECT_THROW(cluster_sets(d, 1), InputError);
  EXPECT_THROW(cluster_sets(d, 5), InputError);
}

// Random designs: partition, crossing count and monotonicity.
TEST(DesignProperties, RandomDesigns) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const int nj = 1 + static_cast<int>(rng() % 9);
    const int ni = 1 + static_cast<int>(rng() % 9);
    std::vector<int> j(ni);
    for (auto& x : j) x = static_cast<int>(rng() % (nj + 1));
    const auto d = build_design(std::span<const int>(j), nj);

    int crossings = 0;
    for (int p = 2; p <= nj; ++p) {
      const auto s = cluster_sets(d, p);
      EXPECT_EQ(static_cast<int>(s.control.size() + s.crossing.size() + s.treated.size()), ni);
      std::vector<int> all = s.control;
      all.insert(all.end(), s.crossing.begin(), s.crossing.end());
      all.insert(all.end(), s.treated.begin(), s.treated.end());
      std::vector<int> expect(ni);
      std::iota(expect.begin(), expect.end(), 0);
      EXPECT_EQ(sorted(all), expect);
      EXPECT_EQ(s, cluster_sets(d, p));
      crossings += static_cast<int>(s.crossing.size());
    }
    // Crossing in period 1 (j_i = 0) is not a set member; count it separately.
    int from_start = 0;
    for (int x : j) from_start += x == 0;
    EXPECT_EQ(crossings + from_start + static_cast<int>(never_crossing(d).size()), ni);

    for (int i = 0; i < ni; ++i)
      for (int p = 1; p < nj; ++p)
        if (d.treated(i, p)) { EXPECT_TRUE(d.treated(i, p + 1)); }
  }
}

TEST(ValidatePanel, AcceptsCompleteGrid) {
  const auto d = standard_design(2);
  Eigen::MatrixXi ev(2, 3), k = Eigen::MatrixXi::Constant(2, 3, 10);
  ev << 1, 2, 3, 4, 5, 6;
  const auto check = validate_panel(d, OutcomePanel::from_counts(ev, k));
  EXPECT_TRUE(check.warnings.empty());
}

TEST(ValidatePanel, MissingCellNamed) {
  const auto d = standard_design(2);
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(2, 3, 0.3);
  y(1, 2) = std::numeric_limits<double>::quiet_NaN();
  try {
    validate_panel(d, OutcomePanel::from_means(y));
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("cluster 1, period 3"), std::string::npos) << e.what();
  }
}

TEST(ValidatePanel, EventsExceedAtRisk) {
  const auto d = build_design({1}, 2);
  Eigen::MatrixXi ev(1, 2), k(1, 2);
  ev << 101, 5;
  k << 100, 100;
  EXPECT_THROW(validate_panel(d, OutcomePanel::from_counts(ev, k)), InputError);
}

TEST(ValidatePanel, ShapeMismatchAndNeverCrossingWarning) {
  EXPECT_THROW(validate_panel(standard_design(3), OutcomePanel::from_means(Eigen::MatrixXd::Zero(2, 4))),
               InputError);
  const auto check = validate_panel(build_design({1, 3}, 3), OutcomePanel::from_means(Eigen::MatrixXd::Zero(2, 3)));
  EXPECT_EQ(check.warnings.size(), 1u);
}

TEST(TrialCsv, CountsRoundTrip) {
  std::istringstream in(
      "cluster,period,treated,events,at_risk\n"
      "b,1,0,3,10\nb,2,0,4,10\nb,3,1,2,10\n"
      "a,1,0,5,10\na,2,1,1,10\na,3,1,2,10\n");
  const auto t = read_trial_csv(in);
  EXPECT_EQ(t.cluster_labels, (std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(t.design.last_control(0), 2);
  EXPECT_EQ(t.design.last_control(1), 1);
  EXPECT_TRUE(t.panel.has_counts());
  EXPECT_DOUBLE_EQ(t.panel.y(1, 2), 0.1);

  std::ostringstream out;
  write_trial_csv(out, t.design, t.panel, t.cluster_labels);
  std::istringstream again(out.str());
  const auto t2 = read_trial_csv(again);
  EXPECT_EQ(t2.design, t.design);
  EXPECT_EQ(t2.panel.values(), t.panel.values());
}

TEST(TrialCsv, Rejections) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return read_trial_csv(in);
  };
  // Treatment switches back.
  EXPECT_THROW(parse("cluster,period,treated,outcome_mean\na,1,1,0.1\na,2,0,0.2\n"), InputError);
  // Missing cell.
  EXPECT_THROW(parse("cluster,period,treated,outcome_mean\na,1,0,0.1\na,2,1,0.2\nb,1,0,0.3\n"), InputError);
  // Duplicate cell.
  EXPECT_THROW(parse("cluster,period,treated,outcome_mean\na,1,0,0.1\na,1,0,0.2\n"), InputError);
  // Unknown header.
  EXPECT_THROW(parse("site,time,x,y\na,1,0,0.1\n"), InputError);
  // Events above denominator.
  EXPECT_THROW(parse("cluster,period,treated,events,at_risk\na,1,0,11,10\n"), InputError);
}
