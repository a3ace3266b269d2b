#pragma once

// Permutation tests over crossover orders and confidence intervals by test
// inversion.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "swct/contrast.hpp"
#include "swct/error.hpp"
#include "swct/methods.hpp"
#include "swct/parallel.hpp"
#include "swct/rng.hpp"
#include "swct/trial.hpp"

namespace swct {

enum class PermutationMode { automatic, sampled, exhaustive };

struct PermutationPlan {
  int n_permutations = 500;
  std::uint64_t seed = 1;
  PermutationMode mode = PermutationMode::automatic;
  std::uint64_t exhaustive_cap = 100000;
  bool add_one = false;  // (1 + count) / (1 + P)
  int jobs = 1;
};

// Number of distinct assignments of the multiset {j_i} to cluster labels.
inline double distinct_assignments(const TrialDesign& d) {
  std::vector<int> j(d.last_control_periods().begin(), d.last_control_periods().end());
  std::sort(j.begin(), j.end());
  double log_count = std::lgamma(j.size() + 1.0);
  for (std::size_t a = 0; a < j.size();) {
    std::size_t b = a;
    while (b < j.size() && j[b] == j[a]) ++b;
    log_count -= std::lgamma(static_cast<double>(b - a) + 1.0);
    a = b;
  }
  return std::round(std::exp(log_count));
}

// Uniformly random relabelling of the crossover schedule (Fisher-Yates).
inline TrialDesign permute_assignment(const TrialDesign& d, Rng& rng) {
  std::vector<int> j(d.last_control_periods().begin(), d.last_control_periods().end());
  for (int k = static_cast<int>(j.size()) - 1; k > 0; --k) std::swap(j[k], j[draw_index(rng, k + 1)]);
  return build_design(std::span<const int>(j), d.n_periods());
}

struct PermutationSet {
  std::vector<TrialDesign> designs;
  bool exhaustive = false;
};

inline PermutationSet permuted_designs(const TrialDesign& d, const PermutationPlan& plan) {
  if (plan.n_permutations < 1) throw InputError("number of permutations must be >= 1");
  const double count = distinct_assignments(d);
  bool exhaustive = plan.mode == PermutationMode::exhaustive;
  if (plan.mode == PermutationMode::automatic)
    exhaustive = count <= plan.n_permutations && count <= static_cast<double>(plan.exhaustive_cap);
  if (exhaustive && count > static_cast<double>(plan.exhaustive_cap)) {
    throw InputError("exhaustive permutation: " + std::to_string(static_cast<long double>(count)) +
                     " distinct assignments exceed the cap of " + std::to_string(plan.exhaustive_cap));
  }
  PermutationSet out;
  out.exhaustive = exhaustive;
  if (exhaustive) {
    std::vector<int> j(d.last_control_periods().begin(), d.last_control_periods().end());
    std::sort(j.begin(), j.end());
    do {
      out.designs.push_back(build_design(std::span<const int>(j), d.n_periods()));
    } while (std::next_permutation(j.begin(), j.end()));
    return out;
  }
  out.designs.resize(plan.n_permutations, d);
  for (int p = 0; p < plan.n_permutations; ++p) {
    auto rng = make_stream(plan.seed, static_cast<std::uint64_t>(p));
    out.designs[p] = permute_assignment(d, rng);
  }
  return out;
}

// Estimates of several methods for one (design, outcomes) pair.
using BatchEstimator = std::function<Eigen::VectorXd(const TrialDesign&, const Eigen::MatrixXd&)>;

inline BatchEstimator method_estimator(Contrast kind, std::vector<Method> methods) {
  return [kind, methods = std::move(methods)](const TrialDesign& d, const Eigen::MatrixXd& y) {
    return estimate_all(d, y, kind, methods);
  };
}

inline std::string describe(const TrialDesign& d) {
  std::string s = "[";
  for (int i = 0; i < d.n_clusters(); ++i) s += (i ? "," : "") + std::to_string(d.last_control(i));
  return s + "]";
}

// Row p holds the estimates under permuted design p.
inline Eigen::MatrixXd permuted_estimates(const PermutationSet& set, const Eigen::MatrixXd& y,
                                          const BatchEstimator& est, Eigen::Index n_methods, int jobs) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(set.designs.size()), n_methods);
  parallel_for(set.designs.size(), jobs, [&](std::size_t p) {
    try {
      out.row(static_cast<Eigen::Index>(p)) = est(set.designs[p], y).transpose();
    } catch (const std::exception& e) {
      throw EstimationError("permutation " + std::to_string(p) + " (last control periods " +
                            describe(set.designs[p]) + "): " + e.what());
    }
  });
  return out;
}

inline double tie_tolerance(double observed) { return 1e-12 * std::max(1.0, std::abs(observed)); }

inline double permutation_p_value(double observed, const Eigen::Ref<const Eigen::VectorXd>& permuted,
                                  bool add_one = false) {
  const double threshold = std::abs(observed) - tie_tolerance(observed);
  double count = 0.0;
  for (Eigen::Index p = 0; p < permuted.size(); ++p)
    if (std::abs(permuted[p]) >= threshold) count += 1.0;
  const double n = static_cast<double>(permuted.size());
  return add_one ? (1.0 + count) / (1.0 + n) : count / n;
}

// Outcomes with a constant effect b taken out of the treated cells: a shift
// on the probability scale for the risk difference, on the logit scale for
// the log odds ratio.
inline Eigen::MatrixXd remove_effect(const TrialDesign& d, const Eigen::MatrixXd& y, Contrast kind, double b) {
  Eigen::MatrixXd out = y;
  for (int i = 0; i < d.n_clusters(); ++i) {
    for (int j = d.last_control(i) + 1; j <= d.n_periods(); ++j) {
      double& v = out(i, j - 1);
      v = kind == Contrast::risk_difference ? v - b : expit(logit(v) - b);
    }
  }
  return out;
}

struct TestResult {
  Eigen::VectorXd estimates;  // observed, one per method
  Eigen::VectorXd p_values;
  Eigen::MatrixXd permuted;  // permutations x methods
  bool exhaustive = false;
};

inline TestResult permutation_test(const TrialDesign& d, const Eigen::MatrixXd& y, const BatchEstimator& est,
                                   const PermutationSet& set, bool add_one, int jobs) {
  TestResult r;
  r.estimates = est(d, y);
  r.permuted = permuted_estimates(set, y, est, r.estimates.size(), jobs);
  r.p_values.resize(r.estimates.size());
  for (Eigen::Index m = 0; m < r.estimates.size(); ++m)
    r.p_values[m] = permutation_p_value(r.estimates[m], r.permuted.col(m), add_one);
  r.exhaustive = set.exhaustive;
  return r;
}

struct CiOptions {
  double level = 0.95;
  double lower = -1.0, upper = 1.0;  // search range on the g-scale
  double tol = 1e-6;
};

inline CiOptions default_ci_options(Contrast kind) {
  CiOptions o;
  if (kind == Contrast::log_odds_ratio) {
    o.lower = -10.0;
    o.upper = 10.0;
  }
  return o;
}

struct ConfidenceInterval {
  double lower = std::numeric_limits<double>::quiet_NaN();
  double upper = std::numeric_limits<double>::quiet_NaN();
  bool lower_at_range = false;  // no rejection found below: bound is the search limit
  bool upper_at_range = false;
  bool empty = false;  // every probed value rejected
};

// {b : p(b) >= 1 - level} by bisection. `p_at(b)` tests H0: beta = b;
// `center` seeds the search and is normally the point estimate.
inline ConfidenceInterval invert_test(const std::function<double(double)>& p_at, double center,
                                      const CiOptions& opt) {
  if (!(opt.level > 0.0 && opt.level < 1.0)) throw InputError("confidence level must be in (0,1)");
  if (!(opt.lower < opt.upper)) throw InputError("CI search range must satisfy lo < hi");
  const double alpha = 1.0 - opt.level;
  auto accepted = [&](double b) { return p_at(b) >= alpha; };

  ConfidenceInterval ci;
  double inner_lo = std::clamp(center, opt.lower, opt.upper);
  double inner_hi = inner_lo;
  if (!accepted(inner_lo)) {
    constexpr int probes = 101;
    bool found = false;
    for (int k = 0; k < probes; ++k) {
      const double b = opt.lower + (opt.upper - opt.lower) * k / (probes - 1);
      if (accepted(b)) {
        if (!found) inner_lo = b;
        inner_hi = b;
        found = true;
      }
    }
    if (!found) {
      ci.empty = true;
      return ci;
    }
  }

  if (accepted(opt.lower)) {
    ci.lower = opt.lower;
    ci.lower_at_range = true;
  } else {
    double rej = opt.lower, acc = inner_lo;
    while (acc - rej > opt.tol) {
      const double mid = 0.5 * (rej + acc);
      (accepted(mid) ? acc : rej) = mid;
    }
    ci.lower = acc;
  }
  if (accepted(opt.upper)) {
    ci.upper = opt.upper;
    ci.upper_at_range = true;
  } else {
    double acc = inner_hi, rej = opt.upper;
    while (rej - acc > opt.tol) {
      const double mid = 0.5 * (rej + acc);
      (accepted(mid) ? acc : rej) = mid;
    }
    ci.upper = acc;
  }
  return ci;
}

// Test of H0: beta = b for one method, reusing the permuted designs.
inline double p_value_at(const TrialDesign& d, const Eigen::MatrixXd& y, Contrast kind, const BatchEstimator& est,
                         const PermutationSet& set, double b, bool add_one, int jobs) {
  const Eigen::MatrixXd shifted = remove_effect(d, y, kind, b);
  const double observed = est(d, shifted)[0];
  const Eigen::MatrixXd perm = permuted_estimates(set, shifted, est, 1, jobs);
  return permutation_p_value(observed, perm.col(0), add_one);
}

struct InferenceResult {
  Method method{};
  double estimate = 0.0;  // g-scale
  double p_value = 1.0;
  ConfidenceInterval ci;
  Eigen::VectorXd permuted_estimates;
  bool exhaustive = false;
};

// Point estimate, p-value and CI for each method. Mixed-model Wald inference
// is used for mem-a, permutation inference for every other method.
inline std::vector<InferenceResult> analyze(const TrialDesign& d, const OutcomePanel& panel,
                                            const ContrastSpec& contrast, const std::vector<Method>& methods,
                                            const PermutationPlan& plan, const CiOptions& ci_opt,
                                            bool with_ci = true) {
  check_methods(methods, contrast.kind);
  detail::check_shapes(d, panel);
  const Eigen::MatrixXd y = prepare(panel, contrast).y;
  const auto set = permuted_designs(d, plan);

  std::vector<Method> exact;
  for (Method m : methods)
    if (is_exact(m)) exact.push_back(m);
  TestResult test;
  if (!exact.empty()) test = permutation_test(d, y, method_estimator(contrast.kind, exact), set, plan.add_one, plan.jobs);

  std::vector<InferenceResult> out;
  std::size_t e = 0;
  for (Method m : methods) {
    InferenceResult r;
    r.method = m;
    if (!is_exact(m)) {
      const auto fit = mem_fit(d, y);
      const auto w = wald(fit, ci_opt.level);
      r.estimate = fit.beta_hat;
      r.p_value = w.p_value;
      r.ci.lower = w.lower;
      r.ci.upper = w.upper;
      out.push_back(std::move(r));
      continue;
    }
    const auto col = static_cast<Eigen::Index>(e++);
    r.estimate = test.estimates[col];
    r.p_value = test.p_values[col];
    r.permuted_estimates = test.permuted.col(col);
    r.exhaustive = set.exhaustive;
    if (with_ci) {
      const auto single = method_estimator(contrast.kind, {m});
      r.ci = invert_test(
          [&](double b) { return p_value_at(d, y, contrast.kind, single, set, b, plan.add_one, plan.jobs); },
          r.estimate, ci_opt);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline InferenceResult permutation_test(const TrialDesign& d, const OutcomePanel& panel,
                                        const ContrastSpec& contrast, Method method, const PermutationPlan& plan) {
  return analyze(d, panel, contrast, {method}, plan, default_ci_options(contrast.kind), false).front();
}

inline ConfidenceInterval invert_ci(const TrialDesign& d, const OutcomePanel& panel, const ContrastSpec& contrast,
                                    Method method, const PermutationPlan& plan, const CiOptions& ci_opt) {
  return analyze(d, panel, contrast, {method}, plan, ci_opt, true).front().ci;
}

}  // namespace swct
