#pragma once

// Scenario-grid runner: operating characteristics (mean, SD, bias, Type I
// error or power, CI coverage) and the method x method covariance of
// estimates over simulated replicates.
//
// Coverage is decided by the test at the true effect: the interval from test
// inversion contains beta exactly when H0: beta = beta_true is not rejected,
// so no bisection is needed per replicate.

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "swct/contrast.hpp"
#include "swct/inference.hpp"
#include "swct/mem.hpp"
#include "swct/methods.hpp"
#include "swct/parallel.hpp"
#include "swct/rng.hpp"
#include "swct/simgen.hpp"

namespace swct {

struct GridOptions {
  std::vector<Method> methods = nonparametric_methods();
  int n_permutations = 500;
  bool inference = true;  // false: point estimates only
  bool coverage = true;
  double alpha = 0.05;
  bool add_one = false;
  int jobs = 1;
};

struct Replicate {
  Eigen::VectorXd estimate;  // NaN where the method failed
  Eigen::VectorXd p_value;
  std::vector<signed char> rejected;  // -1 unknown
  std::vector<signed char> covered;
};

struct MetricValue {
  double value = std::numeric_limits<double>::quiet_NaN();
  double mc_se = std::numeric_limits<double>::quiet_NaN();
  bool present = false;
};

struct MethodMetrics {
  Method method{};
  int n_sims = 0;
  int n_failed = 0;
  MetricValue mean, sd, bias, type1_error, power, coverage;
};

struct ScenarioReport {
  std::string label;
  ScenarioConfig config;
  std::vector<Method> methods;
  std::vector<MethodMetrics> metrics;
  Eigen::MatrixXd covariance;  // over replicates where every method succeeded
  int covariance_n = 0;
  std::vector<Replicate> replicates;
  std::vector<std::string> notes;
};

inline std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline std::string scenario_label(const ScenarioConfig& c) { return c.name + ":beta=" + format_number(c.beta); }

namespace detail {

// Estimates with per-method failure isolation: NaN for a method that throws.
inline Eigen::VectorXd estimate_tolerant(const TrialDesign& d, const Eigen::MatrixXd& y, Contrast kind,
                                         const std::vector<Method>& methods) {
  try {
    return estimate_all(d, y, kind, methods);
  } catch (const std::exception&) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(methods.size()));
    for (std::size_t k = 0; k < methods.size(); ++k) {
      try {
        out[static_cast<Eigen::Index>(k)] = estimate_all(d, y, kind, {methods[k]})[0];
      } catch (const std::exception&) {
        out[static_cast<Eigen::Index>(k)] = std::numeric_limits<double>::quiet_NaN();
      }
    }
    return out;
  }
}

// p-values per method; NaN if the observed or any permuted estimate failed.
inline Eigen::VectorXd tolerant_p_values(const TrialDesign& d, const Eigen::MatrixXd& y, Contrast kind,
                                         const std::vector<Method>& methods, const PermutationSet& set,
                                         bool add_one, Eigen::VectorXd* observed_out = nullptr) {
  const auto m = static_cast<Eigen::Index>(methods.size());
  const Eigen::VectorXd observed = estimate_tolerant(d, y, kind, methods);
  Eigen::MatrixXd perm(static_cast<Eigen::Index>(set.designs.size()), m);
  for (std::size_t p = 0; p < set.designs.size(); ++p)
    perm.row(static_cast<Eigen::Index>(p)) = estimate_tolerant(set.designs[p], y, kind, methods).transpose();
  Eigen::VectorXd out(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    out[k] = (std::isnan(observed[k]) || perm.col(k).hasNaN())
                 ? std::numeric_limits<double>::quiet_NaN()
                 : permutation_p_value(observed[k], perm.col(k), add_one);
  }
  if (observed_out) *observed_out = observed;
  return out;
}

inline MetricValue mean_metric(const std::vector<double>& x) {
  MetricValue m;
  if (x.empty()) return m;
  double s = 0;
  for (double v : x) s += v;
  m.value = s / x.size();
  double ss = 0;
  for (double v : x) ss += (v - m.value) * (v - m.value);
  const double sd = x.size() > 1 ? std::sqrt(ss / (x.size() - 1)) : 0.0;
  m.mc_se = sd / std::sqrt(static_cast<double>(x.size()));
  m.present = true;
  return m;
}

inline MetricValue rate_metric(const std::vector<signed char>& flags) {
  MetricValue m;
  int n = 0, hits = 0;
  for (auto f : flags) {
    if (f < 0) continue;
    ++n;
    hits += f;
  }
  if (n == 0) return m;
  m.value = static_cast<double>(hits) / n;
  m.mc_se = std::sqrt(m.value * (1.0 - m.value) / n);
  m.present = true;
  return m;
}

}  // namespace detail

inline ScenarioReport run_scenario(const ScenarioConfig& config, const GridOptions& opt) {
  validate(config);
  if (opt.methods.empty()) throw InputError("no methods selected");
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw InputError("alpha must be in (0,1)");
  ScenarioReport rep;
  rep.config = config;
  rep.label = scenario_label(config);
  const Contrast kind = natural_contrast(config.link);
  for (Method m : opt.methods) {
    if (kind == Contrast::log_odds_ratio && is_mixed_model(m)) {
      rep.notes.push_back(std::string(to_string(m)) + " skipped: identity-link model under a logit-link scenario");
      continue;
    }
    rep.methods.push_back(m);
  }
  if (rep.methods.empty()) throw InputError("scenario " + config.name + ": no applicable methods");
  const auto design = scenario_design(config);

  std::vector<Method> exact, wald_methods;
  for (Method m : rep.methods) (is_exact(m) ? exact : wald_methods).push_back(m);
  const auto nm = static_cast<Eigen::Index>(rep.methods.size());

  rep.replicates.resize(config.n_sims);
  parallel_for(static_cast<std::size_t>(config.n_sims), opt.jobs, [&](std::size_t r) {
    Replicate out;
    out.p_value = Eigen::VectorXd::Constant(nm, std::numeric_limits<double>::quiet_NaN());
    out.rejected.assign(nm, -1);
    out.covered.assign(nm, -1);
    const auto panel = generate(config, design, r);
    const Eigen::MatrixXd y = prepare(panel, {kind, {}}).y;

    if (!opt.inference) {
      out.estimate = detail::estimate_tolerant(design, y, kind, rep.methods);
      rep.replicates[r] = std::move(out);
      return;
    }

    out.estimate = Eigen::VectorXd::Constant(nm, std::numeric_limits<double>::quiet_NaN());
    PermutationPlan plan;
    plan.n_permutations = opt.n_permutations;
    plan.seed = mix_seed(mix_seed(config.seed, r), 0x7065726dULL);
    plan.add_one = opt.add_one;
    const auto set = permuted_designs(design, plan);

    Eigen::VectorXd observed;
    Eigen::VectorXd p0, p_true;
    if (!exact.empty()) {
      p0 = detail::tolerant_p_values(design, y, kind, exact, set, opt.add_one, &observed);
      if (opt.coverage && config.beta != 0.0) {
        p_true = detail::tolerant_p_values(design, remove_effect(design, y, kind, config.beta), kind, exact, set,
                                           opt.add_one);
      } else {
        p_true = p0;
      }
    }
    Eigen::Index e = 0;
    for (Eigen::Index k = 0; k < nm; ++k) {
      const Method m = rep.methods[k];
      if (is_exact(m)) {
        out.estimate[k] = observed[e];
        out.p_value[k] = p0[e];
        if (!std::isnan(p0[e])) out.rejected[k] = p0[e] < opt.alpha;
        if (opt.coverage && !std::isnan(p_true[e])) out.covered[k] = p_true[e] >= opt.alpha;
        ++e;
        continue;
      }
      try {
        const auto fit = mem_fit(design, y);
        const auto w = wald(fit, 1.0 - opt.alpha);
        out.estimate[k] = fit.beta_hat;
        out.p_value[k] = w.p_value;
        out.rejected[k] = w.p_value < opt.alpha;
        if (opt.coverage) out.covered[k] = w.lower <= config.beta && config.beta <= w.upper;
      } catch (const std::exception&) {
      }
    }
    rep.replicates[r] = std::move(out);
  });

  // Metrics.
  const bool null_effect = config.beta == 0.0;
  for (Eigen::Index k = 0; k < nm; ++k) {
    MethodMetrics mm;
    mm.method = rep.methods[k];
    std::vector<double> est;
    std::vector<signed char> rej, cov;
    for (const auto& r : rep.replicates) {
      const bool failed = std::isnan(r.estimate[k]) || (opt.inference && r.rejected[k] < 0);
      if (failed) {
        ++mm.n_failed;
        continue;
      }
      est.push_back(r.estimate[k]);
      rej.push_back(r.rejected[k]);
      cov.push_back(r.covered[k]);
    }
    mm.n_sims = static_cast<int>(est.size());
    mm.mean = detail::mean_metric(est);
    if (mm.mean.present) {
      mm.bias = mm.mean;
      mm.bias.value -= config.beta;
      double ss = 0;
      for (double v : est) ss += (v - mm.mean.value) * (v - mm.mean.value);
      const double n = static_cast<double>(est.size());
      mm.sd.value = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
      mm.sd.mc_se = n > 1 ? mm.sd.value / std::sqrt(2.0 * (n - 1)) : 0.0;
      mm.sd.present = true;
    }
    if (opt.inference) {
      (null_effect ? mm.type1_error : mm.power) = detail::rate_metric(rej);
      if (opt.coverage) mm.coverage = detail::rate_metric(cov);
    }
    rep.metrics.push_back(mm);
  }

  // Covariance over complete replicates.
  std::vector<const Replicate*> complete;
  for (const auto& r : rep.replicates)
    if (!r.estimate.hasNaN()) complete.push_back(&r);
  rep.covariance_n = static_cast<int>(complete.size());
  rep.covariance = Eigen::MatrixXd::Zero(nm, nm);
  if (complete.size() > 1) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(complete.size()), nm);
    for (std::size_t r = 0; r < complete.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = complete[r]->estimate;
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    rep.covariance = (centered.transpose() * centered) / (x.rows() - 1.0);
    rep.covariance = 0.5 * (rep.covariance + rep.covariance.transpose());
  }
  return rep;
}

inline std::vector<ScenarioReport> run_grid(const std::vector<ScenarioConfig>& configs, const GridOptions& opt) {
  if (configs.empty()) throw InputError("no scenarios");
  std::vector<ScenarioReport> out;
  for (const auto& c : configs) out.push_back(run_scenario(c, opt));
  return out;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<ScenarioReport>& reports) {
  os << "scenario,method,metric,value,mc_se\n";
  for (const auto& rep : reports) {
    for (const auto& m : rep.metrics) {
      auto row = [&](const char* name, const MetricValue& v) {
        if (!v.present) return;
        os << rep.label << ',' << to_string(m.method) << ',' << name << ',' << format_number(v.value) << ','
           << format_number(v.mc_se) << '\n';
      };
      row("mean", m.mean);
      row("sd", m.sd);
      row("bias", m.bias);
      row("type1_error", m.type1_error);
      row("power", m.power);
      row("coverage", m.coverage);
      os << rep.label << ',' << to_string(m.method) << ",n_sims," << m.n_sims << ",0\n";
      os << rep.label << ',' << to_string(m.method) << ",n_failed," << m.n_failed << ",0\n";
    }
  }
}

inline void write_covariance_csv(std::ostream& os, const std::vector<ScenarioReport>& reports) {
  os << "scenario,method_a,method_b,covariance,n\n";
  for (const auto& rep : reports) {
    for (std::size_t a = 0; a < rep.methods.size(); ++a)
      for (std::size_t b = 0; b < rep.methods.size(); ++b)
        os << rep.label << ',' << to_string(rep.methods[a]) << ',' << to_string(rep.methods[b]) << ','
           << format_number(rep.covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))) << ','
           << rep.covariance_n << '\n';
  }
}

inline void write_estimates_csv(std::ostream& os, const std::vector<ScenarioReport>& reports) {
  os << "scenario,replicate,method,estimate,p_value,rejected,covered\n";
  auto flag = [](signed char f) { return f < 0 ? std::string("NA") : std::to_string(int(f)); };
  auto num = [](double x) { return std::isnan(x) ? std::string("NA") : format_number(x); };
  for (const auto& rep : reports) {
    for (std::size_t r = 0; r < rep.replicates.size(); ++r) {
      const auto& x = rep.replicates[r];
      for (std::size_t k = 0; k < rep.methods.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        os << rep.label << ',' << r << ',' << to_string(rep.methods[k]) << ',' << num(x.estimate[i]) << ','
           << num(x.p_value.size() ? x.p_value[i] : std::nan("")) << ','
           << flag(x.rejected.empty() ? -1 : x.rejected[k]) << ',' << flag(x.covered.empty() ? -1 : x.covered[k])
           << '\n';
      }
    }
  }
}

}  // namespace swct
