#pragma once

// Data-generating processes for the simulation studies.
//
//   eta_ij = mu + alpha_i + theta_{s(i), j} + e_ij + beta X_ij
//   alpha_i ~ N(0, tau^2), e_ij ~ N(0, nu^2), s(i) a per-cluster coin
//   p_ij = clamp(eta, 0, 1) (identity) or expit(eta) (logit)
//   Y_ij = Binomial(K, p_ij) / K

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "swct/contrast.hpp"
#include "swct/error.hpp"
#include "swct/rng.hpp"
#include "swct/trial.hpp"

namespace swct {

enum class Link { identity, logit };

struct ScenarioConfig {
  std::string name = "custom";
  Link link = Link::identity;
  int n_clusters = 7;
  int n_periods = 8;
  int at_risk = 100;  // K
  double mu = 0.30;
  double tau = 0.06;
  double nu = 0.0;
  std::vector<std::vector<double>> theta_sets;  // one or two trends, theta[0] = 0
  double trend_mix = 0.5;                       // P(first trend) per cluster
  double beta = 0.0;
  int n_sims = 1000;
  std::uint64_t seed = 1;
  std::optional<std::vector<int>> design;  // last control periods; standard design when absent
  double sigma = 0.0;                      // residual SD, simplified model only
};

inline void validate(const ScenarioConfig& c) {
  auto fail = [&](const std::string& msg) { throw InputError("scenario " + c.name + ": " + msg); };
  if (c.n_clusters < 1 || c.n_periods < 1) fail("I and J must be >= 1");
  if (c.at_risk < 1) fail("K must be >= 1");
  if (!(c.tau >= 0.0) || !(c.nu >= 0.0) || !(c.sigma >= 0.0)) fail("standard deviations must be >= 0");
  if (c.theta_sets.empty() || c.theta_sets.size() > 2) fail("need one or two theta vectors");
  for (const auto& t : c.theta_sets) {
    if (static_cast<int>(t.size()) != c.n_periods) fail("theta vectors must have length J");
    if (t.front() != 0.0) fail("theta vectors must start with 0");
  }
  if (!(c.trend_mix >= 0.0 && c.trend_mix <= 1.0)) fail("trend_mix must be in [0,1]");
  if (c.n_sims < 1) fail("n_sims must be >= 1");
  if (c.design && static_cast<int>(c.design->size()) != c.n_clusters) fail("design length must equal I");
}

inline TrialDesign scenario_design(const ScenarioConfig& c) {
  if (c.design) return build_design(std::span<const int>(*c.design), c.n_periods);
  if (c.n_periods != c.n_clusters + 1) {
    throw InputError("scenario " + c.name + ": standard design needs J = I + 1; give an explicit design");
  }
  return standard_design(c.n_clusters);
}

inline std::string_view to_string(Link l) { return l == Link::identity ? "identity" : "logit"; }

inline Link parse_link(std::string_view s) {
  if (s == "identity") return Link::identity;
  if (s == "logit") return Link::logit;
  throw InputError("unknown link '" + std::string(s) + "'");
}

inline Contrast natural_contrast(Link l) {
  return l == Link::identity ? Contrast::risk_difference : Contrast::log_odds_ratio;
}

inline void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json{{"name", c.name},       {"link", std::string(to_string(c.link))},
                     {"I", c.n_clusters},    {"J", c.n_periods},
                     {"K", c.at_risk},       {"mu", c.mu},
                     {"tau", c.tau},         {"nu", c.nu},
                     {"theta_sets", c.theta_sets}, {"trend_mix", c.trend_mix},
                     {"beta", c.beta},       {"n_sims", c.n_sims},
                     {"seed", c.seed}};
  if (c.design) j["design"] = *c.design;
  if (c.sigma > 0.0) j["sigma"] = c.sigma;
}

inline void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  static const char* known[] = {"name", "link", "I",    "J",      "K",    "mu",     "tau",   "nu",
                                "theta_sets", "trend_mix", "beta", "n_sims", "seed", "design", "sigma"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw InputError("scenario config: unknown field '" + key + "'");
  }
  ScenarioConfig d;
  c = d;
  c.name = j.value("name", d.name);
  c.link = parse_link(j.value("link", std::string("identity")));
  c.n_clusters = j.value("I", d.n_clusters);
  c.n_periods = j.value("J", d.n_periods);
  c.at_risk = j.value("K", d.at_risk);
  c.mu = j.value("mu", d.mu);
  c.tau = j.value("tau", d.tau);
  c.nu = j.value("nu", d.nu);
  c.theta_sets = j.at("theta_sets").get<std::vector<std::vector<double>>>();
  c.trend_mix = j.value("trend_mix", d.trend_mix);
  c.beta = j.value("beta", d.beta);
  c.n_sims = j.value("n_sims", d.n_sims);
  c.seed = j.value("seed", d.seed);
  if (j.contains("design")) c.design = j.at("design").get<std::vector<int>>();
  c.sigma = j.value("sigma", d.sigma);
}

inline ScenarioConfig read_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scenario config " + path);
  try {
    auto c = nlohmann::json::parse(in).get<ScenarioConfig>();
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("scenario config " + path + ": " + e.what());
  }
}

namespace presets {

inline std::vector<double> log_of(std::initializer_list<double> v) {
  std::vector<double> out;
  for (double x : v) out.push_back(std::log(x));
  return out;
}

inline ScenarioConfig sim1(int scenario) {
  ScenarioConfig c;
  c.name = "sim1-s" + std::to_string(scenario);
  c.link = Link::identity;
  c.mu = 0.30;
  c.tau = 0.06;
  const std::vector<double> t1{0, 0.08, 0.18, 0.29, 0.30, 0.27, 0.20, 0.13};
  const std::vector<double> t2{0, 0.02, 0.03, 0.07, 0.13, 0.19, 0.27, 0.3};
  c.theta_sets = scenario <= 2 ? std::vector<std::vector<double>>{t1} : std::vector<std::vector<double>>{t1, t2};
  c.nu = scenario % 2 == 0 ? 0.01 : 0.0;
  c.beta = -0.1;
  return c;
}

inline ScenarioConfig sim2(int scenario) {
  ScenarioConfig c;
  c.name = "sim2-s" + std::to_string(scenario);
  c.link = Link::logit;
  c.mu = logit(0.30);
  c.tau = 0.1;
  const auto t1 = log_of({1, 1.43, 2.15, 3.36, 3.50, 3.09, 2.33, 1.76});
  const auto t2 = log_of({1, 1.10, 1.15, 1.37, 1.76, 2.24, 3.09, 3.50});
  c.theta_sets = scenario <= 2 ? std::vector<std::vector<double>>{t1} : std::vector<std::vector<double>>{t1, t2};
  c.nu = scenario % 2 == 0 ? 0.01 : 0.0;
  c.beta = std::log(0.66);
  return c;
}

}  // namespace presets

inline std::vector<ScenarioConfig> all_presets() {
  std::vector<ScenarioConfig> out;
  for (int s = 1; s <= 4; ++s) out.push_back(presets::sim1(s));
  for (int s = 1; s <= 4; ++s) out.push_back(presets::sim2(s));
  return out;
}

inline ScenarioConfig preset(std::string_view name) {
  for (auto& c : all_presets())
    if (c.name == name) return c;
  throw InputError("unknown preset '" + std::string(name) + "' (expected sim1-s1..4 or sim2-s1..4)");
}

namespace detail {

inline void check_dims(const ScenarioConfig& c, const TrialDesign& d) {
  validate(c);
  if (d.n_clusters() != c.n_clusters || d.n_periods() != c.n_periods)
    throw InputError("scenario " + c.name + ": design dimensions do not match I x J");
}

// Cluster intercepts and trend choice, drawn in a fixed order.
struct ClusterDraw {
  double alpha;
  const std::vector<double>* theta;
};

inline std::vector<ClusterDraw> draw_clusters(const ScenarioConfig& c, Rng& rng) {
  std::vector<ClusterDraw> out;
  for (int i = 0; i < c.n_clusters; ++i) {
    const double alpha = draw_normal(rng, 0.0, c.tau);
    const bool first = c.theta_sets.size() == 1 || draw_bernoulli(rng, c.trend_mix);
    out.push_back({alpha, first ? &c.theta_sets[0] : &c.theta_sets[1]});
  }
  return out;
}

}  // namespace detail

inline OutcomePanel generate(const ScenarioConfig& c, const TrialDesign& d, std::uint64_t rep) {
  detail::check_dims(c, d);
  auto rng = make_stream(c.seed, rep, 0);
  const auto clusters = detail::draw_clusters(c, rng);
  Eigen::MatrixXi events(c.n_clusters, c.n_periods);
  const Eigen::MatrixXi at_risk = Eigen::MatrixXi::Constant(c.n_clusters, c.n_periods, c.at_risk);
  for (int i = 0; i < c.n_clusters; ++i) {
    for (int j = 1; j <= c.n_periods; ++j) {
      const double eta = c.mu + clusters[i].alpha + (*clusters[i].theta)[j - 1] + draw_normal(rng, 0.0, c.nu) +
                         (d.treated(i, j) ? c.beta : 0.0);
      const double p = c.link == Link::identity ? std::clamp(eta, 0.0, 1.0) : expit(eta);
      events(i, j - 1) = draw_binomial(rng, c.at_risk, p);
    }
  }
  return OutcomePanel::from_counts(events, at_risk);
}

// Y = mu + alpha_i + theta_j + beta X + eps, eps ~ N(0, sigma^2) independent
// of alpha; no binomial layer and no truncation.
inline OutcomePanel generate_simplified(const ScenarioConfig& c, const TrialDesign& d, std::uint64_t rep) {
  detail::check_dims(c, d);
  if (c.link != Link::identity) throw InputError("simplified model needs the identity link");
  auto rng = make_stream(c.seed, rep, 1);
  const auto clusters = detail::draw_clusters(c, rng);
  Eigen::MatrixXd y(c.n_clusters, c.n_periods);
  for (int i = 0; i < c.n_clusters; ++i)
    for (int j = 1; j <= c.n_periods; ++j)
      y(i, j - 1) = c.mu + clusters[i].alpha + (*clusters[i].theta)[j - 1] + (d.treated(i, j) ? c.beta : 0.0) +
                    draw_normal(rng, 0.0, c.sigma);
  return OutcomePanel::from_means(std::move(y));
}

}  // namespace swct
