#pragma once

// Non-parametric point estimators for stepped-wedge trials:
//   npwp  within-period treated-vs-control contrasts, inverse-variance pooled
//   sc    synthetic-control contrasts per treated cluster-period
//   co    crossover contrasts of consecutive-period changes
//   cosc  synthetic control fitted on the consecutive-period change series
//   ensemble  fixed-weight average of finished estimates
//
// Every estimate is a normalized weighted sum of components, so
// beta_hat = sum(weight * estimate) with the weights summing to one.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "swct/contrast.hpp"
#include "swct/error.hpp"
#include "swct/simplex_lsq.hpp"
#include "swct/trial.hpp"

namespace swct {

struct WeightScheme {
  enum class Kind {
    equal,
    inverse_variance,
    inverse_mspe_within_step,
    harmonic_mean,
    harmonic_mean_pooled,
    first_period_only,
    user,
  };

  Kind kind = Kind::equal;
  std::vector<double> user_weights;  // one per component, in component order

  static WeightScheme equal() { return {Kind::equal, {}}; }
  static WeightScheme inverse_variance() { return {Kind::inverse_variance, {}}; }
  static WeightScheme inverse_mspe_within_step() { return {Kind::inverse_mspe_within_step, {}}; }
  static WeightScheme harmonic_mean() { return {Kind::harmonic_mean, {}}; }
  static WeightScheme harmonic_mean_pooled() { return {Kind::harmonic_mean_pooled, {}}; }
  static WeightScheme first_period_only() { return {Kind::first_period_only, {}}; }
  static WeightScheme user(std::vector<double> w) {
    if (w.empty()) throw InputError("user weights are empty");
    bool any_positive = false;
    for (double x : w) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw InputError("user weights must be finite and nonnegative");
      any_positive = any_positive || x > 0.0;
    }
    if (!any_positive) throw InputError("user weights are all zero");
    return {Kind::user, std::move(w)};
  }
};

inline std::string_view to_string(WeightScheme::Kind k) {
  switch (k) {
    case WeightScheme::Kind::equal: return "equal";
    case WeightScheme::Kind::inverse_variance: return "inverse_variance";
    case WeightScheme::Kind::inverse_mspe_within_step: return "inverse_mspe_within_step";
    case WeightScheme::Kind::harmonic_mean: return "harmonic_mean";
    case WeightScheme::Kind::harmonic_mean_pooled: return "harmonic_mean_pooled";
    case WeightScheme::Kind::first_period_only: return "first_period_only";
    case WeightScheme::Kind::user: return "user";
  }
  return "?";
}

struct Component {
  std::string label;
  int cluster = -1;  // -1 when the component pools clusters
  int period = 0;    // 0 when the component pools periods
  double estimate = 0.0;
  double weight = 0.0;  // normalized
  double mspe = std::numeric_limits<double>::quiet_NaN();
  bool fallback = false;
};

struct EstimateResult {
  double beta_hat = 0.0;
  std::vector<Component> components;
  std::vector<std::pair<int, int>> clamped;  // (cluster, period) cells moved off 0/1
  std::vector<std::string> notes;
};

enum class CrossoverVariant { controls_only, pooled };

namespace detail {

inline void finish(EstimateResult& r, const std::vector<double>& raw) {
  if (raw.size() != r.components.size()) throw EstimationError("internal: weight count mismatch");
  double total = 0.0;
  for (double w : raw) total += w;
  if (!(total > 0.0) || !std::isfinite(total)) throw EstimationError("combination weights sum to zero");
  r.beta_hat = 0.0;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    r.components[k].weight = raw[k] / total;
    r.beta_hat += r.components[k].weight * r.components[k].estimate;
  }
}

inline const std::vector<double>& user_weights_for(const WeightScheme& scheme, std::size_t n,
                                                   std::string_view method) {
  if (scheme.user_weights.size() != n) {
    throw InputError(std::string(method) + ": " + std::to_string(scheme.user_weights.size()) +
                     " user weights for " + std::to_string(n) + " components");
  }
  return scheme.user_weights;
}

[[noreturn]] inline void unsupported(const WeightScheme& scheme, std::string_view method) {
  throw InputError(std::string(method) + " does not support weight scheme " +
                   std::string(to_string(scheme.kind)));
}

// ---------------------------------------------------------------- NPWP

struct WithinPeriod {
  int period;
  int n_control;
  int n_treated;
  double estimate;
  double pooled_ss;  // (n0-1) s0^2 + (n1-1) s1^2
};

inline std::vector<WithinPeriod> within_periods(const TrialDesign& d, const Eigen::MatrixXd& y,
                                                Contrast kind) {
  std::vector<WithinPeriod> out;
  const int n_clusters = d.n_clusters();
  for (int j = 1; j <= d.n_periods(); ++j) {
    double sum_t = 0, sum_c = 0;
    int n_t = 0, n_c = 0;
    for (int i = 0; i < n_clusters; ++i) {
      if (d.treated(i, j)) {
        sum_t += y(i, j - 1);
        ++n_t;
      } else {
        sum_c += y(i, j - 1);
        ++n_c;
      }
    }
    if (n_c == 0 || n_c == n_clusters) continue;
    const double mean_t = sum_t / n_t, mean_c = sum_c / n_c;
    double ss = 0.0;
    for (int i = 0; i < n_clusters; ++i) {
      const double dev = y(i, j - 1) - (d.treated(i, j) ? mean_t : mean_c);
      ss += dev * dev;
    }
    out.push_back({j, n_c, n_t, apply(kind, mean_t, mean_c), ss});
  }
  return out;
}

inline EstimateResult combine_npwp(const TrialDesign& d, const std::vector<WithinPeriod>& periods,
                                   const WeightScheme& scheme, double y_scale) {
  if (periods.empty()) throw EstimationError("npwp: no period has both control and intervention clusters");
  EstimateResult r;
  for (const auto& p : periods) {
    Component c;
    c.label = "period " + std::to_string(p.period);
    c.period = p.period;
    c.estimate = p.estimate;
    r.components.push_back(std::move(c));
  }
  std::vector<double> raw(periods.size(), 1.0);
  switch (scheme.kind) {
    case WeightScheme::Kind::equal:
      break;
    case WeightScheme::Kind::inverse_variance: {
      // The J-2 divisor is common to every period and cancels on normalization.
      const double divisor = d.n_periods() > 2 ? d.n_periods() - 2.0 : 1.0;
      const double floor = 1e-20 * std::max(1.0, y_scale);
      bool degenerate = false;
      for (const auto& p : periods) degenerate = degenerate || p.pooled_ss <= floor;
      if (degenerate) {
        r.notes.push_back("npwp: zero pooled variance in some period; equal period weights used");
        break;
      }
      for (std::size_t k = 0; k < periods.size(); ++k) {
        const auto& p = periods[k];
        raw[k] = 1.0 / ((p.pooled_ss / divisor) * (1.0 / p.n_control + 1.0 / p.n_treated));
      }
      break;
    }
    case WeightScheme::Kind::user:
      raw = user_weights_for(scheme, periods.size(), "npwp");
      break;
    default:
      unsupported(scheme, "npwp");
  }
  finish(r, raw);
  return r;
}

// ---------------------------------------------------------------- SC

struct SyntheticCell {
  int cluster;
  int period;
  int step;  // the cluster's last control period j_i
  double outcome;
  double synthetic;
  double estimate;
  double mspe;  // NaN when there are no pre-periods
  bool fallback;
  std::vector<int> donors;
  std::optional<simplex::Fit> fit;
};

// Donor-pool mean with the MSPE of that equal-weight synthetic control.
inline void donor_mean_fallback(SyntheticCell& c, const Eigen::VectorXd& target, const Eigen::MatrixXd& pre,
                                const Eigen::VectorXd& now) {
  c.fallback = true;
  c.synthetic = now.mean();
  if (pre.rows() > 0) {
    const Eigen::VectorXd eq = Eigen::VectorXd::Constant(pre.cols(), 1.0 / pre.cols());
    c.mspe = simplex::mspe(eq, target, pre);
  }
}

// Synthetic control for series `series` (cluster x column) of the target
// cluster against `donors` over pre-columns [first_col, first_col + n_pre),
// evaluated at column `now_col`.
inline void fit_synthetic(SyntheticCell& c, const Eigen::MatrixXd& series, int first_col, int n_pre,
                          int now_col) {
  const int n_donors = static_cast<int>(c.donors.size());
  Eigen::VectorXd target(n_pre);
  Eigen::MatrixXd pre(n_pre, n_donors);
  Eigen::VectorXd now(n_donors);
  for (int t = 0; t < n_pre; ++t) target[t] = series(c.cluster, first_col + t);
  for (int n = 0; n < n_donors; ++n) {
    for (int t = 0; t < n_pre; ++t) pre(t, n) = series(c.donors[n], first_col + t);
    now[n] = series(c.donors[n], now_col);
  }
  c.mspe = std::numeric_limits<double>::quiet_NaN();
  if (n_pre == 0) {
    donor_mean_fallback(c, target, pre, now);
    return;
  }
  simplex::Fit fit = simplex::solve(target, pre);
  if (!fit.converged) {
    donor_mean_fallback(c, target, pre, now);
    c.fit = std::move(fit);
    return;
  }
  c.fallback = false;
  c.synthetic = fit.weights.dot(now);
  c.mspe = fit.mspe;
  c.fit = std::move(fit);
}

inline SyntheticCell synthetic_cell(const TrialDesign& d, const Eigen::MatrixXd& y, Contrast kind, int cluster,
                                    int period) {
  if (cluster < 0 || cluster >= d.n_clusters() || period < 1 || period > d.n_periods())
    throw InputError("sc_cell: cluster/period out of range");
  if (!d.treated(cluster, period)) throw InputError("sc_cell: target cluster-period is on control");
  SyntheticCell c{};
  c.cluster = cluster;
  c.period = period;
  c.step = d.last_control(cluster);
  c.outcome = y(cluster, period - 1);
  for (int m = 0; m < d.n_clusters(); ++m)
    if (!d.treated(m, period)) c.donors.push_back(m);
  if (c.donors.empty()) throw EstimationError("sc_cell: empty donor pool in period " + std::to_string(period));
  // Donors on control in `period` are on control in every earlier period.
  for (int m : c.donors) {
    if (d.last_control(m) < c.step) throw EstimationError("internal: donor not on control in pre-periods");
  }
  fit_synthetic(c, y, 0, c.step, period - 1);
  c.estimate = apply(kind, c.outcome, c.synthetic);
  return c;
}

inline std::vector<SyntheticCell> synthetic_cells(const TrialDesign& d, const Eigen::MatrixXd& y, Contrast kind) {
  std::vector<SyntheticCell> cells;
  for (int j = 1; j <= d.n_periods(); ++j) {
    const int n_c = d.n_control(j);
    if (n_c == 0 || n_c == d.n_clusters()) continue;
    for (int i = 0; i < d.n_clusters(); ++i)
      if (d.treated(i, j)) cells.push_back(synthetic_cell(d, y, kind, i, j));
  }
  return cells;
}

// Inverse-MSPE normalized within each crossover step, steps weighted equally.
// Steps with no pre-periods get equal weights within the step.
template <class Cell>
std::vector<double> inverse_mspe_within_step(const std::vector<Cell>& cells, std::string_view method) {
  std::map<int, std::vector<std::size_t>> steps;
  for (std::size_t k = 0; k < cells.size(); ++k) steps[cells[k].step].push_back(k);
  std::vector<double> raw(cells.size(), 0.0);
  bool any_mspe = false;
  for (const auto& [step, members] : steps) {
    bool have_mspe = true;
    for (auto k : members) have_mspe = have_mspe && std::isfinite(cells[k].mspe);
    double total = 0.0;
    for (auto k : members) {
      raw[k] = have_mspe ? 1.0 / std::max(cells[k].mspe, 1e-12) : 1.0;
      total += raw[k];
    }
    for (auto k : members) raw[k] /= total;
    any_mspe = any_mspe || have_mspe;
  }
  if (!any_mspe) {
    throw EstimationError(std::string(method) +
                          ": inverse-MSPE weights undefined, no synthetic control has pre-periods");
  }
  return raw;
}

inline EstimateResult combine_sc(const std::vector<SyntheticCell>& cells, const WeightScheme& scheme) {
  if (cells.empty()) throw EstimationError("sc: no treated cluster-period has control donors");
  EstimateResult r;
  for (const auto& c : cells) {
    Component comp;
    comp.label = "cluster " + std::to_string(c.cluster) + ", period " + std::to_string(c.period);
    comp.cluster = c.cluster;
    comp.period = c.period;
    comp.estimate = c.estimate;
    comp.mspe = c.mspe;
    comp.fallback = c.fallback;
    r.components.push_back(std::move(comp));
  }
  std::vector<double> raw(cells.size(), 1.0);
  switch (scheme.kind) {
    case WeightScheme::Kind::equal:
      break;
    case WeightScheme::Kind::inverse_mspe_within_step:
      raw = inverse_mspe_within_step(cells, "sc");
      break;
    case WeightScheme::Kind::first_period_only: {
      bool any = false;
      for (std::size_t k = 0; k < cells.size(); ++k) {
        raw[k] = cells[k].period == cells[k].step + 1 ? 1.0 : 0.0;
        any = any || raw[k] > 0.0;
      }
      if (!any) throw EstimationError("sc: no first-period-on-intervention cells");
      break;
    }
    case WeightScheme::Kind::user:
      raw = user_weights_for(scheme, cells.size(), "sc");
      break;
    default:
      unsupported(scheme, "sc");
  }
  finish(r, raw);
  return r;
}

// ---------------------------------------------------------------- CO

// D_{i,j} = g(Y_{i,j}, Y_{i,j-1}); column 0 is unused.
inline Eigen::MatrixXd consecutive_contrasts(const Eigen::MatrixXd& y, Contrast kind) {
  Eigen::MatrixXd dd = Eigen::MatrixXd::Zero(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 1; j < y.cols(); ++j) dd(i, j) = apply(kind, y(i, j), y(i, j - 1));
  return dd;
}

struct CrossoverPeriod {
  int period;
  int n_control, n_crossing, n_treated;
  double controls_only;  // NaN when not eligible
  double pooled;         // NaN when not eligible
};

inline std::vector<CrossoverPeriod> crossover_periods(const TrialDesign& d, const Eigen::MatrixXd& dd) {
  std::vector<CrossoverPeriod> out;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int j = 2; j <= d.n_periods(); ++j) {
    double s0 = 0, s1 = 0, s2 = 0;
    int n0 = 0, n1 = 0, n2 = 0;
    for (int i = 0; i < d.n_clusters(); ++i) {
      const double v = dd(i, j - 1);
      if (!d.treated(i, j)) {
        s0 += v;
        ++n0;
      } else if (!d.treated(i, j - 1)) {
        s1 += v;
        ++n1;
      } else {
        s2 += v;
        ++n2;
      }
    }
    if (n1 == 0) continue;
    const double cross = s1 / n1;
    CrossoverPeriod p{j, n0, n1, n2, nan, nan};
    if (n0 > 0) p.controls_only = cross - s0 / n0;
    if (n0 + n2 > 0) p.pooled = cross - (s0 + s2) / (n0 + n2);
    out.push_back(p);
  }
  return out;
}

inline EstimateResult combine_co(const std::vector<CrossoverPeriod>& periods, CrossoverVariant variant,
                                 const WeightScheme& scheme) {
  EstimateResult r;
  std::vector<const CrossoverPeriod*> used;
  for (const auto& p : periods) {
    const double est = variant == CrossoverVariant::controls_only ? p.controls_only : p.pooled;
    if (std::isnan(est)) continue;
    used.push_back(&p);
    Component c;
    c.label = "period " + std::to_string(p.period);
    c.period = p.period;
    c.estimate = est;
    r.components.push_back(std::move(c));
  }
  if (used.empty()) throw EstimationError("co: no period has both crossing and comparison clusters");
  std::vector<double> raw(used.size(), 1.0);
  switch (scheme.kind) {
    case WeightScheme::Kind::equal:
      break;
    case WeightScheme::Kind::harmonic_mean:
      for (std::size_t k = 0; k < used.size(); ++k) {
        if (used[k]->n_control == 0) throw EstimationError("co: harmonic-mean weight needs control clusters");
        raw[k] = 1.0 / (1.0 / used[k]->n_control + 1.0 / used[k]->n_crossing);
      }
      break;
    case WeightScheme::Kind::harmonic_mean_pooled:
      for (std::size_t k = 0; k < used.size(); ++k)
        raw[k] = 1.0 / (1.0 / (used[k]->n_control + used[k]->n_treated) + 1.0 / used[k]->n_crossing);
      break;
    case WeightScheme::Kind::user:
      raw = user_weights_for(scheme, used.size(), "co");
      break;
    default:
      unsupported(scheme, "co");
  }
  finish(r, raw);
  return r;
}

// ---------------------------------------------------------------- COSC

inline std::vector<SyntheticCell> crossover_synthetic_cells(const TrialDesign& d, const Eigen::MatrixXd& dd) {
  std::vector<SyntheticCell> cells;
  for (int i = 0; i < d.n_clusters(); ++i) {
    const int step = d.last_control(i);
    const int j = step + 1;
    if (step < 1 || j > d.n_periods()) continue;
    SyntheticCell c{};
    c.cluster = i;
    c.period = j;
    c.step = step;
    for (int m = 0; m < d.n_clusters(); ++m)
      if (d.last_control(m) >= j) c.donors.push_back(m);
    if (c.donors.empty()) continue;
    // D-series columns 2..j_i (0-based 1..step-1) are pre-crossover for i and donors.
    fit_synthetic(c, dd, 1, step - 1, j - 1);
    c.outcome = dd(i, j - 1);
    c.estimate = c.outcome - c.synthetic;
    cells.push_back(std::move(c));
  }
  return cells;
}

inline EstimateResult combine_cosc(const std::vector<SyntheticCell>& cells, const WeightScheme& scheme) {
  if (cells.empty()) throw EstimationError("cosc: no cluster crosses over after period 1 with controls present");
  EstimateResult r;
  for (const auto& c : cells) {
    Component comp;
    comp.label = "cluster " + std::to_string(c.cluster);
    comp.cluster = c.cluster;
    comp.period = c.period;
    comp.estimate = c.estimate;
    comp.mspe = c.mspe;
    comp.fallback = c.fallback;
    r.components.push_back(std::move(comp));
  }
  std::vector<double> raw(cells.size(), 1.0);
  switch (scheme.kind) {
    case WeightScheme::Kind::equal:
      break;
    case WeightScheme::Kind::inverse_mspe_within_step:
      raw = inverse_mspe_within_step(cells, "cosc");
      break;
    case WeightScheme::Kind::user:
      raw = user_weights_for(scheme, cells.size(), "cosc");
      break;
    default:
      unsupported(scheme, "cosc");
  }
  finish(r, raw);
  return r;
}

inline double y_scale(const Eigen::MatrixXd& y) { return y.squaredNorm(); }

inline void check_shapes(const TrialDesign& d, const OutcomePanel& p) {
  if (p.n_clusters() != d.n_clusters() || p.n_periods() != d.n_periods())
    throw InputError("panel shape does not match design");
}

}  // namespace detail

inline EstimateResult npwp(const TrialDesign& design, const OutcomePanel& panel, const ContrastSpec& contrast,
                           const WeightScheme& scheme = WeightScheme::inverse_variance()) {
  detail::check_shapes(design, panel);
  auto prep = prepare(panel, contrast);
  auto r = detail::combine_npwp(design, detail::within_periods(design, prep.y, contrast.kind), scheme,
                                detail::y_scale(prep.y));
  r.clamped = std::move(prep.clamped);
  return r;
}

struct ScCellResult {
  double beta;
  double synthetic;
  std::optional<simplex::Fit> fit;
  bool fallback;
  std::vector<int> donors;
};

inline ScCellResult sc_cell(const TrialDesign& design, const OutcomePanel& panel, int cluster, int period,
                            const ContrastSpec& contrast) {
  detail::check_shapes(design, panel);
  const auto prep = prepare(panel, contrast);
  auto c = detail::synthetic_cell(design, prep.y, contrast.kind, cluster, period);
  return {c.estimate, c.synthetic, std::move(c.fit), c.fallback, std::move(c.donors)};
}

// SC-1: equal weights. SC-2: inverse_mspe_within_step.
inline EstimateResult sc(const TrialDesign& design, const OutcomePanel& panel, const ContrastSpec& contrast,
                         const WeightScheme& scheme = WeightScheme::equal()) {
  detail::check_shapes(design, panel);
  auto prep = prepare(panel, contrast);
  auto r = detail::combine_sc(detail::synthetic_cells(design, prep.y, contrast.kind), scheme);
  r.clamped = std::move(prep.clamped);
  return r;
}

// CO-1: controls_only + equal. CO-2: controls_only + harmonic_mean.
// CO-3: pooled + equal.
inline EstimateResult co(const TrialDesign& design, const OutcomePanel& panel, const ContrastSpec& contrast,
                         CrossoverVariant variant, const WeightScheme& scheme = WeightScheme::equal()) {
  detail::check_shapes(design, panel);
  auto prep = prepare(panel, contrast);
  auto dd = detail::consecutive_contrasts(prep.y, contrast.kind);
  auto r = detail::combine_co(detail::crossover_periods(design, dd), variant, scheme);
  r.clamped = std::move(prep.clamped);
  return r;
}

// COSC-1: equal. COSC-2: inverse_mspe_within_step.
inline EstimateResult cosc(const TrialDesign& design, const OutcomePanel& panel, const ContrastSpec& contrast,
                           const WeightScheme& scheme = WeightScheme::equal()) {
  detail::check_shapes(design, panel);
  auto prep = prepare(panel, contrast);
  auto dd = detail::consecutive_contrasts(prep.y, contrast.kind);
  auto r = detail::combine_cosc(detail::crossover_synthetic_cells(design, dd), scheme);
  r.clamped = std::move(prep.clamped);
  return r;
}

struct WeightedEstimate {
  std::string label;
  double beta_hat;
  double weight;
};

inline EstimateResult ensemble(std::span<const WeightedEstimate> parts) {
  if (parts.empty()) throw InputError("ensemble: no component estimates");
  EstimateResult r;
  std::vector<double> raw;
  for (const auto& p : parts) {
    if (!(p.weight >= 0.0) || !std::isfinite(p.weight)) throw InputError("ensemble: weights must be nonnegative");
    Component c;
    c.label = p.label;
    c.estimate = p.beta_hat;
    r.components.push_back(std::move(c));
    raw.push_back(p.weight);
  }
  detail::finish(r, raw);
  return r;
}

inline EstimateResult ensemble(std::initializer_list<WeightedEstimate> parts) {
  return ensemble(std::span<const WeightedEstimate>(parts.begin(), parts.size()));
}

}  // namespace swct
