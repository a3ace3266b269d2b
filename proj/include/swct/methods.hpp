#pragma once

// Named analysis methods and a batch evaluator that shares work between them
// (one set of synthetic-control fits serves SC-1, SC-2 and ENS).

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "swct/contrast.hpp"
#include "swct/error.hpp"
#include "swct/estimators.hpp"
#include "swct/mem.hpp"
#include "swct/trial.hpp"

namespace swct {

enum class Method { npwp, sc1, sc2, co1, co2, co3, cosc1, cosc2, ens, mem, mem_a };

inline constexpr Method kAllMethods[] = {Method::npwp, Method::sc1,   Method::sc2,   Method::co1,
                                         Method::co2,  Method::co3,   Method::cosc1, Method::cosc2,
                                         Method::ens,  Method::mem,   Method::mem_a};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::npwp: return "npwp";
    case Method::sc1: return "sc1";
    case Method::sc2: return "sc2";
    case Method::co1: return "co1";
    case Method::co2: return "co2";
    case Method::co3: return "co3";
    case Method::cosc1: return "cosc1";
    case Method::cosc2: return "cosc2";
    case Method::ens: return "ens";
    case Method::mem: return "mem";
    case Method::mem_a: return "mem-a";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  throw InputError("unknown method '" + std::string(s) +
                   "' (expected npwp, sc1, sc2, co1, co2, co3, cosc1, cosc2, ens, mem, mem-a)");
}

inline std::vector<Method> parse_methods(std::string_view list) {
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const auto item = list.substr(start, comma == std::string_view::npos ? list.npos : comma - start);
    if (item == "all") {
      out.assign(std::begin(kAllMethods), std::end(kAllMethods));
    } else if (!item.empty()) {
      out.push_back(parse_method(item));
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw InputError("no methods selected");
  return out;
}

inline bool is_mixed_model(Method m) { return m == Method::mem || m == Method::mem_a; }

// Methods whose inference is by permutation.
inline bool is_exact(Method m) { return m != Method::mem_a; }

inline std::vector<Method> nonparametric_methods() {
  return {Method::npwp, Method::sc1, Method::sc2, Method::co1, Method::co2,
          Method::co3,  Method::cosc1, Method::cosc2, Method::ens};
}

inline void check_methods(const std::vector<Method>& methods, Contrast kind) {
  if (kind == Contrast::log_odds_ratio) {
    for (Method m : methods) {
      if (is_mixed_model(m)) {
        throw InputError("method " + std::string(to_string(m)) +
                         " is an identity-link model and is not available with --contrast lor");
      }
    }
  }
}

// Point estimates (g-scale) of `methods` on prepared outcomes `y`.
inline Eigen::VectorXd estimate_all(const TrialDesign& d, const Eigen::MatrixXd& y, Contrast kind,
                                    const std::vector<Method>& methods) {
  std::optional<std::vector<detail::SyntheticCell>> sc_cells;
  std::optional<Eigen::MatrixXd> dd;
  std::optional<std::vector<detail::CrossoverPeriod>> co_periods;
  std::optional<std::vector<detail::SyntheticCell>> cosc_cells;
  std::optional<double> mem_beta;
  std::optional<double> sc2, co2;

  auto cells = [&]() -> const auto& {
    if (!sc_cells) sc_cells = detail::synthetic_cells(d, y, kind);
    return *sc_cells;
  };
  auto diffs = [&]() -> const auto& {
    if (!dd) dd = detail::consecutive_contrasts(y, kind);
    return *dd;
  };
  auto periods = [&]() -> const auto& {
    if (!co_periods) co_periods = detail::crossover_periods(d, diffs());
    return *co_periods;
  };
  auto cosc = [&]() -> const auto& {
    if (!cosc_cells) cosc_cells = detail::crossover_synthetic_cells(d, diffs());
    return *cosc_cells;
  };
  auto sc2_beta = [&] {
    if (!sc2) sc2 = detail::combine_sc(cells(), WeightScheme::inverse_mspe_within_step()).beta_hat;
    return *sc2;
  };
  auto co2_beta = [&] {
    if (!co2)
      co2 = detail::combine_co(periods(), CrossoverVariant::controls_only, WeightScheme::harmonic_mean()).beta_hat;
    return *co2;
  };

  Eigen::VectorXd out(static_cast<Eigen::Index>(methods.size()));
  for (std::size_t k = 0; k < methods.size(); ++k) {
    double b = 0.0;
    switch (methods[k]) {
      case Method::npwp:
        b = detail::combine_npwp(d, detail::within_periods(d, y, kind), WeightScheme::inverse_variance(),
                                 detail::y_scale(y))
                .beta_hat;
        break;
      case Method::sc1:
        b = detail::combine_sc(cells(), WeightScheme::equal()).beta_hat;
        break;
      case Method::sc2:
        b = sc2_beta();
        break;
      case Method::co1:
        b = detail::combine_co(periods(), CrossoverVariant::controls_only, WeightScheme::equal()).beta_hat;
        break;
      case Method::co2:
        b = co2_beta();
        break;
      case Method::co3:
        b = detail::combine_co(periods(), CrossoverVariant::pooled, WeightScheme::equal()).beta_hat;
        break;
      case Method::cosc1:
        b = detail::combine_cosc(cosc(), WeightScheme::equal()).beta_hat;
        break;
      case Method::cosc2:
        b = detail::combine_cosc(cosc(), WeightScheme::inverse_mspe_within_step()).beta_hat;
        break;
      case Method::ens:
        b = 0.5 * sc2_beta() + 0.5 * co2_beta();
        break;
      case Method::mem:
      case Method::mem_a:
        if (kind != Contrast::risk_difference) throw InputError("mixed model needs the risk difference");
        if (!mem_beta) mem_beta = mem_fit(d, y).beta_hat;
        b = *mem_beta;
        break;
    }
    out[static_cast<Eigen::Index>(k)] = b;
  }
  return out;
}

// Full result (components, weights, diagnostics) of one method.
inline EstimateResult estimate(const TrialDesign& design, const OutcomePanel& panel, const ContrastSpec& contrast,
                               Method method) {
  switch (method) {
    case Method::npwp: return npwp(design, panel, contrast, WeightScheme::inverse_variance());
    case Method::sc1: return sc(design, panel, contrast, WeightScheme::equal());
    case Method::sc2: return sc(design, panel, contrast, WeightScheme::inverse_mspe_within_step());
    case Method::co1: return co(design, panel, contrast, CrossoverVariant::controls_only, WeightScheme::equal());
    case Method::co2:
      return co(design, panel, contrast, CrossoverVariant::controls_only, WeightScheme::harmonic_mean());
    case Method::co3: return co(design, panel, contrast, CrossoverVariant::pooled, WeightScheme::equal());
    case Method::cosc1: return cosc(design, panel, contrast, WeightScheme::equal());
    case Method::cosc2: return cosc(design, panel, contrast, WeightScheme::inverse_mspe_within_step());
    case Method::ens: {
      const auto a = estimate(design, panel, contrast, Method::sc2);
      const auto b = estimate(design, panel, contrast, Method::co2);
      auto r = ensemble({{"sc2", a.beta_hat, 0.5}, {"co2", b.beta_hat, 0.5}});
      r.clamped = a.clamped;
      return r;
    }
    case Method::mem:
    case Method::mem_a: {
      check_methods({method}, contrast.kind);
      detail::check_shapes(design, panel);
      const auto fit = mem_fit(design, panel);
      EstimateResult r;
      Component c;
      c.label = "treatment";
      c.estimate = fit.beta_hat;
      c.weight = 1.0;
      r.components.push_back(c);
      r.beta_hat = fit.beta_hat;
      r.notes.push_back("REML tau^2 = " + std::to_string(fit.tau_sq_hat) +
                        ", sigma^2 = " + std::to_string(fit.sigma_sq_hat));
      return r;
    }
  }
  throw InputError("unknown method");
}

}  // namespace swct
