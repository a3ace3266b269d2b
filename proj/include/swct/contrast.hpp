#pragma once

// Contrast functions g(y1, y2) and the transform used when reporting.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "swct/error.hpp"
#include "swct/trial.hpp"

namespace swct {

enum class Contrast { risk_difference, log_odds_ratio };

inline std::string_view to_string(Contrast c) {
  return c == Contrast::risk_difference ? "rd" : "lor";
}

inline Contrast parse_contrast(std::string_view s) {
  if (s == "rd" || s == "risk_difference") return Contrast::risk_difference;
  if (s == "lor" || s == "log_odds_ratio") return Contrast::log_odds_ratio;
  throw InputError("unknown contrast '" + std::string(s) + "' (expected rd or lor)");
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double apply(Contrast kind, double y1, double y2) {
  if (kind == Contrast::risk_difference) return y1 - y2;
  if (!(y1 > 0.0 && y1 < 1.0 && y2 > 0.0 && y2 < 1.0)) {
    throw EstimationError("log odds ratio needs outcomes strictly inside (0,1), got " +
                          std::to_string(y1) + " and " + std::to_string(y2));
  }
  return logit(y1) - logit(y2);
}

// Identity for the risk difference, exp for the log odds ratio.
inline double report(Contrast kind, double beta) {
  return kind == Contrast::risk_difference ? beta : std::exp(beta);
}

// Boundary handling for the log odds ratio. Cells at exactly 0 or 1 move to
// 1/(2K) and 1-1/(2K) when K is known, otherwise to eps and 1-eps.
struct ClampPolicy {
  bool enabled = true;
  double eps = 1e-6;
};

struct ContrastSpec {
  Contrast kind = Contrast::risk_difference;
  ClampPolicy clamp{};
};

// Outcome grid ready for the estimators: clamped under the log odds ratio.
struct PreparedOutcomes {
  Eigen::MatrixXd y;
  std::vector<std::pair<int, int>> clamped;  // (cluster, period)
};

inline PreparedOutcomes prepare(const OutcomePanel& panel, const ContrastSpec& spec) {
  PreparedOutcomes out{panel.values(), {}};
  if (spec.kind != Contrast::log_odds_ratio) return out;
  for (Eigen::Index i = 0; i < out.y.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.y.cols(); ++j) {
      double& y = out.y(i, j);
      if (y > 0.0 && y < 1.0) continue;
      if (y < 0.0 || y > 1.0 || std::isnan(y)) {
        throw InputError("log odds ratio needs outcomes in [0,1]; cell (cluster " +
                         std::to_string(i) + ", period " + std::to_string(j + 1) + ") is " +
                         std::to_string(y));
      }
      if (!spec.clamp.enabled) {
        throw EstimationError("outcome " + std::to_string(y) + " at (cluster " + std::to_string(i) +
                              ", period " + std::to_string(j + 1) +
                              ") is on the boundary and clamping is disabled");
      }
      const double eps = panel.has_at_risk() ? 0.5 / panel.at_risk()(i, j) : spec.clamp.eps;
      y = (y <= 0.0) ? eps : 1.0 - eps;
      out.clamped.emplace_back(static_cast<int>(i), static_cast<int>(j + 1));
    }
  }
  return out;
}

}  // namespace swct
