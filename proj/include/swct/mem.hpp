#pragma once

// Linear mixed model with a random cluster intercept and fixed period effects,
// fitted by REML to cluster-period means:
//
//   Y_ij = mu + alpha_i + theta_j + beta X_ij + e_ij,
//   alpha_i ~ N(0, tau^2), e_ij ~ N(0, sigma^2), theta_1 = 0.
//
// With gamma = tau^2 / sigma^2 the per-cluster covariance is
// sigma^2 (I + gamma 11'), whose inverse splits into a within-cluster part and
// a between-cluster part scaled by c = 1 / (1 + J gamma). Everything the
// restricted likelihood needs is then a handful of cross products computed
// once, and sigma^2 is profiled out, leaving a 1-D search over log gamma.

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "swct/error.hpp"
#include "swct/trial.hpp"

namespace swct {

struct LmmFit {
  double beta_hat = 0.0;
  double mu_hat = 0.0;
  Eigen::VectorXd theta_hat;  // length J, theta_hat[0] = 0
  double tau_sq_hat = 0.0;
  double sigma_sq_hat = 0.0;
  double se_beta = 0.0;
  bool converged = false;
};

namespace detail {

// Cross products split into within- and between-cluster parts.
struct MemMoments {
  Eigen::MatrixXd a_w, a_b;
  Eigen::VectorXd b_w, b_b;
  double c_w = 0.0, c_b = 0.0;
  int n = 0, p = 0, clusters = 0, periods = 0;
};

inline MemMoments mem_moments(const TrialDesign& d, const Eigen::MatrixXd& y) {
  const int ni = d.n_clusters(), nj = d.n_periods();
  const int p = nj + 1;  // intercept, period dummies 2..J, treatment
  MemMoments m;
  m.n = ni * nj;
  m.p = p;
  m.clusters = ni;
  m.periods = nj;
  m.a_w = Eigen::MatrixXd::Zero(p, p);
  m.a_b = Eigen::MatrixXd::Zero(p, p);
  m.b_w = Eigen::VectorXd::Zero(p);
  m.b_b = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd x(nj, p);
  Eigen::VectorXd yi(nj);
  for (int i = 0; i < ni; ++i) {
    x.setZero();
    for (int j = 1; j <= nj; ++j) {
      x(j - 1, 0) = 1.0;
      if (j > 1) x(j - 1, j - 1) = 1.0;
      x(j - 1, p - 1) = d.treated(i, j) ? 1.0 : 0.0;
      yi[j - 1] = y(i, j - 1);
    }
    const Eigen::RowVectorXd xbar = x.colwise().mean();
    const double ybar = yi.mean();
    const Eigen::MatrixXd xc = x.rowwise() - xbar;
    const Eigen::VectorXd yc = yi.array() - ybar;
    m.a_w.noalias() += xc.transpose() * xc;
    m.a_b.noalias() += nj * xbar.transpose() * xbar;
    m.b_w.noalias() += xc.transpose() * yc;
    m.b_b.noalias() += nj * ybar * xbar.transpose();
    m.c_w += yc.squaredNorm();
    m.c_b += nj * ybar * ybar;
  }
  return m;
}

struct MemAtRatio {
  Eigen::VectorXd coef;
  Eigen::MatrixXd a;
  double rss = 0.0;  // sigma^2-scaled generalized residual sum of squares
  double neg2_reml = 0.0;
  bool ok = false;
};

inline MemAtRatio mem_at_ratio(const MemMoments& m, double gamma) {
  MemAtRatio r;
  const double c = 1.0 / (1.0 + m.periods * gamma);
  r.a = m.a_w + c * m.a_b;
  const Eigen::VectorXd b = m.b_w + c * m.b_b;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(r.a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return r;
  const Eigen::VectorXd d = ldlt.vectorD();
  if (d.minCoeff() <= 1e-12 * std::max(1.0, d.maxCoeff())) return r;
  r.coef = ldlt.solve(b);
  r.rss = std::max(0.0, m.c_w + c * m.c_b - b.dot(r.coef));
  const double dof = m.n - m.p;
  r.neg2_reml = dof * std::log(std::max(r.rss, std::numeric_limits<double>::min()) / dof) +
                m.clusters * std::log1p(m.periods * gamma) + d.array().log().sum();
  r.ok = true;
  return r;
}

inline double mem_data_scale(const MemMoments& m) { return std::max(1.0, m.c_w + m.c_b); }

// The gamma -> infinity limit: fixed cluster intercepts. The intercept column
// drops out of the within part and is recovered from the between part.
inline MemAtRatio mem_within_limit(const MemMoments& m) {
  MemAtRatio r;
  const int q = m.p - 1;
  const Eigen::MatrixXd a = m.a_w.bottomRightCorner(q, q);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return r;
  const Eigen::VectorXd d = ldlt.vectorD();
  if (d.minCoeff() <= 1e-12 * std::max(1.0, d.maxCoeff())) return r;
  r.coef = Eigen::VectorXd::Zero(m.p);
  r.coef.tail(q) = ldlt.solve(m.b_w.tail(q));
  r.coef[0] = (m.b_b[0] - m.a_b.row(0).tail(q).dot(r.coef.tail(q))) / m.a_b(0, 0);
  r.rss = std::max(0.0, m.c_w - m.b_w.tail(q).dot(r.coef.tail(q)));
  r.a = m.a_w + m.a_b;
  r.ok = true;
  return r;
}

}  // namespace detail

// Generalized least squares at a fixed variance ratio gamma = tau^2/sigma^2.
// Returns (mu, theta_2..theta_J, beta).
inline Eigen::VectorXd gls_fixed_ratio(const TrialDesign& design, const OutcomePanel& panel, double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw InputError("variance ratio must be finite and >= 0");
  const auto m = detail::mem_moments(design, panel.values());
  const auto r = detail::mem_at_ratio(m, gamma);
  if (!r.ok) throw EstimationError("mixed model: fixed-effect design is rank deficient");
  return r.coef;
}

inline LmmFit mem_fit(const TrialDesign& design, const Eigen::MatrixXd& y) {
  const int nj = design.n_periods();
  if (y.rows() != design.n_clusters() || y.cols() != nj) throw InputError("panel shape does not match design");
  const auto m = detail::mem_moments(design, y);
  if (m.n <= m.p) {
    throw EstimationError("mixed model: " + std::to_string(m.n) + " cells for " + std::to_string(m.p) +
                          " fixed effects");
  }

  auto objective = [&](double log_gamma) {
    const auto r = detail::mem_at_ratio(m, std::exp(log_gamma));
    return r.ok ? r.neg2_reml : std::numeric_limits<double>::infinity();
  };

  const auto at_zero = detail::mem_at_ratio(m, 0.0);
  if (!at_zero.ok) throw EstimationError("mixed model: fixed-effect design is rank deficient");

  LmmFit fit;
  auto fill = [&](const detail::MemAtRatio& r, double gamma, double sigma_sq) {
    fit.mu_hat = r.coef[0];
    fit.theta_hat = Eigen::VectorXd::Zero(nj);
    for (int j = 1; j < nj; ++j) fit.theta_hat[j] = r.coef[j];
    fit.beta_hat = r.coef[m.p - 1];
    fit.sigma_sq_hat = sigma_sq;
    fit.tau_sq_hat = gamma * sigma_sq;
    const Eigen::VectorXd e = Eigen::VectorXd::Unit(m.p, m.p - 1);
    const double info_inv = r.a.ldlt().solve(e)[m.p - 1];
    fit.se_beta = std::sqrt(std::max(0.0, sigma_sq * info_inv));
  };

  // Exact fit: no residual variation left to apportion.
  if (at_zero.rss <= 1e-24 * detail::mem_data_scale(m)) {
    fill(at_zero, 0.0, 0.0);
    fit.converged = true;
    return fit;
  }
  const auto within = detail::mem_within_limit(m);
  if (within.ok && within.rss <= 1e-24 * detail::mem_data_scale(m)) {
    fill(within, 0.0, 0.0);
    const Eigen::VectorXd& c = within.coef;
    const double between = m.c_b - 2.0 * c.dot(m.b_b) + c.dot(m.a_b * c);
    fit.tau_sq_hat = m.clusters > 1 ? std::max(0.0, between) / m.periods / (m.clusters - 1) : 0.0;
    fit.se_beta = 0.0;
    fit.converged = true;
    return fit;
  }

  constexpr double lo = -18.0, hi = 12.0;
  constexpr int grid = 31;
  int best = 0;
  std::vector<double> values(grid);
  for (int k = 0; k < grid; ++k) {
    values[k] = objective(lo + (hi - lo) * k / (grid - 1));
    if (values[k] < values[best]) best = k;
  }
  const double left = lo + (hi - lo) * std::max(0, best - 1) / (grid - 1);
  const double right = lo + (hi - lo) * std::min(grid - 1, best + 1) / (grid - 1);
  std::uintmax_t max_iter = 200;
  const auto [arg, val] = boost::math::tools::brent_find_minima(objective, left, right, 52, max_iter);

  double gamma = std::exp(arg);
  double best_val = val;
  fit.converged = std::isfinite(val) && max_iter < 200;
  if (at_zero.neg2_reml <= best_val) {
    gamma = 0.0;
    best_val = at_zero.neg2_reml;
  }
  const auto r = gamma == 0.0 ? at_zero : detail::mem_at_ratio(m, gamma);
  if (!r.ok) throw EstimationError("mixed model: restricted likelihood search failed");
  fill(r, gamma, r.rss / (m.n - m.p));
  return fit;
}

inline LmmFit mem_fit(const TrialDesign& design, const OutcomePanel& panel) {
  return mem_fit(design, panel.values());
}

struct WaldResult {
  double p_value;
  double lower, upper;
};

// Normal-reference Wald test and interval from the model-based standard error.
inline WaldResult wald(const LmmFit& fit, double level = 0.95) {
  if (!(level > 0.0 && level < 1.0)) throw InputError("confidence level must be in (0,1)");
  if (!(fit.se_beta > 0.0)) {
    const double p = fit.beta_hat == 0.0 ? 1.0 : 0.0;
    return {p, fit.beta_hat, fit.beta_hat};
  }
  const boost::math::normal_distribution<> n01;
  const double z = std::abs(fit.beta_hat) / fit.se_beta;
  const double p = 2.0 * boost::math::cdf(boost::math::complement(n01, z));
  const double q = boost::math::quantile(n01, 0.5 + level / 2.0);
  return {p, fit.beta_hat - q * fit.se_beta, fit.beta_hat + q * fit.se_beta};
}

}  // namespace swct
