#pragma once

// Closed-form variances of the within-period and crossover estimators with
// fixed weights, and their covariance, for the one-crossover-per-period design
// (J periods, J - 1 clusters, cluster i on control in periods 1..i), under
//
//   Y_ij = mu + alpha_i + theta_j + beta X_ij + e_ij,
//   Var(alpha_i) = tau^2, Var(e_ij) = sigma^2_ij, all independent.
//
// Weight vectors are indexed by period j = 2..J-1 (entry 0 is period 2).
// sigma^2 grids are (J-1) x J, entry (i-1, j-1) for cluster i and period j.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "swct/error.hpp"
#include "swct/estimators.hpp"
#include "swct/parallel.hpp"
#include "swct/simgen.hpp"
#include "swct/trial.hpp"

namespace swct::oracle {

namespace detail {

inline void check(const Eigen::VectorXd& weights, int n_periods, const char* name) {
  if (n_periods < 3) throw InputError("variance oracle needs J >= 3");
  if (weights.size() != n_periods - 2) {
    throw InputError(std::string(name) + " must have J-2 = " + std::to_string(n_periods - 2) +
                     " entries (periods 2..J-1), got " + std::to_string(weights.size()));
  }
  if (std::abs(weights.sum() - 1.0) > 1e-9) throw InputError(std::string(name) + " must sum to 1");
}

inline void check_grid(const Eigen::MatrixXd& s, int n_periods) {
  if (s.rows() != n_periods - 1 || s.cols() != n_periods)
    throw InputError("sigma^2 grid must be (J-1) x J for the standard design");
  if ((s.array() < 0.0).any()) throw InputError("sigma^2 must be >= 0");
}

}  // namespace detail

// s(i, j) with 1-based cluster and period indices.
struct Grid {
  const Eigen::MatrixXd& m;
  double operator()(int i, int j) const { return m(i - 1, j - 1); }
};

inline double npwp_variance(const Eigen::VectorXd& v, int n_periods, double tau_sq, const Eigen::MatrixXd& sigma_sq) {
  detail::check(v, n_periods, "v");
  detail::check_grid(sigma_sq, n_periods);
  const int nj = n_periods;
  const Grid s{sigma_sq};
  auto vj = [&](int j) { return v[j - 2]; };
  double total = 0.0;
  for (int j = 2; j <= nj - 1; ++j) {
    double treated = 0.0, control = 0.0;
    for (int i = 1; i <= j - 1; ++i) treated += s(i, j);
    for (int i = j; i <= nj - 1; ++i) control += s(i, j);
    const double var_a = (nj - 1.0) / ((nj - j) * (j - 1.0)) * tau_sq + treated / ((j - 1.0) * (j - 1.0)) +
                         control / (double(nj - j) * (nj - j));
    total += vj(j) * vj(j) * var_a;
  }
  for (int j = 2; j <= nj - 2; ++j)
    for (int k = j + 1; k <= nj - 1; ++k) total += 2.0 * vj(j) * vj(k) * tau_sq * (nj - 1.0) / ((nj - j) * (k - 1.0));
  return total;
}

inline double co_variance(const Eigen::VectorXd& w, int n_periods, const Eigen::MatrixXd& sigma_sq) {
  detail::check(w, n_periods, "w");
  detail::check_grid(sigma_sq, n_periods);
  const int nj = n_periods;
  const Grid s{sigma_sq};
  auto wj = [&](int j) { return w[j - 2]; };
  double total = 0.0;
  for (int j = 2; j <= nj - 1; ++j) {
    double controls = 0.0;
    for (int l = j; l <= nj - 1; ++l) controls += s(l, j) + s(l, j - 1);
    total += wj(j) * wj(j) * (s(j - 1, j) + s(j - 1, j - 1) + controls / (double(nj - j) * (nj - j)));
  }
  for (int j = 2; j <= nj - 2; ++j) {
    double later = 0.0;
    for (int l = j + 1; l <= nj - 1; ++l) later += s(l, j);
    total += 2.0 * wj(j) * wj(j + 1) / (nj - j) * (s(j, j) - later / (nj - j - 1.0));
  }
  return total;
}

inline double npwp_co_covariance(const Eigen::VectorXd& v, const Eigen::VectorXd& w, int n_periods,
                                 const Eigen::MatrixXd& sigma_sq) {
  detail::check(v, n_periods, "v");
  detail::check(w, n_periods, "w");
  detail::check_grid(sigma_sq, n_periods);
  const int nj = n_periods;
  const Grid s{sigma_sq};
  double total = 0.0;
  for (int j = 2; j <= nj - 1; ++j) {
    double controls = 0.0;
    for (int i = j; i <= nj - 1; ++i) controls += s(i, j);
    total += v[j - 2] * w[j - 2] * (s(j - 1, j) / (j - 1.0) + controls / (double(nj - j) * (nj - j)));
  }
  for (int j = 2; j <= nj - 2; ++j) {
    double later = 0.0;
    for (int i = j + 1; i <= nj - 1; ++i) later += s(i, j);
    total += v[j - 2] * w[j - 1] * (s(j, j) / (nj - j) - later / ((nj - j) * (nj - j - 1.0)));
  }
  return total;
}

inline Eigen::MatrixXd constant_grid(int n_periods, double sigma_sq) {
  return Eigen::MatrixXd::Constant(n_periods - 1, n_periods, sigma_sq);
}

inline double npwp_variance(const Eigen::VectorXd& v, int n_periods, double tau_sq, double sigma_sq) {
  return npwp_variance(v, n_periods, tau_sq, constant_grid(n_periods, sigma_sq));
}
inline double co_variance(const Eigen::VectorXd& w, int n_periods, double sigma_sq) {
  return co_variance(w, n_periods, constant_grid(n_periods, sigma_sq));
}
inline double npwp_co_covariance(const Eigen::VectorXd& v, const Eigen::VectorXd& w, int n_periods,
                                 double sigma_sq) {
  return npwp_co_covariance(v, w, n_periods, constant_grid(n_periods, sigma_sq));
}

inline Eigen::VectorXd equal_weights(int n_periods) {
  return Eigen::VectorXd::Constant(n_periods - 2, 1.0 / (n_periods - 2));
}

struct EnsembleCheck {
  double v_npwp, v_co, cov, v_ens;
  bool dominated;  // V(ens) < min(V(npwp), V(co))
};

inline EnsembleCheck ensemble_variance_check(const Eigen::VectorXd& v, const Eigen::VectorXd& w, int n_periods,
                                             double tau_sq, const Eigen::MatrixXd& sigma_sq) {
  EnsembleCheck r;
  r.v_npwp = npwp_variance(v, n_periods, tau_sq, sigma_sq);
  r.v_co = co_variance(w, n_periods, sigma_sq);
  r.cov = npwp_co_covariance(v, w, n_periods, sigma_sq);
  r.v_ens = 0.25 * r.v_npwp + 0.25 * r.v_co + 0.5 * r.cov;
  r.dominated = 2.0 * r.cov < 3.0 * std::min(r.v_npwp, r.v_co) - std::max(r.v_npwp, r.v_co);
  return r;
}

inline EnsembleCheck ensemble_variance_check(const Eigen::VectorXd& v, const Eigen::VectorXd& w, int n_periods,
                                             double tau_sq, double sigma_sq) {
  return ensemble_variance_check(v, w, n_periods, tau_sq, constant_grid(n_periods, sigma_sq));
}

// tau^2 >= 0 at which V(npwp) = V(co); empty when V(npwp) already exceeds
// V(co) at tau^2 = 0. V(npwp) is affine in tau^2.
inline std::optional<double> balance_tau_sq(const Eigen::VectorXd& v, const Eigen::VectorXd& w, int n_periods,
                                            const Eigen::MatrixXd& sigma_sq) {
  const double at0 = npwp_variance(v, n_periods, 0.0, sigma_sq);
  const double slope = npwp_variance(v, n_periods, 1.0, sigma_sq) - at0;
  const double target = co_variance(w, n_periods, sigma_sq);
  if (at0 > target || !(slope > 0.0)) return std::nullopt;
  return (target - at0) / slope;
}

inline std::optional<double> balance_tau_sq(const Eigen::VectorXd& v, const Eigen::VectorXd& w, int n_periods,
                                            double sigma_sq) {
  return balance_tau_sq(v, w, n_periods, constant_grid(n_periods, sigma_sq));
}

struct Moment {
  double value = 0.0;
  double mc_se = 0.0;
};

struct MonteCarloMoments {
  Moment v_npwp, v_co, cov, v_ens;
  double mean_npwp = 0.0, mean_co = 0.0;
  int n_reps = 0;
};

// Empirical moments of the library's NPWP and CO-1 estimators with the given
// fixed weights over replicates of the simplified model.
inline MonteCarloMoments monte_carlo(const ScenarioConfig& config, const Eigen::VectorXd& v,
                                     const Eigen::VectorXd& w, int n_reps, int jobs = 1) {
  if (n_reps < 2) throw InputError("Monte Carlo comparison needs >= 2 replicates");
  const auto design = scenario_design(config);
  if (!is_standard_design(design)) throw InputError("variance oracle needs the one-crossover-per-period design");
  detail::check(v, design.n_periods(), "v");
  detail::check(w, design.n_periods(), "w");
  const auto npwp_w = WeightScheme::user({v.data(), v.data() + v.size()});
  const auto co_w = WeightScheme::user({w.data(), w.data() + w.size()});
  const ContrastSpec rd{Contrast::risk_difference, {}};

  std::vector<double> a(n_reps), b(n_reps);
  parallel_for(static_cast<std::size_t>(n_reps), jobs, [&](std::size_t r) {
    const auto panel = generate_simplified(config, design, r);
    a[r] = npwp(design, panel, rd, npwp_w).beta_hat;
    b[r] = co(design, panel, rd, CrossoverVariant::controls_only, co_w).beta_hat;
  });

  MonteCarloMoments m;
  m.n_reps = n_reps;
  double ma = 0, mb = 0;
  for (int r = 0; r < n_reps; ++r) {
    ma += a[r];
    mb += b[r];
  }
  ma /= n_reps;
  mb /= n_reps;
  m.mean_npwp = ma;
  m.mean_co = mb;
  // Each moment is the mean of per-replicate products; its MC SE is the SD of
  // those products over sqrt(n).
  auto moment = [&](auto product) {
    double s = 0, s2 = 0;
    for (int r = 0; r < n_reps; ++r) {
      const double x = product(r);
      s += x;
      s2 += x * x;
    }
    const double mean = s / n_reps;
    const double var = std::max(0.0, (s2 - n_reps * mean * mean) / (n_reps - 1));
    const double correction = n_reps / (n_reps - 1.0);
    return Moment{mean * correction, std::sqrt(var / n_reps) * correction};
  };
  m.v_npwp = moment([&](int r) { return (a[r] - ma) * (a[r] - ma); });
  m.v_co = moment([&](int r) { return (b[r] - mb) * (b[r] - mb); });
  m.cov = moment([&](int r) { return (a[r] - ma) * (b[r] - mb); });
  const double me = 0.5 * (ma + mb);
  m.v_ens = moment([&](int r) {
    const double e = 0.5 * (a[r] + b[r]) - me;
    return e * e;
  });
  return m;
}

}  // namespace swct::oracle
