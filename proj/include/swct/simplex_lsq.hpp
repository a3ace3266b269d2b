#pragma once

// Least squares over the probability simplex:
//
//   minimize  sum_t (target_t - sum_n v_n donors_{t,n})^2
//   subject to v_n >= 0, sum_n v_n = 1.
//
// Solved with a fully corrective primal active-set method (Lawson-Hanson
// adapted to the sum constraint). Each inner step solves the least squares
// problem on the affine hull of the active donors exactly, so termination on
// the tiny problems met in synthetic-control fits is exact rather than
// asymptotic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "swct/error.hpp"

namespace swct::simplex {

struct Fit {
  Eigen::VectorXd weights;
  double mspe = 0.0;  // sum (not mean) of squared prediction errors
  bool converged = false;
  int iterations = 0;
};

struct Options {
  double tol = 1e-10;  // stationarity, relative to the data scale
  int max_iter = 0;    // 0 selects 10 * n * T
  std::vector<double>* trace = nullptr;  // objective after every accepted update
};

inline double mspe(const Eigen::Ref<const Eigen::VectorXd>& weights,
                   const Eigen::Ref<const Eigen::VectorXd>& target,
                   const Eigen::Ref<const Eigen::MatrixXd>& donors) {
  if (donors.rows() != target.size() || donors.cols() != weights.size()) {
    throw InputError("mspe: donors are " + std::to_string(donors.rows()) + "x" +
                     std::to_string(donors.cols()) + ", target has " +
                     std::to_string(target.size()) + " rows, weights " +
                     std::to_string(weights.size()));
  }
  return (target - donors * weights).squaredNorm();
}

namespace detail {

// argmin ||target - D_A z|| subject to sum z = 1, unconstrained in sign.
inline Eigen::VectorXd affine_lsq(const Eigen::Ref<const Eigen::VectorXd>& target,
                                  const Eigen::Ref<const Eigen::MatrixXd>& donors,
                                  const std::vector<Eigen::Index>& active) {
  const auto m = static_cast<Eigen::Index>(active.size());
  Eigen::VectorXd z(m);
  if (m == 1) {
    z[0] = 1.0;
    return z;
  }
  const auto ref = donors.col(active[0]);
  Eigen::MatrixXd c(donors.rows(), m - 1);
  for (Eigen::Index a = 1; a < m; ++a) c.col(a - 1) = donors.col(active[a]) - ref;
  const Eigen::VectorXd u = c.colPivHouseholderQr().solve(target - ref);
  z[0] = 1.0 - u.sum();
  z.tail(m - 1) = u;
  return z;
}

}  // namespace detail

inline Fit solve(const Eigen::Ref<const Eigen::VectorXd>& target,
                 const Eigen::Ref<const Eigen::MatrixXd>& donors, const Options& opt = {}) {
  const Eigen::Index t_rows = donors.rows();
  const Eigen::Index n = donors.cols();
  if (n < 1) throw InputError("simplex fit: empty donor pool");
  if (t_rows < 1) throw InputError("simplex fit: no pre-period rows");
  if (target.size() != t_rows) {
    throw InputError("simplex fit: target has " + std::to_string(target.size()) +
                     " rows, donors have " + std::to_string(t_rows));
  }
  if (!target.allFinite() || !donors.allFinite()) throw InputError("simplex fit: non-finite input");

  const int max_iter = opt.max_iter > 0 ? opt.max_iter : static_cast<int>(10 * n * t_rows);
  constexpr double kEps = 1e-12;

  Fit fit;
  Eigen::VectorXd& v = fit.weights;
  v = Eigen::VectorXd::Zero(n);

  // Closest single donor; the first one wins ties.
  Eigen::Index start = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < n; ++k) {
    const double d = (target - donors.col(k)).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      start = k;
    }
  }
  v[start] = 1.0;
  std::vector<Eigen::Index> active{start};
  std::vector<char> in_active(n, 0);
  in_active[start] = 1;

  double scale = target.squaredNorm();
  for (Eigen::Index k = 0; k < n; ++k) scale = std::max(scale, donors.col(k).squaredNorm());
  const double gtol = opt.tol * std::max(scale, std::numeric_limits<double>::min());

  if (opt.trace) opt.trace->push_back(best_dist);

  bool converged = false;
  bool exhausted = false;
  while (!exhausted) {
    const Eigen::VectorXd grad = -2.0 * (donors.transpose() * (target - donors * v));
    const double level = v.dot(grad);
    Eigen::Index enter = -1;
    double steepest = -gtol;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (in_active[k]) continue;
      const double slope = grad[k] - level;
      if (slope < steepest) {
        steepest = slope;
        enter = k;
      }
    }
    if (enter < 0) {
      converged = true;
      break;
    }
    active.push_back(enter);
    in_active[enter] = 1;

    while (true) {
      if (++fit.iterations > max_iter) {
        exhausted = true;
        break;
      }
      const Eigen::VectorXd z = detail::affine_lsq(target, donors, active);
      if (z.minCoeff() > kEps) {
        for (std::size_t a = 0; a < active.size(); ++a) v[active[a]] = z[a];
        break;
      }
      double step = 1.0;
      for (std::size_t a = 0; a < active.size(); ++a) {
        if (z[a] <= kEps) {
          const double cur = v[active[a]];
          const double gap = cur - z[a];
          step = std::min(step, gap > 0.0 ? cur / gap : 0.0);
        }
      }
      for (std::size_t a = 0; a < active.size(); ++a) {
        v[active[a]] += step * (z[a] - v[active[a]]);
      }
      const bool entering_dropped = v[enter] <= kEps;
      std::vector<Eigen::Index> kept;
      for (Eigen::Index k : active) {
        if (v[k] > kEps) {
          kept.push_back(k);
        } else {
          v[k] = 0.0;
          in_active[k] = 0;
        }
      }
      active.swap(kept);
      // Numerically the entering donor could not move off zero: nothing left
      // to improve at this precision.
      if (entering_dropped && step <= 0.0) {
        converged = true;
        exhausted = true;
        break;
      }
      if (active.empty()) {
        // Cannot happen in exact arithmetic; restart from the best vertex.
        v.setZero();
        v[start] = 1.0;
        active.assign(1, start);
        in_active.assign(n, 0);
        in_active[start] = 1;
        break;
      }
    }
    if (opt.trace) opt.trace->push_back((target - donors * v).squaredNorm());
  }

  v = v.cwiseMax(0.0);
  v /= v.sum();
  fit.converged = converged;
  fit.mspe = (target - donors * v).squaredNorm();
  return fit;
}

}  // namespace swct::simplex
