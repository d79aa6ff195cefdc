// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include "fishy/models.hpp"

namespace fishy {

struct OracleSolution {
  Eigen::VectorXd pi;      // stationary law
  Eigen::MatrixXd g_star;  // n x d, pi(g_star) = 0 per column
  Eigen::MatrixXd v;       // d x d asymptotic covariance
  Eigen::VectorXd pi_h;    // pi(h)
};

namespace detail {

inline void check_residual(double r, const char* what) {
  if (!(r < 1e-8)) throw std::invalid_argument(std::string("oracle: ") + what + " is singular (residual " +
                                               std::to_string(r) + ")");
}

/// v_ab = pi(h0_a g_b) + pi(g_a h0_b) - pi(h0_a h0_b).
inline Eigen::MatrixXd asymptotic_covariance(const Eigen::VectorXd& pi, const Eigen::MatrixXd& h0,
                                             const Eigen::MatrixXd& g) {
  const Eigen::MatrixXd hg = h0.transpose() * pi.asDiagonal() * g;
  const Eigen::MatrixXd hh = h0.transpose() * pi.asDiagonal() * h0;
  const Eigen::MatrixXd v = hg + hg.transpose() - hh;
  return 0.5 * (v + v.transpose());
}

}  // namespace detail

/// Stationary law from [P^T - I; 1^T] pi = [0; 1] by least squares.
inline Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& P) {
  const auto n = P.rows();
  Eigen::MatrixXd A(n + 1, n);
  A.topRows(n) = P.transpose() - Eigen::MatrixXd::Identity(n, n);
  A.row(n).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + 1);
  b(n) = 1.0;
  const Eigen::VectorXd pi = A.colPivHouseholderQr().solve(b);
  detail::check_residual((A * pi - b).cwiseAbs().maxCoeff(), "stationary system");
  return pi;
}

/// Exact stationary law, Poisson solution g_star and asymptotic covariance.
/// g_star solves [(I - P); pi^T] g = [h0; 0] in the least-squares sense.
inline OracleSolution solve_finite(const FiniteChainModel& model) {
  const Eigen::MatrixXd& P = model.transition();
  const Eigen::MatrixXd& h = model.h_values();
  const auto n = P.rows();
  OracleSolution s;
  s.pi = stationary_distribution(P);
  s.pi_h = h.transpose() * s.pi;
  const Eigen::MatrixXd h0 = h.rowwise() - s.pi_h.transpose();

  Eigen::MatrixXd A(n + 1, n);
  A.topRows(n) = Eigen::MatrixXd::Identity(n, n) - P;
  A.row(n) = s.pi.transpose();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n + 1, h.cols());
  B.topRows(n) = h0;
  s.g_star = A.colPivHouseholderQr().solve(B);
  detail::check_residual((A * s.g_star - B).cwiseAbs().maxCoeff(), "Poisson system");
  s.v = detail::asymptotic_covariance(s.pi, h0, s.g_star);
  return s;
}

/// Poisson solution normalized by g(anchor) = 0 instead of pi(g) = 0.
inline Eigen::MatrixXd solve_poisson_anchored(const FiniteChainModel& model, std::size_t anchor = 0) {
  const Eigen::MatrixXd& P = model.transition();
  const auto n = P.rows();
  if (anchor >= model.n_states()) throw std::out_of_range("oracle: anchor state out of range");
  const Eigen::VectorXd pi = stationary_distribution(P);
  const Eigen::VectorXd pi_h = model.h_values().transpose() * pi;
  Eigen::MatrixXd A(n + 1, n);
  A.topRows(n) = Eigen::MatrixXd::Identity(n, n) - P;
  A.row(n).setZero();
  A(n, static_cast<Eigen::Index>(anchor)) = 1.0;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n + 1, model.h_values().cols());
  B.topRows(n) = model.h_values().rowwise() - pi_h.transpose();
  const Eigen::MatrixXd g = A.colPivHouseholderQr().solve(B);
  detail::check_residual((A * g - B).cwiseAbs().maxCoeff(), "anchored Poisson system");
  return g;
}

/// g = sum_t P^t h0, stopped once the increment's max-norm stays below 1e-14
/// for 10 consecutive terms.
inline OracleSolution solve_finite_series(const FiniteChainModel& model, std::int64_t max_terms = 50'000'000) {
  const Eigen::MatrixXd& P = model.transition();
  const Eigen::MatrixXd& h = model.h_values();
  OracleSolution s;
  s.pi = stationary_distribution(P);
  s.pi_h = h.transpose() * s.pi;
  const Eigen::MatrixXd h0 = h.rowwise() - s.pi_h.transpose();
  Eigen::MatrixXd term = h0;
  Eigen::MatrixXd g = h0;
  int small = 0;
  for (std::int64_t t = 1; t < max_terms; ++t) {
    term = P * term;
    g += term;
    small = term.cwiseAbs().maxCoeff() < 1e-14 ? small + 1 : 0;
    if (small >= 10) {
      s.g_star = g;
      s.v = detail::asymptotic_covariance(s.pi, h0, g);
      return s;
    }
  }
  throw std::runtime_error("oracle: truncated series did not converge");
}

// ---------------------------------------------------------------------------
// AR(1) closed forms.

/// g_y(x) = (x - y) / (1 - phi) for h(x) = x.
inline double ar1_fishy_exact(double phi, double x, double y) {
  if (!(phi >= 0.0 && phi < 1.0)) throw std::invalid_argument("ar1: phi must lie in [0, 1)");
  return (x - y) / (1.0 - phi);
}

/// v(P, h) = (1 - phi)^{-2} for h(x) = x and unit innovation variance.
inline double ar1_avar_exact(double phi) {
  if (!(phi >= 0.0 && phi < 1.0)) throw std::invalid_argument("ar1: phi must lie in [0, 1)");
  return 1.0 / ((1.0 - phi) * (1.0 - phi));
}

/// Constants of the geometric meeting-time bound for the reflection-maximal
/// AR(1) coupling, built from the drift function V(x) = 1 + (1 - phi^2) x^2.
struct Ar1TheoryBound {
  double phi = 0.0;
  double sigma = 1.0;
  double beta = 0.0;
  double b = 0.0;
  double h_const = 0.0;
  double delta = 0.0;
  double beta_tilde = 0.0;
  double beta_bar = 0.0;

  static Ar1TheoryBound make(double phi, double sigma = 1.0) {
    if (!(phi > 0.0 && phi < 1.0)) throw std::invalid_argument("ar1 bound: phi must lie in (0, 1)");
    if (!(sigma > 0.0)) throw std::invalid_argument("ar1 bound: sigma must be positive");
    Ar1TheoryBound c;
    c.phi = phi;
    c.sigma = sigma;
    const double p2 = phi * phi;
    c.beta = (1.0 + p2) / 2.0;
    c.b = 2.0 - p2;
    c.h_const = 1.0 - std::exp(-3.0 * p2 / (1.0 - p2)) / std::numbers::sqrt2;
    const double lh = std::log(c.h_const);
    c.delta = lh / (lh + std::log(c.beta) - std::log(c.b));
    c.beta_tilde = std::pow(c.beta, c.delta);
    const double lbt = std::log(c.beta_tilde);
    c.beta_bar = std::pow(c.beta_tilde, std::log(phi) / (lbt + std::log(phi)));
    return c;
  }

  /// C~(x, y) = 2 / beta~ + |(x - y) / (2 sigma)| + 3.
  double c_tilde(double x, double y) const { return 2.0 / beta_tilde + std::abs((x - y) / (2.0 * sigma)) + 3.0; }

  bool constants_in_range() const {
    return delta > 0.0 && delta < 1.0 && beta_tilde > 0.0 && beta_tilde < 1.0 && beta_bar > 0.0 && beta_bar < 1.0;
  }
};

/// min(1, C~(x0, y0) beta_bar^n), a bound on P(tau > n) for the lag-0 meeting time.
inline double ar1_survival_bound(const Ar1TheoryBound& c, double x0, double y0, std::int64_t n) {
  if (n < 0) throw std::invalid_argument("ar1 bound: n must be >= 0");
  return std::min(1.0, c.c_tilde(x0, y0) * std::pow(c.beta_bar, static_cast<double>(n)));
}

}  // namespace fishy
