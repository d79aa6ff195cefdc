// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fishy/rng.hpp"

namespace fishy {

// ---------------------------------------------------------------------------
// AR(1): X' = phi X + sigma W.

struct Ar1Model {
  double phi = 0.99;
  double sigma = 1.0;

  void validate() const {
    if (!(phi > 0.0 && phi < 1.0)) throw std::invalid_argument("ar1: phi must lie in (0, 1)");
    if (!(sigma > 0.0)) throw std::invalid_argument("ar1: sigma must be positive");
  }
  double stationary_variance() const { return sigma * sigma / (1.0 - phi * phi); }
};

/// The AR(1) update for a given standard Normal innovation.
inline double ar1_transition(const Ar1Model& m, double x, double noise) noexcept {
  return m.phi * x + m.sigma * noise;
}

inline double ar1_step(const Ar1Model& m, double x, RngStream& rng) {
  return ar1_transition(m, x, rng.normal());
}

// ---------------------------------------------------------------------------
// Cauchy location posterior with a Normal(0, prior_variance) prior.

struct CauchyNormalModel {
  std::vector<double> observations{-8.0, 8.0, 17.0};
  double prior_variance = 100.0;
  double mrth_proposal_sd = 10.0;

  void validate() const {
    if (observations.empty()) throw std::invalid_argument("cauchy: need at least one observation");
    if (!(prior_variance > 0.0)) throw std::invalid_argument("cauchy: prior_variance must be positive");
    if (!(mrth_proposal_sd > 0.0)) throw std::invalid_argument("cauchy: proposal sd must be positive");
  }

  double max_abs_observation() const {
    double a = 0.0;
    for (double z : observations) a = std::max(a, std::abs(z));
    return a;
  }

  /// Unnormalized log posterior: -theta^2 / (2 s^2) - sum_i log(1 + (theta - z_i)^2).
  /// Every term is finite for finite theta, so no underflow guard is needed.
  double log_density(double theta) const noexcept {
    double lp = -0.5 * theta * theta / prior_variance;
    for (double z : observations) lp -= std::log1p((theta - z) * (theta - z));
    return lp;
  }
};

struct NormalParams {
  double mean;
  double variance;
};

/// Rate of the Exponential full conditional of eta_i given theta.
inline double gibbs_eta_rate(double theta, double z) noexcept {
  return 0.5 * (1.0 + (theta - z) * (theta - z));
}

/// Normal full conditional of theta given the auxiliary eta variables.
inline NormalParams gibbs_theta_conditional(const CauchyNormalModel& m, std::span<const double> eta) {
  double precision = 1.0 / m.prior_variance;
  double weighted = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    precision += eta[i];
    weighted += eta[i] * m.observations[i];
  }
  return {weighted / precision, 1.0 / precision};
}

/// Draws eta | theta by inversion from the given uniforms (one per observation).
inline void gibbs_eta_from_uniforms(const CauchyNormalModel& m, double theta,
                                    std::span<const double> uniforms, std::span<double> eta) {
  for (std::size_t i = 0; i < eta.size(); ++i)
    eta[i] = -std::log(uniforms[i]) / gibbs_eta_rate(theta, m.observations[i]);
}

/// One sweep of the data-augmentation Gibbs sampler: eta | theta, then theta' | eta.
inline double gibbs_step(const CauchyNormalModel& m, double theta, RngStream& rng) {
  std::vector<double> u(m.observations.size());
  std::vector<double> eta(m.observations.size());
  for (double& ui : u) ui = rng.uniform();
  gibbs_eta_from_uniforms(m, theta, u, eta);
  const NormalParams cond = gibbs_theta_conditional(m, eta);
  return cond.mean + std::sqrt(cond.variance) * rng.normal();
}

// ---------------------------------------------------------------------------
// Random-walk Metropolis-Rosenbluth-Teller-Hastings.

struct MrthResult {
  double state;
  bool accepted;
  bool nan_rejected;  // log density was NaN at the proposal
};

/// Accept test in log space; ties resolve as accept. NaN ratios reject.
inline bool mrth_accepts(double log_u, double log_ratio) noexcept {
  return !std::isnan(log_ratio) && log_u <= log_ratio;
}

template <class LogDensity>
MrthResult mrth_step(const LogDensity& logdensity, double proposal_sd, double x, RngStream& rng) {
  if (!(proposal_sd > 0.0)) throw std::invalid_argument("mrth: proposal_sd must be positive");
  const double proposal = x + proposal_sd * rng.normal();
  const double log_u = std::log(rng.uniform());
  const double lp_prop = logdensity(proposal);
  if (std::isnan(lp_prop)) return {x, false, true};
  const double log_ratio = lp_prop - logdensity(x);
  if (mrth_accepts(log_u, log_ratio)) return {proposal, true, false};
  return {x, false, false};
}

// ---------------------------------------------------------------------------
// Finite-state chains.

enum class ErgodicityCheck { require, skip };

/// Row-stochastic transition matrix with per-state test-function values.
/// With ErgodicityCheck::require (the default) the chain must be irreducible
/// and aperiodic; `skip` exists for degenerate kernels used in unit checks.
class FiniteChainModel {
 public:
  FiniteChainModel(Eigen::MatrixXd transition, Eigen::MatrixXd h_values,
                   ErgodicityCheck check = ErgodicityCheck::require)
      : p_(std::move(transition)), h_(std::move(h_values)) {
    const auto n = p_.rows();
    if (n == 0 || p_.cols() != n) throw std::invalid_argument("finite chain: matrix must be square and non-empty");
    if (h_.rows() != n || h_.cols() == 0)
      throw std::invalid_argument("finite chain: h_values must have one row per state");
    cumulative_.resize(static_cast<std::size_t>(n * n));
    for (Eigen::Index i = 0; i < n; ++i) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double pij = p_(i, j);
        if (!(pij >= 0.0 && pij <= 1.0))
          throw std::invalid_argument("finite chain: entry (" + std::to_string(i) + "," + std::to_string(j) +
                                      ") outside [0,1]");
        sum += pij;
        cumulative_[static_cast<std::size_t>(i * n + j)] = sum;
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("finite chain: row " + std::to_string(i) + " does not sum to 1");
      // Pin the tail to exactly 1 from the last positive entry on, so rounding
      // never selects a zero-probability state.
      Eigen::Index last = n - 1;
      while (last > 0 && p_(i, last) == 0.0) --last;
      for (Eigen::Index j = last; j < n; ++j) cumulative_[static_cast<std::size_t>(i * n + j)] = 1.0;
    }
    if (check == ErgodicityCheck::require) {
      if (!irreducible()) throw std::invalid_argument("finite chain: not irreducible");
      if (period() != 1) throw std::invalid_argument("finite chain: not aperiodic");
    }
  }

  std::size_t n_states() const noexcept { return static_cast<std::size_t>(p_.rows()); }
  std::size_t h_dim() const noexcept { return static_cast<std::size_t>(h_.cols()); }
  const Eigen::MatrixXd& transition() const noexcept { return p_; }
  const Eigen::MatrixXd& h_values() const noexcept { return h_; }
  double prob(std::size_t from, std::size_t to) const {
    return p_(static_cast<Eigen::Index>(from), static_cast<Eigen::Index>(to));
  }

  /// Inverse-CDF draw from row `from` given a uniform in (0, 1).
  std::size_t sample_row(std::size_t from, double u) const noexcept {
    const std::size_t n = n_states();
    const double* row = cumulative_.data() + from * n;
    const double* it = std::upper_bound(row, row + n, u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - row), n - 1);
  }

 private:
  bool reaches_all(bool transpose) const {
    const auto n = p_.rows();
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::queue<Eigen::Index> q;
    q.push(0);
    seen[0] = 1;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      for (Eigen::Index v = 0; v < n; ++v) {
        const double w = transpose ? p_(v, u) : p_(u, v);
        if (w > 0.0 && !seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = 1;
          q.push(v);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  }

  bool irreducible() const { return reaches_all(false) && reaches_all(true); }

  // gcd over edges u->v of level(u) + 1 - level(v), with BFS levels from state 0.
  long period() const {
    const auto n = p_.rows();
    std::vector<long> level(static_cast<std::size_t>(n), -1);
    std::queue<Eigen::Index> q;
    q.push(0);
    level[0] = 0;
    long g = 0;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      for (Eigen::Index v = 0; v < n; ++v) {
        if (p_(u, v) <= 0.0) continue;
        auto& lv = level[static_cast<std::size_t>(v)];
        if (lv < 0) {
          lv = level[static_cast<std::size_t>(u)] + 1;
          q.push(v);
        } else {
          g = std::gcd(g, std::abs(level[static_cast<std::size_t>(u)] + 1 - lv));
        }
      }
    }
    return g;
  }

  Eigen::MatrixXd p_;
  Eigen::MatrixXd h_;
  std::vector<double> cumulative_;
};

inline std::size_t finite_step(const FiniteChainModel& m, std::size_t s, RngStream& rng) {
  if (s >= m.n_states()) throw std::out_of_range("finite chain: state index out of range");
  return m.sample_row(s, rng.uniform());
}

}  // namespace fishy
