// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fishy/models.hpp"
#include "fishy/rng.hpp"

namespace fishy {

/// Raised when the rejection loop of the maximal coupling exceeds its cap.
class CouplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kDefaultMaxRejections = 10'000'000;

/// log of the Normal(mean, sd^2) density without the log(2 pi)/2 constant.
inline double normal_log_kernel(double x, double mean, double sd) noexcept {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd);
}

template <class State>
struct CoupledDraw {
  State x;
  State y;
  bool met;
  std::uint64_t iterations = 1;  // rejection-loop trips (maximal coupling only)
};

/// Maximal coupling by rejection (the gamma-coupling of Thorisson).
///
/// X ~ mu and Y ~ nu marginally with P(X = Y) = 1 - TV(mu, nu). Densities are
/// supplied in log space; ties in the first accept test resolve as a meeting.
template <class LogMu, class SampleMu, class LogNu, class SampleNu>
auto maximal_coupling(const LogMu& log_mu, const SampleMu& sample_mu, const LogNu& log_nu,
                      const SampleNu& sample_nu, RngStream& rng,
                      std::uint64_t max_iterations = kDefaultMaxRejections)
    -> CoupledDraw<decltype(sample_mu(rng))> {
  using State = decltype(sample_mu(rng));
  State x = sample_mu(rng);
  if (std::log(rng.uniform()) <= log_nu(x) - log_mu(x)) return {x, x, true, 1};
  for (std::uint64_t it = 1; it <= max_iterations; ++it) {
    State y = sample_nu(rng);
    if (std::log(rng.uniform()) > log_mu(y) - log_nu(y)) return {x, y, false, it + 1};
  }
  throw CouplingError("maximal coupling: rejection loop exceeded " + std::to_string(max_iterations) +
                      " iterations (near-singular density ratio)");
}

/// Reflection-maximal coupling of Normal(mu1, sigma^2) and Normal(mu2, sigma^2).
/// Deterministic cost: one Normal and one uniform.
inline CoupledDraw<double> reflection_maximal_1d(double mu1, double mu2, double sigma, RngStream& rng) {
  if (!(sigma > 0.0)) throw std::invalid_argument("reflection coupling: sigma must be positive");
  const double z = (mu1 - mu2) / sigma;
  const double xdot = rng.normal();
  const double w = rng.uniform();
  const double x = mu1 + sigma * xdot;
  // log phi(z + xdot) - log phi(xdot)
  const double log_ratio = -0.5 * (z * z + 2.0 * (z * xdot));
  if (std::log(w) <= log_ratio) return {x, x, true};
  return {x, mu2 - sigma * xdot, false};
}

/// Reflection-maximal coupling of Normal(mu1, S) and Normal(mu2, S) with S = C C^T.
class ReflectionMaximalNormal {
 public:
  explicit ReflectionMaximalNormal(Eigen::MatrixXd chol) : chol_(std::move(chol)) {
    if (chol_.rows() == 0 || chol_.rows() != chol_.cols())
      throw std::invalid_argument("reflection coupling: Cholesky factor must be square");
    for (Eigen::Index i = 0; i < chol_.rows(); ++i) {
      if (!(chol_(i, i) > 0.0) || !std::isfinite(chol_(i, i)))
        throw std::invalid_argument("reflection coupling: Cholesky factor is not invertible");
      for (Eigen::Index j = i + 1; j < chol_.cols(); ++j)
        if (chol_(i, j) != 0.0) throw std::invalid_argument("reflection coupling: factor must be lower-triangular");
    }
  }

  Eigen::Index dim() const noexcept { return chol_.rows(); }

  CoupledDraw<Eigen::VectorXd> operator()(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2,
                                          RngStream& rng) const {
    const Eigen::Index d = dim();
    if (mu1.size() != d || mu2.size() != d) throw std::invalid_argument("reflection coupling: dimension mismatch");
    // z = C^{-1} (mu1 - mu2) by forward substitution.
    Eigen::VectorXd z(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      double acc = mu1[i] - mu2[i];
      for (Eigen::Index j = 0; j < i; ++j) acc -= chol_(i, j) * z[j];
      z[i] = acc / chol_(i, i);
    }
    Eigen::VectorXd xdot(d);
    for (Eigen::Index i = 0; i < d; ++i) xdot[i] = rng.normal();
    const double w = rng.uniform();

    double zz = 0.0;
    double zx = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      zz += z[i] * z[i];
      zx += z[i] * xdot[i];
    }
    const Eigen::VectorXd x = affine(mu1, xdot);
    if (std::log(w) <= -0.5 * (zz + 2.0 * zx)) return {x, x, true};

    const double norm = std::sqrt(zz);
    Eigen::VectorXd ydot = xdot;
    double ex = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) ex += (z[i] / norm) * xdot[i];
    for (Eigen::Index i = 0; i < d; ++i) ydot[i] = xdot[i] - 2.0 * ex * (z[i] / norm);
    return {x, affine(mu2, ydot), false};
  }

 private:
  Eigen::VectorXd affine(const Eigen::VectorXd& mu, const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) acc += chol_(i, j) * v[j];
      out[i] = mu[i] + acc;
    }
    return out;
  }

  Eigen::MatrixXd chol_;
};

inline CoupledDraw<Eigen::VectorXd> reflection_maximal_nd(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2,
                                                          const Eigen::MatrixXd& chol_sigma, RngStream& rng) {
  return ReflectionMaximalNormal(chol_sigma)(mu1, mu2, rng);
}

/// Maximal coupling of two Normals with possibly different variances (Alg. of Thorisson).
inline CoupledDraw<double> maximal_coupling_normal(double m1, double sd1, double m2, double sd2, RngStream& rng,
                                                   std::uint64_t max_iterations = kDefaultMaxRejections) {
  return maximal_coupling([=](double v) { return normal_log_kernel(v, m1, sd1); },
                          [=](RngStream& r) { return m1 + sd1 * r.normal(); },
                          [=](double v) { return normal_log_kernel(v, m2, sd2); },
                          [=](RngStream& r) { return m2 + sd2 * r.normal(); }, rng, max_iterations);
}

// ---------------------------------------------------------------------------
// Coupled MRTH: coupled proposals and one shared uniform for both accept tests.

enum class ProposalCoupling { reflection_maximal, maximal_rejection, common_random_numbers };

struct CoupledMrthResult {
  double x;
  double y;
  bool proposals_met;
  bool nan_rejected;
};

template <class LogDensity>
CoupledMrthResult coupled_mrth_step(const LogDensity& logdensity, double proposal_sd, double x, double y,
                                    RngStream& rng,
                                    ProposalCoupling proposals = ProposalCoupling::reflection_maximal,
                                    std::uint64_t max_iterations = kDefaultMaxRejections) {
  if (!(proposal_sd > 0.0)) throw std::invalid_argument("mrth: proposal_sd must be positive");
  CoupledDraw<double> prop{0.0, 0.0, false};
  switch (proposals) {
    case ProposalCoupling::reflection_maximal:
      prop = reflection_maximal_1d(x, y, proposal_sd, rng);
      break;
    case ProposalCoupling::maximal_rejection:
      prop = maximal_coupling_normal(x, proposal_sd, y, proposal_sd, rng, max_iterations);
      break;
    case ProposalCoupling::common_random_numbers: {
      const double w = rng.normal();
      prop = {x + proposal_sd * w, y + proposal_sd * w, x == y};
      break;
    }
  }
  const double log_u = std::log(rng.uniform());
  bool nan = false;
  auto decide = [&](double current, double proposal) {
    const double lp = logdensity(proposal);
    if (std::isnan(lp)) {
      nan = true;
      return current;
    }
    return mrth_accepts(log_u, lp - logdensity(current)) ? proposal : current;
  };
  const double xn = decide(x, prop.x);
  // Equal inputs and equal proposals must give bit-identical outputs.
  const double yn = (x == y && prop.met) ? xn : decide(y, prop.y);
  return {xn, yn, prop.met, nan};
}

// ---------------------------------------------------------------------------
// Coupled data-augmentation Gibbs: common uniforms for eta, maximal coupling for theta.

inline std::pair<double, double> coupled_gibbs_step(const CauchyNormalModel& m, double theta, double theta_tilde,
                                                    RngStream& rng,
                                                    std::uint64_t max_iterations = kDefaultMaxRejections) {
  const std::size_t n = m.observations.size();
  std::vector<double> u(n);
  std::vector<double> eta(n);
  std::vector<double> eta_tilde(n);
  for (double& ui : u) ui = rng.uniform();
  gibbs_eta_from_uniforms(m, theta, u, eta);
  gibbs_eta_from_uniforms(m, theta_tilde, u, eta_tilde);
  const NormalParams a = gibbs_theta_conditional(m, eta);
  const NormalParams b = gibbs_theta_conditional(m, eta_tilde);
  const auto draw = maximal_coupling_normal(a.mean, std::sqrt(a.variance), b.mean, std::sqrt(b.variance), rng,
                                            max_iterations);
  return {draw.x, draw.y};
}

// ---------------------------------------------------------------------------
// Finite-state couplings.

enum class FiniteCoupling { maximal_rejection, common_random_numbers, independent };

inline std::pair<std::size_t, std::size_t> coupled_finite_step(const FiniteChainModel& m, std::size_t x,
                                                               std::size_t y, RngStream& rng,
                                                               FiniteCoupling kind,
                                                               std::uint64_t max_iterations = kDefaultMaxRejections) {
  switch (kind) {
    case FiniteCoupling::maximal_rejection: {
      auto log_row = [&m](std::size_t from) {
        return [&m, from](std::size_t to) { return std::log(m.prob(from, to)); };
      };
      auto sampler = [&m](std::size_t from) {
        return [&m, from](RngStream& r) { return m.sample_row(from, r.uniform()); };
      };
      const auto d = maximal_coupling(log_row(x), sampler(x), log_row(y), sampler(y), rng, max_iterations);
      return {d.x, d.y};
    }
    case FiniteCoupling::common_random_numbers: {
      const double u = rng.uniform();
      return {m.sample_row(x, u), m.sample_row(y, u)};
    }
    case FiniteCoupling::independent: {
      const double u = rng.uniform();
      if (x == y) {
        const std::size_t s = m.sample_row(x, u);
        return {s, s};
      }
      return {m.sample_row(x, u), m.sample_row(y, rng.uniform())};
    }
  }
  throw std::logic_error("unknown finite coupling");
}

}  // namespace fishy
