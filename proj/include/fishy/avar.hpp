// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fishy/coupled_sim.hpp"
#include "fishy/diagnostics.hpp"
#include "fishy/fishy_estimator.hpp"
#include "fishy/kernel.hpp"
#include "fishy/parallel.hpp"
#include "fishy/unbiased.hpp"

namespace fishy {

/// First and second moments of a signed measure: pi_hat(h) and pi_hat(h h^T).
struct MeasureMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd second;
  std::size_t n_atoms = 0;
  double weight_sum = 0.0;

  explicit MeasureMoments(std::size_t d = 1)
      : mean(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))),
        second(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))) {}

  void add(std::span<const double> hz, double w) {
    const Eigen::Map<const Eigen::VectorXd> v(hz.data(), static_cast<Eigen::Index>(hz.size()));
    mean += w * v;
    second.noalias() += w * v * v.transpose();
    weight_sum += w;
    ++n_atoms;
  }
};

template <class State>
MeasureMoments measure_moments(const SignedMeasure<State>& m, const TestFunction<State>& h) {
  MeasureMoments mm(h.dim());
  std::vector<double> buf(h.dim());
  for (std::size_t n = 0; n < m.size(); ++n) {
    h.eval(m.atoms[n], buf);
    mm.add(buf, m.weights[n]);
  }
  return mm;
}

/// Matrix form of 1/2 {pi1(h h^T) + pi2(h h^T)} - 1/2 {pi1(h) pi2(h)^T + pi2(h) pi1(h)^T}.
inline Eigen::MatrixXd unbiased_target_covariance(const MeasureMoments& a, const MeasureMoments& b) {
  const Eigen::MatrixXd cross = a.mean * b.mean.transpose();
  return 0.5 * (a.second + b.second) - 0.5 * (cross + cross.transpose());
}

/// 1/2 {pi1(h^2) + pi2(h^2)} - pi1(h) pi2(h), unbiased for var_pi(h) when the
/// two signed measures are independent.
template <class State>
double unbiased_target_variance(const SignedMeasure<State>& pihat1, const SignedMeasure<State>& pihat2,
                                const TestFunction<State>& h) {
  if (h.dim() != 1) throw std::invalid_argument("unbiased_target_variance: scalar test function required");
  return unbiased_target_covariance(measure_moments(pihat1, h), measure_moments(pihat2, h))(0, 0);
}

// ---------------------------------------------------------------------------
// Selection probabilities.

enum class SelectionKind { uniform, proportional, optimal };

inline std::string_view to_string(SelectionKind k) {
  switch (k) {
    case SelectionKind::uniform: return "uniform";
    case SelectionKind::proportional: return "proportional";
    case SelectionKind::optimal: return "optimal";
  }
  return "?";
}

inline std::optional<SelectionKind> parse_selection_kind(std::string_view s) {
  for (auto k : {SelectionKind::uniform, SelectionKind::proportional, SelectionKind::optimal})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct SelectionProbs {
  std::vector<double> xi;
  SelectionKind kind = SelectionKind::uniform;
  bool fell_back_to_uniform = false;
};

inline constexpr double kSelectionFloor = 1e-6;

/// Pilot estimates of E[G_y(z)^2] on a grid of states; lookups use the
/// nearest grid point.
class SecondMomentTable {
 public:
  SecondMomentTable() = default;
  SecondMomentTable(std::vector<double> keys, std::vector<double> values) {
    if (keys.size() != values.size() || keys.empty())
      throw std::invalid_argument("second-moment table: keys and values must be non-empty and equal length");
    std::vector<std::size_t> order(keys.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    for (std::size_t i : order) {
      if (!(values[i] >= 0.0)) throw std::invalid_argument("second-moment table: values must be >= 0");
      keys_.push_back(keys[i]);
      values_.push_back(values[i]);
    }
  }

  template <class State>
  static SecondMomentTable from_profile(const std::vector<FishyProfileRow<State>>& rows) {
    std::vector<double> k, v;
    for (const auto& r : rows) {
      k.push_back(state_key(r.x));
      v.push_back(r.second_moment);
    }
    return SecondMomentTable(std::move(k), std::move(v));
  }

  double lookup(double key) const {
    if (keys_.empty()) throw std::logic_error("second-moment table is empty");
    const auto it = std::lower_bound(keys_.begin(), keys_.end(), key);
    if (it == keys_.begin()) return values_.front();
    if (it == keys_.end()) return values_.back();
    const auto i = static_cast<std::size_t>(it - keys_.begin());
    return (key - keys_[i - 1] <= keys_[i] - key) ? values_[i - 1] : values_[i];
  }

  bool empty() const noexcept { return keys_.empty(); }
  std::size_t size() const noexcept { return keys_.size(); }

 private:
  std::vector<double> keys_;
  std::vector<double> values_;
};

/// xi_n proportional to sqrt(alpha_n), floored at eps/N and renormalized.
/// All-zero alpha falls back to uniform.
inline SelectionProbs optimal_selection_from_alpha(std::span<const double> alpha, double eps = kSelectionFloor) {
  const std::size_t n = alpha.size();
  if (n == 0) throw std::invalid_argument("selection: no atoms");
  SelectionProbs out;
  out.kind = SelectionKind::optimal;
  out.xi.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(alpha[i] >= 0.0)) throw std::invalid_argument("selection: alpha must be >= 0");
    out.xi[i] = std::sqrt(alpha[i]);
    total += out.xi[i];
  }
  if (!(total > 0.0)) {
    out.xi.assign(n, 1.0 / static_cast<double>(n));
    out.fell_back_to_uniform = true;
    return out;
  }
  const double floor = eps / static_cast<double>(n);
  double sum = 0.0;
  for (double& x : out.xi) {
    x = std::max(x / total, floor);
    sum += x;
  }
  for (double& x : out.xi) x /= sum;
  return out;
}

/// Selection probabilities over the atoms of `pihat`. `other_mean` is
/// pi_hat^(i)(h) of the other measure; `table` is required for `optimal`.
template <class State>
SelectionProbs selection_probs(const SignedMeasure<State>& pihat, const TestFunction<State>& h, double other_mean,
                               const SecondMomentTable* table, SelectionKind kind) {
  const std::size_t n = pihat.size();
  if (n == 0) throw std::invalid_argument("selection: no atoms");
  switch (kind) {
    case SelectionKind::uniform:
      return {std::vector<double>(n, 1.0 / static_cast<double>(n)), kind, false};
    case SelectionKind::proportional: {
      std::vector<double> a(n);
      for (std::size_t i = 0; i < n; ++i) a[i] = pihat.weights[i] * pihat.weights[i];
      auto s = optimal_selection_from_alpha(a);
      s.kind = kind;
      return s;
    }
    case SelectionKind::optimal: {
      if (table == nullptr || table->empty())
        throw std::invalid_argument("optimal selection requires a second-moment table");
      if (h.dim() != 1) throw std::invalid_argument("optimal selection requires a scalar test function");
      std::vector<double> a(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double c = pihat.weights[i] * (h(pihat.atoms[i]) - other_mean);
        a[i] = c * c * table->lookup(state_key(pihat.atoms[i]));
      }
      return optimal_selection_from_alpha(a);
    }
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// SUAVE.

struct SuaveConfig {
  std::int64_t k = 0;
  std::int64_t ell = 0;
  std::int64_t lag = 1;
  std::size_t R = 1;
  SelectionKind xi_kind = SelectionKind::uniform;
  const SecondMomentTable* table = nullptr;
  std::int64_t budget = kDefaultTransitionBudget;

  void validate() const {
    detail::check_kl(k, ell, lag);
    if (R < 1) throw std::invalid_argument("SUAVE: R must be >= 1");
  }
};

template <class State>
struct AvarEstimate {
  Eigen::MatrixXd value;
  std::int64_t cost_total = 0;
  std::int64_t cost_fishy = 0;
  std::int64_t cost_signed_measures = 0;
  std::size_t R = 0;
  State anchor{};
  bool fell_back_to_uniform = false;

  double scalar() const {
    if (value.rows() != 1 || value.cols() != 1) throw std::logic_error("AvarEstimate::scalar on a matrix estimate");
    return value(0, 0);
  }
};

namespace detail {

template <class State>
struct SelectedAtom {
  State z;
  double ratio;  // omega / xi
};

/// Fishy estimates at the selected atoms and the final SUAVE combination.
template <CoupledKernel K>
void suave_finish(const K& kernel, const TestFunction<state_t<K>>& h, const state_t<K>& y,
                  const std::vector<MeasureMoments>& moments,
                  const std::vector<std::vector<SelectedAtom<state_t<K>>>>& selected, std::size_t R,
                  std::int64_t budget, const RngStream& rng, AvarEstimate<state_t<K>>& out) {
  const std::size_t d = h.dim();
  const auto di = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(di, di);
  Eigen::VectorXd hz(di);
  for (std::size_t j = 0; j < 2; ++j) {
    const Eigen::VectorXd& other_mean = moments[1 - j].mean;
    for (std::size_t r = 0; r < R; ++r) {
      const auto& a = selected[j][r];
      RngStream frng = rng.split(100 + j * R + r);
      const auto g = estimate_fishy(kernel, h, a.z, y, frng, budget);
      out.cost_fishy += g.cost_units;
      h.eval(a.z, std::span<double>(hz.data(), d));
      const Eigen::Map<const Eigen::VectorXd> gv(g.value.data(), di);
      C.noalias() += a.ratio * (hz - other_mean) * gv.transpose();
    }
  }
  C /= 2.0 * static_cast<double>(R);
  const Eigen::MatrixXd est = -unbiased_target_covariance(moments[0], moments[1]) + C + C.transpose();
  out.value = 0.5 * (est + est.transpose());
  out.cost_total = out.cost_signed_measures + out.cost_fishy;
}

}  // namespace detail

/// SUAVE given two retained signed measures. Atom selection for measure j
/// uses rng.split(3 + j) and the fishy run for selection r of measure j uses
/// rng.split(100 + j R + r). Only cfg.R, cfg.xi_kind, cfg.table and
/// cfg.budget are read.
template <CoupledKernel K>
AvarEstimate<state_t<K>> suave_given_measures(const K& kernel, const TestFunction<state_t<K>>& h,
                                              const state_t<K>& y, const SignedMeasure<state_t<K>>& m1,
                                              const SignedMeasure<state_t<K>>& m2, const SuaveConfig& cfg,
                                              const RngStream& rng) {
  using State = state_t<K>;
  if (cfg.R < 1) throw std::invalid_argument("SUAVE: R must be >= 1");
  if (cfg.xi_kind == SelectionKind::optimal && h.dim() != 1)
    throw std::invalid_argument("SUAVE: optimal selection supports scalar test functions only");
  AvarEstimate<State> out;
  out.R = cfg.R;
  out.anchor = y;
  out.cost_signed_measures = m1.cost_units + m2.cost_units;
  const SignedMeasure<State>* measures[2] = {&m1, &m2};
  std::vector<MeasureMoments> moments{measure_moments(m1, h), measure_moments(m2, h)};
  std::vector<std::vector<detail::SelectedAtom<State>>> selected(2);
  for (std::size_t j = 0; j < 2; ++j) {
    const auto& m = *measures[j];
    const SelectionProbs xi = selection_probs(m, h, moments[1 - j].mean(0), cfg.table, cfg.xi_kind);
    if (xi.fell_back_to_uniform) {
      out.fell_back_to_uniform = true;
      std::clog << "fishy: optimal selection weights all zero, using uniform selection\n";
    }
    RngStream sel_rng = rng.split(3 + j);
    const CategoricalSampler pick(xi.xi);
    for (std::size_t r = 0; r < cfg.R; ++r) {
      const std::size_t i = pick(sel_rng);
      selected[j].push_back({m.atoms[i], m.weights[i] / xi.xi[i]});
    }
  }
  detail::suave_finish(kernel, h, y, moments, selected, cfg.R, cfg.budget, rng, out);
  return out;
}

/// One SUAVE draw of v(P, h) (a d x d matrix for d-dimensional h).
///
/// Measure j in {0,1} uses rng.split(1 + j): X_0 and Y_0 from its split(0),
/// the chains from its split(1). Selection and fishy streams are as in
/// suave_given_measures. With uniform xi the measures are streamed through
/// reservoirs; otherwise atoms are retained.
template <CoupledKernel K, class Init>
AvarEstimate<state_t<K>> suave(const K& kernel, const Init& init, const TestFunction<state_t<K>>& h,
                               const state_t<K>& y, const SuaveConfig& cfg, const RngStream& rng) {
  using State = state_t<K>;
  cfg.validate();
  const std::size_t d = h.dim();
  if (cfg.xi_kind == SelectionKind::optimal && d != 1)
    throw std::invalid_argument("SUAVE: optimal selection supports scalar test functions only");

  if (cfg.xi_kind != SelectionKind::uniform) {
    std::vector<SignedMeasure<State>> measures;
    for (std::size_t j = 0; j < 2; ++j) {
      RngStream mrng = rng.split(1 + j);
      RngStream init_rng = mrng.split(0);
      RngStream run_rng = mrng.split(1);
      const State x0 = init(init_rng);
      const State y0 = init(init_rng);
      measures.push_back(sample_signed_measure(kernel, x0, y0, cfg.k, cfg.ell, cfg.lag, run_rng, cfg.budget));
    }
    return suave_given_measures(kernel, h, y, measures[0], measures[1], cfg, rng);
  }

  AvarEstimate<State> out;
  out.R = cfg.R;
  out.anchor = y;
  std::vector<MeasureMoments> moments;
  std::vector<std::vector<detail::SelectedAtom<State>>> selected(2);
  std::vector<double> buf(d);
  for (std::size_t j = 0; j < 2; ++j) {
    RngStream mrng = rng.split(1 + j);
    RngStream init_rng = mrng.split(0);
    RngStream run_rng = mrng.split(1);
    RngStream sel_rng = rng.split(3 + j);
    const State x0 = init(init_rng);
    const State y0 = init(init_rng);
    MeasureMoments mm(d);
    UniformReservoirs<std::pair<State, double>> res(cfg.R);
    SignedMeasureBuilder<State, std::function<void(const State&, double)>> builder(
        cfg.k, cfg.ell, cfg.lag, [&](const State& z, double w) {
          h.eval(z, buf);
          mm.add(buf, w);
          res.offer({z, w}, sel_rng);
        });
    const RunSummary s = simulate_coupled(kernel, x0, y0, cfg.lag, cfg.ell, run_rng, std::ref(builder), cfg.budget);
    out.cost_signed_measures += s.cost_units;
    const auto n = static_cast<double>(res.seen());
    for (const auto& [z, w] : res.slots()) selected[j].push_back({z, w * n});
    moments.push_back(std::move(mm));
  }
  detail::suave_finish(kernel, h, y, moments, selected, cfg.R, cfg.budget, rng, out);
  return out;
}

/// M independent SUAVE draws; replicate m uses rng.split(m).
template <CoupledKernel K, class Init>
std::vector<AvarEstimate<state_t<K>>> suave_replicates(const K& kernel, const Init& init,
                                                       const TestFunction<state_t<K>>& h, const state_t<K>& y,
                                                       const SuaveConfig& cfg, std::size_t M, const RngStream& rng,
                                                       unsigned workers = default_workers()) {
  cfg.validate();
  return parallel_map(M, workers, [&](std::size_t m) { return suave(kernel, init, h, y, cfg, rng.split(m)); });
}

// ---------------------------------------------------------------------------
// EPAVE.

struct EpaveEstimate {
  double value = 0.0;
  double pi_mc = 0.0;
  double v_mc = 0.0;
  std::int64_t n_fishy = 0;
  std::int64_t cost_chain = 0;
  std::int64_t cost_fishy = 0;
};

/// -v^MC(h) + (2/t') sum_{s in S} (h(X_s) - pi^MC(h)) G_y(X_s), where the
/// chain runs `burn_in` then `t_steps` steps, S holds the post-burn-in indices
/// s = 0, D, 2D, ... and t' = |S|. Only running sums are kept.
/// The chain uses rng.split(0); the fishy run at the i-th thinned index uses rng.split(1 + i).
template <CoupledKernel K>
EpaveEstimate epave(const K& kernel, const TestFunction<state_t<K>>& h, const state_t<K>& x0,
                    std::int64_t burn_in, std::int64_t t_steps, std::int64_t thin, const state_t<K>& y,
                    const RngStream& rng, std::int64_t budget = kDefaultTransitionBudget) {
  if (t_steps < 2) throw std::invalid_argument("epave: t must be >= 2");
  if (thin < 1) throw std::invalid_argument("epave: D must be >= 1");
  if (burn_in < 0) throw std::invalid_argument("epave: burn-in must be >= 0");
  if (h.dim() != 1) throw std::invalid_argument("epave: scalar test function required");
  RngStream chain = rng.split(0);
  EpaveEstimate e;
  state_t<K> x = x0;
  for (std::int64_t i = 0; i < burn_in; ++i) x = kernel.step(x, chain);
  e.cost_chain = burn_in;

  double sum_h = 0.0, sum_h2 = 0.0, sum_hg = 0.0, sum_g = 0.0;
  for (std::int64_t s = 0; s < t_steps; ++s) {
    if (s > 0) {
      x = kernel.step(x, chain);
      ++e.cost_chain;
    }
    const double hx = h(x);
    sum_h += hx;
    sum_h2 += hx * hx;
    if (s % thin == 0) {
      RngStream frng = rng.split(1 + static_cast<std::uint64_t>(e.n_fishy));
      const auto g = estimate_fishy(kernel, h, x, y, frng, budget);
      sum_hg += hx * g.value[0];
      sum_g += g.value[0];
      e.cost_fishy += g.cost_units;
      ++e.n_fishy;
    }
  }
  const auto t = static_cast<double>(t_steps);
  const auto tp = static_cast<double>(e.n_fishy);
  e.pi_mc = sum_h / t;
  e.v_mc = sum_h2 / t - e.pi_mc * e.pi_mc;
  e.value = -e.v_mc + (2.0 / tp) * (sum_hg - e.pi_mc * sum_g);
  return e;
}

// ---------------------------------------------------------------------------

struct Inefficiency {
  double mean = 0.0;
  double variance = 0.0;
  double mean_cost = 0.0;
  double product = 0.0;  // variance * mean_cost
  ConfidenceInterval mean_ci{};
  ConfidenceInterval variance_ci{};
  ConfidenceInterval product_ci{};
  std::size_t n = 0;
};

/// Empirical variance, mean cost, their product, and percentile bootstrap
/// intervals (resampling replicate pairs).
inline Inefficiency inefficiency(std::span<const double> values, std::span<const double> costs,
                                 std::size_t n_resamples = kDefaultBootstrapResamples, double level = 0.95,
                                 const RngStream& rng = RngStream(0, 0)) {
  if (values.size() != costs.size()) throw std::invalid_argument("inefficiency: values and costs differ in length");
  if (values.size() < 2) throw std::invalid_argument("inefficiency: need at least 2 replicates");
  Inefficiency out;
  out.n = values.size();
  std::tie(out.mean, out.variance) = mean_variance(values);
  out.mean_cost = mean_variance(costs).first;
  out.product = out.variance * out.mean_cost;

  auto resampled = [&](std::span<const std::size_t> idx, bool with_cost) {
    const auto n = static_cast<double>(idx.size());
    double m = 0.0, c = 0.0;
    for (std::size_t i : idx) {
      m += values[i];
      c += costs[i];
    }
    m /= n;
    double ss = 0.0;
    for (std::size_t i : idx) ss += (values[i] - m) * (values[i] - m);
    const double var = ss / (n - 1.0);
    return with_cost ? var * c / n : var;
  };
  out.mean_ci = bootstrap_ci(values, n_resamples, level, rng.split(0));
  out.variance_ci = bootstrap_statistic(values.size(), n_resamples, level, rng.split(1),
                                        [&](std::span<const std::size_t> idx) { return resampled(idx, false); });
  out.product_ci = bootstrap_statistic(values.size(), n_resamples, level, rng.split(2),
                                       [&](std::span<const std::size_t> idx) { return resampled(idx, true); });
  return out;
}

}  // namespace fishy
