// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ranges>
#include <span>
#include <stdexcept>
#include <vector>

#include "fishy/coupled_sim.hpp"
#include "fishy/kernel.hpp"

namespace fishy {

/// Multiplicity of the difference h(X_t) - h(Y_{t-L}) in H_{k:ell}^(L): the
/// number of positive multiples of L in {t - ell, ..., t - k}.
constexpr std::int64_t vt_weight(std::int64_t t, std::int64_t k, std::int64_t ell, std::int64_t lag) {
  if (lag < 1) throw std::invalid_argument("vt_weight: lag must be >= 1");
  if (k > ell) throw std::invalid_argument("vt_weight: k must be <= ell");
  if (t < k + lag) return 0;
  const std::int64_t lo = std::max(lag, t - ell);  // positive
  const std::int64_t hi = t - k;
  if (lo > hi) return 0;
  return hi / lag - (lo + lag - 1) / lag + 1;
}

/// Cost of H_{k:ell}^(L) in transition units: max(L, ell + L - tau) + 2 (tau - L).
constexpr std::int64_t hkl_cost(std::int64_t ell, std::int64_t lag, std::int64_t tau) {
  return std::max(lag, ell + lag - tau) + 2 * (tau - lag);
}

namespace detail {
inline void check_kl(std::int64_t k, std::int64_t ell, std::int64_t lag) {
  if (k < 0 || k > ell) throw std::invalid_argument("require 0 <= k <= ell");
  if (lag < 1) throw std::invalid_argument("lagged estimators require L >= 1");
}
}  // namespace detail

/// pi_hat = sum_n w_n delta_{Z_n}; unbiased for pi. Atoms with zero weight are not stored.
template <class State>
struct SignedMeasure {
  std::vector<State> atoms;
  std::vector<double> weights;
  std::int64_t k = 0;
  std::int64_t ell = 0;
  std::int64_t lag = 1;
  std::int64_t meeting_time = 0;
  std::int64_t cost_units = 0;

  std::size_t size() const noexcept { return atoms.size(); }

  double weight_sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

  std::vector<double> apply(const TestFunction<State>& h) const {
    std::vector<double> out(h.dim(), 0.0);
    std::vector<double> buf(h.dim());
    for (std::size_t n = 0; n < atoms.size(); ++n) {
      h.eval(atoms[n], buf);
      for (std::size_t j = 0; j < buf.size(); ++j) out[j] += weights[n] * buf[j];
    }
    return out;
  }
};

/// Visitor turning a lagged coupled simulation into signed-measure atoms.
///
/// At each X index t it emits, in order: X_t with weight 1/(ell-k+1) when
/// k <= t <= ell; then, while t < tau and t >= k+L, the pair X_t and Y_{t-L}
/// with weights +-v_t/(ell-k+1) when v_t > 0. Retained and streamed measures
/// therefore list atoms in the same order.
template <class State, class Sink>
class SignedMeasureBuilder {
 public:
  SignedMeasureBuilder(std::int64_t k, std::int64_t ell, std::int64_t lag, Sink sink)
      : k_(k), ell_(ell), lag_(lag), norm_(1.0 / static_cast<double>(ell - k + 1)), sink_(std::move(sink)) {
    detail::check_kl(k, ell, lag);
  }

  void operator()(const StepView<State>& v) {
    if (v.t >= k_ && v.t <= ell_) sink_(v.x, norm_);
    if (!v.met && v.y != nullptr && v.t >= k_ + lag_) {
      const std::int64_t w = vt_weight(v.t, k_, ell_, lag_);
      if (w > 0) {
        const double weight = static_cast<double>(w) * norm_;
        sink_(v.x, weight);
        sink_(*v.y, -weight);
      }
    }
  }

 private:
  std::int64_t k_;
  std::int64_t ell_;
  std::int64_t lag_;
  double norm_;
  Sink sink_;
};

template <class State>
SignedMeasure<State> signed_measure(const CoupledRun<State>& run, std::int64_t k, std::int64_t ell) {
  detail::check_kl(k, ell, run.lag);
  if (run.horizon() < ell) throw std::invalid_argument("signed_measure: run horizon shorter than ell");
  SignedMeasure<State> m;
  m.k = k;
  m.ell = ell;
  m.lag = run.lag;
  m.meeting_time = run.meeting_time;
  m.cost_units = hkl_cost(ell, run.lag, run.meeting_time);
  SignedMeasureBuilder<State, std::function<void(const State&, double)>> builder(
      k, ell, run.lag, [&m](const State& z, double w) {
        m.atoms.push_back(z);
        m.weights.push_back(w);
      });
  for (std::int64_t t = 0; t <= run.horizon(); ++t) {
    const bool met = t >= run.meeting_time;
    const State* y = (t >= run.lag && t <= run.meeting_time) ? &run.y(t - run.lag) : nullptr;
    builder(StepView<State>{t, run.x(t), y, met});
  }
  return m;
}

template <CoupledKernel K>
SignedMeasure<state_t<K>> sample_signed_measure(const K& kernel, const state_t<K>& x0, const state_t<K>& y0,
                                                std::int64_t k, std::int64_t ell, std::int64_t lag, RngStream& rng,
                                                std::int64_t budget = kDefaultTransitionBudget) {
  using State = state_t<K>;
  SignedMeasure<State> m;
  m.k = k;
  m.ell = ell;
  m.lag = lag;
  SignedMeasureBuilder<State, std::function<void(const State&, double)>> builder(k, ell, lag, [&m](const State& z, double w) {
    m.atoms.push_back(z);
    m.weights.push_back(w);
  });
  const RunSummary s = simulate_coupled(kernel, x0, y0, lag, ell, rng, std::ref(builder), budget);
  m.meeting_time = s.meeting_time;
  m.cost_units = s.cost_units;
  return m;
}

template <class State>
struct UnbiasedEstimate {
  std::vector<double> value;
  std::int64_t cost_units = 0;
  std::int64_t k = 0;
  std::int64_t ell = 0;
  std::int64_t lag = 1;
  std::int64_t meeting_time = 0;
};

/// H_{k:ell}^(L) = (ell-k+1)^{-1} sum_{t=k}^{ell} h(X_t)
///               + sum_{t=k+L}^{tau-1} v_t/(ell-k+1) (h(X_t) - h(Y_{t-L})).
/// The run must already cover index ell; see the kernel overload otherwise.
template <class State>
UnbiasedEstimate<State> h_kl_estimator(const CoupledRun<State>& run, const TestFunction<State>& h, std::int64_t k,
                                       std::int64_t ell) {
  detail::check_kl(k, ell, run.lag);
  if (run.horizon() < ell) throw std::invalid_argument("h_kl_estimator: run horizon shorter than ell");
  const std::size_t d = h.dim();
  const double norm = 1.0 / static_cast<double>(ell - k + 1);
  std::vector<double> ergodic(d, 0.0);
  std::vector<double> correction(d, 0.0);
  std::vector<double> hx(d);
  std::vector<double> hy(d);
  for (std::int64_t t = k; t <= ell; ++t) {
    h.eval(run.x(t), hx);
    for (std::size_t j = 0; j < d; ++j) ergodic[j] += hx[j];
  }
  for (std::int64_t t = k + run.lag; t < run.meeting_time; ++t) {
    const auto v = static_cast<double>(vt_weight(t, k, ell, run.lag));
    if (v == 0.0) continue;
    h.eval(run.x(t), hx);
    h.eval(run.y(t - run.lag), hy);
    for (std::size_t j = 0; j < d; ++j) correction[j] += v * (hx[j] - hy[j]);
  }
  UnbiasedEstimate<State> est;
  est.value.resize(d);
  for (std::size_t j = 0; j < d; ++j) est.value[j] = norm * ergodic[j] + norm * correction[j];
  est.cost_units = hkl_cost(ell, run.lag, run.meeting_time);
  est.k = k;
  est.ell = ell;
  est.lag = run.lag;
  est.meeting_time = run.meeting_time;
  return est;
}

/// As above, first extending the post-meeting chain to index ell if needed.
template <CoupledKernel K>
UnbiasedEstimate<state_t<K>> h_kl_estimator(const K& kernel, CoupledRun<state_t<K>>& run,
                                            const TestFunction<state_t<K>>& h, std::int64_t k, std::int64_t ell,
                                            RngStream& rng) {
  extend_run(kernel, run, ell, rng);
  return h_kl_estimator(run, h, k, ell);
}

/// One H_{k:ell}^(L) draw with X_0, Y_0 drawn independently from `init`.
template <CoupledKernel K, class Init>
UnbiasedEstimate<state_t<K>> unbiased_estimate(const K& kernel, const Init& init, const TestFunction<state_t<K>>& h,
                                               std::int64_t k, std::int64_t ell, std::int64_t lag,
                                               const RngStream& rng,
                                               std::int64_t budget = kDefaultTransitionBudget) {
  detail::check_kl(k, ell, lag);
  RngStream init_rng = rng.split(0);
  RngStream run_rng = rng.split(1);
  const auto x0 = init(init_rng);
  const auto y0 = init(init_rng);
  const auto run = run_coupled(kernel, x0, y0, lag, ell, run_rng, budget);
  return h_kl_estimator(run, h, k, ell);
}

// ---------------------------------------------------------------------------
// Subsampling.

/// Inverse-CDF categorical sampler over strictly positive probabilities.
class CategoricalSampler {
 public:
  explicit CategoricalSampler(std::span<const double> probs) : cumulative_(probs.size()) {
    if (probs.empty()) throw std::invalid_argument("categorical: empty probability vector");
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      cumulative_[i] = acc;
    }
    for (double& c : cumulative_) c /= acc;
    cumulative_.back() = 1.0;
  }

  std::size_t operator()(RngStream& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

/// Validates selection probabilities: length n, all > 0, summing to 1 within `tol`.
inline void validate_selection(std::span<const double> xi, std::size_t n, double tol = 1e-9) {
  if (xi.size() != n) throw std::invalid_argument("selection probabilities: length does not match atom count");
  double sum = 0.0;
  for (double p : xi) {
    if (!(p > 0.0)) throw std::invalid_argument("selection probabilities must be strictly positive");
    sum += p;
  }
  if (std::abs(sum - 1.0) > tol) throw std::invalid_argument("selection probabilities must sum to 1");
}

/// S_R for a fixed set of selected indices: R^{-1} sum_r (w_{I_r} / xi_{I_r}) h(Z_{I_r}).
template <class State>
std::vector<double> subsample_from_indices(const SignedMeasure<State>& pihat, const TestFunction<State>& h,
                                           std::span<const std::size_t> indices, std::span<const double> xi) {
  if (indices.empty()) throw std::invalid_argument("subsample: no indices");
  std::vector<double> out(h.dim(), 0.0);
  std::vector<double> buf(h.dim());
  for (std::size_t i : indices) {
    h.eval(pihat.atoms.at(i), buf);
    const double ratio = pihat.weights[i] / xi[i];
    for (std::size_t j = 0; j < buf.size(); ++j) out[j] += ratio * buf[j];
  }
  for (double& v : out) v /= static_cast<double>(indices.size());
  return out;
}

/// S_R with I_r ~ Categorical(xi). An empty `xi` means uniform selection,
/// where w/xi = N w.
template <class State>
std::vector<double> subsample_estimator(const SignedMeasure<State>& pihat, const TestFunction<State>& h,
                                        std::size_t R, std::span<const double> xi, RngStream& rng) {
  if (R < 1) throw std::invalid_argument("subsample_estimator: R must be >= 1");
  const std::size_t n = pihat.size();
  if (n == 0) throw std::invalid_argument("subsample_estimator: empty signed measure");
  std::vector<double> uniform;
  if (xi.empty()) {
    uniform.assign(n, 1.0 / static_cast<double>(n));
    xi = uniform;
  }
  validate_selection(xi, n);
  const CategoricalSampler pick(xi);
  std::vector<std::size_t> indices(R);
  for (auto& i : indices) i = pick(rng);
  return subsample_from_indices(pihat, h, indices, xi);
}

/// R independent single-item reservoirs: after n offers each slot holds a
/// uniform draw from the n items, independently of the other slots.
template <class T>
class UniformReservoirs {
 public:
  explicit UniformReservoirs(std::size_t R) : slots_(R) {
    if (R < 1) throw std::invalid_argument("reservoir: R must be >= 1");
  }

  void offer(const T& item, RngStream& rng) {
    ++seen_;
    if (seen_ == 1) {
      for (auto& s : slots_) s = item;
      return;
    }
    for (auto& s : slots_)
      if (rng.uniform_index(seen_) == 0) s = item;
  }

  std::uint64_t seen() const noexcept { return seen_; }
  const std::vector<T>& slots() const {
    if (seen_ == 0) throw std::logic_error("reservoir: no items offered");
    return slots_;
  }

 private:
  std::vector<T> slots_;
  std::uint64_t seen_ = 0;
};

/// R independent uniform indices into a stream of unknown length.
template <std::ranges::input_range Range>
std::vector<std::size_t> reservoir_select(Range&& stream, std::size_t R, RngStream& rng) {
  UniformReservoirs<std::size_t> res(R);
  std::size_t index = 0;
  for ([[maybe_unused]] auto&& item : stream) res.offer(index++, rng);
  if (index == 0) throw std::invalid_argument("reservoir_select: empty stream");
  return res.slots();
}

// ---------------------------------------------------------------------------

struct TuningChoice {
  std::int64_t k;
  std::int64_t lag;
  std::int64_t ell;
  std::int64_t quantile_tau;
};

/// k = L = empirical `quantile` of the pilot meeting times, ell = multiple * k.
inline TuningChoice pilot_tuning(std::vector<std::int64_t> taus, double quantile = 0.99, std::int64_t multiple = 5) {
  if (taus.empty()) throw std::invalid_argument("pilot_tuning: no meeting times");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw std::invalid_argument("pilot_tuning: quantile must be in (0,1]");
  std::sort(taus.begin(), taus.end());
  const auto idx = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(taus.size()))) - 1;
  const std::int64_t q = std::max<std::int64_t>(1, taus[std::min(idx, taus.size() - 1)]);
  return {q, q, multiple * q, q};
}

}  // namespace fishy
