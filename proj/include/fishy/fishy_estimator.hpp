// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fishy/coupled_sim.hpp"
#include "fishy/kernel.hpp"
#include "fishy/parallel.hpp"

namespace fishy {

/// One realization of G_y(x) = sum_{t < tau} h(X_t) - h(Y_t), with (X_0, Y_0) = (x, y).
template <class State>
struct FishyEstimate {
  std::vector<double> value;  // length h.dim()
  State anchor;
  State eval_point;
  std::int64_t tau = 0;
  std::int64_t cost_units = 0;  // 2 tau
};

/// Unbiased for g_star(x) - g_star(y). Runs the coupled chains with lag 0.
template <CoupledKernel K>
FishyEstimate<state_t<K>> estimate_fishy(const K& kernel, const TestFunction<state_t<K>>& h,
                                         const state_t<K>& x, const state_t<K>& y, RngStream& rng,
                                         std::int64_t budget = kDefaultTransitionBudget) {
  using State = state_t<K>;
  const std::size_t d = h.dim();
  FishyEstimate<State> est{std::vector<double>(d, 0.0), y, x, 0, 0};
  std::vector<double> hx(d);
  std::vector<double> hy(d);
  const RunSummary s = simulate_coupled(
      kernel, x, y, 0, 0, rng,
      [&](const StepView<State>& v) {
        if (v.met) return;
        h.eval(v.x, hx);
        h.eval(*v.y, hy);
        for (std::size_t j = 0; j < d; ++j) est.value[j] += hx[j] - hy[j];
      },
      budget);
  est.tau = s.meeting_time;
  est.cost_units = s.cost_units;
  return est;
}

/// Draws Y_0 ~ nu from `rng`, then G_{Y_0}(x); unbiased for g_star(x) - nu(g_star).
template <CoupledKernel K, class NuSampler>
FishyEstimate<state_t<K>> estimate_fishy_randomized(const K& kernel, const TestFunction<state_t<K>>& h,
                                                    const state_t<K>& x, const NuSampler& nu, RngStream& rng,
                                                    std::int64_t budget = kDefaultTransitionBudget) {
  const state_t<K> y = nu(rng);
  return estimate_fishy(kernel, h, x, y, rng, budget);
}

template <class State>
struct FishyProfileRow {
  State x;
  double mean;
  double se;
  double second_moment;  // raw E[G(x)^2]
  double mean_cost;
};

/// Monte Carlo mean, standard error and raw second moment of G_y(x) on a grid.
/// Grid point i, replicate r uses stream rng.split(i).split(r).
template <CoupledKernel K>
std::vector<FishyProfileRow<state_t<K>>> fishy_profile(const K& kernel, const TestFunction<state_t<K>>& h,
                                                       const std::vector<state_t<K>>& grid, const state_t<K>& y,
                                                       std::size_t n_reps, const RngStream& rng,
                                                       unsigned workers = default_workers(),
                                                       std::int64_t budget = kDefaultTransitionBudget) {
  if (n_reps < 2) throw std::invalid_argument("fishy_profile: n_reps must be >= 2");
  if (h.dim() != 1) throw std::invalid_argument("fishy_profile: scalar test function required");
  std::vector<FishyProfileRow<state_t<K>>> rows;
  rows.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const RngStream point = rng.split(i);
    struct Draw {
      double g;
      std::int64_t cost;
    };
    const auto draws = parallel_map(n_reps, workers, [&](std::size_t r) {
      RngStream s = point.split(r);
      const auto e = estimate_fishy(kernel, h, grid[i], y, s, budget);
      return Draw{e.value[0], e.cost_units};
    });
    double sum = 0.0;
    double sum_sq = 0.0;
    double cost = 0.0;
    for (const auto& dr : draws) {
      sum += dr.g;
      sum_sq += dr.g * dr.g;
      cost += static_cast<double>(dr.cost);
    }
    const double n = static_cast<double>(n_reps);
    const double mean = sum / n;
    const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
    rows.push_back({grid[i], mean, std::sqrt(var / n), sum_sq / n, cost / n});
  }
  return rows;
}

}  // namespace fishy
