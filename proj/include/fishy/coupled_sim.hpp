// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fishy/kernel.hpp"
#include "fishy/parallel.hpp"
#include "fishy/rng.hpp"

namespace fishy {

inline constexpr std::int64_t kDefaultTransitionBudget = 100'000'000;

/// Thrown when the chains have not met within the transition budget.
class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(std::int64_t lag, std::int64_t time_index, std::int64_t cost_units)
      : std::runtime_error("coupled chains did not meet within budget (lag=" + std::to_string(lag) +
                           ", reached t=" + std::to_string(time_index) +
                           ", cost=" + std::to_string(cost_units) + " transitions)"),
        lag_(lag), time_index_(time_index), cost_units_(cost_units) {}

  std::int64_t lag() const noexcept { return lag_; }
  std::int64_t time_index() const noexcept { return time_index_; }
  std::int64_t cost_units() const noexcept { return cost_units_; }

 private:
  std::int64_t lag_;
  std::int64_t time_index_;
  std::int64_t cost_units_;
};

/// What a visitor sees at each X index t of a lagged coupled simulation.
///
/// `y` points at Y_{t-L} for L <= t <= tau and is null otherwise; past the
/// meeting Y_{t-L} equals X_t and is not simulated. `met` is true iff t >= tau.
template <class State>
struct StepView {
  std::int64_t t;
  const State& x;
  const State* y;
  bool met;
};

struct RunSummary {
  std::int64_t lag = 0;
  std::int64_t meeting_time = 0;  // tau^(L): smallest t with X_t = Y_{t-L}
  std::int64_t last_index = 0;    // largest X index simulated
  std::int64_t cost_units = 0;    // P-steps count 1, coupled steps before meeting count 2
};

/// Simulates lagged coupled chains, streaming every state to `visit`.
///
/// X runs L steps alone, then (X_{t+1}, Y_{t-L+1}) is drawn from the coupled
/// kernel until the chains meet. With L >= 1 the first meeting check happens
/// after the first coupled step, so tau >= L + 1; with L = 0, tau = 0 iff
/// x0 == y0. After meeting only X advances, up to index `horizon_min`.
template <CoupledKernel K, class Visitor>
RunSummary simulate_coupled(const K& kernel, state_t<K> x0, state_t<K> y0, std::int64_t lag,
                            std::int64_t horizon_min, RngStream& rng, Visitor&& visit,
                            std::int64_t budget = kDefaultTransitionBudget) {
  if (lag < 0) throw std::invalid_argument("lag must be >= 0");
  if (horizon_min < 0) throw std::invalid_argument("horizon must be >= 0");
  using State = state_t<K>;

  RunSummary s;
  s.lag = lag;
  State x = std::move(x0);
  State y = std::move(y0);
  std::int64_t t = 0;
  bool met = false;

  if (lag == 0) {
    met = (x == y);
    visit(StepView<State>{0, x, &y, met});
  } else {
    visit(StepView<State>{0, x, nullptr, false});
    for (t = 1; t <= lag; ++t) {
      x = kernel.step(x, rng);
      ++s.cost_units;
      visit(StepView<State>{t, x, t == lag ? &y : nullptr, false});
    }
    t = lag;
  }

  while (!met) {
    auto next = kernel.coupled_step(x, y, rng);
    x = std::move(next.first);
    y = std::move(next.second);
    s.cost_units += 2;
    ++t;
    met = (x == y);
    visit(StepView<State>{t, x, &y, met});
    if (!met && s.cost_units >= budget) throw BudgetExceeded(lag, t, s.cost_units);
  }
  s.meeting_time = t;

  while (t < horizon_min) {
    x = kernel.step(x, rng);
    ++s.cost_units;
    ++t;
    visit(StepView<State>{t, x, nullptr, true});
  }
  s.last_index = t;
  return s;
}

/// Fully retained lagged coupled trajectories.
template <class State>
struct CoupledRun {
  std::int64_t lag = 0;
  std::vector<State> x_path;  // X_0 .. X_T
  std::vector<State> y_path;  // Y_0 .. Y_{tau-L}
  std::int64_t meeting_time = 0;
  std::int64_t cost_units = 0;

  std::int64_t horizon() const noexcept { return static_cast<std::int64_t>(x_path.size()) - 1; }
  const State& x(std::int64_t t) const { return x_path.at(static_cast<std::size_t>(t)); }
  const State& y(std::int64_t s) const { return y_path.at(static_cast<std::size_t>(s)); }
};

template <CoupledKernel K>
CoupledRun<state_t<K>> run_coupled(const K& kernel, state_t<K> x0, state_t<K> y0, std::int64_t lag,
                                   std::int64_t horizon_min, RngStream& rng,
                                   std::int64_t budget = kDefaultTransitionBudget) {
  CoupledRun<state_t<K>> run;
  run.lag = lag;
  const RunSummary s = simulate_coupled(
      kernel, std::move(x0), std::move(y0), lag, horizon_min, rng,
      [&run](const StepView<state_t<K>>& v) {
        run.x_path.push_back(v.x);
        if (v.y) run.y_path.push_back(*v.y);
      },
      budget);
  run.meeting_time = s.meeting_time;
  run.cost_units = s.cost_units;
  return run;
}

/// Advances the single post-meeting chain of `run` until its horizon reaches `horizon`.
template <CoupledKernel K>
void extend_run(const K& kernel, CoupledRun<state_t<K>>& run, std::int64_t horizon, RngStream& rng) {
  while (run.horizon() < horizon) {
    run.x_path.push_back(kernel.step(run.x_path.back(), rng));
    ++run.cost_units;
  }
}

template <class State>
struct MeetingSample {
  std::int64_t tau;
  std::int64_t lag;
  std::int64_t cost_units;
  State x0;
  State y0;
  std::uint64_t master_seed;
  std::uint64_t stream_id;
};

/// Independent meeting times with X_0, Y_0 drawn independently from `init`.
/// Replicate i uses stream rng.split(i), so results do not depend on `workers`.
template <CoupledKernel K, class Init>
std::vector<MeetingSample<state_t<K>>> sample_meetings(const K& kernel, const Init& init, std::int64_t lag,
                                                       std::size_t n_reps, const RngStream& rng,
                                                       unsigned workers = default_workers(),
                                                       std::int64_t budget = kDefaultTransitionBudget) {
  if (n_reps < 1) throw std::invalid_argument("sample_meetings: n_reps must be >= 1");
  return parallel_map(n_reps, workers, [&](std::size_t i) {
    RngStream rep = rng.split(i);
    RngStream init_rng = rep.split(0);
    RngStream run_rng = rep.split(1);
    state_t<K> x0 = init(init_rng);
    state_t<K> y0 = init(init_rng);
    const RunSummary s = simulate_coupled(kernel, x0, y0, lag, 0, run_rng, [](const auto&) {}, budget);
    return MeetingSample<state_t<K>>{s.meeting_time, lag, s.cost_units, x0, y0, rep.master_seed(),
                                     rep.stream_id()};
  });
}

}  // namespace fishy
