// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fishy/rng.hpp"

namespace fishy {

/// Mean over samples of max(0, ceil((tau - L - t) / L)), an upper bound on
/// the total variation distance between pi_0 P^t and pi.
inline double tv_upper_bound(std::span<const std::int64_t> taus, std::int64_t lag, std::int64_t t) {
  if (taus.empty()) throw std::invalid_argument("tv_upper_bound: no meeting times");
  if (lag < 1) throw std::invalid_argument("tv_upper_bound: lag must be >= 1");
  if (t < 0) throw std::invalid_argument("tv_upper_bound: t must be >= 0");
  double sum = 0.0;
  for (std::int64_t tau : taus) {
    const std::int64_t num = tau - lag - t;
    if (num > 0) sum += static_cast<double>((num + lag - 1) / lag);
  }
  return sum / static_cast<double>(taus.size());
}

struct TvPoint {
  std::int64_t t;
  double bound;
};

inline std::vector<TvPoint> tv_curve(std::span<const std::int64_t> taus, std::int64_t lag, std::int64_t t_max) {
  if (t_max < 0) throw std::invalid_argument("tv_curve: t_max must be >= 0");
  std::vector<TvPoint> out;
  out.reserve(static_cast<std::size_t>(t_max) + 1);
  for (std::int64_t t = 0; t <= t_max; ++t) out.push_back({t, tv_upper_bound(taus, lag, t)});
  return out;
}

// ---------------------------------------------------------------------------

struct TailFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double t_min = 0.0;
  double t_max = 0.0;
  std::size_t n_points = 0;
};

enum class TailModel { polynomial, exponential };

namespace detail {

inline TailFit ols(std::span<const double> xs, std::span<const double> ys) {
  const auto n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("tail_fit: degenerate regressor");
  TailFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  f.n_points = xs.size();
  return f;
}

}  // namespace detail

/// Least-squares fit of log P(tau - L > t) against log t (polynomial) or t
/// (exponential), evaluated at the distinct observed values of tau - L that
/// are >= t_min and have positive empirical survival. t_min defaults to the
/// median of tau - L.
inline TailFit tail_fit(std::span<const std::int64_t> taus, std::int64_t lag,
                        std::optional<double> t_min = std::nullopt, TailModel model = TailModel::polynomial) {
  if (taus.empty()) throw std::invalid_argument("tail_fit: no meeting times");
  std::vector<double> u;
  u.reserve(taus.size());
  for (std::int64_t tau : taus) u.push_back(static_cast<double>(tau - lag));
  std::sort(u.begin(), u.end());
  const double lo = t_min.value_or(u[(u.size() - 1) / 2]);
  const auto n = static_cast<double>(u.size());

  std::vector<double> xs;
  std::vector<double> ys;
  double t_lo = 0.0;
  double t_hi = 0.0;
  for (std::size_t i = 0; i < u.size();) {
    std::size_t j = i;
    while (j < u.size() && u[j] == u[i]) ++j;
    const double t = u[i];
    const double survival = static_cast<double>(u.size() - j) / n;  // #{u > t} / n
    if (t >= lo && t > 0.0 && survival > 0.0) {
      if (xs.empty()) t_lo = t;
      t_hi = t;
      xs.push_back(model == TailModel::polynomial ? std::log(t) : t);
      ys.push_back(std::log(survival));
    }
    i = j;
  }
  if (xs.size() < 10) throw std::invalid_argument("tail_fit: fewer than 10 positive-survival points in fit range");
  TailFit f = detail::ols(xs, ys);
  f.t_min = t_lo;
  f.t_max = t_hi;
  return f;
}

// ---------------------------------------------------------------------------

struct ConfidenceInterval {
  double lo;
  double hi;
};

inline constexpr std::size_t kDefaultBootstrapResamples = 10'000;

/// Percentile interval of a statistic over `n_resamples` nonparametric
/// bootstrap resamples of {0..n-1}. Resample b uses stream rng.split(b), and
/// the endpoints are order statistics of the resampled statistics.
inline ConfidenceInterval bootstrap_statistic(std::size_t n, std::size_t n_resamples, double level,
                                              const RngStream& rng,
                                              const std::function<double(std::span<const std::size_t>)>& stat) {
  if (n < 2) throw std::invalid_argument("bootstrap: need at least 2 values");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap: level must be in (0,1)");
  if (n_resamples < 1) throw std::invalid_argument("bootstrap: need at least 1 resample");
  std::vector<double> stats(n_resamples);
  std::vector<std::size_t> idx(n);
  for (std::size_t b = 0; b < n_resamples; ++b) {
    RngStream s = rng.split(b);
    for (auto& i : idx) i = static_cast<std::size_t>(s.uniform_index(n));
    stats[b] = stat(idx);
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - level;
  const auto B = static_cast<double>(n_resamples);
  // The slack keeps 1 - level from rounding an exact index down (1 - 0.9 < 0.1).
  auto lo_i = static_cast<std::size_t>(std::floor(0.5 * alpha * B + 1e-9));
  auto hi_i = static_cast<std::size_t>(std::ceil((1.0 - 0.5 * alpha) * B - 1e-9));
  hi_i = hi_i == 0 ? 0 : hi_i - 1;
  lo_i = std::min(lo_i, n_resamples - 1);
  hi_i = std::min(hi_i, n_resamples - 1);
  return {stats[lo_i], stats[hi_i]};
}

/// Percentile bootstrap interval for the mean of `values`.
inline ConfidenceInterval bootstrap_ci(std::span<const double> values, std::size_t n_resamples, double level,
                                       const RngStream& rng) {
  return bootstrap_statistic(values.size(), n_resamples, level, rng, [&](std::span<const std::size_t> idx) {
    double s = 0.0;
    for (std::size_t i : idx) s += values[i];
    return s / static_cast<double>(idx.size());
  });
}

/// Sample mean and unbiased sample variance.
inline std::pair<double, double> mean_variance(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean_variance: empty input");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, ss / static_cast<double>(v.size() - 1)};
}

}  // namespace fishy
