// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fishy/coupled_sim.hpp"
#include "fishy/diagnostics.hpp"
#include "fishy/kernels.hpp"
#include "stats.hpp"

using namespace fishy;
namespace ft = fishy::testing;

TEST_CASE("TV bound worked examples", "[diagnostics]") {
  const std::vector<std::int64_t> taus{3, 10, 25};
  // lag 2, t 0: ceil(1/2) + ceil(8/2) + ceil(23/2) = 1 + 4 + 12
  CHECK(tv_upper_bound(taus, 2, 0) == Catch::Approx(17.0 / 3.0));
  CHECK(tv_upper_bound(taus, 2, 7) == Catch::Approx((1.0 + 8.0) / 3.0));
  CHECK(tv_upper_bound(taus, 2, 23) == 0.0);
  CHECK(tv_upper_bound(std::vector<std::int64_t>{1, 1}, 1, 0) == 0.0);
  CHECK_THROWS_AS(tv_upper_bound({}, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(tv_upper_bound(taus, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(tv_upper_bound(taus, 1, -1), std::invalid_argument);
}

TEST_CASE("TV bound is non-increasing and eventually zero", "[diagnostics]") {
  RngStream rng(120, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto lag = static_cast<std::int64_t>(1 + rng.uniform_index(10));
    std::vector<std::int64_t> taus(1 + rng.uniform_index(30));
    for (auto& t : taus) t = lag + 1 + static_cast<std::int64_t>(rng.uniform_index(200));
    const auto curve = tv_curve(taus, lag, 250);
    REQUIRE(curve.size() == 251);
    for (std::size_t i = 1; i < curve.size(); ++i) REQUIRE(curve[i].bound <= curve[i - 1].bound);
    const auto tmax = *std::max_element(taus.begin(), taus.end());
    REQUIRE(tv_upper_bound(taus, lag, tmax - lag) == 0.0);
    REQUIRE(curve.back().bound == 0.0);
  }
}

TEST_CASE("AR(1) TV bound falls below 0.01", "[diagnostics]") {
  const Ar1Kernel k(Ar1Model{0.5, 1.0});
  const auto samples = sample_meetings(k, NormalInit{0.0, 4.0}, 5, 2000, RngStream(121, 0), 1);
  std::vector<std::int64_t> taus;
  for (const auto& s : samples) taus.push_back(s.tau);
  const auto curve = tv_curve(taus, 5, 100);
  CHECK(curve.back().bound < 0.01);
}

TEST_CASE("tail fit recovers a Pareto slope", "[diagnostics]") {
  RngStream rng(122, 0);
  const double alpha = 1.5;
  std::vector<std::int64_t> taus;
  for (int i = 0; i < 100'000; ++i) {
    const double u = std::pow(rng.uniform(), -1.0 / alpha);  // P(U > t) = t^-alpha for t >= 1
    taus.push_back(static_cast<std::int64_t>(std::floor(10.0 * u)) + 1);
  }
  const auto f = tail_fit(taus, 1, 20.0);
  INFO("slope " << f.slope << " r2 " << f.r_squared);
  CHECK(f.slope == Catch::Approx(-alpha).margin(0.1));
  CHECK(f.r_squared > 0.95);
  CHECK(f.t_min >= 20.0);
}

TEST_CASE("geometric tails prefer the exponential model", "[diagnostics]") {
  RngStream rng(123, 0);
  std::vector<std::int64_t> taus;
  for (int i = 0; i < 100'000; ++i) taus.push_back(2 + static_cast<std::int64_t>(rng.exponential(0.1)));
  const auto expo = tail_fit(taus, 1, std::nullopt, TailModel::exponential);
  const auto poly = tail_fit(taus, 1, std::nullopt, TailModel::polynomial);
  CHECK(expo.r_squared > poly.r_squared);
  CHECK(expo.slope == Catch::Approx(-0.1).margin(0.01));
}

TEST_CASE("tail fit needs a spread of meeting times", "[diagnostics]") {
  CHECK_THROWS_AS(tail_fit(std::vector<std::int64_t>(100, 7), 1), std::invalid_argument);
  CHECK_THROWS_AS(tail_fit({}, 1), std::invalid_argument);
}

TEST_CASE("polynomial tail slope is scale equivariant", "[diagnostics]") {
  RngStream rng(124, 0);
  std::vector<std::int64_t> taus, scaled;
  for (int i = 0; i < 20'000; ++i) {
    const auto t = static_cast<std::int64_t>(std::floor(5.0 * std::pow(rng.uniform(), -1.0 / 2.0)));
    taus.push_back(t + 1);
    scaled.push_back(4 * t + 1);
  }
  const auto a = tail_fit(taus, 1);
  const auto b = tail_fit(scaled, 1);
  CHECK(a.slope == Catch::Approx(b.slope).epsilon(1e-12));
  CHECK(a.r_squared == Catch::Approx(b.r_squared).epsilon(1e-12));
  CHECK(b.t_min == Catch::Approx(4.0 * a.t_min));
}

TEST_CASE("bootstrap of a constant is degenerate", "[diagnostics]") {
  const std::vector<double> v(20, 3.5);
  const auto ci = bootstrap_ci(v, 500, 0.95, RngStream(125, 0));
  CHECK(ci.lo == 3.5);
  CHECK(ci.hi == 3.5);
  CHECK_THROWS_AS(bootstrap_ci(std::vector<double>{1.0}, 10, 0.95, RngStream(125, 0)), std::invalid_argument);
  CHECK_THROWS_AS(bootstrap_ci(v, 10, 1.0, RngStream(125, 0)), std::invalid_argument);
}

TEST_CASE("bootstrap intervals nest with the level", "[diagnostics]") {
  RngStream gen(126, 0);
  std::vector<double> v(50);
  for (double& x : v) x = gen.normal();
  const auto narrow = bootstrap_ci(v, 2000, 0.5, RngStream(127, 0));
  const auto wide = bootstrap_ci(v, 2000, 0.99, RngStream(127, 0));
  CHECK(wide.lo <= narrow.lo);
  CHECK(wide.hi >= narrow.hi);
  CHECK(narrow.lo <= narrow.hi);
}

TEST_CASE("bootstrap endpoints are order statistics of the resamples", "[diagnostics]") {
  // With n = 3 and a statistic returning the resample index sum, B = 20 at
  // level 0.9 uses order statistics floor(0.05 * 20) = 1 and ceil(0.95 * 20) - 1 = 18.
  const RngStream rng(128, 0);
  std::vector<double> stats;
  for (std::size_t b = 0; b < 20; ++b) {
    RngStream s = rng.split(b);
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) sum += static_cast<double>(s.uniform_index(3));
    stats.push_back(sum);
  }
  std::sort(stats.begin(), stats.end());
  const auto ci = bootstrap_statistic(3, 20, 0.9, rng, [](std::span<const std::size_t> idx) {
    double s = 0.0;
    for (auto i : idx) s += static_cast<double>(i);
    return s;
  });
  CHECK(ci.lo == stats[1]);
  CHECK(ci.hi == stats[18]);
}

TEST_CASE("bootstrap coverage is near nominal", "[diagnostics][slow]") {
  int covered = 0;
  constexpr int trials = 400;
  for (int trial = 0; trial < trials; ++trial) {
    RngStream gen(129, static_cast<std::uint64_t>(trial));
    std::vector<double> v(100);
    for (double& x : v) x = gen.normal();
    const auto ci = bootstrap_ci(v, 1000, 0.9, RngStream(130, static_cast<std::uint64_t>(trial)));
    covered += (ci.lo <= 0.0 && 0.0 <= ci.hi) ? 1 : 0;
  }
  const double rate = static_cast<double>(covered) / trials;
  INFO("coverage " << rate);
  CHECK(rate > 0.84);
  CHECK(rate < 0.96);
}

TEST_CASE("mean and unbiased variance", "[diagnostics]") {
  const auto [m, v] = mean_variance(std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(m == 2.5);
  CHECK(v == Catch::Approx(5.0 / 3.0));
  CHECK(mean_variance(std::vector<double>{7.0}).second == 0.0);
  CHECK_THROWS_AS(mean_variance({}), std::invalid_argument);
}
