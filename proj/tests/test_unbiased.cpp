// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <numeric>
#include <vector>

#include "fishy/kernels.hpp"
#include "fishy/oracle.hpp"
#include "fishy/unbiased.hpp"
#include "stats.hpp"

using namespace fishy;
namespace ft = fishy::testing;

namespace {

/// Counts j >= 1 with t - ell <= j L <= t - k, for t >= k + L.
std::int64_t brute_weight(std::int64_t t, std::int64_t k, std::int64_t ell, std::int64_t lag) {
  if (t < k + lag) return 0;
  std::int64_t count = 0;
  for (std::int64_t j = 1; j * lag <= t - k; ++j)
    if (j * lag >= t - ell) ++count;
  return count;
}

SignedMeasure<double> three_atoms() {
  SignedMeasure<double> m;
  m.atoms = {-1.0, 0.5, 2.0};
  m.weights = {0.7, -0.4, 0.7};
  return m;
}

}  // namespace

TEST_CASE("v_t worked examples", "[unbiased]") {
  STATIC_CHECK(vt_weight(5, 2, 10, 3) == 1);
  STATIC_CHECK(vt_weight(20, 2, 10, 3) == 3);
  STATIC_CHECK(vt_weight(4, 2, 10, 3) == 0);
  STATIC_CHECK(vt_weight(100, 0, 0, 1) == 1);
  STATIC_CHECK(hkl_cost(10, 2, 3) == 11);
  CHECK_THROWS_AS(vt_weight(5, 2, 10, 0), std::invalid_argument);
  CHECK_THROWS_AS(vt_weight(5, 11, 10, 1), std::invalid_argument);
}

TEST_CASE("v_t matches brute-force counting", "[unbiased]") {
  for (std::int64_t lag = 1; lag <= 12; ++lag)
    for (std::int64_t k = 0; k <= 15; ++k)
      for (std::int64_t ell = k; ell <= k + 25; ++ell)
        for (std::int64_t t = 0; t <= ell + 3 * lag + 30; ++t)
          REQUIRE(vt_weight(t, k, ell, lag) == brute_weight(t, k, ell, lag));
}

TEST_CASE("signed measure reproduces H and sums to one", "[unbiased]") {
  const Ar1Kernel kernel(Ar1Model{0.9, 1.0});
  const TestFunction<double> h(2, [](const double& x, std::span<double> out) {
    out[0] = x;
    out[1] = std::cos(x);
  });
  struct Case {
    std::int64_t k, ell, lag;
  };
  for (const auto c : {Case{0, 0, 1}, Case{5, 40, 3}, Case{10, 12, 7}, Case{3, 60, 20}}) {
    for (std::uint64_t r = 0; r < 100; ++r) {
      RngStream rng(60, r);
      const auto run = run_coupled(kernel, 6.0 * rng.normal(), 6.0 * rng.normal(), c.lag, c.ell, rng);
      const auto m = signed_measure(run, c.k, c.ell);
      const auto est = h_kl_estimator(run, h, c.k, c.ell);
      const auto applied = m.apply(h);
      for (std::size_t j = 0; j < 2; ++j) REQUIRE(applied[j] == Catch::Approx(est.value[j]).epsilon(1e-12).margin(1e-12));
      REQUIRE(m.weight_sum() == Catch::Approx(1.0).epsilon(1e-12));
      REQUIRE(m.cost_units == est.cost_units);

      const double norm = static_cast<double>(c.ell - c.k + 1);
      const double wmin = 1.0 / norm;
      const double wmax = (1.0 + static_cast<double>(c.ell - c.k) / static_cast<double>(c.lag)) / norm;
      for (double w : m.weights) {
        REQUIRE(w != 0.0);
        REQUIRE(std::abs(w) >= wmin - 1e-15);
        REQUIRE(std::abs(w) <= wmax + 1e-15);
      }
      if (c.ell - c.k + 1 >= c.lag) {
        const auto pairs = std::max<std::int64_t>(0, run.meeting_time - c.lag - c.k);
        REQUIRE(static_cast<std::int64_t>(m.size()) == (c.ell - c.k + 1) + 2 * pairs);
      }
    }
  }
}

TEST_CASE("streamed and retained measures agree atom for atom", "[unbiased]") {
  const Ar1Kernel kernel(Ar1Model{0.9, 1.0});
  for (std::uint64_t r = 0; r < 50; ++r) {
    RngStream a(61, r), b(61, r);
    const auto streamed = sample_signed_measure(kernel, 5.0, -5.0, 4, 30, 6, a);
    const auto run = run_coupled(kernel, 5.0, -5.0, 6, 30, b);
    const auto retained = signed_measure(run, 4, 30);
    REQUIRE(streamed.atoms == retained.atoms);
    REQUIRE(streamed.weights == retained.weights);
    REQUIRE(streamed.meeting_time == retained.meeting_time);
    REQUIRE(streamed.cost_units == retained.cost_units);
  }
}

TEST_CASE("estimators reject bad tuning", "[unbiased]") {
  const Ar1Kernel kernel(Ar1Model{0.5, 1.0});
  RngStream rng(62, 0);
  const auto run = run_coupled(kernel, 0.0, 1.0, 1, 5, rng);
  CHECK_THROWS_AS(signed_measure(run, 0, 10), std::invalid_argument);
  CHECK_THROWS_AS(h_kl_estimator(run, identity_function(), 4, 3), std::invalid_argument);
  auto copy = run;
  CHECK_NOTHROW(h_kl_estimator(kernel, copy, identity_function(), 0, 10, rng));
  CHECK(copy.horizon() >= 10);
  const auto lag0 = run_coupled(kernel, 0.0, 1.0, 0, 5, rng);
  CHECK_THROWS_AS(signed_measure(lag0, 0, 5), std::invalid_argument);
}

TEST_CASE("single-atom subsampling is exact", "[unbiased]") {
  SignedMeasure<double> m;
  m.atoms = {3.0};
  m.weights = {1.0};
  RngStream rng(63, 0);
  CHECK(subsample_estimator(m, identity_function(), 5, {}, rng) == std::vector<double>{3.0});
}

TEST_CASE("subsampling moments match their exact values", "[unbiased]") {
  const auto m = three_atoms();
  const auto h = identity_function();
  const std::vector<std::vector<double>> xis{{}, {0.2, 0.3, 0.5}};
  for (const auto& xi_in : xis) {
    const std::vector<double> xi = xi_in.empty() ? std::vector<double>(3, 1.0 / 3.0) : xi_in;
    double mean = 0.0, second = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double term = m.weights[i] * m.atoms[i] / xi[i];
      mean += xi[i] * term;
      second += xi[i] * term * term;
    }
    REQUIRE(mean == Catch::Approx(m.apply(h)[0]));
    const double var1 = second - mean * mean;

    RngStream rng(64, xi_in.size());
    std::vector<double> s1;
    for (int r = 0; r < 200'000; ++r) s1.push_back(subsample_estimator(m, h, 1, xi_in, rng)[0]);
    const auto ms = ft::mean_se(s1);
    CHECK(std::abs(ms.mean - mean) < 4.0 * ms.se);
    double ss = 0.0;
    for (double v : s1) ss += (v - ms.mean) * (v - ms.mean);
    CHECK(ss / static_cast<double>(s1.size() - 1) == Catch::Approx(var1).epsilon(0.02));
  }
}

TEST_CASE("subsampling variance falls like 1/R", "[unbiased]") {
  const auto m = three_atoms();
  const auto h = identity_function();
  RngStream rng(65, 0);
  std::vector<double> r1, r10;
  for (int i = 0; i < 20'000; ++i) {
    r1.push_back(subsample_estimator(m, h, 1, {}, rng)[0]);
    r10.push_back(subsample_estimator(m, h, 10, {}, rng)[0]);
  }
  const double v1 = std::pow(ft::mean_se(r1).se, 2);
  const double v10 = std::pow(ft::mean_se(r10).se, 2);
  const double ratio = v1 / v10;
  CHECK(ratio >= 8.0);
  CHECK(ratio <= 12.5);
}

TEST_CASE("selection probabilities are validated", "[unbiased]") {
  const auto m = three_atoms();
  const auto h = identity_function();
  RngStream rng(66, 0);
  const std::vector<double> short_xi{0.5, 0.5};
  const std::vector<double> zero_xi{0.5, 0.5, 0.0};
  const std::vector<double> unnormalized{0.5, 0.5, 0.5};
  CHECK_THROWS_AS(subsample_estimator(m, h, 1, short_xi, rng), std::invalid_argument);
  CHECK_THROWS_AS(subsample_estimator(m, h, 1, zero_xi, rng), std::invalid_argument);
  CHECK_THROWS_AS(subsample_estimator(m, h, 1, unnormalized, rng), std::invalid_argument);
  CHECK_THROWS_AS(subsample_estimator(m, h, 0, {}, rng), std::invalid_argument);
}

TEST_CASE("reservoir slots are uniform and mutually independent", "[unbiased]") {
  constexpr std::size_t n = 7;
  RngStream rng(67, 0);
  std::vector<double> single(n, 0.0), joint(n * n, 0.0);
  const std::vector<int> items(n);
  for (int trial = 0; trial < 49'000; ++trial) {
    const auto idx = reservoir_select(items, 2, rng);
    single[idx[0]] += 1.0;
    joint[idx[0] * n + idx[1]] += 1.0;
  }
  CHECK(ft::chi_square(single, std::vector<double>(n, 1.0 / n)).p_value > 0.001);
  CHECK(ft::chi_square(joint, std::vector<double>(n * n, 1.0 / (n * n))).p_value > 0.001);
  CHECK_THROWS_AS(reservoir_select(std::vector<int>{}, 2, rng), std::invalid_argument);
  UniformReservoirs<int> res(3);
  CHECK_THROWS_AS(res.slots(), std::logic_error);
  res.offer(9, rng);
  CHECK(res.slots() == std::vector<int>{9, 9, 9});
}

TEST_CASE("H is unbiased on a finite chain", "[unbiased][slow]") {
  RngStream gen(68, 0);
  const auto model = ft::random_chain(gen, 4);
  const FiniteKernel kernel(model);
  const auto h = finite_test_function(model);
  const double target = solve_finite(*model).pi_h[0];
  const RngStream root(69, 0);
  std::vector<double> v;
  for (std::uint64_t r = 0; r < 100'000; ++r)
    v.push_back(unbiased_estimate(kernel, UniformStateInit{4}, h, 10, 50, 1, root.split(r)).value[0]);
  const auto s = ft::mean_se(v);
  INFO("mean " << s.mean << " target " << target << " se " << s.se);
  CHECK(std::abs(s.mean - target) < 3.0 * s.se);
}

TEST_CASE("H targets zero for the AR(1) mean", "[unbiased]") {
  const Ar1Kernel kernel(Ar1Model{0.9, 1.0});
  const RngStream root(70, 0);
  std::vector<double> v;
  for (std::uint64_t r = 0; r < 20'000; ++r)
    v.push_back(unbiased_estimate(kernel, NormalInit{3.0, 4.0}, identity_function(), 20, 100, 10, root.split(r))
                    .value[0]);
  const auto s = ft::mean_se(v);
  CHECK(std::abs(s.mean) < 4.0 * s.se);
}

TEST_CASE("pilot tuning picks the meeting-time quantile", "[unbiased]") {
  std::vector<std::int64_t> taus(100);
  std::iota(taus.begin(), taus.end(), 1);
  const auto c = pilot_tuning(taus);
  CHECK(c.k == 99);
  CHECK(c.lag == 99);
  CHECK(c.ell == 495);
  CHECK(pilot_tuning(taus, 0.5, 3).ell == 150);
  CHECK(pilot_tuning({0, 0, 0}).k == 1);
  CHECK_THROWS_AS(pilot_tuning({}), std::invalid_argument);
  CHECK_THROWS_AS(pilot_tuning(taus, 0.0), std::invalid_argument);
}
