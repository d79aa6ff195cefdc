// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "fishy/coupled_sim.hpp"
#include "fishy/kernels.hpp"
#include "stats.hpp"

using namespace fishy;
namespace ft = fishy::testing;

namespace {

std::shared_ptr<const FiniteChainModel> small_chain() {
  return std::make_shared<const FiniteChainModel>(
      Eigen::MatrixXd{{0.5, 0.3, 0.2}, {0.2, 0.6, 0.2}, {0.3, 0.3, 0.4}}, Eigen::MatrixXd::Zero(3, 1));
}

/// m(x, y) = E[tau | X_0 = x, Y_0 = y] for lag 0 under independent transitions.
Eigen::MatrixXd independent_meeting_means(const Eigen::MatrixXd& P) {
  const Eigen::Index n = P.rows();
  const Eigen::Index nn = n * n;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(nn, nn);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(nn);
  for (Eigen::Index x = 0; x < n; ++x) {
    for (Eigen::Index y = 0; y < n; ++y) {
      if (x == y) continue;
      const Eigen::Index row = x * n + y;
      b[row] = 1.0;
      for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index c = 0; c < n; ++c)
          if (a != c) A(row, a * n + c) -= P(x, a) * P(y, c);
    }
  }
  const Eigen::VectorXd m = A.partialPivLu().solve(b);
  return m.reshaped(n, n).transpose();  // (x, y) -> m[x * n + y]
}

}  // namespace

TEST_CASE("lag 0 with equal starts meets at time 0", "[coupled_sim]") {
  const Ar1Kernel k(Ar1Model{0.5, 1.0});
  RngStream rng(40, 0);
  const auto run = run_coupled(k, 1.25, 1.25, 0, 0, rng);
  CHECK(run.meeting_time == 0);
  CHECK(run.cost_units == 0);
  CHECK(rng.words_drawn() == 0);
  const auto longer = run_coupled(k, 1.25, 1.25, 0, 7, rng);
  CHECK(longer.cost_units == 7);
  CHECK(longer.y_path.size() == 1);
}

TEST_CASE("with a positive lag the chains cannot meet before L + 1", "[coupled_sim]") {
  const Ar1Kernel k(Ar1Model{0.5, 1.0});
  for (std::int64_t lag : {1, 3, 10}) {
    for (std::uint64_t r = 0; r < 200; ++r) {
      RngStream rng(41, r);
      // Equal starts still need one coupled step.
      const auto run = run_coupled(k, 0.0, 0.0, lag, 0, rng);
      REQUIRE(run.meeting_time >= lag + 1);
    }
  }
}

TEST_CASE("visitor window and cost accounting", "[coupled_sim]") {
  const Ar1Kernel k(Ar1Model{0.8, 1.0});
  for (std::int64_t lag : {0, 1, 4}) {
    for (std::int64_t horizon : {0, 5, 60}) {
      for (std::uint64_t r = 0; r < 50; ++r) {
        RngStream rng(42, r);
        std::vector<std::int64_t> ts;
        std::int64_t y_views = 0;
        std::int64_t first_y = -1;
        std::int64_t first_met = -1;
        const RunSummary s = simulate_coupled(k, 3.0, -3.0, lag, horizon, rng, [&](const StepView<double>& v) {
          ts.push_back(v.t);
          if (v.y) {
            ++y_views;
            if (first_y < 0) first_y = v.t;
          }
          if (v.met && first_met < 0) first_met = v.t;
        });
        const std::int64_t tau = s.meeting_time;
        REQUIRE(ts.size() == static_cast<std::size_t>(std::max(tau, horizon) + 1));
        for (std::size_t i = 0; i < ts.size(); ++i) REQUIRE(ts[i] == static_cast<std::int64_t>(i));
        REQUIRE(first_y == lag);
        REQUIRE(y_views == tau - lag + 1);
        REQUIRE(first_met == tau);
        REQUIRE(s.last_index == std::max(tau, horizon));
        REQUIRE(s.cost_units == std::max(horizon, tau) + tau - lag);
      }
    }
  }
}

TEST_CASE("retained runs match the streamed trajectory", "[coupled_sim]") {
  const Ar1Kernel k(Ar1Model{0.8, 1.0});
  RngStream a(43, 0), b(43, 0);
  const auto run = run_coupled(k, 2.0, -1.0, 3, 40, a);
  std::vector<double> xs, ys;
  simulate_coupled(k, 2.0, -1.0, 3, 40, b, [&](const StepView<double>& v) {
    xs.push_back(v.x);
    if (v.y) ys.push_back(*v.y);
  });
  CHECK(run.x_path == xs);
  CHECK(run.y_path == ys);
  CHECK(run.x(run.meeting_time) == run.y(run.meeting_time - 3));
  CHECK(run.horizon() == std::max<std::int64_t>(40, run.meeting_time));
}

TEST_CASE("extend_run continues the single chain", "[coupled_sim]") {
  const Ar1Kernel k(Ar1Model{0.8, 1.0});
  RngStream rng(44, 0);
  auto run = run_coupled(k, 2.0, -1.0, 2, 0, rng);
  const auto before = run.cost_units;
  const auto h0 = run.horizon();
  extend_run(k, run, h0 + 25, rng);
  CHECK(run.horizon() == h0 + 25);
  CHECK(run.cost_units == before + 25);
  extend_run(k, run, h0, rng);
  CHECK(run.horizon() == h0 + 25);
}

TEST_CASE("budget exhaustion is reported with context", "[coupled_sim]") {
  const Ar1Kernel k(Ar1Model{0.99, 1.0});
  RngStream rng(45, 0);
  try {
    simulate_coupled(k, 1000.0, -1000.0, 5, 0, rng, [](const auto&) {}, 20);
    FAIL("expected BudgetExceeded");
  } catch (const BudgetExceeded& e) {
    CHECK(e.lag() == 5);
    CHECK(e.cost_units() >= 20);
    CHECK(e.time_index() > 5);
  }
  CHECK_THROWS_AS(simulate_coupled(k, 0.0, 0.0, -1, 0, rng, [](const auto&) {}), std::invalid_argument);
}

TEST_CASE("meeting samples do not depend on the worker count", "[coupled_sim]") {
  const Ar1Kernel k(Ar1Model{0.9, 1.0});
  const RngStream root(46, 0);
  const auto one = sample_meetings(k, NormalInit{0.0, 3.0}, 2, 64, root, 1);
  const auto four = sample_meetings(k, NormalInit{0.0, 3.0}, 2, 64, root, 4);
  REQUIRE(one.size() == four.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].tau == four[i].tau);
    CHECK(one[i].x0 == four[i].x0);
    CHECK(one[i].stream_id == root.split(i).stream_id());
  }
}

TEST_CASE("independent finite coupling meets at the product-chain rate", "[coupled_sim]") {
  const auto model = small_chain();
  const FiniteKernel k(model, {CouplingKind::independent});
  const Eigen::MatrixXd m = independent_meeting_means(model->transition());
  const Eigen::MatrixXd& P = model->transition();

  // Lag 0 from (0, 1).
  std::vector<double> taus0, taus1;
  for (std::uint64_t r = 0; r < 100'000; ++r) {
    RngStream rng(47, r);
    taus0.push_back(static_cast<double>(run_coupled(k, std::size_t{0}, std::size_t{1}, 0, 0, rng).meeting_time));
    RngStream rng1(48, r);
    taus1.push_back(static_cast<double>(run_coupled(k, std::size_t{0}, std::size_t{1}, 1, 0, rng1).meeting_time));
  }
  const auto s0 = ft::mean_se(taus0);
  CHECK(std::abs(s0.mean - m(0, 1)) < 4.0 * s0.se);

  // Lag 1: X_1 ~ P(0, .), then at least one coupled step from (X_1, Y_0 = 1).
  double expected1 = 1.0;
  for (Eigen::Index a = 0; a < 3; ++a) {
    double n = 1.0;
    if (a != 1)
      for (Eigen::Index c = 0; c < 3; ++c)
        for (Eigen::Index d = 0; d < 3; ++d) n += P(a, c) * P(1, d) * m(c, d);
    expected1 += P(0, a) * n;
  }
  const auto s1 = ft::mean_se(taus1);
  CHECK(std::abs(s1.mean - expected1) < 4.0 * s1.se);
}
