// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "fishy/rng.hpp"
#include "stats.hpp"

using fishy::RngStream;
using fishy::detail::philox4x32_10;
namespace ft = fishy::testing;

TEST_CASE("philox4x32-10 known-answer vectors", "[rng]") {
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  CHECK(philox4x32_10(A4{0, 0, 0, 0}, A2{0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32_10(A4{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, A2{0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32_10(A4{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, A2{0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams replay and separate", "[rng]") {
  RngStream a(7, 3), b(7, 3), c(7, 4), d(8, 3);
  std::vector<std::uint64_t> va, vb, vc, vd;
  for (int i = 0; i < 100; ++i) {
    va.push_back(a());
    vb.push_back(b());
    vc.push_back(c());
    vd.push_back(d());
  }
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(va != vd);
  CHECK(a.words_drawn() == 100);
}

TEST_CASE("split depends only on identity and child index", "[rng]") {
  RngStream parent(11, 0);
  const RngStream before = parent.split(5);
  for (int i = 0; i < 37; ++i) parent();
  RngStream after = parent.split(5);
  RngStream b2 = before;
  for (int i = 0; i < 10; ++i) CHECK(b2() == after());

  std::set<std::uint64_t> ids;
  for (std::uint64_t c = 0; c < 10000; ++c) ids.insert(parent.split(c).stream_id());
  CHECK(ids.size() == 10000);
  CHECK(parent.split(1).split(2).stream_id() != parent.split(2).split(1).stream_id());
}

TEST_CASE("uniforms lie in the open unit interval", "[rng]") {
  RngStream r(1, 1);
  double sum = 0.0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  const double se = std::sqrt(1.0 / 12.0 / n);
  CHECK(std::abs(sum / n - 0.5) < 4 * se);
}

TEST_CASE("normal and exponential draws match their laws", "[rng]") {
  RngStream r(2, 9);
  std::vector<double> z, e;
  for (int i = 0; i < 100'000; ++i) z.push_back(r.normal());
  for (int i = 0; i < 100'000; ++i) e.push_back(r.exponential(2.5));
  CHECK(ft::ks_one_sample(z, [](double x) { return ft::normal_cdf(x); }).p_value > 0.001);
  CHECK(ft::ks_one_sample(e, [](double x) { return x <= 0 ? 0.0 : 1.0 - std::exp(-2.5 * x); }).p_value > 0.001);
}

TEST_CASE("normal consumes exactly two uniforms", "[rng]") {
  RngStream r(3, 3);
  r.normal();
  CHECK(r.words_drawn() == 2);
}

TEST_CASE("uniform_index is uniform", "[rng]") {
  RngStream r(4, 0);
  std::vector<double> counts(7, 0.0);
  for (int i = 0; i < 70'000; ++i) counts[r.uniform_index(7)] += 1.0;
  std::vector<double> p(7, 1.0 / 7.0);
  CHECK(ft::chi_square(counts, p).p_value > 0.001);
  RngStream one(4, 1);
  for (int i = 0; i < 100; ++i) CHECK(one.uniform_index(1) == 0);
}
