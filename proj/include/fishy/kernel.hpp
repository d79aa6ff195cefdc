// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <concepts>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

#include "fishy/rng.hpp"

namespace fishy {

/// A pi-invariant transition: `step(state, rng) -> state`.
template <class K>
concept MarkovKernel = requires(const K& k, const typename K::state_type& s, RngStream& rng) {
  typename K::state_type;
  { k.step(s, rng) } -> std::convertible_to<typename K::state_type>;
  { k.label() } -> std::convertible_to<std::string>;
};

/// A Markov kernel with a faithful pairwise transition. Each output coordinate
/// is marginally one `step` from its input, and equal inputs give equal outputs.
template <class K>
concept CoupledKernel = MarkovKernel<K> &&
    requires(const K& k, const typename K::state_type& s, RngStream& rng) {
      { k.coupled_step(s, s, rng) }
          -> std::convertible_to<std::pair<typename K::state_type, typename K::state_type>>;
    };

template <class K>
using state_t = typename K::state_type;

/// Real-vector valued function of the state, h = (h_1, ..., h_d).
template <class State>
class TestFunction {
 public:
  using Eval = std::function<void(const State&, std::span<double>)>;

  TestFunction(std::size_t dim, Eval eval, std::string label = "h")
      : dim_(dim), eval_(std::move(eval)), label_(std::move(label)) {
    if (dim_ == 0) throw std::invalid_argument("test function dimension must be >= 1");
  }

  static TestFunction scalar(std::function<double(const State&)> f, std::string label = "h") {
    return TestFunction(
        1, [f = std::move(f)](const State& s, std::span<double> out) { out[0] = f(s); },
        std::move(label));
  }

  std::size_t dim() const noexcept { return dim_; }
  const std::string& label() const noexcept { return label_; }

  void eval(const State& s, std::span<double> out) const { eval_(s, out); }

  double operator()(const State& s) const {
    if (dim_ != 1) throw std::logic_error("scalar evaluation of a multivariate test function");
    double v = 0.0;
    eval_(s, std::span<double>(&v, 1));
    return v;
  }

 private:
  std::size_t dim_;
  Eval eval_;
  std::string label_;
};

/// Numeric key of a state, used for grid lookups and CSV output.
inline double state_key(double x) noexcept { return x; }
inline double state_key(std::size_t s) noexcept { return static_cast<double>(s); }

}  // namespace fishy
