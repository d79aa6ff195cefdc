// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>

#include "fishy/config.hpp"
#include "fishy/kernels.hpp"

namespace fishy::cli {

/// A kernel together with its initial law, scalar test function and anchor y.
template <class K>
struct Bundle {
  using Kernel = K;
  using State = state_t<K>;
  K kernel;
  std::function<State(RngStream&)> init;
  TestFunction<State> h;
  State y;
  std::shared_ptr<const FiniteChainModel> finite;  // set for the finite model only
};

using AnyBundle =
    std::variant<Bundle<Ar1Kernel>, Bundle<CauchyGibbsKernel>, Bundle<CauchyMrthKernel>, Bundle<FiniteKernel>>;

inline CouplingSpec coupling_for(const ExperimentConfig& cfg, CouplingKind fallback) {
  CouplingSpec spec;
  spec.kind = cfg.coupling.value_or(fallback);
  spec.switch_distance = cfg.switch_distance;
  return spec;
}

inline AnyBundle make_bundle(const ExperimentConfig& cfg) {
  switch (cfg.model) {
    case ModelKind::ar1:
      return Bundle<Ar1Kernel>{Ar1Kernel(cfg.ar1, coupling_for(cfg, CouplingKind::reflection_maximal)),
                               NormalInit{0.0, cfg.ar1_init_sd}, identity_function(), cfg.y, nullptr};
    case ModelKind::cauchy_gibbs:
      return Bundle<CauchyGibbsKernel>{
          CauchyGibbsKernel(cfg.cauchy, coupling_for(cfg, CouplingKind::maximal_rejection)),
          NormalInit{cfg.cauchy_init_mean, cfg.cauchy_init_sd}, identity_function(), cfg.y, nullptr};
    case ModelKind::cauchy_mrth:
      return Bundle<CauchyMrthKernel>{
          CauchyMrthKernel(cfg.cauchy, coupling_for(cfg, CouplingKind::reflection_maximal)),
          NormalInit{cfg.cauchy_init_mean, cfg.cauchy_init_sd}, identity_function(), cfg.y, nullptr};
    case ModelKind::finite: {
      auto model = load_finite_model(cfg);
      if (model->h_dim() != 1)
        throw ConfigError("the command-line tool supports scalar test functions only (finite.h has " +
                          std::to_string(model->h_dim()) + " columns)");
      const double y = cfg.y;
      if (!(y >= 0.0) || y != std::floor(y) || y >= static_cast<double>(model->n_states()))
        throw ConfigError("estimator.y must be a state index for the finite model");
      return Bundle<FiniteKernel>{FiniteKernel(model, coupling_for(cfg, CouplingKind::maximal_rejection)),
                                  UniformStateInit{model->n_states()}, finite_test_function(model),
                                  static_cast<std::size_t>(y), model};
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace fishy::cli
