// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "fishy/couplings.hpp"
#include "fishy/kernel.hpp"
#include "fishy/models.hpp"

namespace fishy {

enum class CouplingKind {
  maximal_rejection,
  reflection_maximal,
  common_random_numbers,
  switch_to_crn_composite,
  independent,
};

inline std::string_view to_string(CouplingKind k) {
  switch (k) {
    case CouplingKind::maximal_rejection: return "maximal-rejection";
    case CouplingKind::reflection_maximal: return "reflection-maximal";
    case CouplingKind::common_random_numbers: return "common-random-numbers";
    case CouplingKind::switch_to_crn_composite: return "switch-to-crn-composite";
    case CouplingKind::independent: return "independent";
  }
  return "?";
}

inline std::optional<CouplingKind> parse_coupling_kind(std::string_view s) {
  for (auto k : {CouplingKind::maximal_rejection, CouplingKind::reflection_maximal,
                 CouplingKind::common_random_numbers, CouplingKind::switch_to_crn_composite,
                 CouplingKind::independent})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct CouplingSpec {
  CouplingKind kind = CouplingKind::reflection_maximal;
  /// Composite coupling: use common random numbers while the standardized gap
  /// between the two proposal means exceeds this, reflection-maximal otherwise.
  double switch_distance = 1.0;
  std::uint64_t max_rejections = kDefaultMaxRejections;
};

namespace detail {
[[noreturn]] inline void invalid_coupling(std::string_view model, CouplingKind k) {
  throw std::invalid_argument("coupling '" + std::string(to_string(k)) + "' is not valid for model '" +
                              std::string(model) + "'");
}
}  // namespace detail

// ---------------------------------------------------------------------------

class Ar1Kernel {
 public:
  using state_type = double;

  explicit Ar1Kernel(Ar1Model model, CouplingSpec coupling = {}) : model_(model), coupling_(coupling) {
    model_.validate();
    switch (coupling_.kind) {
      case CouplingKind::reflection_maximal:
      case CouplingKind::maximal_rejection:
      case CouplingKind::switch_to_crn_composite:
        break;
      default:
        detail::invalid_coupling("ar1", coupling_.kind);
    }
  }

  double step(double x, RngStream& rng) const { return ar1_step(model_, x, rng); }

  std::pair<double, double> coupled_step(double x, double y, RngStream& rng) const {
    const double mx = model_.phi * x;
    const double my = model_.phi * y;
    switch (coupling_.kind) {
      case CouplingKind::maximal_rejection: {
        const auto d = maximal_coupling_normal(mx, model_.sigma, my, model_.sigma, rng, coupling_.max_rejections);
        return {d.x, d.y};
      }
      case CouplingKind::switch_to_crn_composite:
        if (std::abs(mx - my) / model_.sigma > coupling_.switch_distance) {
          const double w = rng.normal();
          return {ar1_transition(model_, x, w), ar1_transition(model_, y, w)};
        }
        [[fallthrough]];
      default: {
        const auto d = reflection_maximal_1d(mx, my, model_.sigma, rng);
        return {d.x, d.y};
      }
    }
  }

  std::string label() const { return "ar1[" + std::string(to_string(coupling_.kind)) + "]"; }
  const Ar1Model& model() const noexcept { return model_; }
  const CouplingSpec& coupling() const noexcept { return coupling_; }

 private:
  Ar1Model model_;
  CouplingSpec coupling_;
};

// ---------------------------------------------------------------------------

class CauchyGibbsKernel {
 public:
  using state_type = double;

  explicit CauchyGibbsKernel(CauchyNormalModel model,
                             CouplingSpec coupling = {CouplingKind::maximal_rejection})
      : model_(std::move(model)), coupling_(coupling) {
    model_.validate();
    if (coupling_.kind != CouplingKind::maximal_rejection) detail::invalid_coupling("cauchy-gibbs", coupling_.kind);
  }

  double step(double theta, RngStream& rng) const { return gibbs_step(model_, theta, rng); }

  std::pair<double, double> coupled_step(double theta, double theta_tilde, RngStream& rng) const {
    return coupled_gibbs_step(model_, theta, theta_tilde, rng, coupling_.max_rejections);
  }

  std::string label() const { return "cauchy-gibbs"; }
  const CauchyNormalModel& model() const noexcept { return model_; }

 private:
  CauchyNormalModel model_;
  CouplingSpec coupling_;
};

// ---------------------------------------------------------------------------

class CauchyMrthKernel {
 public:
  using state_type = double;

  explicit CauchyMrthKernel(CauchyNormalModel model, CouplingSpec coupling = {})
      : model_(std::move(model)), coupling_(coupling), nan_rejections_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
    model_.validate();
    switch (coupling_.kind) {
      case CouplingKind::reflection_maximal:
      case CouplingKind::maximal_rejection:
      case CouplingKind::switch_to_crn_composite:
        break;
      default:
        detail::invalid_coupling("cauchy-mrth", coupling_.kind);
    }
  }

  double step(double x, RngStream& rng) const {
    const auto r = mrth_step(log_density_fn(), model_.mrth_proposal_sd, x, rng);
    if (r.nan_rejected) nan_rejections_->fetch_add(1, std::memory_order_relaxed);
    return r.state;
  }

  std::pair<double, double> coupled_step(double x, double y, RngStream& rng) const {
    ProposalCoupling pc = ProposalCoupling::reflection_maximal;
    if (coupling_.kind == CouplingKind::maximal_rejection) {
      pc = ProposalCoupling::maximal_rejection;
    } else if (coupling_.kind == CouplingKind::switch_to_crn_composite &&
               std::abs(x - y) / model_.mrth_proposal_sd > coupling_.switch_distance) {
      pc = ProposalCoupling::common_random_numbers;
    }
    const auto r = coupled_mrth_step(log_density_fn(), model_.mrth_proposal_sd, x, y, rng, pc, coupling_.max_rejections);
    if (r.nan_rejected) nan_rejections_->fetch_add(1, std::memory_order_relaxed);
    return {r.x, r.y};
  }

  std::string label() const { return "cauchy-mrth[" + std::string(to_string(coupling_.kind)) + "]"; }
  const CauchyNormalModel& model() const noexcept { return model_; }
  /// Proposals rejected because the log density evaluated to NaN.
  std::uint64_t nan_rejections() const noexcept { return nan_rejections_->load(); }

 private:
  struct Density {
    const CauchyNormalModel* model;
    double operator()(double t) const { return model->log_density(t); }
  };
  Density log_density_fn() const { return Density{&model_}; }

  CauchyNormalModel model_;
  CouplingSpec coupling_;
  std::shared_ptr<std::atomic<std::uint64_t>> nan_rejections_;
};

// ---------------------------------------------------------------------------

class FiniteKernel {
 public:
  using state_type = std::size_t;

  explicit FiniteKernel(std::shared_ptr<const FiniteChainModel> model,
                        CouplingSpec coupling = {CouplingKind::maximal_rejection})
      : model_(std::move(model)), coupling_(coupling) {
    if (!model_) throw std::invalid_argument("finite kernel: null model");
    switch (coupling_.kind) {
      case CouplingKind::maximal_rejection: kind_ = FiniteCoupling::maximal_rejection; break;
      case CouplingKind::common_random_numbers: kind_ = FiniteCoupling::common_random_numbers; break;
      case CouplingKind::independent: kind_ = FiniteCoupling::independent; break;
      default: detail::invalid_coupling("finite", coupling_.kind);
    }
  }

  std::size_t step(std::size_t s, RngStream& rng) const { return finite_step(*model_, s, rng); }

  std::pair<std::size_t, std::size_t> coupled_step(std::size_t x, std::size_t y, RngStream& rng) const {
    return coupled_finite_step(*model_, x, y, rng, kind_, coupling_.max_rejections);
  }

  std::string label() const { return "finite[" + std::string(to_string(coupling_.kind)) + "]"; }
  const FiniteChainModel& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const FiniteChainModel> model_;
  CouplingSpec coupling_;
  FiniteCoupling kind_ = FiniteCoupling::maximal_rejection;
};

// ---------------------------------------------------------------------------
// Initial distributions and stock test functions.

struct NormalInit {
  double mean = 0.0;
  double sd = 1.0;
  double operator()(RngStream& rng) const { return mean + sd * rng.normal(); }
};

struct UniformStateInit {
  std::size_t n_states;
  std::size_t operator()(RngStream& rng) const { return static_cast<std::size_t>(rng.uniform_index(n_states)); }
};

template <class State>
struct PointMass {
  State value;
  State operator()(RngStream&) const { return value; }
};

inline TestFunction<double> identity_function() {
  return TestFunction<double>::scalar([](double x) { return x; }, "x");
}

/// Columns of the model's h_values as a test function of the state index.
inline TestFunction<std::size_t> finite_test_function(std::shared_ptr<const FiniteChainModel> model) {
  const std::size_t d = model->h_dim();
  return TestFunction<std::size_t>(
      d,
      [model = std::move(model)](const std::size_t& s, std::span<double> out) {
        const auto& h = model->h_values();
        for (std::size_t j = 0; j < out.size(); ++j)
          out[j] = h(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j));
      },
      "h");
}

}  // namespace fishy
