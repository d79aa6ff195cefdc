// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "fishy/avar.hpp"
#include "fishy/kernels.hpp"
#include "fishy/models.hpp"

namespace fishy {

/// Configuration error, optionally tied to a line of a config file.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
  ConfigError(const std::string& source, int line, const std::string& msg)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + msg), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_ = 0;
};

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw std::invalid_argument("invalid value '" + std::string(text) + "' for " + std::string(key));
  return v;
}

}  // namespace detail

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
inline std::vector<ConfigEntry> parse_config(std::istream& in, const std::string& source = "<config>") {
  std::vector<ConfigEntry> out;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string_view s = raw;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = detail::trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(source, line, "expected 'key = value'");
    const auto key = detail::trim(s.substr(0, eq));
    const auto value = detail::trim(s.substr(eq + 1));
    if (key.empty()) throw ConfigError(source, line, "empty key");
    out.push_back({std::string(key), std::string(value), line});
  }
  return out;
}

inline std::vector<ConfigEntry> load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

/// Reads a CSV matrix with one header row; all other cells must be numeric.
inline Eigen::MatrixXd read_csv_matrix(const std::string& path, std::vector<std::string>* header = nullptr) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open CSV file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.emplace_back(detail::trim(c));
  }
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) {
      try {
        row.push_back(detail::parse_number<double>("cell", detail::trim(c)));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(path, lineno, e.what());
      }
    }
    if (row.size() != cols.size()) throw ConfigError(path, lineno, "expected " + std::to_string(cols.size()) + " columns");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  if (header) *header = std::move(cols);
  return m;
}

enum class ModelKind { ar1, cauchy_gibbs, cauchy_mrth, finite };

inline std::string_view to_string(ModelKind m) {
  switch (m) {
    case ModelKind::ar1: return "ar1";
    case ModelKind::cauchy_gibbs: return "cauchy-gibbs";
    case ModelKind::cauchy_mrth: return "cauchy-mrth";
    case ModelKind::finite: return "finite";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  for (auto m : {ModelKind::ar1, ModelKind::cauchy_gibbs, ModelKind::cauchy_mrth, ModelKind::finite})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

/// Everything an experiment needs. Values come from a config file and/or
/// command-line flags, which share the key names below.
struct ExperimentConfig {
  ModelKind model = ModelKind::ar1;
  Ar1Model ar1{};
  double ar1_init_sd = 4.0;
  CauchyNormalModel cauchy{};
  double cauchy_init_mean = 0.0;
  double cauchy_init_sd = 1.0;
  std::string finite_matrix;  // CSV path, header to_0..to_{n-1}
  std::string finite_h;       // CSV path, one row per state; empty means h(s) = s

  std::optional<CouplingKind> coupling;
  double switch_distance = 1.0;

  std::optional<std::int64_t> k;
  std::optional<std::int64_t> lag;
  std::optional<std::int64_t> ell;
  std::size_t R = 1;
  double y = 0.0;
  SelectionKind xi = SelectionKind::uniform;
  std::int64_t thin = 1;
  std::int64_t t_steps = 100'000;
  std::optional<std::int64_t> burn_in;

  std::size_t reps = 100;
  std::uint64_t seed = 1;
  unsigned workers = 0;  // 0 means hardware concurrency
  std::int64_t budget = kDefaultTransitionBudget;

  void set(std::string_view key, std::string_view value);
  void validate() const;
};

inline void ExperimentConfig::set(std::string_view key, std::string_view value) {
  using detail::parse_number;
  auto num = [&](auto& field) { field = parse_number<std::remove_reference_t<decltype(field)>>(key, value); };
  auto opt = [&](std::optional<std::int64_t>& field) { field = parse_number<std::int64_t>(key, value); };

  if (key == "model") {
    const auto m = parse_model_kind(value);
    if (!m) throw std::invalid_argument("unknown model '" + std::string(value) + "'");
    model = *m;
  } else if (key == "ar1.phi") num(ar1.phi);
  else if (key == "ar1.sigma") num(ar1.sigma);
  else if (key == "ar1.init_sd") num(ar1_init_sd);
  else if (key == "cauchy.observations") {
    cauchy.observations.clear();
    std::string s(value);
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) cauchy.observations.push_back(parse_number<double>(key, detail::trim(c)));
  } else if (key == "cauchy.prior_variance") num(cauchy.prior_variance);
  else if (key == "cauchy.proposal_sd") num(cauchy.mrth_proposal_sd);
  else if (key == "cauchy.init_mean") num(cauchy_init_mean);
  else if (key == "cauchy.init_sd") num(cauchy_init_sd);
  else if (key == "finite.matrix") finite_matrix = value;
  else if (key == "finite.h") finite_h = value;
  else if (key == "coupling.kind") {
    const auto c = parse_coupling_kind(value);
    if (!c) throw std::invalid_argument("unknown coupling '" + std::string(value) + "'");
    coupling = *c;
  } else if (key == "coupling.switch_distance") num(switch_distance);
  else if (key == "estimator.k") opt(k);
  else if (key == "estimator.L") opt(lag);
  else if (key == "estimator.ell") opt(ell);
  else if (key == "estimator.R") num(R);
  else if (key == "estimator.y") num(y);
  else if (key == "estimator.xi") {
    const auto x = parse_selection_kind(value);
    if (!x) throw std::invalid_argument("unknown selection kind '" + std::string(value) + "'");
    xi = *x;
  } else if (key == "estimator.D") num(thin);
  else if (key == "estimator.t") num(t_steps);
  else if (key == "estimator.burn_in") opt(burn_in);
  else if (key == "reps") num(reps);
  else if (key == "seed") num(seed);
  else if (key == "workers") num(workers);
  else if (key == "budget") num(budget);
  else throw std::invalid_argument("unknown key '" + std::string(key) + "'");
}

inline void ExperimentConfig::validate() const {
  try {
    switch (model) {
      case ModelKind::ar1: ar1.validate(); break;
      case ModelKind::cauchy_gibbs:
      case ModelKind::cauchy_mrth: cauchy.validate(); break;
      case ModelKind::finite:
        if (finite_matrix.empty()) throw ConfigError("finite model requires finite.matrix");
        break;
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(ar1_init_sd > 0.0) || !(cauchy_init_sd > 0.0)) throw ConfigError("initial standard deviations must be > 0");
  if (k && *k < 0) throw ConfigError("estimator.k must be >= 0");
  if (lag && *lag < 1) throw ConfigError("estimator.L must be >= 1");
  if (k && ell && *k > *ell) throw ConfigError("estimator.k must be <= estimator.ell");
  if (R < 1) throw ConfigError("estimator.R must be >= 1");
  if (thin < 1) throw ConfigError("estimator.D must be >= 1");
  if (t_steps < 2) throw ConfigError("estimator.t must be >= 2");
  if (reps < 1) throw ConfigError("reps must be >= 1");
  if (budget < 1) throw ConfigError("budget must be >= 1");
  if (!(switch_distance >= 0.0)) throw ConfigError("coupling.switch_distance must be >= 0");
}

/// Applies file entries in order, reporting the offending line on failure.
inline void apply_config(ExperimentConfig& cfg, const std::vector<ConfigEntry>& entries,
                         const std::string& source = "<config>") {
  for (const auto& e : entries) {
    try {
      cfg.set(e.key, e.value);
    } catch (const std::invalid_argument& err) {
      throw ConfigError(source, e.line, err.what());
    }
  }
}

/// Loads a config file into `cfg`. Relative finite.matrix and finite.h paths
/// are resolved against the directory holding the file.
inline void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  auto entries = load_config_file(path);
  const auto base = std::filesystem::path(path).parent_path();
  for (auto& e : entries) {
    if ((e.key == "finite.matrix" || e.key == "finite.h") && !e.value.empty() &&
        std::filesystem::path(e.value).is_relative())
      e.value = (base / e.value).string();
  }
  apply_config(cfg, entries, path);
}

/// Default master seed: $FISHY_SEED when set, else 1.
inline std::uint64_t default_seed() {
  if (const char* s = std::getenv("FISHY_SEED")) {
    try {
      return detail::parse_number<std::uint64_t>("FISHY_SEED", s);
    } catch (const std::invalid_argument&) {
      throw ConfigError("FISHY_SEED must be a non-negative integer");
    }
  }
  return 1;
}

inline std::shared_ptr<const FiniteChainModel> load_finite_model(const ExperimentConfig& cfg) {
  std::vector<std::string> header;
  Eigen::MatrixXd P = read_csv_matrix(cfg.finite_matrix, &header);
  if (P.rows() != P.cols()) throw ConfigError(cfg.finite_matrix + ": transition matrix must be square");
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] != "to_" + std::to_string(j))
      throw ConfigError(cfg.finite_matrix + ": header column " + std::to_string(j) + " must be 'to_" +
                        std::to_string(j) + "'");
  Eigen::MatrixXd h;
  if (cfg.finite_h.empty()) {
    h = Eigen::VectorXd::LinSpaced(P.rows(), 0.0, static_cast<double>(P.rows() - 1));
  } else {
    h = read_csv_matrix(cfg.finite_h);
    if (h.rows() != P.rows()) throw ConfigError(cfg.finite_h + ": need one row per state");
  }
  return std::make_shared<const FiniteChainModel>(std::move(P), std::move(h));
}

}  // namespace fishy
