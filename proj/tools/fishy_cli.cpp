// SPDX-License-Identifier: Apache-2.0
// Command-line front end: meetings, tvbound, tailfit, pilot, fishy, umcmc,
// epave, suave, theory-check, oracle.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bundle.hpp"
#include "fishy/fishy.hpp"

namespace {

using namespace fishy;
using cli::AnyBundle;
using json = nlohmann::ordered_json;

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 1;
constexpr int kExitBudget = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Output.

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;
};

std::string format_cell(const json& v) {
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void write_table(const Table& t, const std::string& format, std::ostream& out) {
  if (format == "json") {
    json arr = json::array();
    for (const auto& r : t.rows) {
      json o = json::object();
      for (std::size_t j = 0; j < t.columns.size(); ++j) o[t.columns[j]] = r[j];
      arr.push_back(std::move(o));
    }
    out << arr.dump(2) << "\n";
    return;
  }
  for (std::size_t j = 0; j < t.columns.size(); ++j) out << (j ? "," : "") << t.columns[j];
  out << "\n";
  for (const auto& r : t.rows) {
    for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << format_cell(r[j]);
    out << "\n";
  }
}

struct Output {
  std::string out_path;
  std::string summary_path;
  std::string format = "csv";

  template <class Fn>
  void main(Fn&& write) const {
    if (out_path.empty()) {
      write(std::cout);
      std::cout.flush();
      return;
    }
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot write '" + out_path + "'");
    write(f);
  }

  void table(const Table& t) const {
    main([&](std::ostream& os) { write_table(t, format, os); });
  }

  void document(const json& j) const {
    main([&](std::ostream& os) { os << j.dump(2) << "\n"; });
  }

  void summary(const json& j) const {
    if (summary_path.empty()) {
      std::cerr << j.dump(2) << "\n";
      return;
    }
    std::ofstream f(summary_path);
    if (!f) throw std::runtime_error("cannot write '" + summary_path + "'");
    f << j.dump(2) << "\n";
  }
};

void add_inefficiency(json& j, const Inefficiency& s) {
  j["mean"] = s.mean;
  j["var"] = s.variance;
  j["mean_cost"] = s.mean_cost;
  j["inefficiency"] = s.product;
  j["ci_mean_lo"] = s.mean_ci.lo;
  j["ci_mean_hi"] = s.mean_ci.hi;
  j["ci_var_lo"] = s.variance_ci.lo;
  j["ci_var_hi"] = s.variance_ci.hi;
  j["ci_inefficiency_lo"] = s.product_ci.lo;
  j["ci_inefficiency_hi"] = s.product_ci.hi;
}

/// Replicate outcome; budget aborts are recorded instead of thrown.
template <class T>
struct Attempt {
  std::optional<T> value;
  std::string error;
};

template <class Fn>
auto attempt(Fn&& fn) -> Attempt<decltype(fn())> {
  try {
    return {fn(), {}};
  } catch (const BudgetExceeded& e) {
    return {std::nullopt, e.what()};
  }
}

template <class T>
std::vector<std::size_t> aborted_reps(const std::vector<Attempt<T>>& v) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!v[i].value) out.push_back(i);
  return out;
}

int flag_partial(json& summary, const std::vector<std::size_t>& aborted, const std::string& first_error) {
  summary["partial"] = !aborted.empty();
  if (aborted.empty()) return 0;
  summary["aborted_reps"] = aborted;
  std::cerr << "fishy: " << aborted.size() << " replicate(s) exceeded the transition budget: " << first_error << "\n";
  return kExitBudget;
}

// ---------------------------------------------------------------------------
// Options.

struct Extras {
  std::string config_path;
  std::optional<std::int64_t> tmax;
  std::optional<double> tmin;
  std::string tail_model = "polynomial";
  std::string grid;
  std::string table_path;
  std::size_t suave_reps = 0;
  std::size_t n_boot = kDefaultBootstrapResamples;
  double x0 = 2.0;
  double y0 = -2.0;
  std::optional<std::int64_t> nmax;
  double quantile = 0.99;
  std::int64_t multiple = 5;
};

/// Command-line flags that map onto config keys.
const std::vector<std::pair<std::string, std::string>> kConfigFlags = {
    {"--model", "model"},
    {"--phi", "ar1.phi"},
    {"--sigma", "ar1.sigma"},
    {"--init-sd", "ar1.init_sd"},
    {"--proposal-sd", "cauchy.proposal_sd"},
    {"--matrix", "finite.matrix"},
    {"--h-file", "finite.h"},
    {"--coupling", "coupling.kind"},
    {"--switch-distance", "coupling.switch_distance"},
    {"--k", "estimator.k"},
    {"--L", "estimator.L"},
    {"--ell", "estimator.ell"},
    {"--R", "estimator.R"},
    {"--y", "estimator.y"},
    {"--xi", "estimator.xi"},
    {"--D", "estimator.D"},
    {"--t", "estimator.t"},
    {"--burn-in", "estimator.burn_in"},
    {"--reps", "reps"},
    {"--seed", "seed"},
    {"--workers", "workers"},
    {"--budget", "budget"},
};

struct Parsed {
  std::map<std::string, std::string> flags;  // config key -> value
  Extras extras;
  Output output;
};

void add_common(CLI::App* sub, Parsed& p) {
  for (const auto& [flag, key] : kConfigFlags) {
    sub->add_option_function<std::string>(
        flag, [&p, key = key](const std::string& v) { p.flags[key] = v; }, "config key " + key);
  }
  sub->add_option("--config", p.extras.config_path, "key = value config file");
  sub->add_option("--out", p.output.out_path, "main output file (default stdout)");
  sub->add_option("--summary", p.output.summary_path, "JSON summary file (default stderr)");
  sub->add_option("--format", p.output.format, "table format")->check(CLI::IsMember({"csv", "json"}));
}

ExperimentConfig build_config(const Parsed& p) {
  ExperimentConfig cfg;
  cfg.seed = default_seed();
  if (!p.extras.config_path.empty()) apply_config_file(cfg, p.extras.config_path);
  for (const auto& [key, value] : p.flags) {
    try {
      cfg.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("command line: ") + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

unsigned workers_of(const ExperimentConfig& cfg) { return cfg.workers == 0 ? default_workers() : cfg.workers; }

void require(bool present, const std::string& flag) {
  if (!present) throw UsageError("missing required option " + flag);
}

// ---------------------------------------------------------------------------
// Subcommands.

template <class B>
std::vector<Attempt<MeetingSample<typename B::State>>> run_meetings(const B& b, const ExperimentConfig& cfg,
                                                                    std::int64_t lag, const RngStream& root) {
  return parallel_map(cfg.reps, workers_of(cfg), [&](std::size_t i) {
    return attempt([&] { return sample_meetings(b.kernel, b.init, lag, 1, root.split(i), 1, cfg.budget).front(); });
  });
}

template <class T>
std::vector<std::int64_t> taus_of(const std::vector<Attempt<MeetingSample<T>>>& v) {
  std::vector<std::int64_t> out;
  for (const auto& a : v)
    if (a.value) out.push_back(a.value->tau);
  return out;
}

template <class T>
std::string first_error(const std::vector<Attempt<T>>& v) {
  for (const auto& a : v)
    if (!a.value) return a.error;
  return {};
}

int cmd_meetings(const AnyBundle& any, const ExperimentConfig& cfg, const Extras&, const Output& out) {
  const std::int64_t lag = cfg.lag.value_or(1);
  return std::visit(
      [&](const auto& b) {
        const RngStream root(cfg.seed, 0);
        const auto draws = run_meetings(b, cfg, lag, root);
        Table t{{"rep", "tau", "lag", "cost"}, {}};
        for (std::size_t i = 0; i < draws.size(); ++i)
          if (draws[i].value)
            t.rows.push_back({i, draws[i].value->tau, draws[i].value->lag, draws[i].value->cost_units});
        out.table(t);
        const auto taus = taus_of(draws);
        json s = {{"command", "meetings"}, {"model", b.kernel.label()}, {"lag", lag}, {"reps", cfg.reps}};
        if (!taus.empty()) {
          s["mean_tau"] = std::accumulate(taus.begin(), taus.end(), 0.0) / static_cast<double>(taus.size());
          s["max_tau"] = *std::max_element(taus.begin(), taus.end());
        }
        const int rc = flag_partial(s, aborted_reps(draws), first_error(draws));
        out.summary(s);
        return rc;
      },
      any);
}

int cmd_tvbound(const AnyBundle& any, const ExperimentConfig& cfg, const Extras& ex, const Output& out) {
  const std::int64_t lag = *cfg.lag;
  return std::visit(
      [&](const auto& b) {
        const auto draws = run_meetings(b, cfg, lag, RngStream(cfg.seed, 0));
        const auto taus = taus_of(draws);
        json s = {{"command", "tvbound"}, {"model", b.kernel.label()}, {"lag", lag}, {"reps", cfg.reps}};
        const int rc = flag_partial(s, aborted_reps(draws), first_error(draws));
        if (taus.empty()) throw std::runtime_error("no replicate completed");
        const std::int64_t tmax =
            ex.tmax.value_or(std::max<std::int64_t>(0, *std::max_element(taus.begin(), taus.end()) - lag));
        Table t{{"t", "bound"}, {}};
        for (const auto& pt : tv_curve(taus, lag, tmax)) t.rows.push_back({pt.t, pt.bound});
        out.table(t);
        out.summary(s);
        return rc;
      },
      any);
}

int cmd_tailfit(const AnyBundle& any, const ExperimentConfig& cfg, const Extras& ex, const Output& out) {
  const std::int64_t lag = *cfg.lag;
  return std::visit(
      [&](const auto& b) {
        const auto draws = run_meetings(b, cfg, lag, RngStream(cfg.seed, 0));
        const auto taus = taus_of(draws);
        const TailModel model = ex.tail_model == "exponential" ? TailModel::exponential : TailModel::polynomial;
        const TailFit f = tail_fit(taus, lag, ex.tmin, model);
        json j = {{"slope", f.slope},   {"intercept", f.intercept}, {"r2", f.r_squared},
                  {"tmin", f.t_min},    {"tmax", f.t_max},          {"n_points", f.n_points},
                  {"model", ex.tail_model}, {"lag", lag},           {"reps", taus.size()}};
        out.document(j);
        json s = {{"command", "tailfit"}, {"model", b.kernel.label()}};
        const int rc = flag_partial(s, aborted_reps(draws), first_error(draws));
        out.summary(s);
        return rc;
      },
      any);
}

template <class B>
TuningChoice pilot_for(const B& b, const ExperimentConfig& cfg, std::int64_t lag, double quantile,
                       std::int64_t multiple, const RngStream& root, std::vector<std::size_t>* aborted) {
  const auto draws = run_meetings(b, cfg, lag, root);
  if (aborted) *aborted = aborted_reps(draws);
  const auto taus = taus_of(draws);
  if (taus.empty()) throw std::runtime_error("pilot: no replicate completed: " + first_error(draws));
  return pilot_tuning(taus, quantile, multiple);
}

int cmd_pilot(const AnyBundle& any, const ExperimentConfig& cfg, const Extras& ex, const Output& out) {
  const std::int64_t lag = cfg.lag.value_or(1);
  return std::visit(
      [&](const auto& b) {
        std::vector<std::size_t> aborted;
        const TuningChoice c = pilot_for(b, cfg, lag, ex.quantile, ex.multiple, RngStream(cfg.seed, 2), &aborted);
        out.document({{"k", c.k},
                      {"L", c.lag},
                      {"ell", c.ell},
                      {"quantile", ex.quantile},
                      {"quantile_tau", c.quantile_tau},
                      {"pilot_lag", lag},
                      {"reps", cfg.reps}});
        json s = {{"command", "pilot"}, {"model", b.kernel.label()}};
        const int rc = flag_partial(s, aborted, "see aborted_reps");
        out.summary(s);
        return rc;
      },
      any);
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> g;
  if (spec.find(':') != std::string::npos) {
    std::stringstream ss(spec);
    std::string a, b, c;
    std::getline(ss, a, ':');
    std::getline(ss, b, ':');
    std::getline(ss, c, ':');
    const double lo = detail::parse_number<double>("--grid", a);
    const double hi = detail::parse_number<double>("--grid", b);
    const double step = c.empty() ? 1.0 : detail::parse_number<double>("--grid", c);
    if (!(step > 0.0) || hi < lo) throw UsageError("--grid expects lo:hi:step with step > 0 and lo <= hi");
    const auto n = static_cast<std::int64_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::int64_t i = 0; i <= n; ++i) g.push_back(lo + static_cast<double>(i) * step);
  } else {
    std::stringstream ss(spec);
    std::string c;
    while (std::getline(ss, c, ',')) g.push_back(detail::parse_number<double>("--grid", detail::trim(c)));
  }
  if (g.empty()) throw UsageError("--grid is empty");
  return g;
}

template <class B>
std::vector<typename B::State> grid_for(const B& b, const std::string& spec) {
  using S = typename B::State;
  std::vector<S> out;
  if constexpr (std::is_same_v<S, std::size_t>) {
    if (spec.empty()) {
      for (std::size_t s = 0; s < b.finite->n_states(); ++s) out.push_back(s);
      return out;
    }
    for (double v : parse_grid(spec)) {
      if (v < 0 || v != std::floor(v) || v >= static_cast<double>(b.finite->n_states()))
        throw UsageError("--grid entries must be state indices for the finite model");
      out.push_back(static_cast<std::size_t>(v));
    }
  } else {
    require(!spec.empty(), "--grid");
    out = parse_grid(spec);
  }
  return out;
}

int cmd_fishy(const AnyBundle& any, const ExperimentConfig& cfg, const Extras& ex, const Output& out) {
  if (cfg.reps < 2) throw ConfigError("fishy: reps must be >= 2");
  return std::visit(
      [&](const auto& b) {
        const auto grid = grid_for(b, ex.grid);
        const auto rows = fishy_profile(b.kernel, b.h, grid, b.y, cfg.reps, RngStream(cfg.seed, 0), workers_of(cfg),
                                        cfg.budget);
        Table t{{"x", "mean", "se", "second_moment", "mean_cost"}, {}};
        for (const auto& r : rows) t.rows.push_back({r.x, r.mean, r.se, r.second_moment, r.mean_cost});
        out.table(t);
        out.summary({{"command", "fishy"}, {"model", b.kernel.label()}, {"y", b.y}, {"reps", cfg.reps}});
        return 0;
      },
      any);
}

template <class B>
std::vector<Attempt<AvarEstimate<typename B::State>>> run_suave(const B& b, const ExperimentConfig& cfg,
                                                                 const SuaveConfig& sc, std::size_t reps,
                                                                 const RngStream& root) {
  return parallel_map(reps, workers_of(cfg), [&](std::size_t m) {
    return attempt([&] { return suave(b.kernel, b.init, b.h, b.y, sc, root.split(m)); });
  });
}

SuaveConfig suave_config(const ExperimentConfig& cfg, const SecondMomentTable* table) {
  SuaveConfig sc;
  sc.k = *cfg.k;
  sc.lag = *cfg.lag;
  sc.ell = *cfg.ell;
  sc.R = cfg.R;
  sc.xi_kind = cfg.xi;
  sc.table = table;
  sc.budget = cfg.budget;
  return sc;
}

template <class T>
std::pair<std::vector<double>, std::vector<double>> values_costs(const std::vector<Attempt<AvarEstimate<T>>>& v) {
  std::vector<double> values, costs;
  for (const auto& a : v)
    if (a.value) {
      values.push_back(a.value->scalar());
      costs.push_back(static_cast<double>(a.value->cost_total));
    }
  return {values, costs};
}

int cmd_umcmc(const AnyBundle& any, const ExperimentConfig& cfg, const Extras& ex, const Output& out) {
  return std::visit(
      [&](const auto& b) {
        const RngStream root(cfg.seed, 0);
        const auto draws = parallel_map(cfg.reps, workers_of(cfg), [&](std::size_t m) {
          return attempt([&] {
            return unbiased_estimate(b.kernel, b.init, b.h, *cfg.k, *cfg.ell, *cfg.lag, root.split(m), cfg.budget);
          });
        });
        Table t{{"rep", "value", "cost"}, {}};
        std::vector<double> values, costs;
        for (std::size_t m = 0; m < draws.size(); ++m) {
          if (!draws[m].value) continue;
          t.rows.push_back({m, draws[m].value->value[0], draws[m].value->cost_units});
          values.push_back(draws[m].value->value[0]);
          costs.push_back(static_cast<double>(draws[m].value->cost_units));
        }
        out.table(t);
        json s = {{"command", "umcmc"}, {"model", b.kernel.label()}, {"k", *cfg.k}, {"L", *cfg.lag},
                  {"ell", *cfg.ell},    {"reps", cfg.reps}};
        if (values.size() >= 2) {
          const Inefficiency ie = inefficiency(values, costs, ex.n_boot, 0.95, root.split(1u << 31));
          add_inefficiency(s, ie);
          if (ex.suave_reps > 0) {
            const auto sv = run_suave(b, cfg, suave_config(cfg, nullptr), ex.suave_reps, RngStream(cfg.seed, 1));
            const auto [sv_values, sv_costs] = values_costs(sv);
            if (!sv_values.empty()) {
              const double v_hat = mean_variance(sv_values).first;
              s["suave_reps"] = sv_values.size();
              s["suave_R"] = cfg.R;
              s["suave_v"] = v_hat;
              s["inefficiency_over_suave_v"] = ie.product / v_hat;
            }
          }
        }
        const int rc = flag_partial(s, aborted_reps(draws), first_error(draws));
        out.summary(s);
        return rc;
      },
      any);
}

int cmd_epave(const AnyBundle& any, const ExperimentConfig& cfg, const Extras& ex, const Output& out) {
  return std::visit(
      [&](const auto& b) {
        const RngStream root(cfg.seed, 0);
        std::int64_t burn_in = 0;
        if (cfg.burn_in) {
          burn_in = *cfg.burn_in;
        } else if (cfg.k) {
          burn_in = *cfg.k;
        } else {
          burn_in = pilot_for(b, cfg, cfg.lag.value_or(1), ex.quantile, ex.multiple, RngStream(cfg.seed, 2), nullptr).k;
        }
        const auto draws = parallel_map(cfg.reps, workers_of(cfg), [&](std::size_t m) {
          return attempt([&] {
            const RngStream rep = root.split(m);
            RngStream init_rng = rep.split(0);
            const auto x0 = b.init(init_rng);
            return epave(b.kernel, b.h, x0, burn_in, cfg.t_steps, cfg.thin, b.y, rep.split(1), cfg.budget);
          });
        });
        Table t{{"rep", "estimate", "cost"}, {}};
        std::vector<double> values, costs;
        for (std::size_t m = 0; m < draws.size(); ++m) {
          if (!draws[m].value) continue;
          const auto& e = *draws[m].value;
          t.rows.push_back({m, e.value, e.cost_chain + e.cost_fishy});
          values.push_back(e.value);
          costs.push_back(static_cast<double>(e.cost_chain + e.cost_fishy));
        }
        out.table(t);
        json s = {{"command", "epave"}, {"model", b.kernel.label()}, {"t", cfg.t_steps},
                  {"D", cfg.thin},      {"burn_in", burn_in},        {"reps", cfg.reps}};
        if (values.size() >= 2) add_inefficiency(s, inefficiency(values, costs, ex.n_boot, 0.95, root.split(1u << 31)));
        else if (values.size() == 1) s["mean"] = values[0];
        const int rc = flag_partial(s, aborted_reps(draws), first_error(draws));
        out.summary(s);
        return rc;
      },
      any);
}

SecondMomentTable load_table(const std::string& path) {
  std::vector<std::string> header;
  const Eigen::MatrixXd m = read_csv_matrix(path, &header);
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError(path + ": missing column '" + name + "'");
    return static_cast<Eigen::Index>(it - header.begin());
  };
  const Eigen::Index cx = col("x");
  const Eigen::Index cm = col("second_moment");
  std::vector<double> keys, values;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    keys.push_back(m(i, cx));
    values.push_back(m(i, cm));
  }
  return SecondMomentTable(std::move(keys), std::move(values));
}

int cmd_suave(const AnyBundle& any, const ExperimentConfig& cfg, const Extras& ex, const Output& out) {
  std::optional<SecondMomentTable> table;
  if (cfg.xi == SelectionKind::optimal) {
    require(!ex.table_path.empty(), "--table (output of the fishy subcommand) for --xi optimal");
    table = load_table(ex.table_path);
  }
  return std::visit(
      [&](const auto& b) {
        const RngStream root(cfg.seed, 0);
        const auto draws = run_suave(b, cfg, suave_config(cfg, table ? &*table : nullptr), cfg.reps, root);
        Table t{{"rep", "estimate", "cost_total", "cost_fishy"}, {}};
        std::vector<double> values, costs, fishy_costs;
        for (std::size_t m = 0; m < draws.size(); ++m) {
          if (!draws[m].value) continue;
          const auto& e = *draws[m].value;
          t.rows.push_back({m, e.scalar(), e.cost_total, e.cost_fishy});
          values.push_back(e.scalar());
          costs.push_back(static_cast<double>(e.cost_total));
          fishy_costs.push_back(static_cast<double>(e.cost_fishy));
        }
        out.table(t);
        json s = {{"command", "suave"}, {"model", b.kernel.label()}, {"k", *cfg.k},  {"L", *cfg.lag},
                  {"ell", *cfg.ell},    {"R", cfg.R},                {"y", b.y},     {"xi", to_string(cfg.xi)},
                  {"reps", cfg.reps}};
        if (values.size() >= 2) {
          const Inefficiency ie = inefficiency(values, costs, ex.n_boot, 0.95, root.split(1u << 31));
          add_inefficiency(s, ie);
          s["estimate"] = ie.mean;
          s["total_cost"] = ie.mean_cost;
          s["fishy_cost"] = mean_variance(fishy_costs).first;
          s["variance_of_estimator"] = ie.variance;
        }
        const int rc = flag_partial(s, aborted_reps(draws), first_error(draws));
        out.summary(s);
        return rc;
      },
      any);
}

int cmd_theory_check(const ExperimentConfig& cfg, const Extras& ex, const Output& out) {
  if (cfg.model != ModelKind::ar1) throw ConfigError("theory-check applies to the ar1 model only");
  const Ar1TheoryBound c = Ar1TheoryBound::make(cfg.ar1.phi, cfg.ar1.sigma);
  const Ar1Kernel kernel(cfg.ar1, cli::coupling_for(cfg, CouplingKind::reflection_maximal));
  const RngStream root(cfg.seed, 0);
  const auto draws = parallel_map(cfg.reps, workers_of(cfg), [&](std::size_t i) {
    return attempt([&] {
      RngStream s = root.split(i);
      return simulate_coupled(kernel, ex.x0, ex.y0, 0, 0, s, [](const auto&) {}, cfg.budget).meeting_time;
    });
  });
  std::vector<std::int64_t> taus;
  for (const auto& d : draws)
    if (d.value) taus.push_back(*d.value);
  if (taus.empty()) throw std::runtime_error("no replicate completed");
  std::sort(taus.begin(), taus.end());
  const std::int64_t nmax = ex.nmax.value_or(taus.back());
  Table t{{"n", "bound", "empirical"}, {}};
  std::size_t above = 0;
  for (std::int64_t n = 0; n <= nmax; ++n) {
    while (above < taus.size() && taus[above] <= n) ++above;
    const double emp = static_cast<double>(taus.size() - above) / static_cast<double>(taus.size());
    t.rows.push_back({n, ar1_survival_bound(c, ex.x0, ex.y0, n), emp});
  }
  out.table(t);
  json s = {{"command", "theory-check"},
            {"phi", c.phi},
            {"sigma", c.sigma},
            {"beta", c.beta},
            {"b", c.b},
            {"h_const", c.h_const},
            {"delta", c.delta},
            {"beta_tilde", c.beta_tilde},
            {"beta_bar", c.beta_bar},
            {"c_tilde", c.c_tilde(ex.x0, ex.y0)},
            {"x0", ex.x0},
            {"y0", ex.y0},
            {"constants_in_range", c.constants_in_range()},
            {"reps", cfg.reps}};
  const int rc = flag_partial(s, aborted_reps(draws), first_error(draws));
  out.summary(s);
  return rc;
}

int cmd_oracle(const ExperimentConfig& cfg, const Output& out) {
  if (cfg.model != ModelKind::finite) throw ConfigError("oracle applies to the finite model only");
  const auto model = load_finite_model(cfg);
  const OracleSolution sol = solve_finite(*model);
  Table t{{"state", "pi", "h", "g_star"}, {}};
  for (Eigen::Index i = 0; i < sol.pi.size(); ++i)
    t.rows.push_back({static_cast<std::size_t>(i), sol.pi(i), model->h_values()(i, 0), sol.g_star(i, 0)});
  out.table(t);
  out.summary({{"command", "oracle"}, {"n_states", model->n_states()}, {"pi_h", sol.pi_h(0)}, {"v", sol.v(0, 0)}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fishy-function tools: coupled Markov chains, unbiased MCMC and asymptotic variance estimation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for all subcommands");

  Parsed parsed;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"meetings", "sample meeting times: CSV rep,tau,lag,cost"},
      {"tvbound", "total variation upper bounds: CSV t,bound"},
      {"tailfit", "log-log regression of the meeting-time survival: JSON"},
      {"pilot", "recommend (k, L, ell) from a pilot meeting run: JSON"},
      {"fishy", "fishy-function estimates on a grid: CSV x,mean,se,second_moment,mean_cost"},
      {"umcmc", "unbiased MCMC estimates of pi(h): CSV rep,value,cost"},
      {"epave", "ergodic Poisson asymptotic variance estimates: CSV rep,estimate,cost"},
      {"suave", "subsampled unbiased asymptotic variance estimates: CSV rep,estimate,cost_total,cost_fishy"},
      {"theory-check", "AR(1) meeting-time bound vs empirical survival: CSV n,bound,empirical"},
      {"oracle", "exact stationary law and Poisson solution of a finite chain: CSV state,pi,h,g_star"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, parsed);
    subs[name] = sub;
  }
  Extras& ex = parsed.extras;
  subs["tvbound"]->add_option("--tmax", ex.tmax, "largest t (default max(tau) - L)");
  subs["tailfit"]->add_option("--tmin", ex.tmin, "smallest tau - L in the fit (default: median)");
  subs["tailfit"]->add_option("--tail-model", ex.tail_model, "regression model")
      ->check(CLI::IsMember({"polynomial", "exponential"}));
  subs["fishy"]->add_option("--grid", ex.grid, "lo:hi:step or comma list (finite: state indices, default all)");
  subs["suave"]->add_option("--table", ex.table_path, "second-moment table (fishy output) for --xi optimal");
  subs["umcmc"]->add_option("--suave-reps", ex.suave_reps, "also run SUAVE with this many replicates");
  for (const char* n : {"umcmc", "suave", "epave"})
    subs[n]->add_option("--n-boot", ex.n_boot, "bootstrap resamples")->check(CLI::PositiveNumber);
  subs["theory-check"]->add_option("--x0", ex.x0, "initial X");
  subs["theory-check"]->add_option("--y0", ex.y0, "initial Y");
  subs["theory-check"]->add_option("--nmax", ex.nmax, "largest n (default max tau)");
  for (const char* n : {"pilot", "epave", "umcmc", "suave"}) {
    subs[n]->add_option("--quantile", ex.quantile, "meeting-time quantile for k and L");
    subs[n]->add_option("--multiple", ex.multiple, "ell = multiple * k");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto chosen = app.get_subcommands();
    std::cerr << (chosen.empty() ? app.help() : chosen.front()->help());
    return kExitUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    ExperimentConfig cfg = build_config(parsed);
    const Output& out = parsed.output;
    if (name == "theory-check") return cmd_theory_check(cfg, ex, out);
    if (name == "oracle") return cmd_oracle(cfg, out);
    const bool tuned = name == "suave" || name == "umcmc";
    if (tuned && (cfg.k || cfg.lag || cfg.ell)) {
      // Check required options before loading models so usage errors come first.
      require(cfg.k.has_value(), "--k");
      require(cfg.lag.has_value(), "--L");
      require(cfg.ell.has_value(), "--ell");
    }
    if (name == "tvbound" || name == "tailfit") require(cfg.lag.has_value(), "--L");
    const AnyBundle bundle = cli::make_bundle(cfg);
    if (tuned && !cfg.k) {
      const TuningChoice c = std::visit(
          [&](const auto& b) {
            return pilot_for(b, cfg, 1, ex.quantile, ex.multiple, RngStream(cfg.seed, 2), nullptr);
          },
          bundle);
      cfg.k = c.k;
      cfg.lag = c.lag;
      cfg.ell = c.ell;
    }
    if (name == "meetings") return cmd_meetings(bundle, cfg, ex, out);
    if (name == "tvbound") return cmd_tvbound(bundle, cfg, ex, out);
    if (name == "tailfit") return cmd_tailfit(bundle, cfg, ex, out);
    if (name == "pilot") return cmd_pilot(bundle, cfg, ex, out);
    if (name == "fishy") return cmd_fishy(bundle, cfg, ex, out);
    if (name == "umcmc") return cmd_umcmc(bundle, cfg, ex, out);
    if (name == "epave") return cmd_epave(bundle, cfg, ex, out);
    if (name == "suave") return cmd_suave(bundle, cfg, ex, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << chosen->help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
