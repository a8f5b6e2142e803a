#pragma once

// The aggfair command line: run, sweep, probe, pareto and export-schema.
// Exit codes: 0 success, 2 config error, 3 non-convergence under --strict,
// 1 anything else.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aggfair/cli_io.hpp"

namespace aggfair::cli {

inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kNotConverged = 3;

namespace detail {

using io::json;

inline MarketConfig market_of(const io::Config& c) {
  if (const auto* m = std::get_if<MarketConfig>(&c)) return *m;
  const auto& s = std::get<ScenarioSpec>(c);
  return build_market(s, s.base_seed);
}

inline std::vector<ScenarioResult> results_of_market(const MarketConfig& cfg) {
  ScenarioResult res;
  res.scenario = "market";
  res.runs.push_back(run_market(cfg, 0));
  aggfair::detail::aggregate(res);
  return {res};
}

inline bool all_converged(const std::vector<ScenarioResult>& results) {
  for (const auto& r : results)
    if (r.n_failed > 0) return false;
  return true;
}

inline int finish(const std::vector<ScenarioResult>& results, bool strict) {
  if (!all_converged(results)) {
    int failed = 0;
    for (const auto& r : results) failed += r.n_failed;
    std::cerr << "warning: " << failed << " run(s) did not converge\n";
    if (strict) return kNotConverged;
  }
  return kOk;
}

inline int cmd_run(const std::string& config, const std::string& out, bool strict) {
  const auto c = io::parse_config(config);
  std::vector<ScenarioResult> results;
  if (const auto* s = std::get_if<ScenarioSpec>(&c))
    results = run_sweep(*s);
  else
    results = results_of_market(std::get<MarketConfig>(c));
  io::write_results(out, results, io::serialize(c));
  return finish(results, strict);
}

inline int cmd_sweep(const std::string& preset, const std::string& config, const std::string& out,
                     std::optional<int> runs, std::optional<std::uint64_t> seed, bool strict) {
  ScenarioSpec spec;
  if (!config.empty()) {
    const auto c = io::parse_config(config);
    const auto* s = std::get_if<ScenarioSpec>(&c);
    if (!s) throw io::ConfigError("sweep needs a scenario config, not a market");
    spec = *s;
  } else {
    try {
      spec = build_preset(preset);
    } catch (const std::invalid_argument& e) {
      throw io::ConfigError(e.what());
    }
  }
  if (!spec.sweep) throw io::ConfigError("scenario '" + spec.name + "' has no sweep");
  if (runs) spec.n_runs = *runs;
  if (seed) spec.base_seed = *seed;
  try {
    validate(spec);
  } catch (const std::invalid_argument& e) {
    throw io::ConfigError(e.what());
  }
  const auto results = run_sweep(spec);
  io::write_results(out, results, io::to_json(spec));
  return finish(results, strict);
}

inline int cmd_probe_unimodality(const MarketConfig& cfg, const std::filesystem::path& dir, int grid, bool strict,
                                 const json& config) {
  // Probe each player against the others' equilibrium purchases.
  const auto eq = best_response_dynamics(cfg, {std::vector<double>(cfg.aggregators.size(), 0.0)});
  std::filesystem::create_directories(dir);
  io::CsvWriter table(dir / "probe.csv", {"player_id", "others_total", "upper", "violation", "scale", "relative",
                                          "max_priced_out", "conforming"});
  io::CsvWriter samples(dir / "probe_samples.csv", {"player_id", "y", "payoff"});
  json players = json::array();
  double worst = 0.0;
  bool conforming = true;
  for (std::size_t j = 0; j < cfg.aggregators.size(); ++j) {
    const double others = eq.y_star.others_total(j);
    const auto rep = unimodality_probe(cfg.aggregators[j], others, cfg.price, grid, cfg.tolerances);
    const auto id = std::to_string(cfg.aggregators[j].id);
    table.row({id, io::fmt(others), io::fmt(rep.y.back()), io::fmt(rep.violation), io::fmt(rep.scale),
               io::fmt(rep.relative()), std::to_string(rep.max_priced_out), rep.conforming() ? "1" : "0"});
    for (std::size_t i = 0; i < rep.y.size(); ++i) samples.row({id, io::fmt(rep.y[i]), io::fmt(rep.payoff[i])});
    worst = std::max(worst, rep.relative());
    conforming = conforming && rep.conforming();
    players.push_back({{"player_id", cfg.aggregators[j].id},
                       {"relative", io::number(rep.relative())},
                       {"max_priced_out", rep.max_priced_out},
                       {"conforming", rep.conforming()}});
  }
  io::write_json(dir / "probe.json", {{"kind", "unimodality"},
                                      {"config", config},
                                      {"grid_points", grid},
                                      {"equilibrium_converged", eq.converged},
                                      {"max_relative_violation", io::number(worst)},
                                      {"conforming", conforming},
                                      {"players", players}});
  if (!eq.converged) {
    std::cerr << "warning: equilibrium for the probe did not converge\n";
    if (strict) return kNotConverged;
  }
  return kOk;
}

inline int cmd_probe_uniqueness(const MarketConfig& cfg, const std::filesystem::path& dir, int starts,
                                std::uint64_t seed, bool strict, const json& config) {
  const auto rep = uniqueness_probe(cfg, starts, random_start_sampler(cfg, seed));
  std::filesystem::create_directories(dir);
  io::CsvWriter table(dir / "uniqueness.csv", {"start", "converged", "iterations", "player_id", "y0", "y_star"});
  for (int k = 0; k < starts; ++k) {
    const auto& run = rep.runs[k];
    for (std::size_t j = 0; j < cfg.aggregators.size(); ++j)
      table.row({std::to_string(k), run.converged ? "1" : "0", std::to_string(run.iterations),
                 std::to_string(cfg.aggregators[j].id), io::fmt(rep.starts[k].y[j]), io::fmt(run.y_star.y[j])});
  }
  io::write_json(dir / "probe.json", {{"kind", "uniqueness"},
                                      {"config", config},
                                      {"starts", starts},
                                      {"seed", seed},
                                      {"n_converged", rep.n_converged},
                                      {"n_failed", rep.n_failed},
                                      {"max_distance", io::number(rep.max_distance)},
                                      {"scale", io::number(rep.scale)},
                                      {"relative", io::number(rep.relative())}});
  if (rep.n_failed > 0) {
    std::cerr << "warning: " << rep.n_failed << " start(s) did not converge\n";
    if (strict) return kNotConverged;
  }
  return kOk;
}

inline int cmd_probe(const std::string& config, const std::string& kind, const std::string& out, int grid, int starts,
                     std::optional<std::uint64_t> seed, bool strict) {
  const auto c = io::parse_config(config);
  const auto cfg = market_of(c);
  const auto normalized = io::serialize(c);
  if (kind == "unimodality") return cmd_probe_unimodality(cfg, out, grid, strict, normalized);
  return cmd_probe_uniqueness(cfg, out, starts, seed.value_or(cfg.rng_seed), strict, normalized);
}

// {"users": [{"a","b"}, {"a","b"}], "y": .., "p": .., "alphas": [..], "front_points": n}
inline int cmd_pareto(const std::string& config, const std::string& out) {
  const auto j = io::parse_json_text(io::read_file(config), config);
  io::detail::check_keys(j, "", {"users", "y", "p", "alphas", "front_points"});
  if (!j.contains("users") || !j["users"].is_array() || j["users"].size() != 2)
    throw io::ConfigError("field 'users': expected exactly two users");
  std::vector<QuadraticUtility> users;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto p = "users[" + std::to_string(i) + "]";
    io::detail::check_keys(j["users"][i], p, {"a", "b"});
    if (!j["users"][i].contains("a") || !j["users"][i].contains("b")) throw io::ConfigError("field '" + p + "': needs a and b");
    try {
      users.emplace_back(io::detail::as_number(j["users"][i]["a"], p + ".a"),
                         io::detail::as_number(j["users"][i]["b"], p + ".b"));
    } catch (const std::invalid_argument& e) {
      throw io::ConfigError("field '" + p + "': " + e.what());
    }
  }
  if (!j.contains("y")) throw io::ConfigError("field 'y': missing");
  const double y = io::detail::as_number(j["y"], "y");
  const double p = j.contains("p") ? io::detail::as_number(j["p"], "p") : 0.0;
  if (!(y >= 0.0)) throw io::ConfigError("field 'y': must be >= 0");
  if (!(p >= 0.0)) throw io::ConfigError("field 'p': must be >= 0");
  const auto alphas = j.contains("alphas") ? io::detail::as_numbers(j["alphas"], "alphas", true) : alpha_grid();
  const int n_front = j.contains("front_points") ? static_cast<int>(io::detail::as_int(j["front_points"], "front_points")) : 201;
  if (n_front < 2) throw io::ConfigError("field 'front_points': must be >= 2");
  const double cap = user_max_consumption(users[0], p, 0.0) + user_max_consumption(users[1], p, 0.0);
  if (y > cap) throw io::ConfigError("field 'y': budget exceeds what both users can absorb at this price");

  std::filesystem::create_directories(out);
  const std::filesystem::path dir(out);
  io::CsvWriter trace(dir / "pareto.csv", {"alpha", "x1", "x2", "s1", "s2"});
  for (double a : alphas) {
    const auto r = allocate(users, y, p, a);
    trace.row({io::fmt(a), io::fmt(r.x[0]), io::fmt(r.x[1]), io::fmt(r.s[0]), io::fmt(r.s[1])});
  }
  // Every budget split that keeps both surpluses nonnegative.
  const double lo = std::max(0.0, y - user_max_consumption(users[1], p, 0.0));
  const double hi = std::min(y, user_max_consumption(users[0], p, 0.0));
  io::CsvWriter front(dir / "front.csv", {"x1", "x2", "s1", "s2"});
  for (int i = 0; i < n_front; ++i) {
    const double x1 = lo + (hi - lo) * i / (n_front - 1);
    front.row({io::fmt(x1), io::fmt(y - x1), io::fmt(eval_surplus(users[0], x1, p)),
               io::fmt(eval_surplus(users[1], y - x1, p))});
  }
  return kOk;
}

}  // namespace detail

/// Parses argv and runs one subcommand; returns the process exit code.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Multi-aggregator alpha-fair energy allocation game"};
  app.require_subcommand(1);
  std::string config, out, preset, kind = "unimodality";
  bool strict = false;
  std::optional<int> runs;
  std::optional<std::uint64_t> seed;
  int grid = 501, starts = 5;

  auto* run = app.add_subcommand("run", "Run a scenario or market to equilibrium and export the results");
  run->add_option("--config", config, "JSON config file")->required();
  run->add_option("--out", out, "Output directory")->required();
  run->add_flag("--strict", strict, "Exit 3 if any run fails to converge");

  auto* sweep = app.add_subcommand("sweep", "Run every point of a preset's sweep");
  auto* preset_opt = sweep->add_option("--preset", preset, "Preset name");
  auto* config_opt = sweep->add_option("--config", config, "Scenario config with a sweep");
  preset_opt->excludes(config_opt);
  sweep->add_option("--out", out, "Output directory")->required();
  sweep->add_option("--runs", runs, "Override n_runs")->check(CLI::PositiveNumber);
  sweep->add_option("--seed", seed, "Override base_seed");
  sweep->add_flag("--strict", strict, "Exit 3 if any run fails to converge");

  auto* probe = app.add_subcommand("probe", "Unimodality or uniqueness probe");
  probe->add_option("--config", config, "JSON config file")->required();
  probe->add_option("--kind", kind, "unimodality or uniqueness")
      ->check(CLI::IsMember({"unimodality", "uniqueness"}));
  probe->add_option("--out", out, "Output directory")->required();
  probe->add_option("--grid", grid, "Grid points for unimodality")->check(CLI::Range(3, 1000000));
  probe->add_option("--starts", starts, "Random starts for uniqueness")->check(CLI::Range(2, 100000));
  probe->add_option("--seed", seed, "Seed for the random starts");
  probe->add_flag("--strict", strict, "Exit 3 if the dynamics fail to converge");

  auto* pareto = app.add_subcommand("pareto", "Trace the alpha-fair optima of a two-user split");
  pareto->add_option("--config", config, "JSON pareto config")->required();
  pareto->add_option("--out", out, "Output directory")->required();

  auto* schema = app.add_subcommand("export-schema", "Write the export column schema");
  schema->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return detail::cmd_run(config, out, strict);
    if (*sweep) {
      if (preset.empty() && config.empty()) throw io::ConfigError("sweep needs --preset or --config");
      return detail::cmd_sweep(preset, config, out, runs, seed, strict);
    }
    if (*probe) return detail::cmd_probe(config, kind, out, grid, starts, seed, strict);
    if (*pareto) return detail::cmd_pareto(config, out);
    if (*schema) {
      std::filesystem::create_directories(out);
      io::write_json(std::filesystem::path(out) / "schema.json", io::export_schema());
      return kOk;
    }
  } catch (const io::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace aggfair::cli
