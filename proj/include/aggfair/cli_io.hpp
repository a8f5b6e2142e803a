#pragma once

// JSON configuration, normalized serialization and CSV/JSON exports.
//
// A config file holds one of three shapes:
//   {"preset": "<name>", ...overrides}   a named experiment with edits
//   {"name": ..., "population": ...}     a scenario written out in full
//   {"market": {...}}                    an explicit market, users inline
// Alphas are numbers or the string "inf".

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "aggfair/scenarios.hpp"

namespace aggfair::io {

using json = nlohmann::ordered_json;

/// Malformed or invalid configuration. Maps to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Config = std::variant<ScenarioSpec, MarketConfig>;

/// 17 significant digits; inf, -inf and nan spelled out.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// JSON has no infinities; they travel as strings.
inline json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return nullptr;
  return v > 0 ? "inf" : "-inf";
}

namespace detail {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw ConfigError("field '" + path + "': " + what);
}

inline void check_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    if (!ok) fail(join(path, k), "unknown field");
  }
}

inline double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

inline double as_alpha(const json& j, const std::string& path) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "Infinity" || s == "infinity") return kInfinity;
    fail(path, "expected a number or \"inf\"");
  }
  const double a = as_number(j, path);
  if (!(a >= 0.0)) fail(path, "alpha must be >= 0");
  return a;
}

inline std::int64_t as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<std::int64_t>();
}

inline std::uint64_t as_seed(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  fail(path, "expected a nonnegative integer");
}

inline std::vector<double> as_alphas(const json& j, const std::string& path) {
  if (!j.is_array()) return {as_alpha(j, path)};
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_alpha(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::vector<double> as_numbers(const json& j, const std::string& path, bool alphas) {
  if (!j.is_array()) fail(path, "expected an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto p = path + "[" + std::to_string(i) + "]";
    out.push_back(alphas ? as_alpha(j[i], p) : as_number(j[i], p));
  }
  return out;
}

inline json alphas_json(const std::vector<double>& v) {
  json out = json::array();
  for (double a : v) out.push_back(number(a));
  return out;
}

inline SolverTolerances tolerances_from(const json& j, SolverTolerances t, const std::string& path) {
  check_keys(j, path, {"tol_lambda", "tol_x", "tol_y", "tol_br", "surplus_floor", "max_br_iters", "alpha_cap"});
  auto num = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = as_number(j[k], join(path, k));
  };
  num("tol_lambda", t.tol_lambda);
  num("tol_x", t.tol_x);
  num("tol_y", t.tol_y);
  num("tol_br", t.tol_br);
  num("surplus_floor", t.surplus_floor);
  num("alpha_cap", t.alpha_cap);
  if (j.contains("max_br_iters")) t.max_br_iters = static_cast<int>(as_int(j["max_br_iters"], join(path, "max_br_iters")));
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    fail(path, e.what());
  }
  return t;
}

inline json tolerances_json(const SolverTolerances& t) {
  return {{"tol_lambda", t.tol_lambda}, {"tol_x", t.tol_x},         {"tol_y", t.tol_y},
          {"tol_br", t.tol_br},         {"surplus_floor", t.surplus_floor}, {"max_br_iters", t.max_br_iters},
          {"alpha_cap", t.alpha_cap}};
}

inline PriceCurve price_from(const json& j, const std::string& path) {
  check_keys(j, path, {"kind", "c"});
  if (j.contains("kind") && j["kind"] != "linear") fail(join(path, "kind"), "only \"linear\" is supported");
  if (!j.contains("c")) fail(join(path, "c"), "missing");
  const double c = as_number(j["c"], join(path, "c"));
  if (!(c > 0.0)) fail(join(path, "c"), "price slope c must be > 0");
  return PriceCurve::linear(c);
}

inline json price_json(const PriceCurve& pc) {
  return {{"kind", "linear"}, {"c", std::get<LinearPrice>(pc.variant()).c}};
}

inline SweepVariable sweep_variable_from(const json& j, const std::string& path) {
  for (auto v : {SweepVariable::kK, SweepVariable::kAlphaBoth, SweepVariable::kAlphaSecond, SweepVariable::kAggCount})
    if (j == to_string(v)) return v;
  fail(path, "expected one of K, alpha_both, alpha_second, agg_count");
}

inline Grouping grouping_from(const json& j, const std::string& path) {
  check_keys(j, path, {"kind", "k", "groups"});
  const std::string kind = j.value("kind", "");
  if (kind == "singletons") return Grouping::singletons();
  if (kind == "k_aggregators") {
    if (!j.contains("k")) fail(join(path, "k"), "missing");
    return Grouping::aggregators(static_cast<int>(as_int(j["k"], join(path, "k"))));
  }
  if (kind == "explicit") {
    if (!j.contains("groups") || !j["groups"].is_array()) fail(join(path, "groups"), "expected an array of arrays");
    std::vector<std::vector<int>> groups;
    for (std::size_t g = 0; g < j["groups"].size(); ++g) {
      const auto gp = join(path, "groups") + "[" + std::to_string(g) + "]";
      if (!j["groups"][g].is_array()) fail(gp, "expected an array");
      groups.emplace_back();
      for (const auto& i : j["groups"][g]) groups.back().push_back(static_cast<int>(as_int(i, gp)));
    }
    return Grouping::explicit_groups(std::move(groups));
  }
  fail(join(path, "kind"), "expected singletons, k_aggregators or explicit");
}

inline json grouping_json(const Grouping& g) {
  json out{{"kind", to_string(g.kind)}};
  if (g.kind == GroupingKind::kAggregators) out["k"] = g.k;
  if (g.kind == GroupingKind::kExplicit) out["groups"] = g.groups;
  return out;
}

inline ScenarioSpec scenario_from(const json& j) {
  check_keys(j, "", {"preset", "name", "population", "grouping", "alphas", "price", "n_runs", "base_seed",
                     "tolerances", "sweep"});
  ScenarioSpec s;
  if (j.contains("preset")) {
    if (!j["preset"].is_string()) fail("preset", "expected a string");
    try {
      s = build_preset(j["preset"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      fail("preset", e.what());
    }
  }
  if (j.contains("name")) {
    if (!j["name"].is_string()) fail("name", "expected a string");
    s.name = j["name"].get<std::string>();
  }
  if (j.contains("population")) {
    const auto& p = j["population"];
    check_keys(p, "population", {"n_small", "large_K"});
    if (p.contains("n_small")) s.population.n_small = static_cast<int>(as_int(p["n_small"], "population.n_small"));
    if (p.contains("large_K")) {
      if (p["large_K"].is_null())
        s.population.large_K.reset();
      else
        s.population.large_K = as_number(p["large_K"], "population.large_K");
    }
  }
  if (j.contains("grouping")) s.grouping = grouping_from(j["grouping"], "grouping");
  if (j.contains("alphas")) s.alphas = as_alphas(j["alphas"], "alphas");
  if (j.contains("price")) s.price = price_from(j["price"], "price");
  if (j.contains("n_runs")) s.n_runs = static_cast<int>(as_int(j["n_runs"], "n_runs"));
  if (j.contains("base_seed")) s.base_seed = as_seed(j["base_seed"], "base_seed");
  if (j.contains("tolerances")) s.tolerances = tolerances_from(j["tolerances"], s.tolerances, "tolerances");
  if (j.contains("sweep")) {
    const auto& w = j["sweep"];
    if (w.is_null()) {
      s.sweep.reset();
    } else {
      check_keys(w, "sweep", {"variable", "values", "series_alphas"});
      SweepSpec sw;
      if (!w.contains("variable")) fail("sweep.variable", "missing");
      sw.variable = sweep_variable_from(w["variable"], "sweep.variable");
      if (!w.contains("values")) fail("sweep.values", "missing");
      const bool alpha_valued = sw.variable == SweepVariable::kAlphaBoth || sw.variable == SweepVariable::kAlphaSecond;
      sw.values = as_numbers(w["values"], "sweep.values", alpha_valued);
      if (w.contains("series_alphas")) sw.series_alphas = as_numbers(w["series_alphas"], "sweep.series_alphas", true);
      s.sweep = sw;
    }
  }
  try {
    validate(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

inline MarketConfig market_from(const json& j) {
  check_keys(j, "market", {"price", "tolerances", "rng_seed", "aggregators"});
  MarketConfig cfg;
  if (j.contains("price")) cfg.price = price_from(j["price"], "market.price");
  if (j.contains("tolerances")) cfg.tolerances = tolerances_from(j["tolerances"], cfg.tolerances, "market.tolerances");
  if (j.contains("rng_seed")) cfg.rng_seed = as_seed(j["rng_seed"], "market.rng_seed");
  if (!j.contains("aggregators") || !j["aggregators"].is_array()) fail("market.aggregators", "expected an array");
  for (std::size_t a = 0; a < j["aggregators"].size(); ++a) {
    const auto ap = "market.aggregators[" + std::to_string(a) + "]";
    const auto& aj = j["aggregators"][a];
    check_keys(aj, ap, {"id", "alpha", "users"});
    AggregatorSpec agg;
    agg.id = aj.contains("id") ? as_int(aj["id"], ap + ".id") : static_cast<std::int64_t>(a);
    if (aj.contains("alpha")) agg.alpha = as_alpha(aj["alpha"], ap + ".alpha");
    if (!aj.contains("users") || !aj["users"].is_array()) fail(ap + ".users", "expected an array");
    for (std::size_t i = 0; i < aj["users"].size(); ++i) {
      const auto up = ap + ".users[" + std::to_string(i) + "]";
      const auto& uj = aj["users"][i];
      check_keys(uj, up, {"id", "a", "b", "size_class"});
      UserSpec u;
      if (!uj.contains("id")) fail(up + ".id", "missing");
      u.id = as_int(uj["id"], up + ".id");
      if (!uj.contains("a") || !uj.contains("b")) fail(up, "needs both a and b");
      try {
        u.utility = QuadraticUtility(as_number(uj["a"], up + ".a"), as_number(uj["b"], up + ".b"));
      } catch (const std::invalid_argument& e) {
        fail(up, e.what());
      }
      const std::string sc = uj.value("size_class", "small");
      if (sc != "small" && sc != "large") fail(up + ".size_class", "expected small or large");
      u.size_class = sc == "small" ? SizeClass::kSmall : SizeClass::kLarge;
      agg.users.push_back(u);
    }
    cfg.aggregators.push_back(std::move(agg));
  }
  try {
    validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

// "line L, column C" of the byte-th character (1-based) of text.
inline std::string locate(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < std::min(byte, text.size() + 1); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

/// Normalized form: every field present, presets expanded.
inline json to_json(const ScenarioSpec& s) {
  json out;
  out["name"] = s.name;
  out["population"] = {{"n_small", s.population.n_small},
                       {"large_K", s.population.large_K ? json(*s.population.large_K) : json(nullptr)}};
  out["grouping"] = detail::grouping_json(s.grouping);
  out["alphas"] = detail::alphas_json(s.alphas);
  out["price"] = detail::price_json(s.price);
  out["n_runs"] = s.n_runs;
  out["base_seed"] = s.base_seed;
  out["tolerances"] = detail::tolerances_json(s.tolerances);
  if (s.sweep) {
    out["sweep"] = {{"variable", to_string(s.sweep->variable)},
                    {"values", detail::alphas_json(s.sweep->values)},
                    {"series_alphas", detail::alphas_json(s.sweep->series_alphas)}};
  } else {
    out["sweep"] = nullptr;
  }
  return out;
}

inline json to_json(const MarketConfig& cfg) {
  json aggs = json::array();
  for (const auto& agg : cfg.aggregators) {
    json users = json::array();
    for (const auto& u : agg.users)
      users.push_back({{"id", u.id}, {"a", u.utility.a}, {"b", u.utility.b}, {"size_class", to_string(u.size_class)}});
    aggs.push_back({{"id", agg.id}, {"alpha", number(agg.alpha)}, {"users", users}});
  }
  return {{"market",
           {{"price", detail::price_json(cfg.price)},
            {"tolerances", detail::tolerances_json(cfg.tolerances)},
            {"rng_seed", cfg.rng_seed},
            {"aggregators", aggs}}}};
}

inline json serialize(const Config& c) {
  return std::visit([](const auto& v) { return to_json(v); }, c);
}

inline Config config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (j.contains("market")) {
    if (j.size() != 1) throw ConfigError("a market config holds only the \"market\" field");
    return detail::market_from(j["market"]);
  }
  return detail::scenario_from(j);
}

inline json parse_json_text(std::string_view text, std::string_view source) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string(source) + ": " + detail::locate(text, e.byte) + ": malformed JSON");
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Config parse_config_text(std::string_view text, std::string_view source = "<config>") {
  return config_from_json(parse_json_text(text, source));
}

inline Config parse_config(const std::filesystem::path& path) {
  return parse_config_text(read_file(path), path.string());
}

// ---- exports ---------------------------------------------------------------

inline const std::vector<std::string>& trajectory_columns() {
  static const std::vector<std::string> c{"run", "iteration", "player_id", "y", "payoff"};
  return c;
}
inline const std::vector<std::string>& equilibrium_columns() {
  static const std::vector<std::string> c{"run", "player_id", "y_star", "payoff", "price"};
  return c;
}
inline const std::vector<std::string>& user_columns() {
  static const std::vector<std::string> c{"run", "user_id", "aggregator_id", "a", "b", "x", "surplus", "size_class"};
  return c;
}
inline const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> c{"scenario", "sweep_value", "metric", "mean", "stddev", "n_runs"};
  return c;
}

/// Comma-separated writer with a header row and "\n" line ends.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Writes trajectory, equilibrium, users and summary tables plus
/// summary.json. Runs are numbered consecutively across sweep points.
inline void write_results(const std::filesystem::path& dir, const std::vector<ScenarioResult>& results,
                          const json& config) {
  std::filesystem::create_directories(dir);
  CsvWriter traj(dir / "trajectory.csv", trajectory_columns());
  CsvWriter eq(dir / "equilibrium.csv", equilibrium_columns());
  CsvWriter users(dir / "users.csv", user_columns());
  CsvWriter summary(dir / "summary.csv", summary_columns());
  json points = json::array();
  bool all_converged = true;
  int run_id = 0;
  for (const auto& res : results) {
    json runs = json::array();
    const int first = run_id;
    for (const auto& m : res.runs) {
      const auto& e = m.equilibrium;
      const auto rid = std::to_string(run_id);
      for (const auto& pt : e.trajectory)
        for (std::size_t j = 0; j < pt.profile.y.size(); ++j)
          traj.row({rid, std::to_string(pt.iteration), std::to_string(m.market.aggregators[j].id), fmt(pt.profile.y[j]),
                    fmt(pt.payoffs[j])});
      for (std::size_t j = 0; j < e.y_star.y.size(); ++j)
        eq.row({rid, std::to_string(m.market.aggregators[j].id), fmt(e.y_star.y[j]), fmt(e.payoffs[j]),
                fmt(e.price_at_eq)});
      for (std::size_t j = 0; j < m.market.aggregators.size(); ++j) {
        const auto& agg = m.market.aggregators[j];
        for (std::size_t i = 0; i < agg.users.size(); ++i) {
          const auto& u = agg.users[i];
          users.row({rid, std::to_string(u.id), std::to_string(agg.id), fmt(u.utility.a), fmt(u.utility.b),
                     fmt(e.per_user_x[j][i]), fmt(e.per_user_s[j][i]), to_string(u.size_class)});
        }
      }
      all_converged = all_converged && e.converged;
      runs.push_back({{"run", run_id},
                      {"seed", m.seed},
                      {"converged", e.converged},
                      {"iterations", e.iterations},
                      {"nash_verified", e.nash_verified},
                      {"nash_max_gain", number(e.nash.max_gain())},
                      {"nash_epsilon", number(e.nash.epsilon)},
                      {"price", number(e.price_at_eq)},
                      {"avg_small_surplus", number(m.avg_small_surplus)},
                      {"avg_small_consumption", number(m.avg_small_consumption)},
                      {"small_surplus_std", number(m.small_surplus_std)}});
      ++run_id;
    }
    json metrics = json::object();
    for (const auto& a : res.aggregates) {
      summary.row({res.scenario, fmt(res.sweep_value), a.metric, fmt(a.mean), fmt(a.stddev), std::to_string(a.n_runs)});
      metrics[a.metric] = {{"mean", number(a.mean)}, {"stddev", number(a.stddev)}, {"n_runs", a.n_runs}};
    }
    points.push_back({{"scenario", res.scenario},
                      {"sweep_value", number(res.sweep_value)},
                      {"first_run", first},
                      {"n_runs", static_cast<int>(res.runs.size())},
                      {"n_failed", res.n_failed},
                      {"metrics", metrics},
                      {"runs", runs}});
  }
  write_json(dir / "summary.json", {{"config", config}, {"all_converged", all_converged}, {"points", points}});
}

/// Column layout of every export, as written by export-schema.
inline json export_schema() {
  auto table = [](const std::string& file, const std::vector<std::string>& cols, const std::vector<std::string>& types) {
    json c = json::array();
    for (std::size_t i = 0; i < cols.size(); ++i) c.push_back({{"name", cols[i]}, {"type", types[i]}});
    return json{{"file", file}, {"columns", c}};
  };
  json tables = json::object();
  tables["trajectory"] =
      table("trajectory.csv", trajectory_columns(), {"integer", "integer", "integer", "number", "number"});
  tables["equilibrium"] =
      table("equilibrium.csv", equilibrium_columns(), {"integer", "integer", "number", "number", "number"});
  tables["users"] = table("users.csv", user_columns(),
                          {"integer", "integer", "integer", "number", "number", "number", "number", "string"});
  tables["summary"] =
      table("summary.csv", summary_columns(), {"string", "number", "string", "number", "number", "integer"});
  tables["unimodality"] = table("probe.csv",
                                {"player_id", "others_total", "upper", "violation", "scale", "relative",
                                 "max_priced_out", "conforming"},
                                {"integer", "number", "number", "number", "number", "number", "integer", "integer"});
  tables["unimodality_samples"] =
      table("probe_samples.csv", {"player_id", "y", "payoff"}, {"integer", "number", "number"});
  tables["uniqueness"] = table("uniqueness.csv", {"start", "converged", "iterations", "player_id", "y0", "y_star"},
                               {"integer", "integer", "integer", "integer", "number", "number"});
  tables["pareto"] = table("pareto.csv", {"alpha", "x1", "x2", "s1", "s2"},
                           {"number", "number", "number", "number", "number"});
  tables["front"] = table("front.csv", {"x1", "x2", "s1", "s2"}, {"number", "number", "number", "number"});
  json metrics = json::array();
  for (const auto& m : metric_names()) metrics.push_back(m);
  return {{"format", "comma-separated, header row, 17 significant digits, inf/-inf/nan spelled out"},
          {"tables", tables},
          {"metrics", metrics},
          {"summary_json", "summary.json: config, all_converged, points[{scenario, sweep_value, first_run, n_runs, "
                           "n_failed, metrics, runs}]"}};
}

}  // namespace aggfair::io
