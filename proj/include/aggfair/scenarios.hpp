#pragma once

// Seeded populations and the named experiment presets: small users drawn
// from uniform ranges, an optional large user, a grouping of small users
// into aggregators, and repeated runs aggregated across seeds.

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "aggfair/game_engine.hpp"
#include "aggfair/market_model.hpp"
#include "aggfair/parallel.hpp"

namespace aggfair {

struct PopulationSpec {
  int n_small = 200;
  /// Market power b/a of the large user; absent means no large user.
  std::optional<double> large_K;
  friend bool operator==(const PopulationSpec&, const PopulationSpec&) = default;
};

enum class GroupingKind { kSingletons, kAggregators, kExplicit };

struct Grouping {
  GroupingKind kind = GroupingKind::kSingletons;
  /// Number of equal-size aggregators for kAggregators.
  int k = 1;
  /// Small-user indices per aggregator for kExplicit.
  std::vector<std::vector<int>> groups;

  static Grouping singletons() { return {}; }
  static Grouping aggregators(int k) { return {GroupingKind::kAggregators, k, {}}; }
  static Grouping explicit_groups(std::vector<std::vector<int>> g) {
    return {GroupingKind::kExplicit, 0, std::move(g)};
  }
  friend bool operator==(const Grouping&, const Grouping&) = default;
};

enum class SweepVariable { kK, kAlphaBoth, kAlphaSecond, kAggCount };

struct SweepSpec {
  SweepVariable variable = SweepVariable::kK;
  std::vector<double> values;
  /// When nonempty the whole grid is repeated once per entry with every
  /// aggregator at that alpha.
  std::vector<double> series_alphas;
  friend bool operator==(const SweepSpec&, const SweepSpec&) = default;
};

struct ScenarioSpec {
  std::string name = "custom";
  PopulationSpec population;
  Grouping grouping;
  /// One value shared by every aggregator, or one per aggregator.
  std::vector<double> alphas{0.0};
  PriceCurve price = PriceCurve::linear(0.001);
  int n_runs = 1;
  std::uint64_t base_seed = 1;
  SolverTolerances tolerances;
  std::optional<SweepSpec> sweep;
  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

inline const char* to_string(SweepVariable v) {
  switch (v) {
    case SweepVariable::kK: return "K";
    case SweepVariable::kAlphaBoth: return "alpha_both";
    case SweepVariable::kAlphaSecond: return "alpha_second";
    case SweepVariable::kAggCount: return "agg_count";
  }
  return "?";
}

inline const char* to_string(GroupingKind g) {
  switch (g) {
    case GroupingKind::kSingletons: return "singletons";
    case GroupingKind::kAggregators: return "k_aggregators";
    case GroupingKind::kExplicit: return "explicit";
  }
  return "?";
}

/// a ~ U(0.1, 0.9), b ~ U(0, 10), ids 0..n-1.
inline std::vector<UserSpec> generate_small_users(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("n_small must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> a(0.1, 0.9), b(0.0, 10.0);
  std::vector<UserSpec> users;
  users.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double av = a(rng);
    users.push_back({i, {av, b(rng)}, SizeClass::kSmall});
  }
  return users;
}

/// -x^2 + K x, so that b/a = K.
inline UserSpec make_large_user(double K, std::int64_t id = 0) {
  if (!(K >= 0.0) || !std::isfinite(K)) throw std::invalid_argument("K must be finite and >= 0");
  return {id, {1.0, K}, SizeClass::kLarge};
}

/// Small-user indices for each aggregator.
inline std::vector<std::vector<int>> partition(const Grouping& g, int n) {
  std::vector<std::vector<int>> out;
  switch (g.kind) {
    case GroupingKind::kSingletons:
      for (int i = 0; i < n; ++i) out.push_back({i});
      break;
    case GroupingKind::kAggregators: {
      if (g.k < 1 || g.k > n) throw std::invalid_argument("aggregator count k must be in [1, n_small]");
      const int base = n / g.k, extra = n % g.k;
      int next = 0;
      for (int j = 0; j < g.k; ++j) {
        out.emplace_back();
        for (int i = 0; i < base + (j < extra ? 1 : 0); ++i) out.back().push_back(next++);
      }
      break;
    }
    case GroupingKind::kExplicit: {
      std::vector<int> seen(n, 0);
      for (const auto& grp : g.groups) {
        if (grp.empty()) throw std::invalid_argument("explicit groups must be nonempty");
        for (int i : grp) {
          if (i < 0 || i >= n) throw std::invalid_argument("explicit group index out of range");
          if (seen[i]++) throw std::invalid_argument("explicit groups must cover each user exactly once");
        }
      }
      for (int c : seen)
        if (c == 0) throw std::invalid_argument("explicit groups must cover each user exactly once");
      out = g.groups;
      break;
    }
  }
  return out;
}

/// Throws std::invalid_argument naming the violated invariant.
inline void validate(const ScenarioSpec& spec) {
  if (spec.n_runs < 1) throw std::invalid_argument("n_runs must be >= 1");
  if (spec.population.n_small < 1) throw std::invalid_argument("n_small must be >= 1");
  if (spec.population.large_K && !(*spec.population.large_K >= 0.0))
    throw std::invalid_argument("K must be >= 0");
  spec.tolerances.validate();
  const auto groups = partition(spec.grouping, spec.population.n_small);
  if (spec.alphas.empty()) throw std::invalid_argument("alphas must be nonempty");
  if (spec.alphas.size() != 1 && spec.alphas.size() != groups.size())
    throw std::invalid_argument("alphas must hold one value or one per aggregator");
  for (double a : spec.alphas)
    if (!(a >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  if (spec.sweep) {
    if (spec.sweep->values.empty()) throw std::invalid_argument("sweep values must be nonempty");
    for (double a : spec.sweep->series_alphas)
      if (!(a >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  }
}

/// The market for one run: small users grouped into aggregators, then the
/// large user as its own player.
inline MarketConfig build_market(const ScenarioSpec& spec, std::uint64_t seed) {
  const auto small = generate_small_users(spec.population.n_small, seed);
  const auto groups = partition(spec.grouping, spec.population.n_small);
  MarketConfig cfg;
  cfg.price = spec.price;
  cfg.tolerances = spec.tolerances;
  cfg.rng_seed = seed;
  for (std::size_t j = 0; j < groups.size(); ++j) {
    AggregatorSpec agg{static_cast<std::int64_t>(j), spec.alphas.size() == 1 ? spec.alphas[0] : spec.alphas[j], {}};
    for (int i : groups[j]) agg.users.push_back(small[i]);
    cfg.aggregators.push_back(std::move(agg));
  }
  if (spec.population.large_K) {
    const auto id = static_cast<std::int64_t>(groups.size());
    cfg.aggregators.push_back({id, 0.0, {make_large_user(*spec.population.large_K, spec.population.n_small)}});
  }
  return cfg;
}

/// The alpha grid used by both alpha sweeps.
inline std::vector<double> alpha_grid() { return {0, 0.25, 0.5, 1, 2, 4, 8, 16, 32, kInfinity}; }

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"baseline_400",     "large_user_sweep", "two_agg_plus_large",
                                              "fairness_comparison", "alpha_sweep_both", "alpha_sweep_one",
                                              "agg_count_sweep"};
  return names;
}

inline ScenarioSpec build_preset(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  s.price = PriceCurve::linear(0.001);
  auto two_agg = [&s] {
    s.population = {200, 200.0};
    s.grouping = Grouping::aggregators(2);
  };
  if (name == "baseline_400") {
    s.population = {400, std::nullopt};
  } else if (name == "large_user_sweep") {
    s.population = {200, 0.0};
    s.n_runs = 20;
    s.sweep = SweepSpec{SweepVariable::kK, {0, 50, 100, 150, 200, 250, 300, 350, 400}, {}};
  } else if (name == "two_agg_plus_large") {
    two_agg();
  } else if (name == "fairness_comparison") {
    two_agg();
    s.n_runs = 50;
    s.sweep = SweepSpec{SweepVariable::kAlphaBoth, {0.0, 1.0, kInfinity}, {}};
  } else if (name == "alpha_sweep_both") {
    two_agg();
    s.n_runs = 20;
    s.sweep = SweepSpec{SweepVariable::kAlphaBoth, alpha_grid(), {}};
  } else if (name == "alpha_sweep_one") {
    two_agg();
    s.alphas = {0.0, 0.0};
    s.n_runs = 20;
    s.sweep = SweepSpec{SweepVariable::kAlphaSecond, alpha_grid(), {}};
  } else if (name == "agg_count_sweep") {
    s.population = {200, 200.0};
    s.grouping = Grouping::aggregators(2);
    s.n_runs = 10;
    s.sweep = SweepSpec{SweepVariable::kAggCount, {2, 4, 8, 16, 32, 64, 128, 200}, {0.0, 1.0}};
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  return s;
}

/// The spec for one sweep point, with any series alpha applied.
inline ScenarioSpec apply_sweep(ScenarioSpec spec, SweepVariable var, double value,
                                std::optional<double> series_alpha = std::nullopt) {
  if (series_alpha) spec.alphas = {*series_alpha};
  switch (var) {
    case SweepVariable::kK:
      spec.population.large_K = value;
      break;
    case SweepVariable::kAlphaBoth:
      spec.alphas = {value};
      break;
    case SweepVariable::kAlphaSecond:
      spec.alphas = {spec.alphas.front(), value};
      break;
    case SweepVariable::kAggCount:
      if (value != std::floor(value)) throw std::invalid_argument("agg_count values must be integers");
      spec.grouping = Grouping::aggregators(static_cast<int>(value));
      break;
  }
  spec.sweep.reset();
  return spec;
}

struct RunMetrics {
  int run = 0;
  std::uint64_t seed = 0;
  MarketConfig market;
  EquilibriumReport equilibrium;
  double avg_small_surplus = 0.0;
  double avg_small_consumption = 0.0;
  /// Cross-user standard deviation of small-user surplus.
  double small_surplus_std = 0.0;
  std::vector<double> surplus_samples;
  std::vector<double> consumption_samples;
};

struct MetricSummary {
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;
  int n_runs = 0;
};

/// One scenario (or one sweep point) across all its runs.
struct ScenarioResult {
  std::string scenario;
  /// NaN when the scenario has no sweep.
  double sweep_value = std::numeric_limits<double>::quiet_NaN();
  ScenarioSpec spec;
  std::vector<RunMetrics> runs;
  int n_failed = 0;
  std::vector<MetricSummary> aggregates;

  const MetricSummary& metric(const std::string& name) const {
    for (const auto& m : aggregates)
      if (m.metric == name) return m;
    throw std::out_of_range("no metric " + name);
  }
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"avg_small_surplus", "avg_small_consumption", "small_surplus_std",
                                              "price", "iterations"};
  return names;
}

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline RunMetrics run_once(const ScenarioSpec& spec, int r);

}  // namespace detail

/// Equilibrium of one market from the zero profile, measured over its small
/// users.
inline RunMetrics run_market(MarketConfig market, int run = 0) {
  RunMetrics m;
  m.run = run;
  m.seed = market.rng_seed;
  m.market = std::move(market);
  m.equilibrium = best_response_dynamics(m.market, {std::vector<double>(m.market.aggregators.size(), 0.0)});
  for (std::size_t j = 0; j < m.market.aggregators.size(); ++j) {
    const auto& users = m.market.aggregators[j].users;
    for (std::size_t i = 0; i < users.size(); ++i) {
      if (users[i].size_class != SizeClass::kSmall) continue;
      m.consumption_samples.push_back(m.equilibrium.per_user_x[j][i]);
      m.surplus_samples.push_back(m.equilibrium.per_user_s[j][i]);
    }
  }
  m.avg_small_surplus = detail::mean_of(m.surplus_samples);
  m.avg_small_consumption = detail::mean_of(m.consumption_samples);
  double ss = 0.0;
  for (double s : m.surplus_samples) ss += (s - m.avg_small_surplus) * (s - m.avg_small_surplus);
  m.small_surplus_std = m.surplus_samples.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(m.surplus_samples.size()));
  return m;
}

namespace detail {

inline RunMetrics run_once(const ScenarioSpec& spec, int r) {
  return run_market(build_market(spec, spec.base_seed + static_cast<std::uint64_t>(r)), r);
}

inline double metric_value(const RunMetrics& m, const std::string& name) {
  if (name == "avg_small_surplus") return m.avg_small_surplus;
  if (name == "avg_small_consumption") return m.avg_small_consumption;
  if (name == "small_surplus_std") return m.small_surplus_std;
  if (name == "price") return m.equilibrium.price_at_eq;
  if (name == "iterations") return m.equilibrium.iterations;
  throw std::out_of_range("no metric " + name);
}

inline void aggregate(ScenarioResult& res) {
  res.n_failed = 0;
  for (const auto& m : res.runs) res.n_failed += m.equilibrium.converged ? 0 : 1;
  res.aggregates.clear();
  for (const auto& name : metric_names()) {
    std::vector<double> vals;
    for (const auto& m : res.runs)
      if (m.equilibrium.converged) vals.push_back(metric_value(m, name));
    res.aggregates.push_back({name, mean_of(vals), stddev_of(vals), static_cast<int>(vals.size())});
  }
}

}  // namespace detail

/// Every sweep point of the spec, series-major; a single entry without a sweep.
inline std::vector<ScenarioResult> expand_sweep(const ScenarioSpec& spec) {
  std::vector<ScenarioResult> out;
  if (!spec.sweep) {
    out.push_back({spec.name, std::numeric_limits<double>::quiet_NaN(), spec, {}, 0, {}});
    return out;
  }
  std::vector<std::optional<double>> series;
  for (double a : spec.sweep->series_alphas) series.emplace_back(a);
  if (series.empty()) series.emplace_back(std::nullopt);
  for (const auto& sa : series) {
    std::string label = spec.name;
    if (sa) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", *sa);
      label += std::string("/alpha=") + buf;
    }
    for (double v : spec.sweep->values)
      out.push_back({label, v, apply_sweep(spec, spec.sweep->variable, v, sa), {}, 0, {}});
  }
  return out;
}

/// Runs every (sweep point, run) pair, concurrently when workers allow, and
/// reduces in run order. Runs that fail to converge are counted in n_failed
/// and left out of the aggregates.
inline std::vector<ScenarioResult> run_sweep(const ScenarioSpec& spec) {
  validate(spec);
  auto results = expand_sweep(spec);
  for (auto& r : results) {
    validate(r.spec);
    r.runs.resize(r.spec.n_runs);
  }
  std::vector<std::pair<std::size_t, int>> jobs;
  for (std::size_t p = 0; p < results.size(); ++p)
    for (int r = 0; r < results[p].spec.n_runs; ++r) jobs.emplace_back(p, r);
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto [p, r] = jobs[i];
    results[p].runs[r] = detail::run_once(results[p].spec, r);
  });
  for (auto& r : results) detail::aggregate(r);
  return results;
}

/// A scenario without a sweep; a sweep in the spec is ignored.
inline ScenarioResult run_scenario(ScenarioSpec spec) {
  spec.sweep.reset();
  return run_sweep(spec).front();
}

}  // namespace aggfair
