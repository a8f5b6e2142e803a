#pragma once

// Best-response dynamics over the aggregator game, Nash verification and a
// multi-start uniqueness probe.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "aggfair/market_model.hpp"
#include "aggfair/parallel.hpp"
#include "aggfair/payoff.hpp"

namespace aggfair {

enum class UpdateOrder {
  kGaussSeidel,  // players move in index order against the latest profile
  kJacobi,       // every player responds to the profile at the start of the sweep
};

struct DynamicsOptions {
  UpdateOrder order = UpdateOrder::kGaussSeidel;
  /// Nash tolerance; defaults to 1e-3 * max(1, max |J_j|) at the final profile.
  std::optional<double> nash_epsilon;
};

struct TrajectoryPoint {
  int iteration = 0;
  StrategyProfile profile;
  std::vector<double> payoffs;
};

struct NashCheck {
  bool verified = false;
  double epsilon = 0.0;
  /// J_j(best response) - J_j(y_j), per aggregator.
  std::vector<double> gains;

  double max_gain() const {
    double g = 0.0;
    for (double v : gains) g = std::max(g, v);
    return g;
  }
};

struct EquilibriumReport {
  StrategyProfile y_star;
  std::vector<TrajectoryPoint> trajectory;
  bool converged = false;
  int iterations = 0;
  bool nash_verified = false;
  NashCheck nash;
  double price_at_eq = 0.0;
  std::vector<double> payoffs;
  /// Indexed [aggregator][member], in roster order.
  std::vector<std::vector<double>> per_user_x;
  std::vector<std::vector<double>> per_user_s;
};

namespace detail {

inline double others_sum(const std::vector<double>& y, std::size_t j) {
  double t = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k)
    if (k != j) t += y[k];
  return t;
}

inline std::vector<double> payoffs_at(const std::vector<Roster>& rosters, const MarketConfig& cfg,
                                      const std::vector<double>& y) {
  std::vector<double> out(y.size());
  for (std::size_t j = 0; j < y.size(); ++j)
    out[j] = evaluate(rosters[j], y[j], others_sum(y, j), cfg.price, cfg.tolerances).value;
  return out;
}

inline double default_epsilon(const std::vector<double>& payoffs) {
  double scale = 1.0;
  for (double v : payoffs)
    if (std::isfinite(v)) scale = std::max(scale, std::fabs(v));
  return 1e-3 * scale;
}

}  // namespace detail

/// Per-aggregator gain from deviating to a best response at profile y.
inline NashCheck verify_nash(const MarketConfig& cfg, const StrategyProfile& y, double epsilon) {
  if (y.y.size() != cfg.aggregators.size()) throw std::invalid_argument("profile length must match aggregator count");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  NashCheck check;
  check.epsilon = epsilon;
  check.gains.resize(y.y.size());
  for (std::size_t j = 0; j < y.y.size(); ++j) {
    const Roster r(cfg.aggregators[j]);
    const double others = detail::others_sum(y.y, j);
    const auto current = detail::evaluate(r, y.y[j], others, cfg.price, cfg.tolerances);
    const auto br = detail::best_response(r, others, cfg.price, cfg.tolerances);
    check.gains[j] = std::max(0.0, payoff_gain(br.payoff, current, r.alpha));
  }
  check.verified = check.max_gain() <= epsilon;
  return check;
}

/// Repeated best responses from y0 until no player moves by tol_br in a
/// sweep, or max_br_iters sweeps have run. A move is taken only when it
/// strictly improves the player's payoff.
inline EquilibriumReport best_response_dynamics(const MarketConfig& cfg, const StrategyProfile& y0,
                                                const DynamicsOptions& opts = {}) {
  validate(cfg);
  const std::size_t m = cfg.aggregators.size();
  if (y0.y.size() != m) throw std::invalid_argument("y0 length must match aggregator count");
  for (double v : y0.y)
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("y0 entries must be finite and >= 0");

  const auto& tol = cfg.tolerances;
  std::vector<Roster> rosters;
  rosters.reserve(m);
  for (const auto& agg : cfg.aggregators) rosters.emplace_back(agg);

  EquilibriumReport rep;
  std::vector<double> y = y0.y;
  rep.trajectory.push_back({0, {y}, detail::payoffs_at(rosters, cfg, y)});

  for (int sweep = 1; sweep <= tol.max_br_iters; ++sweep) {
    const std::vector<double> start = y;
    double moved = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double others = detail::others_sum(opts.order == UpdateOrder::kJacobi ? start : y, j);
      const auto current = detail::evaluate(rosters[j], start[j], others, cfg.price, tol);
      const auto br = detail::best_response(rosters[j], others, cfg.price, tol);
      if (payoff_gain(br.payoff, current, rosters[j].alpha) > 0.0) {
        moved = std::max(moved, std::fabs(br.y_star - start[j]));
        y[j] = br.y_star;
      }
    }
    rep.iterations = sweep;
    rep.trajectory.push_back({sweep, {y}, detail::payoffs_at(rosters, cfg, y)});
    if (moved < tol.tol_br) {
      rep.converged = true;
      break;
    }
  }

  rep.y_star.y = y;
  rep.payoffs = rep.trajectory.back().payoffs;
  rep.price_at_eq = cfg.price(rep.y_star.total());
  rep.per_user_x.resize(m);
  rep.per_user_s.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto e = detail::evaluate(rosters[j], y[j], detail::others_sum(y, j), cfg.price, tol);
    rep.per_user_x[j] = e.allocation.x;
    rep.per_user_s[j] = e.allocation.s;
  }
  rep.nash = verify_nash(cfg, rep.y_star, opts.nash_epsilon.value_or(detail::default_epsilon(rep.payoffs)));
  rep.nash_verified = rep.nash.verified;
  return rep;
}

/// Produces the k-th starting profile of a multi-start run.
using StartSampler = std::function<StrategyProfile(std::size_t k)>;

/// Draws y_j ~ U(0, feasible_budget_upper_j) with everyone else absent,
/// seeding start k with seed + k.
inline StartSampler random_start_sampler(const MarketConfig& cfg, std::uint64_t seed) {
  std::vector<double> upper;
  for (const auto& agg : cfg.aggregators) upper.push_back(feasible_budget_upper(agg, 0.0, cfg.price, cfg.tolerances));
  return [upper, seed](std::size_t k) {
    std::mt19937_64 rng(seed + k);
    StrategyProfile p;
    for (double u : upper) p.y.push_back(std::uniform_real_distribution<double>(0.0, u)(rng));
    return p;
  };
}

struct UniquenessReport {
  /// Largest infinity-norm distance between converged equilibria.
  double max_distance = 0.0;
  /// Largest |y_j| over converged equilibria.
  double scale = 0.0;
  int n_converged = 0;
  int n_failed = 0;
  std::vector<StrategyProfile> starts;
  std::vector<EquilibriumReport> runs;

  double relative() const { return max_distance / std::max(scale, 1e-300); }
};

/// Runs the dynamics from n_starts sampled profiles and compares the
/// converged outcomes. Non-converged runs are counted and left out.
inline UniquenessReport uniqueness_probe(const MarketConfig& cfg, int n_starts, const StartSampler& sampler,
                                         const DynamicsOptions& opts = {}) {
  if (n_starts < 2) throw std::invalid_argument("n_starts must be >= 2");
  UniquenessReport rep;
  rep.starts.resize(n_starts);
  rep.runs.resize(n_starts);
  for (int k = 0; k < n_starts; ++k) rep.starts[k] = sampler(static_cast<std::size_t>(k));
  parallel_for(static_cast<std::size_t>(n_starts),
               [&](std::size_t k) { rep.runs[k] = best_response_dynamics(cfg, rep.starts[k], opts); });
  std::vector<const StrategyProfile*> done;
  for (const auto& r : rep.runs) {
    if (!r.converged) {
      ++rep.n_failed;
      continue;
    }
    ++rep.n_converged;
    done.push_back(&r.y_star);
    for (double v : r.y_star.y) rep.scale = std::max(rep.scale, std::fabs(v));
  }
  for (std::size_t i = 0; i < done.size(); ++i)
    for (std::size_t k = i + 1; k < done.size(); ++k)
      for (std::size_t j = 0; j < done[i]->y.size(); ++j)
        rep.max_distance = std::max(rep.max_distance, std::fabs(done[i]->y[j] - done[k]->y[j]));
  return rep;
}

}  // namespace aggfair
