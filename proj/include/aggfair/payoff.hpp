#pragma once

// Aggregator payoff J_j(y_j, y_-j) and its best response.
//
// The price depends on the aggregator's own purchase, so every evaluation
// re-solves the inner allocation at p(y_j + others). J is quasiconcave in
// y_j as long as every member keeps U'(0) > p. A member whose marginal value
// at zero falls below the price drops out of the allocation, and J can jump
// there, so the line search scans before it narrows.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <vector>

#include "aggfair/fair_allocation.hpp"
#include "aggfair/market_model.hpp"

namespace aggfair {

/// Anything callable as a price of total demand.
template <class P>
concept PriceFunction = requires(const P& p, double total) {
  { p(total) } -> std::convertible_to<double>;
};

struct PayoffEval {
  double value = -kInfinity;
  AllocationResult allocation;
  double price = 0.0;
  /// Members that cannot reach the surplus floor at this price. They get
  /// x = 0 and s = 0; for 1 <= alpha < inf they are left out of the sum,
  /// where s = 0 would make it -inf.
  int priced_out = 0;
};

struct BestResponse {
  double y_star = 0.0;
  PayoffEval payoff;
};

/// Member utilities plus fairness parameter, extracted once per search.
struct Roster {
  std::vector<QuadraticUtility> utilities;
  double alpha = 0.0;

  explicit Roster(const AggregatorSpec& agg) : alpha(agg.alpha) {
    utilities.reserve(agg.users.size());
    for (const auto& u : agg.users) utilities.push_back(u.utility);
  }
};

/// J(a) - J(b) for two evaluations of the same aggregator. Under max-min a
/// priced-out member pins J at zero, so ties are broken by pricing out fewer
/// members and then by the minimum over the members still served.
inline double payoff_gain(const PayoffEval& a, const PayoffEval& b, double alpha) {
  if (a.value == -kInfinity) return b.value == -kInfinity ? 0.0 : -kInfinity;
  if (b.value == -kInfinity) return kInfinity;
  if (!is_maxmin(alpha)) return a.value - b.value;
  if (a.priced_out != b.priced_out) return a.priced_out < b.priced_out ? kInfinity : -kInfinity;
  return a.allocation.objective - b.allocation.objective;
}

namespace detail {

template <PriceFunction Price>
PayoffEval evaluate(const Roster& r, double y, double others_total, const Price& price,
                    const SolverTolerances& tol) {
  PayoffEval e;
  e.price = price(y + others_total);
  e.allocation = allocate(r.utilities, y, e.price, r.alpha, tol);
  if (!e.allocation.feasible) return e;
  const double floor = surplus_floor_for(r.alpha, tol);
  for (const auto& u : r.utilities) e.priced_out += surplus_interval(u, e.price, floor).empty ? 1 : 0;
  e.value = is_maxmin(r.alpha) && e.priced_out > 0 ? 0.0 : e.allocation.objective;
  return e;
}

template <PriceFunction Price>
double budget_upper(const Roster& r, double others_total, const Price& price, const SolverTolerances& tol) {
  const double floor = surplus_floor_for(r.alpha, tol);
  auto capacity = [&](double p) {
    double cap = 0.0;
    for (const auto& u : r.utilities) cap += user_max_consumption(u, p, floor);
    return cap;
  };
  double hi = capacity(price(others_total));
  if (hi <= 0.0) return 0.0;
  if (hi <= capacity(price(hi + others_total))) return hi;
  double lo = 0.0;
  for (int it = 0; it < 200 && hi - lo > tol.tol_x * std::max(1.0, lo); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= capacity(price(mid + others_total)))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

}  // namespace detail

/// J_j at purchase y_j given the other aggregators' total purchase.
template <PriceFunction Price>
PayoffEval evaluate_payoff(const AggregatorSpec& agg, double y_j, double others_total, const Price& price,
                           const SolverTolerances& tol = {}) {
  if (!(y_j >= 0.0) || !(others_total >= 0.0)) throw std::invalid_argument("purchases must be >= 0");
  return detail::evaluate(Roster(agg), y_j, others_total, price, tol);
}

/// Largest purchase the aggregator can absorb without driving a member
/// below the surplus floor once its own demand feeds back into the price.
template <PriceFunction Price>
double feasible_budget_upper(const AggregatorSpec& agg, double others_total, const Price& price,
                             const SolverTolerances& tol = {}) {
  return detail::budget_upper(Roster(agg), others_total, price, tol);
}

namespace detail {

template <PriceFunction Price>
BestResponse best_response(const Roster& r, double others_total, const Price& price, const SolverTolerances& tol) {
  const double upper = budget_upper(r, others_total, price, tol);
  auto eval = [&](double y) { return evaluate(r, y, others_total, price, tol); };
  BestResponse best{0.0, eval(0.0)};
  if (upper <= 0.0) return best;
  auto better = [&](const PayoffEval& a, const PayoffEval& b) { return payoff_gain(a, b, r.alpha) > 0.0; };

  // Coarse scan first, then golden section inside the bracket around the
  // best sample. For a unimodal J this is the plain golden search; when
  // priced-out members leave several local peaks it still finds the top one.
  constexpr int kScan = 64;
  int best_k = 0;
  PayoffEval best_scan = best.payoff;
  for (int k = 1; k <= kScan; ++k) {
    auto e = eval(upper * k / kScan);
    if (better(e, best_scan)) best_k = k, best_scan = std::move(e);
  }
  constexpr double kInvPhi = 0.6180339887498949;
  double lo = upper * std::max(0, best_k - 1) / kScan, hi = upper * std::min(kScan, best_k + 1) / kScan;
  double x1 = hi - kInvPhi * (hi - lo), x2 = lo + kInvPhi * (hi - lo);
  PayoffEval f1 = eval(x1), f2 = eval(x2);
  while (hi - lo > tol.tol_y) {
    if (better(f2, f1)) {
      lo = x1;
      x1 = x2, f1 = std::move(f2);
      x2 = lo + kInvPhi * (hi - lo);
      f2 = eval(x2);
    } else {
      hi = x2;
      x2 = x1, f2 = std::move(f1);
      x1 = hi - kInvPhi * (hi - lo);
      f1 = eval(x1);
    }
  }
  for (double y : {0.5 * (lo + hi), upper}) {
    auto e = eval(y);
    if (better(e, best.payoff)) best = {y, std::move(e)};
  }
  return best;
}

}  // namespace detail

/// Maximizes J_j over [0, feasible_budget_upper] by golden-section search.
template <PriceFunction Price>
BestResponse best_response(const AggregatorSpec& agg, double others_total, const Price& price,
                           const SolverTolerances& tol = {}) {
  if (!(others_total >= 0.0)) throw std::invalid_argument("others_total must be >= 0");
  return detail::best_response(Roster(agg), others_total, price, tol);
}

struct UnimodalityReport {
  /// Largest rise-after-fall: max over i < j < k of min(J_i - J_j, J_k - J_j).
  double violation = 0.0;
  /// max |J| over the finite samples.
  double scale = 0.0;
  std::vector<double> y;
  std::vector<double> payoff;
  /// Most members priced out at any grid point. Unimodality is only
  /// guaranteed while this stays 0.
  int max_priced_out = 0;

  double relative() const { return violation / std::max(scale, 1e-300); }
  bool conforming(double rel_tol = 1e-6) const { return violation <= rel_tol * scale; }
};

/// Rise-after-fall measure of a sampled sequence; -inf entries are allowed.
inline double rise_after_fall(std::span<const double> f) {
  const std::size_t n = f.size();
  if (n < 3) return 0.0;
  std::vector<double> suffix(n, -kInfinity);
  for (std::size_t k = n - 1; k-- > 0;) suffix[k] = std::max(suffix[k + 1], f[k + 1]);
  double prefix = f[0];
  double worst = 0.0;
  for (std::size_t j = 1; j + 1 < n; ++j) {
    const double left = prefix, right = suffix[j];
    if (std::isfinite(left) || std::isfinite(right)) {
      if (f[j] == -kInfinity) {
        if (left > -kInfinity && right > -kInfinity) worst = kInfinity;
      } else {
        worst = std::max(worst, std::min(left - f[j], right - f[j]));
      }
    }
    prefix = std::max(prefix, f[j]);
  }
  return worst;
}

/// Samples J_j on a uniform grid over [0, feasible_budget_upper] and
/// measures departures from unimodality.
template <PriceFunction Price>
UnimodalityReport unimodality_probe(const AggregatorSpec& agg, double others_total, const Price& price,
                                    int grid_n = 501, const SolverTolerances& tol = {}) {
  if (grid_n < 3) throw std::invalid_argument("grid_n must be >= 3");
  const Roster r(agg);
  const double upper = detail::budget_upper(r, others_total, price, tol);
  UnimodalityReport rep;
  rep.y.resize(grid_n);
  rep.payoff.resize(grid_n);
  for (int i = 0; i < grid_n; ++i) {
    rep.y[i] = upper * static_cast<double>(i) / static_cast<double>(grid_n - 1);
    const auto e = detail::evaluate(r, rep.y[i], others_total, price, tol);
    rep.payoff[i] = e.value;
    rep.max_priced_out = std::max(rep.max_priced_out, e.priced_out);
    if (std::isfinite(rep.payoff[i])) rep.scale = std::max(rep.scale, std::fabs(rep.payoff[i]));
  }
  rep.violation = rise_after_fall(rep.payoff);
  return rep;
}

}  // namespace aggfair
