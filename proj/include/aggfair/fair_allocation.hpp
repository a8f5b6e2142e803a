#pragma once

// Alpha-fair allocation of a fixed budget among the members of one
// aggregator at a fixed price.
//
// The solver is a dual bisection on the budget multiplier. Each user's
// stationarity condition (U'(x) - p) / s(x)^alpha = lambda is inverted on
// the user's admissible interval [x_lo, x_hi] (where s >= floor); clamping
// to that interval plays the role of the nonnegativity multipliers. The
// multiplier is carried in a signed-log coordinate z = sign(l) log(1 + |l|)
// so that very large alpha never overflows.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "aggfair/market_model.hpp"

namespace aggfair {

struct AllocationResult {
  std::vector<double> x;
  std::vector<double> s;
  /// Multiplier of the budget constraint. NaN when the budget is zero or
  /// infeasible.
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double objective = -kInfinity;
  bool feasible = false;
  /// Users that can reach the surplus floor at this price. The others are
  /// priced out: x = 0, s = 0, and they do not enter the objective.
  std::vector<bool> participating;

  std::size_t participant_count() const {
    return static_cast<std::size_t>(std::count(participating.begin(), participating.end(), true));
  }
};

/// Surplus every participating user must keep: positive for alpha >= 1
/// (where the objective needs s > 0), zero otherwise.
inline double surplus_floor_for(double alpha, const SolverTolerances& tol) {
  return alpha >= 1.0 ? tol.surplus_floor : 0.0;
}

/// Phi_alpha(s): sum of s^(1-a)/(1-a), sum of log s at a = 1, min s at a = inf.
inline double fairness_objective(std::span<const double> s, double alpha) {
  if (alpha >= 1.0) {
    for (double v : s)
      if (!(v > 0.0)) throw std::domain_error("surplus must be > 0 when alpha >= 1");
  }
  if (is_maxmin(alpha)) {
    if (s.empty()) throw std::invalid_argument("max-min objective of an empty allocation");
    return *std::min_element(s.begin(), s.end());
  }
  double acc = 0.0;
  if (alpha == 1.0) {
    for (double v : s) acc += std::log(v);
  } else if (alpha == 0.0) {
    for (double v : s) acc += v;
  } else {
    const double e = 1.0 - alpha;
    for (double v : s) acc += std::pow(v, e) / e;
  }
  return acc;
}

inline double fairness_objective(std::initializer_list<double> s, double alpha) {
  return fairness_objective(std::span<const double>(s.begin(), s.size()), alpha);
}

/// Interval of consumptions with U(x) - p x >= floor.
struct SurplusInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool empty = true;
};

inline SurplusInterval surplus_interval(const QuadraticUtility& u, double p, double floor) {
  const double net = u.b - p;
  if (!(net > 0.0)) return {};
  const double disc = net * net - 4.0 * u.a * floor;
  if (disc < 0.0) return {};
  const double root = std::sqrt(disc);
  SurplusInterval iv;
  iv.hi = (net + root) / (2.0 * u.a);
  // Smaller root in the cancellation-free form.
  iv.lo = floor > 0.0 ? 2.0 * floor / (net + root) : 0.0;
  iv.empty = !(iv.hi > iv.lo);
  return iv;
}

/// Largest x >= 0 with U(x) - p x >= floor, or 0 when none exists.
inline double user_max_consumption(const QuadraticUtility& u, double p, double floor) {
  const auto iv = surplus_interval(u, p, floor);
  return iv.empty ? 0.0 : iv.hi;
}

/// (U'(x) - p) / s(x)^alpha. Large alpha is evaluated through logarithms.
inline double marginal_fairness_ratio(const QuadraticUtility& u, double x, double p, double alpha) {
  const double s = eval_surplus(u, x, p);
  if (!(s > 0.0)) throw std::domain_error("marginal fairness ratio needs positive surplus");
  const double num = u.marginal(x) - p;
  if (alpha == 0.0) return num;
  if (alpha <= 8.0) return num / std::pow(s, alpha);
  if (num == 0.0) return 0.0;
  const double mag = std::exp(std::log(std::fabs(num)) - alpha * std::log(s));
  return num > 0.0 ? mag : -mag;
}

namespace detail {

inline double to_slog(double lambda) {
  return std::copysign(std::log1p(std::fabs(lambda)), lambda);
}

inline double from_slog(double z) {
  return std::copysign(std::expm1(std::fabs(z)), z);
}

// log(1 + e^t) without overflow.
inline double softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

// Signed-log of the ratio at x; +-inf where the surplus vanishes.
inline double slog_ratio(const QuadraticUtility& u, double x, double p, double alpha) {
  const double num = u.marginal(x) - p;
  if (num == 0.0) return 0.0;
  if (alpha == 0.0) return to_slog(num);
  const double s = eval_surplus(u, x, p);
  if (!(s > 0.0)) return num > 0.0 ? kInfinity : -kInfinity;
  const double mag = softplus(std::log(std::fabs(num)) - alpha * std::log(s));
  return num > 0.0 ? mag : -mag;
}

// Precomputed per-user data for one (price, alpha, floor) solve.
struct UserBounds {
  QuadraticUtility u;
  double lo = 0.0;
  double hi = 0.0;
  bool active = false;
};

// log|lambda| for lambda = from_slog(z), without overflow.
inline double log_abs_from_slog(double z) {
  const double m = std::fabs(z);
  return m > 30.0 ? m + std::log1p(-std::exp(-m)) : std::log(std::expm1(m));
}

// Solves ratio(x) = lambda on [lo, hi] for general alpha. The ratio is
// decreasing, so on the side of the surplus peak matching the sign of
// lambda the log-magnitude equation
//   log|U'(x) - p| - alpha log s(x) = log|lambda|
// is monotone; it is solved by Newton steps kept inside a shrinking bracket.
inline double solve_ratio_level(const UserBounds& ub, double z, double p, double alpha, double tol_x,
                                double hint = std::numeric_limits<double>::quiet_NaN()) {
  const auto& u = ub.u;
  const double peak = std::clamp((u.b - p) / (2.0 * u.a), ub.lo, ub.hi);
  if (z == 0.0) return peak;
  const bool rising = z > 0.0;  // lambda > 0 lives left of the peak
  double lo = rising ? ub.lo : peak;
  double hi = rising ? peak : ub.hi;
  if (!(hi > lo)) return lo;
  const double target = log_abs_from_slog(z);
  // g is increasing in x on [lo, hi] after the sign flip.
  auto g = [&](double x, double* deriv) {
    const double num = u.marginal(x) - p;
    const double s = eval_surplus(u, x, p);
    const double mag = std::fabs(num);
    if (!(s > 0.0) || mag == 0.0) {
      *deriv = 0.0;
      // Surplus vanishes at the outer end, num vanishes at the peak.
      if (!(s > 0.0)) return rising ? -kInfinity : kInfinity;
      return rising ? kInfinity : -kInfinity;
    }
    const double f = std::log(mag) - alpha * std::log(s) - target;
    const double df = 2.0 * u.a / mag * (rising ? -1.0 : 1.0) - alpha * num / s;
    *deriv = rising ? -df : df;
    return rising ? -f : f;
  };
  double d = 0.0;
  const double g_lo = g(lo, &d);
  const double g_hi = g(hi, &d);
  if (g_lo >= 0.0) return lo;
  if (g_hi <= 0.0) return hi;
  // Newton runs in v = log((x - a) / (b - x)) over the original interval,
  // where the log singularities at both ends become nearly linear.
  const double a = lo, b = hi;
  double x = hint > lo + tol_x && hint < hi - tol_x ? hint : 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double gx = g(x, &d);
    if (gx == 0.0) return x;
    if (gx < 0.0)
      lo = x;
    else
      hi = x;
    if (hi - lo <= tol_x) break;
    double next = std::numeric_limits<double>::quiet_NaN();
    const double w = (x - a) * (b - x) / (b - a);
    if (d > 0.0 && w > 0.0 && std::isfinite(gx)) {
      const double r = (x - a) / (b - x) * std::exp(-gx / (d * w));
      next = std::isfinite(r) ? (a + b * r) / (1.0 + r) : b;
      if (std::fabs(next - x) <= 0.25 * tol_x) break;
    }
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    x = next;
  }
  return x;
}

// Response in the signed-log multiplier coordinate.
inline double response_slog(const UserBounds& ub, double z, double p, double alpha, double tol_x,
                            double hint = std::numeric_limits<double>::quiet_NaN()) {
  if (!ub.active) return 0.0;
  const auto& u = ub.u;
  const double net = u.b - p;
  if (alpha == 0.0) {
    const double lambda = from_slog(z);
    return std::clamp((net - lambda) / (2.0 * u.a), ub.lo, ub.hi);
  }
  if (alpha == 1.0) {
    // lambda a x^2 - (lambda net + 2a) x + net = 0, root inside (0, net/a).
    const double lambda = from_slog(z);
    if (!std::isfinite(lambda)) return lambda > 0 ? ub.lo : ub.hi;
    const double lb = lambda * net;
    const double x = 2.0 * net / (lb + 2.0 * u.a + std::sqrt(lb * lb + 4.0 * u.a * u.a));
    return std::clamp(x, ub.lo, ub.hi);
  }
  return solve_ratio_level(ub, z, p, alpha, tol_x, hint);
}

inline std::vector<UserBounds> make_bounds(std::span<const QuadraticUtility> users, double p, double floor) {
  std::vector<UserBounds> out;
  out.reserve(users.size());
  for (const auto& u : users) {
    const auto iv = surplus_interval(u, p, floor);
    out.push_back({u, iv.lo, iv.hi, !iv.empty});
  }
  return out;
}

// Moves the last rounding residual of the budget onto users with slack.
inline void rebalance(std::vector<double>& x, const std::vector<UserBounds>& bounds, double y) {
  for (int pass = 0; pass < 4; ++pass) {
    double residual = y;
    for (double v : x) residual -= v;
    if (residual == 0.0) return;
    std::size_t room = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!bounds[i].active) continue;
      if ((residual > 0 && x[i] < bounds[i].hi) || (residual < 0 && x[i] > bounds[i].lo)) ++room;
    }
    if (room == 0) return;
    const double share = residual / static_cast<double>(room);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!bounds[i].active) continue;
      if ((residual > 0 && x[i] < bounds[i].hi) || (residual < 0 && x[i] > bounds[i].lo))
        x[i] = std::clamp(x[i] + share, bounds[i].lo, bounds[i].hi);
    }
  }
}

// Monotone map from doubles to unsigned integers.
inline std::uint64_t ordered_key(double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  return (bits >> 63) ? ~bits : bits | (std::uint64_t{1} << 63);
}

inline double from_ordered_key(std::uint64_t k) {
  const std::uint64_t bits = (k >> 63) ? k & ~(std::uint64_t{1} << 63) : ~k;
  return std::bit_cast<double>(bits);
}

struct DualSolution {
  std::vector<double> x;
  double z = 0.0;
};

// Dual bisection for sum_i x_i(z) = y. Requires sum lo <= y <= sum hi.
inline DualSolution solve_dual(const std::vector<UserBounds>& bounds, double y, double p, double alpha,
                               const SolverTolerances& tol) {
  const std::size_t n = bounds.size();
  auto total_at = [&](double z, std::vector<double>* x) {
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = response_slog(bounds[i], z, p, alpha, tol.tol_x, x ? (*x)[i] : std::nan(""));
      if (x) (*x)[i] = xi;
      t += xi;
    }
    return t;
  };

  double z_hi = -kInfinity;
  double z_lo = kInfinity;
  for (const auto& b : bounds) {
    if (!b.active) continue;
    const double w = std::min(tol.tol_x, 0.5 * (b.hi - b.lo));
    z_hi = std::max(z_hi, slog_ratio(b.u, b.lo + w, p, alpha));
    z_lo = std::min(z_lo, slog_ratio(b.u, b.hi - w, p, alpha));
  }
  if (!std::isfinite(z_hi)) z_hi = 1.0;
  if (!std::isfinite(z_lo)) z_lo = -1.0;
  if (z_lo > z_hi) std::swap(z_lo, z_hi);
  // Geometric widening until the root is bracketed.
  for (int k = 0; k < 64 && total_at(z_hi, nullptr) > y; ++k) z_hi += std::max(1.0, std::fabs(z_hi));
  for (int k = 0; k < 64 && total_at(z_lo, nullptr) < y; ++k) z_lo -= std::max(1.0, std::fabs(z_lo));

  const double budget_tol = 0.5 * tol.tol_x * static_cast<double>(std::max<std::size_t>(n, 1));
  DualSolution sol;
  sol.x.assign(n, 0.0);
  sol.z = z_lo;
  // Illinois regula falsi on z with a fallback to bisection over the ordered
  // bit patterns, which reaches adjacent doubles in at most 64 halvings
  // whatever the scale of the multiplier.
  double f_lo = total_at(z_lo, &sol.x) - y;
  double f_hi = total_at(z_hi, nullptr) - y;
  if (std::fabs(f_lo) <= budget_tol) {
    rebalance(sol.x, bounds, y);
    return sol;
  }
  int side = 0;
  std::uint64_t checkpoint = ordered_key(z_hi) - ordered_key(z_lo);
  for (int it = 0; it < 256; ++it) {
    const std::uint64_t key_lo = ordered_key(z_lo), key_hi = ordered_key(z_hi);
    if (key_hi - key_lo <= 1) break;
    if (z_hi - z_lo <= tol.tol_lambda * std::min(std::fabs(z_lo), std::fabs(z_hi)) && z_lo * z_hi > 0.0) break;
    bool bisect = false;
    if (it % 3 == 2) {
      bisect = key_hi - key_lo > checkpoint / 4;
      checkpoint = key_hi - key_lo;
    }
    double mid = z_lo + f_lo * (z_hi - z_lo) / (f_lo - f_hi);
    if (bisect || !(mid > z_lo && mid < z_hi)) mid = from_ordered_key(key_lo + (key_hi - key_lo) / 2);
    const double f = total_at(mid, &sol.x) - y;
    sol.z = mid;
    if (std::fabs(f) <= budget_tol) break;
    if (f > 0.0) {
      z_lo = mid;
      f_lo = f;
      if (side == -1) f_hi *= 0.5;
      side = -1;
    } else {
      z_hi = mid;
      f_hi = f;
      if (side == 1) f_lo *= 0.5;
      side = 1;
    }
  }
  rebalance(sol.x, bounds, y);
  return sol;
}

// Largest common surplus level t such that every participant can hold
// s_i >= t while the budget is absorbed exactly.
inline double maxmin_level(std::span<const QuadraticUtility> users, const std::vector<UserBounds>& bounds,
                           double y, double p, double floor) {
  auto feasible = [&](double t) {
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < users.size(); ++i) {
      if (!bounds[i].active) continue;
      const auto iv = surplus_interval(users[i], p, t);
      if (iv.empty) return false;  // level above this user's peak surplus
      lo += iv.lo;
      hi += iv.hi;
    }
    return lo <= y && y <= hi;
  };
  double t_lo = floor;
  double t_hi = kInfinity;
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (!bounds[i].active) continue;
    const double net = users[i].b - p;
    t_hi = std::min(t_hi, net * net / (4.0 * users[i].a));
  }
  if (!feasible(t_lo)) return t_lo;
  for (int it = 0; it < 200 && t_hi - t_lo > 1e-15 * std::max(1.0, t_hi); ++it) {
    const double mid = 0.5 * (t_lo + t_hi);
    if (feasible(mid))
      t_lo = mid;
    else
      t_hi = mid;
  }
  return t_lo;
}

}  // namespace detail

/// Inverts the stationarity condition for one user: the x in the admissible
/// interval where the marginal fairness ratio equals lambda, clamped to the
/// interval ends. Returns 0 if no x reaches the floor.
inline double user_response(const QuadraticUtility& u, double lambda, double p, double alpha, double floor,
                            double tol_x = SolverTolerances{}.tol_x) {
  const auto iv = surplus_interval(u, p, floor);
  if (iv.empty) return 0.0;
  const detail::UserBounds ub{u, iv.lo, iv.hi, true};
  return detail::response_slog(ub, detail::to_slog(lambda), p, alpha, tol_x);
}

/// Maximizes Phi_alpha over allocations of budget y at price p with every
/// participating user at surplus >= floor. Users priced out at p receive
/// nothing and are left out of the objective. Infeasible budgets come back
/// with feasible = false and an all-zero allocation.
inline AllocationResult allocate(std::span<const QuadraticUtility> users, double y, double p, double alpha,
                                 const SolverTolerances& tol = {}) {
  if (!(y >= 0.0)) throw std::invalid_argument("budget must be >= 0");
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  const std::size_t n = users.size();
  const bool maxmin = is_maxmin(alpha);
  const double solve_alpha = maxmin ? tol.alpha_cap : alpha;
  const double floor = surplus_floor_for(alpha, tol);

  AllocationResult r;
  r.x.assign(n, 0.0);
  r.s.assign(n, 0.0);
  auto bounds = detail::make_bounds(users, p, floor);
  r.participating.resize(n);
  double sum_lo = 0.0, sum_hi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r.participating[i] = bounds[i].active;
    if (bounds[i].active) {
      sum_lo += bounds[i].lo;
      sum_hi += bounds[i].hi;
    }
  }

  if (y == 0.0) {
    r.feasible = true;
    r.objective = alpha < 1.0 ? 0.0 : -kInfinity;
    return r;
  }
  const double slack = tol.tol_x * static_cast<double>(std::max<std::size_t>(n, 1));
  if (y > sum_hi + slack || y < sum_lo - slack || sum_hi == 0.0) {
    r.feasible = false;
    r.objective = -kInfinity;
    std::fill(r.participating.begin(), r.participating.end(), false);
    return r;
  }

  if (maxmin) {
    // Exact max-min level first; the capped-alpha solve then picks the
    // allocation among the max-min optima.
    const double level = detail::maxmin_level(users, bounds, y, p, floor);
    const double shaded = std::max(floor, level * (1.0 - 1e-9));
    auto level_bounds = detail::make_bounds(users, p, shaded);
    for (std::size_t i = 0; i < n; ++i) level_bounds[i].active = level_bounds[i].active && bounds[i].active;
    double lo = 0.0, hi = 0.0;
    for (const auto& b : level_bounds)
      if (b.active) lo += b.lo, hi += b.hi;
    if (lo <= y && y <= hi) bounds = std::move(level_bounds);
  }

  const auto sol = detail::solve_dual(bounds, y, p, solve_alpha, tol);
  r.x = sol.x;
  r.lambda = detail::from_slog(sol.z);
  std::vector<double> active_s;
  active_s.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!r.participating[i]) continue;
    r.s[i] = eval_surplus(users[i], r.x[i], p);
    // The clamp to the admissible interval can leave a rounding-level
    // shortfall below the floor.
    active_s.push_back(std::max(r.s[i], floor));
  }
  r.feasible = true;
  if (active_s.empty()) {
    r.objective = alpha < 1.0 ? 0.0 : -kInfinity;
  } else if (alpha < 1.0) {
    for (double& v : active_s) v = std::max(v, 0.0);
    r.objective = fairness_objective(active_s, alpha);
  } else {
    r.objective = fairness_objective(active_s, alpha);
  }
  return r;
}

inline AllocationResult allocate(std::initializer_list<QuadraticUtility> users, double y, double p, double alpha,
                                 const SolverTolerances& tol = {}) {
  return allocate(std::span<const QuadraticUtility>(users.begin(), users.size()), y, p, alpha, tol);
}

/// (s1, s2) at the alpha-fair optimum of a two-user split, one point per alpha.
inline std::vector<std::pair<double, double>> trace_pareto_front(const QuadraticUtility& first,
                                                                 const QuadraticUtility& second, double y, double p,
                                                                 std::span<const double> alphas,
                                                                 const SolverTolerances& tol = {}) {
  const QuadraticUtility pair[2] = {first, second};
  std::vector<std::pair<double, double>> front;
  front.reserve(alphas.size());
  for (double alpha : alphas) {
    const auto r = allocate(std::span<const QuadraticUtility>(pair, 2), y, p, alpha, tol);
    if (!r.feasible) throw std::runtime_error("pareto trace: budget infeasible at this price");
    front.emplace_back(r.s[0], r.s[1]);
  }
  return front;
}

}  // namespace aggfair
