#pragma once

// Core domain types for the aggregator energy game: user utilities, the
// market price curve, aggregator rosters and solver tolerances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace aggfair {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Fairness parameter. Finite values are the usual alpha-fair family;
/// +infinity selects max-min fairness.
inline bool is_maxmin(double alpha) { return std::isinf(alpha) && alpha > 0; }

/// U(x) = -a x^2 + b x, strictly concave with U(0) = 0.
struct QuadraticUtility {
  double a = 1.0;
  double b = 0.0;

  QuadraticUtility() = default;
  QuadraticUtility(double a_, double b_) : a(a_), b(b_) {
    if (!(a > 0.0) || !std::isfinite(a))
      throw std::invalid_argument("utility coefficient a must be > 0");
    if (!(b >= 0.0) || !std::isfinite(b))
      throw std::invalid_argument("utility coefficient b must be >= 0");
  }

  double value(double x) const { return -a * x * x + b * x; }
  double marginal(double x) const { return b - 2.0 * a * x; }

  friend bool operator==(const QuadraticUtility&, const QuadraticUtility&) = default;
};

/// Linear market price p(Y) = c * Y.
struct LinearPrice {
  double c = 0.001;
  friend bool operator==(const LinearPrice&, const LinearPrice&) = default;
};

/// Continuous, nondecreasing price of total purchased energy. Downstream
/// solvers rely only on that contract, never on the concrete variant.
class PriceCurve {
 public:
  using Variant = std::variant<LinearPrice>;

  PriceCurve() = default;
  PriceCurve(LinearPrice lin) : curve_(lin) {
    if (!(lin.c > 0.0) || !std::isfinite(lin.c))
      throw std::invalid_argument("price slope c must be > 0");
  }

  static PriceCurve linear(double c) { return PriceCurve(LinearPrice{c}); }

  double operator()(double total) const {
    return std::visit([total](const auto& v) { return eval(v, total); }, curve_);
  }

  const Variant& variant() const { return curve_; }

  friend bool operator==(const PriceCurve&, const PriceCurve&) = default;

 private:
  static double eval(const LinearPrice& lin, double total) { return lin.c * total; }

  Variant curve_{LinearPrice{}};
};

enum class SizeClass { kSmall, kLarge };

inline const char* to_string(SizeClass c) {
  return c == SizeClass::kSmall ? "small" : "large";
}

struct UserSpec {
  std::int64_t id = 0;
  QuadraticUtility utility;
  SizeClass size_class = SizeClass::kSmall;

  friend bool operator==(const UserSpec&, const UserSpec&) = default;
};

struct AggregatorSpec {
  std::int64_t id = 0;
  double alpha = 0.0;
  std::vector<UserSpec> users;

  friend bool operator==(const AggregatorSpec&, const AggregatorSpec&) = default;
};

struct SolverTolerances {
  double tol_lambda = 1e-9;
  double tol_x = 1e-10;
  double tol_y = 1e-6;
  double tol_br = 1e-4;
  double surplus_floor = 1e-9;
  int max_br_iters = 500;
  double alpha_cap = 64.0;

  /// Throws std::invalid_argument naming the first nonpositive field.
  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw std::invalid_argument(std::string(name) + " must be > 0");
    };
    positive(tol_lambda, "tol_lambda");
    positive(tol_x, "tol_x");
    positive(tol_y, "tol_y");
    positive(tol_br, "tol_br");
    positive(surplus_floor, "surplus_floor");
    positive(alpha_cap, "alpha_cap");
    if (max_br_iters <= 0) throw std::invalid_argument("max_br_iters must be > 0");
  }

  friend bool operator==(const SolverTolerances&, const SolverTolerances&) = default;
};

struct MarketConfig {
  std::vector<AggregatorSpec> aggregators;
  PriceCurve price;
  SolverTolerances tolerances;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const MarketConfig&, const MarketConfig&) = default;
};

/// One purchase quantity per aggregator, in aggregator order.
struct StrategyProfile {
  std::vector<double> y;

  double total() const {
    double t = 0.0;
    for (double v : y) t += v;
    return t;
  }
  double others_total(std::size_t j) const { return total() - y[j]; }

  friend bool operator==(const StrategyProfile&, const StrategyProfile&) = default;
};

inline double eval_utility(const QuadraticUtility& u, double x) { return u.value(x); }

/// s = U(x) - p x.
inline double eval_surplus(const QuadraticUtility& u, double x, double p) {
  return u.value(x) - p * x;
}

inline double eval_price(const PriceCurve& pc, double total) { return pc(total); }

/// Checks the structural invariants of a market: at least one aggregator,
/// nonempty rosters, alpha >= 0, unique user ids.
inline void validate(const MarketConfig& cfg) {
  if (cfg.aggregators.empty())
    throw std::invalid_argument("market needs at least one aggregator");
  cfg.tolerances.validate();
  std::vector<std::int64_t> ids;
  for (const auto& agg : cfg.aggregators) {
    if (!(agg.alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
    if (agg.users.empty()) throw std::invalid_argument("aggregator users must be nonempty");
    for (const auto& u : agg.users) ids.push_back(u.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::invalid_argument("user ids must be unique");
}

}  // namespace aggfair
