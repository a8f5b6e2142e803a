#include "aggfair/game_engine.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

namespace aggfair {
namespace {

MarketConfig symmetric_market(int m, double c = 1.0) {
  MarketConfig cfg;
  cfg.price = PriceCurve::linear(c);
  for (int j = 0; j < m; ++j) cfg.aggregators.push_back({j, 0.0, {{j, {1, 6}, SizeClass::kSmall}}});
  return cfg;
}

MarketConfig random_market(std::uint64_t seed, int m, int users_per, double alpha) {
  std::mt19937_64 rng(seed);
  MarketConfig cfg;
  cfg.price = PriceCurve::linear(0.01);
  std::int64_t id = 0;
  for (int j = 0; j < m; ++j) {
    AggregatorSpec agg{j, alpha, {}};
    for (int i = 0; i < users_per; ++i) agg.users.push_back({id++, oracle::random_small_utility(rng), SizeClass::kSmall});
    cfg.aggregators.push_back(agg);
  }
  return cfg;
}

TEST(BestResponseDynamics, SymmetricPairReachesAnalyticEquilibrium) {
  const auto rep = best_response_dynamics(symmetric_market(2), {{0.0, 0.0}});
  ASSERT_TRUE(rep.converged);
  EXPECT_NEAR(rep.y_star.y[0], 1.2, 1e-4);
  EXPECT_NEAR(rep.y_star.y[1], 1.2, 1e-4);
  EXPECT_TRUE(rep.nash_verified);
  EXPECT_NEAR(rep.price_at_eq, 2.4, 2e-4);
}

TEST(BestResponseDynamics, SymmetricPlayersSolveFirstOrderCondition) {
  for (int m : {1, 2, 3, 5, 10}) {
    auto cfg = symmetric_market(m);
    cfg.tolerances.tol_br = 1e-8;
    const auto rep = best_response_dynamics(cfg, {std::vector<double>(m, 0.0)});
    ASSERT_TRUE(rep.converged) << m;
    for (double v : rep.y_star.y) EXPECT_NEAR(v, 6.0 / (m + 3), 1e-4) << "M=" << m;
  }
}

TEST(BestResponseDynamics, TrajectoryStartsAtInitialProfile) {
  const auto rep = best_response_dynamics(symmetric_market(2), {{0.5, 2.0}});
  ASSERT_GE(rep.trajectory.size(), 2u);
  EXPECT_EQ(rep.trajectory.front().iteration, 0);
  EXPECT_EQ(rep.trajectory.front().profile.y, (std::vector<double>{0.5, 2.0}));
  EXPECT_EQ(rep.trajectory.back().iteration, rep.iterations);
  EXPECT_EQ(rep.trajectory.back().profile, rep.y_star);
}

TEST(BestResponseDynamics, NonConvergenceIsReported) {
  auto cfg = symmetric_market(3);
  cfg.tolerances.max_br_iters = 1;
  const auto rep = best_response_dynamics(cfg, {{0.0, 0.0, 0.0}});
  EXPECT_FALSE(rep.converged);
  EXPECT_EQ(rep.iterations, 1);
}

TEST(BestResponseDynamics, RejectsBadInitialProfile) {
  EXPECT_THROW(best_response_dynamics(symmetric_market(2), {{0.0}}), std::invalid_argument);
  EXPECT_THROW(best_response_dynamics(symmetric_market(2), {{0.0, -1.0}}), std::invalid_argument);
}

TEST(BestResponseDynamics, JacobiAlsoConvergesOnContractiveGame) {
  DynamicsOptions opts;
  opts.order = UpdateOrder::kJacobi;
  const auto rep = best_response_dynamics(symmetric_market(2), {{0.0, 0.0}}, opts);
  ASSERT_TRUE(rep.converged);
  EXPECT_NEAR(rep.y_star.y[0], 1.2, 1e-4);
}

TEST(BestResponseDynamics, FixedPointAndSweepImprovement) {
  for (double alpha : {0.0, 1.0, 2.0, kInfinity}) {
    const auto cfg = random_market(5, 3, 4, alpha);
    const auto rep = best_response_dynamics(cfg, {{0.0, 0.0, 0.0}});
    ASSERT_TRUE(rep.converged) << alpha;
    // One more sweep from y_star moves nobody by tol_br.
    const auto again = best_response_dynamics(cfg, rep.y_star);
    EXPECT_EQ(again.iterations, 1) << alpha;
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_LT(std::fabs(again.y_star.y[j] - rep.y_star.y[j]), cfg.tolerances.tol_br) << alpha;
    // A player's own payoff never drops when it moves.
    for (std::size_t t = 1; t < rep.trajectory.size(); ++t) {
      const auto& prev = rep.trajectory[t - 1].profile.y;
      std::vector<double> y = prev;
      for (std::size_t j = 0; j < 3; ++j) {
        const double others = y[0] + y[1] + y[2] - y[j];
        const double before = evaluate_payoff(cfg.aggregators[j], y[j], others, cfg.price).value;
        y[j] = rep.trajectory[t].profile.y[j];
        const double after = evaluate_payoff(cfg.aggregators[j], y[j], others, cfg.price).value;
        if (std::isfinite(after)) EXPECT_GE(after, before - 1e-9 * std::fabs(after)) << alpha;
      }
    }
  }
}

TEST(BestResponseDynamics, ConvergedProfilesPassNashCheck) {
  for (double alpha : {0.0, 0.5, 1.0, 4.0}) {
    const auto cfg = random_market(9, 2, 5, alpha);
    const auto rep = best_response_dynamics(cfg, {{0.0, 0.0}});
    ASSERT_TRUE(rep.converged) << alpha;
    EXPECT_TRUE(rep.nash_verified) << alpha << " gain " << rep.nash.max_gain();
    EXPECT_TRUE(verify_nash(cfg, rep.y_star, 10 * cfg.tolerances.tol_br * std::max(1.0, rep.price_at_eq)).verified)
        << alpha;
  }
}

TEST(BestResponseDynamics, Deterministic) {
  const auto cfg = random_market(13, 3, 6, 1.0);
  const auto a = best_response_dynamics(cfg, {{0.0, 0.0, 0.0}});
  const auto b = best_response_dynamics(cfg, {{0.0, 0.0, 0.0}});
  ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
  for (std::size_t t = 0; t < a.trajectory.size(); ++t) {
    EXPECT_EQ(a.trajectory[t].profile, b.trajectory[t].profile);
    EXPECT_EQ(a.trajectory[t].payoffs, b.trajectory[t].payoffs);
  }
}

TEST(BestResponseDynamics, SymmetricPlayersStaySymmetric) {
  MarketConfig cfg;
  cfg.price = PriceCurve::linear(0.05);
  const std::vector<UserSpec> roster{{0, {0.3, 5}}, {1, {0.7, 8}}};
  for (int j = 0; j < 3; ++j) {
    AggregatorSpec agg{j, 1.0, roster};
    for (auto& u : agg.users) u.id += 10 * j;
    cfg.aggregators.push_back(agg);
  }
  const auto rep = best_response_dynamics(cfg, {{1.0, 1.0, 1.0}}, {UpdateOrder::kJacobi, {}});
  for (const auto& pt : rep.trajectory)
    for (double v : pt.profile.y) EXPECT_NEAR(v, pt.profile.y[0], cfg.tolerances.tol_x);
}

TEST(VerifyNash, Examples) {
  const auto cfg = symmetric_market(2);
  EXPECT_TRUE(verify_nash(cfg, {{1.2, 1.2}}, 1e-3).verified);
  const auto off = verify_nash(cfg, {{0.0, 0.0}}, 1e-3);
  EXPECT_FALSE(off.verified);
  // Best reply to nothing is y = 1.5 worth 4.5.
  EXPECT_NEAR(off.gains[0], 4.5, 1e-6);
  EXPECT_THROW(verify_nash(cfg, {{1.0}}, 1e-3), std::invalid_argument);
}

TEST(UniquenessProbe, SymmetricPairHasOneEquilibrium) {
  const auto cfg = symmetric_market(2);
  const auto rep = uniqueness_probe(cfg, 10, random_start_sampler(cfg, 3));
  EXPECT_EQ(rep.n_converged, 10);
  EXPECT_LE(rep.max_distance, 1e-3);
}

TEST(UniquenessProbe, IdenticalStartsGiveZeroDistance) {
  const auto cfg = random_market(21, 2, 4, 1.0);
  const auto same = [](std::size_t) { return StrategyProfile{{0.7, 0.2}}; };
  EXPECT_EQ(uniqueness_probe(cfg, 2, same).max_distance, 0.0);
  EXPECT_THROW(uniqueness_probe(cfg, 1, same), std::invalid_argument);
}

TEST(UniquenessProbe, SamplerStaysInsideFeasibleBox) {
  const auto cfg = random_market(23, 3, 3, 0.0);
  const auto sampler = random_start_sampler(cfg, 99);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto p = sampler(k);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_GE(p.y[j], 0.0);
      EXPECT_LE(p.y[j], feasible_budget_upper(cfg.aggregators[j], 0.0, cfg.price));
    }
  }
  EXPECT_EQ(sampler(4), random_start_sampler(cfg, 99)(4));
}

}  // namespace
}  // namespace aggfair
