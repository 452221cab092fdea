#include "gbsde/limits.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

using namespace gbsde;

namespace {

AdaptedProcess deterministic_a(const LatticeModel& model, const std::vector<double>& per_step) {
  AdaptedProcess a(model);
  for (int k = 0; k <= model.depth(); ++k)
    for (int i = 0; i < model.node_count(k); ++i) a.at(k, i) = per_step[k];
  return a;
}

Driver random_driver(const LatticeModel& model, std::mt19937_64& rng, double da_max,
                     double zero_prob, double da_min = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AdaptedProcess a(model);
  for (int k = 0; k < model.depth(); ++k)
    for (int i = 0; i < model.node_count(k); ++i) {
      const double da = u(rng) < zero_prob ? 0.0 : da_min + (da_max - da_min) * u(rng);
      a.at(k + 1, model.child_index(k, i, true)) = a.at(k, i) + da;
      a.at(k + 1, model.child_index(k, i, false)) = a.at(k, i) + da;
    }
  return make_driver(model, a);
}

AdaptedProcess random_process(const LatticeModel& model, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  AdaptedProcess x(model);
  for (int k = 0; k <= model.depth(); ++k)
    for (int i = 0; i < model.node_count(k); ++i) x.at(k, i) = u(rng);
  return x;
}

std::vector<double> cond_exp_all_to_root(const LatticeModel& model, std::vector<double> slice) {
  for (int k = model.depth() - 1; k >= 0; --k) slice = conditional_expectation(model, slice, k);
  return slice;
}

struct Fixture {
  LatticeModel model;
  MartingaleM m;
  Driver driver;
};

Fixture ramp_fixture() {
  LatticeModel model = build_lattice(2, 0.5, TreeStructure::Recombining);
  MartingaleM m = standard_walk_martingale(model);
  Driver d = make_driver(model, deterministic_a(model, {0.0, 0.5, 1.0}));
  return {model, std::move(m), std::move(d)};
}

double sup_gap(const AdaptedProcess& a, const AdaptedProcess& b) {
  double g = 0.0;
  for (int k = 0; k <= a.depth(); ++k)
    for (int i = 0; i < a.count(k); ++i) g = std::max(g, std::abs(a.at(k, i) - b.at(k, i)));
  return g;
}

}  // namespace

TEST(ConstrainedSnell, EmptySupportIsConditionalExpectation) {
  const LatticeModel model = build_lattice(3, 0.5, TreeStructure::Recombining);
  const Driver d = make_driver(model, AdaptedProcess::constant(model, 0.0));
  std::mt19937_64 rng(1);
  const std::vector<double> xi = random_process(model, rng).terminal();
  const AdaptedProcess eta = AdaptedProcess::constant(model, 100.0);  // tempting but inadmissible
  const AdaptedProcess v = constrained_snell(model, d, xi, eta);
  std::vector<double> expect = xi;
  for (int k = model.depth() - 1; k >= 0; --k) {
    expect = conditional_expectation(model, expect, k);
    for (int i = 0; i < model.node_count(k); ++i) EXPECT_NEAR(v.at(k, i), expect[i], 1e-14);
  }
}

TEST(ConstrainedSnell, HandFixture) {
  const Fixture f = ramp_fixture();
  const AdaptedProcess eta = AdaptedProcess::constant(f.model, 1.0);
  const AdaptedProcess v = constrained_snell(f.model, f.driver, f.m.values.terminal(), eta);
  EXPECT_DOUBLE_EQ(v.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(v.at(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(v.at(0, 0), 1.0);
}

TEST(ConstrainedSnell, LowBarrierNeverOptimal) {
  const Fixture f = ramp_fixture();
  const AdaptedProcess eta = AdaptedProcess::constant(f.model, -100.0);
  const AdaptedProcess v = constrained_snell(f.model, f.driver, f.m.values.terminal(), eta);
  EXPECT_DOUBLE_EQ(v.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(v.at(1, 1), 1.0);  // = M_1 on the up node
}

TEST(LadderGbsde, ZeroLevelIsConditionalExpectation) {
  const Fixture f = ramp_fixture();
  const AdaptedProcess eta = AdaptedProcess::constant(f.model, 1.0);
  const PenalizationReport rep =
      ladder_gbsde(f.model, f.m, f.driver, f.m.values.terminal(), eta, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(rep.y_by_n[0].at(0, 0), 0.0);
}

TEST(LadderGbsde, ConvergesAtRateOneOverN) {
  const Fixture f = ramp_fixture();
  const AdaptedProcess eta = AdaptedProcess::constant(f.model, 1.0);
  const PenalizationReport rep = ladder_gbsde(f.model, f.m, f.driver, f.m.values.terminal(), eta,
                                              default_penalty_levels(14));
  EXPECT_TRUE(rep.monotone_ok);
  EXPECT_LT(rep.sup_errors.back(), 1e-3);
  // error halves when n doubles, once the penalty binds
  for (std::size_t j = rep.sup_errors.size() - 6; j + 1 < rep.sup_errors.size(); ++j) {
    const double ratio = rep.sup_errors[j] / rep.sup_errors[j + 1];
    EXPECT_GE(ratio, 1.7);
    EXPECT_LE(ratio, 2.3);
  }
}

TEST(LadderGbsde, InactivePenaltyLeavesLevelsIdentical) {
  const Fixture f = ramp_fixture();
  const AdaptedProcess eta = AdaptedProcess::constant(f.model, -1e6);
  const PenalizationReport rep =
      ladder_gbsde(f.model, f.m, f.driver, f.m.values.terminal(), eta, {1.0, 4.0, 16.0});
  for (std::size_t j = 1; j < rep.y_by_n.size(); ++j)
    EXPECT_EQ(sup_gap(rep.y_by_n[j], rep.y_by_n[0]), 0.0);
}

TEST(SnellOfGamma, EmptySupportReducesToClassicalSnellOfZeta) {
  const LatticeModel model = build_lattice(3, 0.5, TreeStructure::FullBinary);
  const Driver d = make_driver(model, AdaptedProcess::constant(model, 0.0));
  std::mt19937_64 rng(2);
  const AdaptedProcess zeta = random_process(model, rng);
  const AdaptedProcess eta = AdaptedProcess::constant(model, 50.0);
  const AdaptedProcess v = snell_of_gamma(model, d, zeta, eta);
  // classical Snell of zeta
  AdaptedProcess w(model);
  w.slice(model.depth()) = zeta.terminal();
  for (int k = model.depth() - 1; k >= 0; --k) {
    const auto c = conditional_expectation(model, w.slice(k + 1), k);
    for (int i = 0; i < model.node_count(k); ++i) w.at(k, i) = std::max(zeta.at(k, i), c[i]);
  }
  EXPECT_EQ(sup_gap(v, w), 0.0);
}

TEST(SnellOfGamma, DominatedBarrierIsInert) {
  const LatticeModel model = build_lattice(3, 0.5, TreeStructure::FullBinary);
  std::mt19937_64 rng(3);
  const Driver d = random_driver(model, rng, 0.5, 0.3);
  const AdaptedProcess zeta = random_process(model, rng, 1.0, 2.0);
  const AdaptedProcess eta = random_process(model, rng, -2.0, 0.5);  // eta <= zeta everywhere
  const AdaptedProcess v = snell_of_gamma(model, d, zeta, eta);
  AdaptedProcess w(model);
  w.slice(model.depth()) = zeta.terminal();
  for (int k = model.depth() - 1; k >= 0; --k) {
    const auto c = conditional_expectation(model, w.slice(k + 1), k);
    for (int i = 0; i < model.node_count(k); ++i) w.at(k, i) = std::max(zeta.at(k, i), c[i]);
  }
  EXPECT_EQ(sup_gap(v, w), 0.0);
}

TEST(SnellOfGamma, HandFixture) {
  const Fixture f = ramp_fixture();
  AdaptedProcess zeta = AdaptedProcess::constant(f.model, 0.0);
  zeta.slice(2) = f.m.values.terminal();
  const AdaptedProcess eta = AdaptedProcess::constant(f.model, 1.0);
  const AdaptedProcess v = snell_of_gamma(f.model, f.driver, zeta, eta);
  EXPECT_DOUBLE_EQ(v.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(v.at(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(v.at(0, 0), 1.0);
}

TEST(LadderReflectedUp, InactiveObstacleMatchesGbsdeLadder) {
  const Fixture f = ramp_fixture();
  const AdaptedProcess zeta = AdaptedProcess::constant(f.model, -1e6);
  std::mt19937_64 rng(4);
  const AdaptedProcess eta = random_process(f.model, rng);
  const std::vector<double> levels = {1.0, 4.0, 16.0, 64.0};
  const PenalizationReport refl = ladder_reflected_up(f.model, f.m, f.driver, zeta, eta, levels);
  const PenalizationReport plain =
      ladder_gbsde(f.model, f.m, f.driver, zeta.terminal(), eta, levels);
  for (std::size_t j = 0; j < levels.size(); ++j)
    EXPECT_LE(sup_gap(refl.y_by_n[j], plain.y_by_n[j]), 1e-12);
}

TEST(LadderReflectedUp, InactiveBarrierKeepsLevelsAtReflectedSolution) {
  const Fixture f = ramp_fixture();
  std::mt19937_64 rng(5);
  AdaptedProcess zeta = random_process(f.model, rng);
  const AdaptedProcess eta = AdaptedProcess::constant(f.model, -1e6);
  const PenalizationReport rep =
      ladder_reflected_up(f.model, f.m, f.driver, zeta, eta, {1.0, 64.0});
  const RgbsdeSolution plain = solve_reflected(f.model, f.m, f.driver, Generator::zero(), zeta);
  for (const AdaptedProcess& y : rep.y_by_n) EXPECT_LE(sup_gap(y, plain.y), 1e-12);
  // and the oracle is the classical Snell envelope of zeta = gamma here
  EXPECT_LE(sup_gap(rep.oracle, plain.y), 1e-12);
}

TEST(LadderReflectedUp, ConvergesToSnellOfGamma) {
  const Fixture f = ramp_fixture();
  AdaptedProcess zeta = AdaptedProcess::constant(f.model, 0.0);
  zeta.slice(2) = f.m.values.terminal();
  const AdaptedProcess eta = AdaptedProcess::constant(f.model, 1.0);
  const PenalizationReport rep =
      ladder_reflected_up(f.model, f.m, f.driver, zeta, eta, default_penalty_levels(14));
  EXPECT_TRUE(rep.monotone_ok);
  EXPECT_LT(rep.sup_errors.back(), 1e-3);
  for (std::size_t j = rep.sup_errors.size() - 4; j + 1 < rep.sup_errors.size(); ++j)
    EXPECT_GE(rep.sup_errors[j] / rep.sup_errors[j + 1], 1.7);
}

TEST(DynkinValue, ConstantsForceZero) {
  const LatticeModel model = build_lattice(2, 0.5, TreeStructure::Recombining);
  const Driver d = make_driver(model, deterministic_a(model, {0.0, 0.5, 1.0}));
  const GameSpec spec = make_game_spec(model, AdaptedProcess::constant(model, 0.0),
                                       AdaptedProcess::constant(model, 1.0));
  const AdaptedProcess v = dynkin_value(model, d, spec, TerminalMode::ZetaT);
  for (int k = 0; k <= 2; ++k)
    for (int i = 0; i <= k; ++i) EXPECT_DOUBLE_EQ(v.at(k, i), 0.0);
}

TEST(DynkinValue, HugeBarrierRemovesMinimizer) {
  const LatticeModel model = build_lattice(3, 0.5, TreeStructure::FullBinary);
  std::mt19937_64 rng(6);
  const Driver d = random_driver(model, rng, 0.5, 0.3);
  const AdaptedProcess zeta = random_process(model, rng);
  const GameSpec spec = make_game_spec(model, zeta, AdaptedProcess::constant(model, 1e6));
  const AdaptedProcess v = dynkin_value(model, d, spec, TerminalMode::ZetaT);
  AdaptedProcess w(model);  // classical Snell of zeta with terminal zeta_N
  w.slice(3) = zeta.terminal();
  for (int k = 2; k >= 0; --k) {
    const auto c = conditional_expectation(model, w.slice(k + 1), k);
    for (int i = 0; i < model.node_count(k); ++i) w.at(k, i) = std::max(zeta.at(k, i), c[i]);
  }
  EXPECT_EQ(sup_gap(v, w), 0.0);
}

TEST(DynkinValue, HypothesisViolationNamesNode) {
  const LatticeModel model = build_lattice(2, 0.5, TreeStructure::Recombining);
  const Driver d = make_driver(model, deterministic_a(model, {0.0, 0.5, 1.0}));
  const GameSpec spec = make_game_spec(model, AdaptedProcess::constant(model, 2.0),
                                       AdaptedProcess::constant(model, 1.0));
  EXPECT_THROW(dynkin_value(model, d, spec, TerminalMode::ZetaT), HypothesisError);
}

TEST(EnumerateStoppingRules, Counts) {
  {
    const LatticeModel model = build_lattice(1, 0.5, TreeStructure::Recombining);
    const Driver d = make_driver(model, deterministic_a(model, {0.0, 1.0}));
    EXPECT_EQ(enumerate_stopping_rules(model, false, d).size(), 2u);
  }
  {
    const LatticeModel model = build_lattice(2, 0.5, TreeStructure::FullBinary);
    const Driver d = make_driver(model, deterministic_a(model, {0.0, 0.5, 1.0}));
    EXPECT_EQ(enumerate_stopping_rules(model, false, d).size(), 5u);
  }
  {
    // S-bar = terminal only: a single (forced) rule
    const LatticeModel model = build_lattice(2, 0.5, TreeStructure::Recombining);
    const Driver d = make_driver(model, AdaptedProcess::constant(model, 0.0));
    const auto rules = enumerate_stopping_rules(model, true, d);
    ASSERT_EQ(rules.size(), 1u);
    for (std::uint64_t path = 0; path < 4; ++path)
      EXPECT_EQ(realized_stop(model, rules[0], path), 2);
  }
}

TEST(EnumerateStoppingRules, RulesAreValidAndDistinct) {
  const LatticeModel model = build_lattice(3, 0.5, TreeStructure::FullBinary);
  std::mt19937_64 rng(7);
  const Driver d = random_driver(model, rng, 0.5, 0.4);
  for (bool constrained : {false, true}) {
    const auto rules = enumerate_stopping_rules(model, constrained, d);
    for (const auto& r : rules) validate_stopping_rule(model, d, r);
    // realized stop-step vectors are pairwise distinct
    std::set<std::vector<int>> seen;
    for (const auto& r : rules) {
      std::vector<int> steps;
      for (std::uint64_t path = 0; path < model.path_count(); ++path)
        steps.push_back(realized_stop(model, r, path));
      EXPECT_TRUE(seen.insert(steps).second);
    }
  }
}

TEST(EnumerateStoppingRules, GuardRejectsLargeTrees) {
  const LatticeModel model = build_lattice(5, 0.5, TreeStructure::FullBinary);
  const Driver d = make_driver(model, AdaptedProcess::constant(model, 0.0));
  EXPECT_THROW(enumerate_stopping_rules(model, false, d), EnumerationLimitError);
}

TEST(BruteForceOptimalStop, TerminalRewardOnlyIsConditionalExpectation) {
  const LatticeModel model = build_lattice(3, 0.4, TreeStructure::FullBinary);
  const Driver d = make_driver(model, AdaptedProcess::constant(model, 0.0));
  std::mt19937_64 rng(8);
  AdaptedProcess reward = AdaptedProcess::constant(model, -1e9);
  reward.slice(3) = random_process(model, rng).terminal();
  const AdaptedProcess v = brute_force_optimal_stop(model, d, reward, /*constrained=*/true);
  EXPECT_NEAR(v.at(0, 0), cond_exp_all_to_root(model, reward.terminal())[0], 1e-12);
}

TEST(BruteForceOptimalStop, ConstantRewardIsConstant) {
  const LatticeModel model = build_lattice(2, 0.5, TreeStructure::FullBinary);
  const Driver d = make_driver(model, deterministic_a(model, {0.0, 0.5, 1.0}));
  const AdaptedProcess reward = AdaptedProcess::constant(model, 3.0);
  const AdaptedProcess v = brute_force_optimal_stop(model, d, reward, false);
  for (int k = 0; k <= 2; ++k)
    for (int i = 0; i < model.node_count(k); ++i) EXPECT_DOUBLE_EQ(v.at(k, i), 3.0);
}

TEST(BruteForceOptimalStop, HandFixtureByExhaustion) {
  const Fixture f = ramp_fixture();
  AdaptedProcess reward = AdaptedProcess::constant(f.model, 1.0);  // eta before T
  reward.slice(2) = f.m.values.terminal();                         // xi at T
  const AdaptedProcess v = brute_force_optimal_stop(f.model, f.driver, reward, true);
  EXPECT_DOUBLE_EQ(v.at(0, 0), 1.0);
}

// Backward induction equals exhaustion at every node, for both constrained
// optimal stopping and the composite-reward Snell envelope.
TEST(OracleEquivalence, RandomInstances) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    const int depth = 2 + static_cast<int>(rng() % 2);
    const double p = 0.25 + 0.5 * std::uniform_real_distribution<double>(0, 1)(rng);
    const LatticeModel model = build_lattice(depth, p, TreeStructure::FullBinary);
    const Driver d = random_driver(model, rng, 0.6, 0.35);
    const AdaptedProcess zeta = random_process(model, rng);
    const AdaptedProcess eta = random_process(model, rng);
    const AdaptedProcess xi = random_process(model, rng);

    {
      const AdaptedProcess v = constrained_snell(model, d, xi.terminal(), eta);
      AdaptedProcess reward = eta;
      reward.slice(depth) = xi.terminal();
      const AdaptedProcess bf = brute_force_optimal_stop(model, d, reward, true);
      EXPECT_LE(sup_gap(expand_to_full_binary(model, v), bf), 1e-12);
    }
    {
      const AdaptedProcess v = snell_of_gamma(model, d, zeta, eta);
      const AdaptedProcess bf =
          brute_force_optimal_stop(model, d, make_gamma(model, d, zeta, eta), false);
      EXPECT_LE(sup_gap(expand_to_full_binary(model, v), bf), 1e-12);
    }
  }
}

// The two iterated Dynkin values coincide and equal the median recursion.
TEST(BruteForceDynkin, MinimaxEqualityAndOracleEquivalence) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 25; ++trial) {
    const int depth = 3;
    const LatticeModel model = build_lattice(depth, 0.3 + 0.4 * std::uniform_real_distribution<double>(0, 1)(rng),
                                             TreeStructure::FullBinary);
    const Driver d = random_driver(model, rng, 0.6, 0.3);
    const AdaptedProcess zeta = random_process(model, rng);
    AdaptedProcess eta = random_process(model, rng);
    for (int k = 0; k <= depth; ++k)
      for (int i = 0; i < model.node_count(k); ++i)
        if (d.in_sbar(k, i)) eta.at(k, i) = std::max(eta.at(k, i), zeta.at(k, i));
    const GameSpec spec = make_game_spec(model, zeta, eta);

    for (TerminalMode mode : {TerminalMode::ZetaT, TerminalMode::ZetaOrEtaT}) {
      const DynkinBruteForce bf = brute_force_dynkin(model, d, spec, mode);
      EXPECT_LE(bf.max_gap, 1e-12);
      const AdaptedProcess v = dynkin_value(model, d, spec, mode);
      EXPECT_LE(sup_gap(expand_to_full_binary(model, v), bf.infsup), 1e-12);
      EXPECT_LE(sup_gap(expand_to_full_binary(model, v), bf.supinf), 1e-12);
    }
  }
}

TEST(BruteForceDynkin, ConstantsGame) {
  const LatticeModel model = build_lattice(2, 0.5, TreeStructure::FullBinary);
  const Driver d = make_driver(model, deterministic_a(model, {0.0, 0.5, 1.0}));  // full support
  const GameSpec spec = make_game_spec(model, AdaptedProcess::constant(model, 0.0),
                                       AdaptedProcess::constant(model, 1.0));
  const DynkinBruteForce bf = brute_force_dynkin(model, d, spec, TerminalMode::ZetaT);
  EXPECT_DOUBLE_EQ(bf.infsup.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(bf.supinf.at(0, 0), 0.0);
  EXPECT_LE(bf.max_gap, 1e-12);
}

TEST(BruteForceDynkin, OnePlayerDegeneration) {
  const LatticeModel model = build_lattice(3, 0.5, TreeStructure::FullBinary);
  std::mt19937_64 rng(11);
  const Driver d = random_driver(model, rng, 0.5, 0.3);
  const AdaptedProcess zeta = random_process(model, rng);
  const GameSpec spec = make_game_spec(model, zeta, AdaptedProcess::constant(model, 1e6));
  const DynkinBruteForce bf = brute_force_dynkin(model, d, spec, TerminalMode::ZetaT);
  const AdaptedProcess stop_only = brute_force_optimal_stop(model, d, zeta, false);
  EXPECT_LE(bf.max_gap, 1e-12);
  EXPECT_LE(sup_gap(bf.infsup, stop_only), 1e-12);
}

TEST(LadderReflectedDown, InactiveBarrierKeepsLevels) {
  const Fixture f = ramp_fixture();
  std::mt19937_64 rng(12);
  const AdaptedProcess zeta = random_process(f.model, rng);
  const GameSpec spec = make_game_spec(f.model, zeta, AdaptedProcess::constant(f.model, 1e6));
  const PenalizationReport rep =
      ladder_reflected_down(f.model, f.m, f.driver, spec, {1.0, 16.0});
  const RgbsdeSolution plain = solve_reflected(f.model, f.m, f.driver, Generator::zero(), zeta);
  for (const AdaptedProcess& y : rep.y_by_n) EXPECT_LE(sup_gap(y, plain.y), 1e-12);
}

TEST(LadderReflectedDown, ConstantsStayAtZero) {
  const LatticeModel model = build_lattice(2, 0.5, TreeStructure::Recombining);
  const MartingaleM m = standard_walk_martingale(model);
  const Driver d = make_driver(model, deterministic_a(model, {0.0, 0.5, 1.0}));
  const GameSpec spec = make_game_spec(model, AdaptedProcess::constant(model, 0.0),
                                       AdaptedProcess::constant(model, 1.0));
  const PenalizationReport rep = ladder_reflected_down(model, m, d, spec, {1.0, 4.0, 16.0});
  for (const AdaptedProcess& y : rep.y_by_n)
    for (int k = 0; k <= 2; ++k)
      for (int i = 0; i <= k; ++i) EXPECT_DOUBLE_EQ(y.at(k, i), 0.0);
  EXPECT_EQ(rep.sup_errors.back(), 0.0);
}

TEST(LadderReflectedDown, ConvergesToDynkinValueWithZetaTerminal) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const int depth = 3 + static_cast<int>(rng() % 3);
    const LatticeModel model = build_lattice(depth, 0.5, TreeStructure::FullBinary);
    const MartingaleM m = standard_walk_martingale(model);
    const Driver d = random_driver(model, rng, 0.5, 0.0, 0.05);
    const AdaptedProcess zeta = random_process(model, rng);
    AdaptedProcess eta = random_process(model, rng);
    for (int k = 0; k <= depth; ++k)
      for (int i = 0; i < model.node_count(k); ++i)
        if (d.in_sbar(k, i)) eta.at(k, i) = std::max(eta.at(k, i), zeta.at(k, i));
    const GameSpec spec = make_game_spec(model, zeta, eta);
    const PenalizationReport rep =
        ladder_reflected_down(model, m, d, spec, default_penalty_levels(14));
    EXPECT_TRUE(rep.monotone_ok);
    EXPECT_LT(rep.sup_errors.back(), 1e-3);
    EXPECT_EQ(rep.terminal_mode_matched, "zeta_t");
  }
}

TEST(LadderMonotonicityDirections, UpIncreasesDownDecreases) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const LatticeModel model = build_lattice(2 + static_cast<int>(rng() % 4), 0.5,
                                             TreeStructure::FullBinary);
    const MartingaleM m = standard_walk_martingale(model);
    const Driver d = random_driver(model, rng, 0.5, 0.3);
    const AdaptedProcess zeta = random_process(model, rng);
    AdaptedProcess eta = random_process(model, rng);
    const std::vector<double> xi = random_process(model, rng).terminal();
    const std::vector<double> levels = default_penalty_levels(10);

    EXPECT_TRUE(ladder_gbsde(model, m, d, xi, eta, levels).monotone_ok);
    EXPECT_TRUE(ladder_reflected_up(model, m, d, zeta, eta, levels).monotone_ok);
    for (int k = 0; k <= model.depth(); ++k)
      for (int i = 0; i < model.node_count(k); ++i)
        if (d.in_sbar(k, i)) eta.at(k, i) = std::max(eta.at(k, i), zeta.at(k, i));
    EXPECT_TRUE(
        ladder_reflected_down(model, m, d, make_game_spec(model, zeta, eta), levels).monotone_ok);
  }
}

// Discrete sandwich: the scheme-consistent linear solution sits below every
// penalized level which sits below the constrained stopping value.
TEST(Sandwich, LinearBelowPenalizedBelowOracle) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 15; ++trial) {
    const LatticeModel model = build_lattice(2 + static_cast<int>(rng() % 4), 0.5,
                                             TreeStructure::FullBinary);
    const MartingaleM m = standard_walk_martingale(model);
    const Driver d = random_driver(model, rng, 0.5, 0.3);
    const AdaptedProcess eta = random_process(model, rng);
    const std::vector<double> xi = random_process(model, rng).terminal();
    const AdaptedProcess v = constrained_snell(model, d, xi, eta);
    for (double n : {1.0, 16.0, 256.0}) {
      const GbsdeSolution pen = solve_backward(model, m, d, Generator::penalty_up(n, eta), xi);
      // linear generator through the same implicit node map
      AdaptedProcess lin(model);
      lin.slice(model.depth()) = xi;
      for (int k = model.depth() - 1; k >= 0; --k) {
        const auto c = conditional_expectation(model, lin.slice(k + 1), k);
        for (int i = 0; i < model.node_count(k); ++i) {
          const double x = n * d.delta(k, i);
          lin.at(k, i) = (c[i] + x * eta.at(k, i)) / (1.0 + x);
        }
      }
      for (int k = 0; k <= model.depth(); ++k)
        for (int i = 0; i < model.node_count(k); ++i) {
          EXPECT_LE(lin.at(k, i), pen.y.at(k, i) + 1e-12);
          EXPECT_LE(pen.y.at(k, i), v.at(k, i) + 1e-9);
        }
    }
  }
}
