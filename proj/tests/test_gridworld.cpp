#include <gtest/gtest.h>

#include <cmath>

#include "prosody_rl/gridworld.hpp"
#include "test_util.hpp"

using namespace prosody_rl;

namespace {

// Bordered map with an explicit interior; bombs default to far corners.
GridMap manual_map(int interior_rows, int interior_cols) {
  GridMap m;
  m.rows = interior_rows + 2;
  m.cols = interior_cols + 2;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      if (r == 0 || c == 0 || r == m.rows - 1 || c == m.cols - 1) m.walls.insert({r, c});
  return m;
}

// 1x5 corridor: squirrel at the right end; bombs parked in wall cells so they
// are unreachable.
GridMap corridor() {
  GridMap m = manual_map(1, 5);
  m.squirrel = {1, 5};
  m.nut = {1, 1};
  m.start = {1, 2};
  m.bombs = {Cell{0, 0}, Cell{0, 6}, Cell{2, 0}};
  return m;
}

}  // namespace

TEST(GenerateMap, Seed42SatisfiesInvariants) {
  const auto m = generate_map(10, 10, 42);
  EXPECT_TRUE(map_violations(m).empty());
  EXPECT_EQ(m.rows, 12);
  EXPECT_EQ(m.cols, 12);
}

TEST(GenerateMap, DeterministicPerSeed) {
  EXPECT_EQ(generate_map(10, 10, 7), generate_map(10, 10, 7));
  EXPECT_FALSE(generate_map(10, 10, 7) == generate_map(10, 10, 8));
}

TEST(GenerateMap, SmallInteriorOutcomeMatchesChecker) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    try {
      const auto m = generate_map(5, 5, seed);
      EXPECT_TRUE(map_violations(m).empty());
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InfeasibleMap);
    }
  }
}

TEST(GenerateMap, ThousandSeedsPassChecker) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto m = generate_map(10, 10, seed);
    ASSERT_TRUE(map_violations(m).empty()) << seed;
  }
}

TEST(GenerateMap, CheckerCatchesViolations) {
  auto m = generate_map(10, 10, 1);
  auto bad = m;
  bad.nut = bad.squirrel;
  EXPECT_FALSE(map_violations(bad).empty());
  bad = m;
  bad.walls.erase({0, 3});
  EXPECT_FALSE(map_violations(bad).empty());
}

TEST(Step, IntoWallStays) {
  const auto m = corridor();
  const AgentState s{1, 2, false};
  const auto r = step(m, {}, s, Action::Up);
  EXPECT_EQ(r.next, s);
  EXPECT_EQ(r.reward, -1.0);
  EXPECT_FALSE(r.terminal);
}

TEST(Step, IntoBombIsTerminal) {
  auto m = manual_map(3, 3);
  m.bombs = {Cell{2, 2}, Cell{0, 0}, Cell{0, 1}};
  m.nut = {1, 1};
  m.squirrel = {3, 3};
  const auto r = step(m, {}, {2, 1, false}, Action::Right);
  EXPECT_TRUE(r.terminal);
  EXPECT_EQ(r.reward, -51.0);
}

TEST(Step, SquirrelWithoutNutIsOrdinary) {
  const auto m = corridor();
  const auto r = step(m, {}, {1, 4, false}, Action::Right);
  EXPECT_FALSE(r.terminal);
  EXPECT_EQ(r.reward, -1.0);
  EXPECT_EQ(r.next.cell(), (Cell{1, 5}));
  const auto d = step(m, {}, {1, 4, true}, Action::Right);
  EXPECT_TRUE(d.terminal);
  EXPECT_EQ(d.reward, 49.0);
}

TEST(Step, NutPickup) {
  const auto m = corridor();
  RewardSpec spec;
  spec.nut_pickup = 2.0;
  const auto r = step(m, spec, {1, 2, false}, Action::Left);
  EXPECT_TRUE(r.next.has_nut);
  EXPECT_EQ(r.reward, 1.0);
}

TEST(Step, TotalAndDeterministic) {
  const auto m = generate_map(10, 10, 3);
  const auto sol = value_iteration(m);
  for (const auto& s : sol.states())
    for (Action a : kActions) {
      const auto r1 = step(m, {}, s, a);
      const auto r2 = step(m, {}, s, a);
      EXPECT_EQ(r1.next, r2.next);
      EXPECT_EQ(r1.reward, r2.reward);
      EXPECT_TRUE(sol.contains(r1.next));
    }
}

TEST(ValueIteration, CorridorMatchesGeometricSum) {
  const auto m = corridor();
  const RewardSpec spec;
  const auto sol = value_iteration(m, spec);
  // With the nut, moving right k cells to the squirrel:
  // V_k = -1 (1 + g + ... + g^{k-1}) + 50 g^{k-1}
  const double g = spec.discount;
  for (int col = 1; col <= 4; ++col) {
    const int k = 5 - col;
    double v = 50.0 * std::pow(g, k - 1);
    for (int i = 0; i < k; ++i) v -= std::pow(g, i);
    EXPECT_NEAR(sol.value({1, col, true}), v, 1e-8) << col;
    EXPECT_NEAR(sol.q({1, col, true}, Action::Right), v, 1e-8);
    EXPECT_TRUE(sol.is_optimal({1, col, true}, Action::Right));
  }
  // Without the nut the agent must walk left to (1,1) first.
  const double v_nut_at_1 = sol.value({1, 1, true});
  EXPECT_NEAR(sol.q({1, 2, false}, Action::Left), -1.0 + g * v_nut_at_1, 1e-8);
}

TEST(ValueIteration, BombAdjacentQ) {
  const auto m = generate_map(10, 10, 42);
  const auto sol = value_iteration(m);
  int checked = 0;
  for (const auto& s : sol.non_terminal_states())
    for (Action a : kActions)
      if (m.is_bomb(offset(s.cell(), a))) {
        EXPECT_DOUBLE_EQ(sol.q(s, a), -51.0);
        ++checked;
      }
  EXPECT_GT(checked, 0);
}

TEST(ValueIteration, ToleranceDoesNotChangeArgmax) {
  for (std::uint64_t seed : {1, 2, 3, 42}) {
    const auto m = generate_map(10, 10, seed);
    const auto a = value_iteration(m, {}, 1e-8);
    const auto b = value_iteration(m, {}, 1e-10);
    for (const auto& s : a.non_terminal_states()) EXPECT_EQ(a.optimal_actions(s), b.optimal_actions(s));
  }
}

TEST(ValueIteration, ScalingRewardsKeepsArgmax) {
  const auto m = generate_map(10, 10, 9);
  const RewardSpec base;
  const auto a = value_iteration(m, base);
  for (double c : {0.5, 4.0}) {
    RewardSpec scaled = base;
    scaled.step_cost *= c;
    scaled.bomb *= c;
    scaled.delivery *= c;
    scaled.nut_pickup *= c;
    const auto b = value_iteration(m, scaled);
    for (const auto& s : a.non_terminal_states()) {
      EXPECT_EQ(a.optimal_actions(s), b.optimal_actions(s));
      for (Action act : kActions) EXPECT_NEAR(b.q(s, act), c * a.q(s, act), 1e-6 * c);
    }
  }
}

TEST(ValueIteration, VIsMaxQ) {
  const auto sol = value_iteration(generate_map(10, 10, 5));
  for (const auto& s : sol.non_terminal_states()) {
    const auto& q = sol.q(s);
    EXPECT_EQ(sol.value(s), *std::max_element(q.begin(), q.end()));
    EXPECT_FALSE(sol.optimal_actions(s).empty());
  }
  for (const auto& s : sol.states()) {
    if (sol.terminal(s)) {
      EXPECT_EQ(sol.value(s), 0.0);
    }
  }
}

TEST(ValueIteration, RejectsBadTolerance) { EXPECT_THROW(value_iteration(corridor(), {}, 0.0), Error); }

TEST(Advantage, NonPositiveWithZeroExactlyOnArgmax) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sol = value_iteration(generate_map(10, 10, seed));
    for (const auto& s : sol.non_terminal_states())
      for (Action a : kActions) {
        const double adv = advantage(sol, s, a);
        EXPECT_LE(adv, 0.0);
        EXPECT_EQ(adv == 0.0, sol.is_optimal(s, a));
      }
  }
}

TEST(Advantage, UniformQStateIsZeroEverywhere) {
  // In a 1x1 interior every action bumps the wall, so all Q values coincide.
  auto m = manual_map(1, 1);
  m.start = {1, 1};
  m.nut = {0, 0};
  m.squirrel = {0, 1};
  m.bombs = {Cell{0, 2}, Cell{1, 0}, Cell{2, 0}};
  const auto sol = value_iteration(m);
  for (Action a : kActions) EXPECT_EQ(advantage(sol, {1, 1, false}, a), 0.0);
}

TEST(Advantage, UnknownStateThrows) {
  const auto sol = value_iteration(corridor());
  try {
    advantage(sol, {0, 0, false}, Action::Up);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::StateNotFound);
  }
}

TEST(NormalizedPerformance, Ratios) {
  const auto m = generate_map(10, 10, 42);
  const RewardSpec spec;
  const auto sol = value_iteration(m, spec);
  const int opt = optimal_step_count(m, spec, sol);
  EXPECT_EQ(normalized_performance(opt, m, spec, sol), 1.0);
  EXPECT_EQ(normalized_performance(2 * opt, m, spec, sol), 2.0);
  EXPECT_THROW(normalized_performance(0, m, spec, sol), Error);
}

TEST(NormalizedPerformance, BfsMatchesGreedyRollout) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = generate_map(10, 10, seed);
    const auto sol = value_iteration(m);
    EXPECT_EQ(optimal_step_count(m, {}, sol), testutil::bfs_delivery_length(m)) << seed;
  }
}

TEST(NormalizedPerformance, UnreachableGoal) {
  // Squirrel sealed off by a wall column.
  auto m = manual_map(1, 5);
  m.start = {1, 1};
  m.nut = {1, 2};
  m.walls.insert({1, 3});
  m.squirrel = {1, 5};
  m.bombs = {Cell{0, 0}, Cell{0, 6}, Cell{2, 0}};
  const auto sol = value_iteration(m);
  try {
    optimal_step_count(m, {}, sol);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InfeasibleMap);
  }
}

TEST(MapJson, RoundTripAndCsv) {
  const auto m = generate_map(10, 10, 11);
  const auto back = map_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back, m);
  auto j = to_json(m);
  j["version"] = "2.0";
  EXPECT_THROW(map_from_json(j), Error);
  const auto csv = solution_csv(value_iteration(m));
  EXPECT_NE(csv.find("state,action,Q,advantage\n"), std::string::npos);
}
