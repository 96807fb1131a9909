#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include "prosody_rl/error.hpp"
#include "prosody_rl/format.hpp"

namespace prosody_rl {

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

inline int manhattan(Cell a, Cell b) noexcept { return std::abs(a.row - b.row) + std::abs(a.col - b.col); }

/// Fixed order; greedy tie-breaking everywhere uses it.
enum class Action : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3 };
inline constexpr std::array<Action, 4> kActions{Action::Up, Action::Down, Action::Left, Action::Right};
inline constexpr std::size_t kNumActions = kActions.size();

constexpr std::string_view to_string(Action a) noexcept {
  switch (a) {
    case Action::Up: return "up";
    case Action::Down: return "down";
    case Action::Left: return "left";
    case Action::Right: return "right";
  }
  return "?";
}

inline Action parse_action(std::string_view s) {
  for (Action a : kActions) {
    if (to_string(a) == s) return a;
  }
  fail(Errc::FormatError, "unknown action '" + std::string(s) + "'");
}

constexpr std::size_t index_of(Action a) noexcept { return static_cast<std::size_t>(a); }

constexpr Cell offset(Cell c, Action a, int k = 1) noexcept {
  switch (a) {
    case Action::Up: return {c.row - k, c.col};
    case Action::Down: return {c.row + k, c.col};
    case Action::Left: return {c.row, c.col - k};
    case Action::Right: return {c.row, c.col + k};
  }
  return c;
}

struct GridMap {
  int rows = 0;  // including the wall border
  int cols = 0;
  std::set<Cell> walls;
  Cell nut;
  Cell squirrel;
  std::array<Cell, 3> bombs{};
  Cell start;
  Action start_direction = Action::Up;

  [[nodiscard]] bool in_bounds(Cell c) const noexcept { return c.row >= 0 && c.col >= 0 && c.row < rows && c.col < cols; }
  [[nodiscard]] bool is_wall(Cell c) const { return !in_bounds(c) || walls.contains(c); }
  [[nodiscard]] bool is_bomb(Cell c) const noexcept {
    return std::find(bombs.begin(), bombs.end(), c) != bombs.end();
  }

  bool operator==(const GridMap&) const = default;
};

struct AgentState {
  int row = 0;
  int col = 0;
  bool has_nut = false;

  [[nodiscard]] Cell cell() const noexcept { return {row, col}; }
  auto operator<=>(const AgentState&) const = default;
};

struct RewardSpec {
  double step_cost = -1.0;
  double bomb = -50.0;
  double delivery = 50.0;
  double nut_pickup = 0.0;
  double discount = 0.95;
};

struct StepResult {
  AgentState next;
  double reward = 0.0;
  bool terminal = false;
};

inline bool is_terminal(const GridMap& map, const AgentState& s) {
  return map.is_bomb(s.cell()) || (s.has_nut && s.cell() == map.squirrel);
}

/// Deterministic transition. A blocked move leaves the agent in place; pickup,
/// delivery and bomb events fire only when the agent enters the cell.
inline StepResult step(const GridMap& map, const RewardSpec& spec, const AgentState& state, Action action) {
  StepResult out{state, spec.step_cost, false};
  const Cell target = offset(state.cell(), action);
  if (map.is_wall(target)) return out;
  out.next.row = target.row;
  out.next.col = target.col;
  if (target == map.nut && !state.has_nut) {
    out.next.has_nut = true;
    out.reward += spec.nut_pickup;
  }
  if (map.is_bomb(target)) {
    out.reward += spec.bomb;
    out.terminal = true;
  } else if (target == map.squirrel && out.next.has_nut && state.has_nut) {
    out.reward += spec.delivery;
    out.terminal = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Map invariants and generation

/// Start cell plus the first three cells along the start direction.
inline std::array<Cell, 4> start_ray(const GridMap& map) {
  return {map.start, offset(map.start, map.start_direction, 1), offset(map.start, map.start_direction, 2),
          offset(map.start, map.start_direction, 3)};
}

/// Lists every violated invariant; empty means the map is valid. The
/// bomb-to-start-ray distance is a generation constraint and can be skipped
/// for hand-authored maps.
inline std::vector<std::string> map_violations(const GridMap& map, bool generation_constraints = true) {
  std::vector<std::string> out;
  if (map.rows < 3 || map.cols < 3) {
    out.emplace_back("grid smaller than 3x3");
    return out;
  }
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      const bool border = r == 0 || c == 0 || r == map.rows - 1 || c == map.cols - 1;
      if (border && !map.walls.contains({r, c})) out.emplace_back("border cell not a wall");
    }
  }
  const std::array<Cell, 5> elements{map.nut, map.squirrel, map.bombs[0], map.bombs[1], map.bombs[2]};
  std::vector<Cell> specials(elements.begin(), elements.end());
  specials.push_back(map.start);
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (map.is_wall(specials[i])) out.emplace_back("special element on a wall");
    for (std::size_t j = i + 1; j < specials.size(); ++j) {
      if (specials[i] == specials[j]) out.emplace_back("special elements coincide");
    }
  }
  for (std::size_t i = 0; i < elements.size(); ++i) {
    for (std::size_t j = i + 1; j < elements.size(); ++j) {
      if (manhattan(elements[i], elements[j]) < 4) out.emplace_back("elements closer than Manhattan distance 4");
    }
  }
  const auto ray = start_ray(map);
  for (std::size_t k = 1; k < ray.size(); ++k) {
    if (map.is_wall(ray[k])) out.emplace_back("start cannot move 3 cells in its start direction");
  }
  if (generation_constraints) {
    for (const Cell& bomb : map.bombs) {
      for (const Cell& c : ray) {
        if (manhattan(bomb, c) < 4) out.emplace_back("bomb within distance 4 of the start ray");
      }
    }
  }
  return out;
}

inline constexpr int kMaxMapRejections = 10'000;

/// Rejection-samples a bordered map with the given interior size.
inline GridMap generate_map(int interior_rows, int interior_cols, std::uint64_t seed) {
  if (interior_rows < 1 || interior_cols < 1) fail(Errc::InvalidParams, "interior must be at least 1x1");
  GridMap map;
  map.rows = interior_rows + 2;
  map.cols = interior_cols + 2;
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      if (r == 0 || c == 0 || r == map.rows - 1 || c == map.cols - 1) map.walls.insert({r, c});
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> row_dist(1, interior_rows);
  std::uniform_int_distribution<int> col_dist(1, interior_cols);
  std::uniform_int_distribution<int> dir_dist(0, 3);
  auto random_cell = [&] { return Cell{row_dist(rng), col_dist(rng)}; };
  for (int attempt = 0; attempt < kMaxMapRejections; ++attempt) {
    map.start = random_cell();
    map.start_direction = kActions[static_cast<std::size_t>(dir_dist(rng))];
    map.nut = random_cell();
    map.squirrel = random_cell();
    for (auto& b : map.bombs) b = random_cell();
    if (map_violations(map).empty()) return map;
  }
  fail(Errc::InfeasibleMap, "no valid placement after " + std::to_string(kMaxMapRejections) + " rejections for a " +
                                std::to_string(interior_rows) + "x" + std::to_string(interior_cols) + " interior");
}

// ---------------------------------------------------------------------------
// Exact solution

class MdpSolution {
 public:
  MdpSolution() = default;
  explicit MdpSolution(const GridMap& map)
      : rows_(map.rows), cols_(map.cols), q_(slots()), v_(slots(), 0.0), valid_(slots(), 0), terminal_(slots(), 0),
        optimal_(slots(), 0) {}

  [[nodiscard]] bool contains(const AgentState& s) const noexcept {
    return s.row >= 0 && s.col >= 0 && s.row < rows_ && s.col < cols_ && valid_[index(s)] != 0;
  }
  [[nodiscard]] bool terminal(const AgentState& s) const { return terminal_[checked(s)] != 0; }
  [[nodiscard]] const std::array<double, 4>& q(const AgentState& s) const { return q_[checked(s)]; }
  [[nodiscard]] double q(const AgentState& s, Action a) const { return q_[checked(s)][index_of(a)]; }
  [[nodiscard]] double value(const AgentState& s) const { return v_[checked(s)]; }
  [[nodiscard]] bool is_optimal(const AgentState& s, Action a) const {
    return (optimal_[checked(s)] >> index_of(a)) & 1U;
  }
  [[nodiscard]] std::vector<Action> optimal_actions(const AgentState& s) const {
    std::vector<Action> out;
    for (Action a : kActions) {
      if (is_optimal(s, a)) out.push_back(a);
    }
    return out;
  }
  /// Every non-wall (cell, has_nut) state, row-major with has_nut minor.
  [[nodiscard]] std::vector<AgentState> states() const {
    std::vector<AgentState> out;
    for (int r = 0; r < rows_; ++r) {
      for (int c = 0; c < cols_; ++c) {
        for (bool n : {false, true}) {
          const AgentState s{r, c, n};
          if (valid_[index(s)] != 0) out.push_back(s);
        }
      }
    }
    return out;
  }
  [[nodiscard]] std::vector<AgentState> non_terminal_states() const {
    auto all = states();
    std::erase_if(all, [&](const AgentState& s) { return terminal(s); });
    return all;
  }

  template <class RewardFn>
  friend MdpSolution solve_mdp(const GridMap& map, const RewardSpec& spec, double discount, double tol,
                               RewardFn&& reward);

 private:
  [[nodiscard]] std::size_t slots() const noexcept { return static_cast<std::size_t>(rows_ * cols_ * 2); }
  [[nodiscard]] std::size_t index(const AgentState& s) const noexcept {
    return static_cast<std::size_t>((s.row * cols_ + s.col) * 2 + (s.has_nut ? 1 : 0));
  }
  [[nodiscard]] std::size_t checked(const AgentState& s) const {
    if (!contains(s)) {
      fail(Errc::StateNotFound, "state (" + std::to_string(s.row) + "," + std::to_string(s.col) + "," +
                                    std::to_string(s.has_nut) + ") not in solution");
    }
    return index(s);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::array<double, 4>> q_;
  std::vector<double> v_;
  std::vector<std::uint8_t> valid_;
  std::vector<std::uint8_t> terminal_;
  std::vector<std::uint8_t> optimal_;
};

/// Jacobi Bellman-optimality iteration over the map's (cell, has_nut) states
/// with a caller-supplied transition reward r(state, action, step_result).
/// Terminal states have V = 0. Optimal actions are the exact argmax set.
template <class RewardFn>
MdpSolution solve_mdp(const GridMap& map, const RewardSpec& spec, double discount, double tol, RewardFn&& reward) {
  if (!(tol > 0.0)) fail(Errc::InvalidParams, "tolerance must be positive");
  if (!(discount > 0.0 && discount < 1.0)) fail(Errc::InvalidParams, "discount must lie in (0, 1)");
  MdpSolution sol(map);
  struct Edge {
    std::size_t next = 0;
    double reward = 0.0;
    bool terminal = false;
  };
  std::vector<std::size_t> live;
  std::vector<std::array<Edge, 4>> edges(sol.slots());
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      if (map.is_wall({r, c})) continue;
      for (bool n : {false, true}) {
        const AgentState s{r, c, n};
        const auto i = sol.index(s);
        sol.valid_[i] = 1;
        if (is_terminal(map, s)) {
          sol.terminal_[i] = 1;
          continue;
        }
        live.push_back(i);
        for (Action a : kActions) {
          const StepResult res = step(map, spec, s, a);
          edges[i][index_of(a)] = {sol.index(res.next), static_cast<double>(reward(s, a, res)), res.terminal};
        }
      }
    }
  }
  std::vector<double> next_v(sol.slots(), 0.0);
  for (;;) {
    double delta = 0.0;
    for (std::size_t i : live) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < kNumActions; ++k) {
        const Edge& e = edges[i][k];
        const double q = e.reward + (e.terminal ? 0.0 : discount * sol.v_[e.next]);
        sol.q_[i][k] = q;
        best = std::max(best, q);
      }
      next_v[i] = best;
      delta = std::max(delta, std::abs(best - sol.v_[i]));
    }
    for (std::size_t i : live) sol.v_[i] = next_v[i];
    if (delta < tol) break;
  }
  // Recompute Q against the final V so V(s) = max_a Q(s,a) holds exactly.
  for (std::size_t i : live) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < kNumActions; ++k) {
      const Edge& e = edges[i][k];
      sol.q_[i][k] = e.reward + (e.terminal ? 0.0 : discount * sol.v_[e.next]);
      best = std::max(best, sol.q_[i][k]);
    }
    sol.v_[i] = best;
    std::uint8_t mask = 0;
    for (std::size_t k = 0; k < kNumActions; ++k) {
      if (sol.q_[i][k] == best) mask |= static_cast<std::uint8_t>(1U << k);
    }
    sol.optimal_[i] = mask;
  }
  return sol;
}

inline MdpSolution value_iteration(const GridMap& map, const RewardSpec& spec = {}, double tol = 1e-10) {
  return solve_mdp(map, spec, spec.discount, tol,
                   [](const AgentState&, Action, const StepResult& res) { return res.reward; });
}

inline double advantage(const MdpSolution& sol, const AgentState& s, Action a) { return sol.q(s, a) - sol.value(s); }

/// First optimal action in the fixed action order.
inline Action greedy_action(const MdpSolution& sol, const AgentState& s) {
  for (Action a : kActions) {
    if (sol.is_optimal(s, a)) return a;
  }
  return Action::Up;
}

/// Length of the greedy optimal rollout start -> nut -> squirrel.
inline int optimal_step_count(const GridMap& map, const RewardSpec& spec, const MdpSolution& sol) {
  AgentState s{map.start.row, map.start.col, false};
  const int cap = map.rows * map.cols * 2 + 1;
  for (int steps = 1; steps <= cap; ++steps) {
    const StepResult res = step(map, spec, s, greedy_action(sol, s));
    if (res.terminal) {
      if (res.next.has_nut && res.next.cell() == map.squirrel) return steps;
      break;
    }
    s = res.next;
  }
  fail(Errc::InfeasibleMap, "goal not reachable from start under the optimal policy");
}

inline double normalized_performance(int steps_taken, const GridMap& map, const RewardSpec& spec,
                                     const MdpSolution& sol) {
  if (steps_taken < 1) fail(Errc::InvalidParams, "steps_taken must be at least 1");
  return static_cast<double>(steps_taken) / static_cast<double>(optimal_step_count(map, spec, sol));
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json cell_json(Cell c) { return nlohmann::json::array({c.row, c.col}); }
inline Cell cell_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) fail(Errc::FormatError, "cell must be [row, col]");
  return {j[0].get<int>(), j[1].get<int>()};
}

inline nlohmann::json to_json(const GridMap& map) {
  nlohmann::json j = format_tag("prosody-rl-map");
  j["rows"] = map.rows;
  j["cols"] = map.cols;
  auto walls = nlohmann::json::array();
  for (const Cell& c : map.walls) walls.push_back(cell_json(c));
  j["walls"] = std::move(walls);
  j["nut"] = cell_json(map.nut);
  j["squirrel"] = cell_json(map.squirrel);
  j["bombs"] = nlohmann::json::array({cell_json(map.bombs[0]), cell_json(map.bombs[1]), cell_json(map.bombs[2])});
  j["start"] = cell_json(map.start);
  j["start_direction"] = std::string(to_string(map.start_direction));
  return j;
}

inline GridMap map_from_json(const nlohmann::json& j) {
  check_format(j, "prosody-rl-map");
  GridMap map;
  try {
    map.rows = j.at("rows").get<int>();
    map.cols = j.at("cols").get<int>();
    for (const auto& w : j.at("walls")) map.walls.insert(cell_from_json(w));
    map.nut = cell_from_json(j.at("nut"));
    map.squirrel = cell_from_json(j.at("squirrel"));
    const auto& bombs = j.at("bombs");
    if (!bombs.is_array() || bombs.size() != 3) fail(Errc::FormatError, "map needs exactly 3 bombs");
    for (std::size_t i = 0; i < 3; ++i) map.bombs[i] = cell_from_json(bombs[i]);
    map.start = cell_from_json(j.at("start"));
    map.start_direction = parse_action(j.at("start_direction").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::FormatError, std::string("malformed map: ") + e.what());
  }
  if (const auto v = map_violations(map, false); !v.empty()) fail(Errc::InfeasibleMap, "map invalid: " + v.front());
  return map;
}

inline nlohmann::json to_json(const RewardSpec& s) {
  return {{"step_cost", s.step_cost}, {"bomb", s.bomb}, {"delivery", s.delivery},
          {"nut_pickup", s.nut_pickup}, {"discount", s.discount}};
}

inline RewardSpec reward_spec_from_json(const nlohmann::json& j) {
  RewardSpec s;
  s.step_cost = j.value("step_cost", s.step_cost);
  s.bomb = j.value("bomb", s.bomb);
  s.delivery = j.value("delivery", s.delivery);
  s.nut_pickup = j.value("nut_pickup", s.nut_pickup);
  s.discount = j.value("discount", s.discount);
  if (!(s.step_cost < 0.0)) fail(Errc::InvalidParams, "step_cost must be negative");
  return s;
}

inline std::string state_key(const AgentState& s) {
  return std::to_string(s.row) + ":" + std::to_string(s.col) + ":" + (s.has_nut ? "1" : "0");
}

/// CSV export: one row per (non-terminal state, action).
inline std::string solution_csv(const MdpSolution& sol) {
  std::string out = "# prosody-rl-solution " + std::string(kFormatVersion) + "\nstate,action,Q,advantage\n";
  char buf[128];
  for (const auto& s : sol.non_terminal_states()) {
    for (Action a : kActions) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f\n", state_key(s).c_str(), std::string(to_string(a)).c_str(),
                    sol.q(s, a), advantage(sol, s, a));
      out += buf;
    }
  }
  return out;
}

}  // namespace prosody_rl
