#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <array>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosody_rl/error.hpp"
#include "prosody_rl/format.hpp"
#include "prosody_rl/gridworld.hpp"
#include "prosody_rl/reward_net.hpp"
#include "prosody_rl/stats.hpp"

namespace prosody_rl::reward {

// ---------------------------------------------------------------------------
// Desk-scale environment: gridworld states with a graded ground-truth reward.

struct DeskConfig {
  // Weight of the distance-to-current-goal term in the state reward.
  double shaping = 5.0;
};

inline constexpr std::size_t kDeskFeatureDim = 6;

inline double desk_norm(const GridMap& map) { return static_cast<double>(std::max(1, map.rows - 2 + map.cols - 2)); }

inline int nearest_bomb_distance(const GridMap& map, Cell c) {
  int best = std::numeric_limits<int>::max();
  for (const Cell& b : map.bombs) best = std::min(best, manhattan(c, b));
  return best;
}

/// row, col, has_nut, and distances to nut, squirrel and nearest bomb, all scaled to about [0, 1].
inline std::vector<double> desk_features(const GridMap& map, const AgentState& s) {
  const double norm = desk_norm(map);
  const double rspan = std::max(1, map.rows - 3);
  const double cspan = std::max(1, map.cols - 3);
  return {(s.row - 1) / rspan,
          (s.col - 1) / cspan,
          s.has_nut ? 1.0 : 0.0,
          manhattan(s.cell(), map.nut) / norm,
          manhattan(s.cell(), map.squirrel) / norm,
          nearest_bomb_distance(map, s.cell()) / norm};
}

/// Ground-truth reward for arriving in state s.
inline double desk_state_reward(const GridMap& map, const RewardSpec& spec, const DeskConfig& desk,
                                const AgentState& s) {
  double r = spec.step_cost;
  if (map.is_bomb(s.cell())) {
    r += spec.bomb;
  } else if (s.has_nut && s.cell() == map.squirrel) {
    r += spec.delivery;
  } else if (s.has_nut && s.cell() == map.nut) {
    r += spec.nut_pickup;
  }
  const Cell goal = s.has_nut ? map.squirrel : map.nut;
  return r - desk.shaping * manhattan(s.cell(), goal) / desk_norm(map);
}

template <class StateReward>
MdpSolution solve_state_reward(const GridMap& map, const RewardSpec& spec, StateReward&& f, double tol = 1e-10) {
  return solve_mdp(map, spec, spec.discount, tol,
                   [&](const AgentState&, Action, const StepResult& res) { return f(res.next); });
}

inline MdpSolution solve_desk(const GridMap& map, const RewardSpec& spec = {}, const DeskConfig& desk = {}) {
  return solve_state_reward(map, spec, [&](const AgentState& s) { return desk_state_reward(map, spec, desk, s); });
}

struct PolicyReport {
  double mean_score = 0.0;
  std::vector<double> scores;
  // Fraction of non-terminal states whose greedy action is optimal under the ground truth.
  double agreement = 0.0;
  std::size_t agreeing_states = 0;
  std::size_t states = 0;
};

/// Plans on a learned per-state reward, then scores greedy rollouts from
/// seeded random start states against the ground-truth reward.
template <class StateReward>
PolicyReport policy_from_state_reward(StateReward&& learned, const GridMap& map, const RewardSpec& spec = {},
                                      const DeskConfig& desk = {}, std::size_t rollouts = 30,
                                      std::uint64_t seed = 0) {
  const MdpSolution plan = solve_state_reward(map, spec, learned);
  const MdpSolution truth = solve_desk(map, spec, desk);
  PolicyReport out;
  const auto starts = truth.non_terminal_states();
  for (const auto& s : starts) {
    ++out.states;
    if (truth.is_optimal(s, greedy_action(plan, s))) ++out.agreeing_states;
  }
  out.agreement = out.states ? static_cast<double>(out.agreeing_states) / static_cast<double>(out.states) : 0.0;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
  const int max_steps = 2 * map.rows * map.cols;
  for (std::size_t k = 0; k < rollouts; ++k) {
    AgentState s = starts[pick(rng)];
    double score = 0.0;
    for (int t = 0; t < max_steps; ++t) {
      const auto res = step(map, spec, s, greedy_action(plan, s));
      score += desk_state_reward(map, spec, desk, res.next);
      s = res.next;
      if (res.terminal) break;
    }
    out.scores.push_back(score);
  }
  out.mean_score = out.scores.empty() ? 0.0 : stats::mean(out.scores);
  return out;
}

inline PolicyReport policy_from_reward(const RewardNet& net, const GridMap& map, const RewardSpec& spec = {},
                                       const DeskConfig& desk = {}, std::size_t rollouts = 30,
                                       std::uint64_t seed = 0) {
  return policy_from_state_reward([&](const AgentState& s) { return net.forward(desk_features(map, s)); }, map, spec,
                                  desk, rollouts, seed);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double alpha = 1.0;
  double t0 = 0.1;
  double lr = 1e-3;
  int epochs = 60;
  // Ranked pairs drawn once from the training snippets.
  std::size_t num_pairs = 200;
  std::size_t pair_batch = 16;
  std::size_t cal_same = 16;
  std::size_t cal_dissimilar = 16;
  std::size_t hidden = 64;
  TemperaturePool pool = TemperaturePool::Joint;
  bool include_numerator = false;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"t0", c.t0},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"num_pairs", c.num_pairs},
          {"pair_batch", c.pair_batch},
          {"cal_same", c.cal_same},
          {"cal_dissimilar", c.cal_dissimilar},
          {"hidden", c.hidden},
          {"pool", c.pool == TemperaturePool::Joint ? "joint" : "denominator"},
          {"include_numerator", c.include_numerator},
          {"seed", c.seed}};
}

struct TrainResult {
  RewardNet net;
  std::vector<LossValue> curve;  // per-epoch means
};

/// Random distinct pairs ordered by ground-truth return; ties are skipped.
inline std::vector<RankedPair> sample_ranked_pairs(std::span<const TrajectorySnippet> snippets, std::size_t count,
                                                   std::mt19937_64& rng) {
  if (snippets.size() < 2) fail(Errc::InsufficientData, "need at least two snippets to rank");
  std::uniform_int_distribution<std::size_t> pick(0, snippets.size() - 1);
  std::vector<RankedPair> out;
  std::size_t guard = 0;
  while (out.size() < count) {
    if (++guard > 100 * count + 1000) fail(Errc::InsufficientData, "snippets have no distinct returns to rank");
    const std::size_t a = pick(rng);
    const std::size_t b = pick(rng);
    const double ra = snippets[a].gt_return;
    const double rb = snippets[b].gt_return;
    if (a == b || ra == rb) continue;
    out.push_back(ra < rb ? RankedPair{a, b} : RankedPair{b, a});
  }
  return out;
}

class CalSampler {
 public:
  explicit CalSampler(std::span<const TrajectorySnippet> snippets) {
    for (std::size_t k = 0; k < snippets.size(); ++k) {
      if (!snippets[k].audio) continue;
      (snippets[k].audio->word == Word::Yes ? yes_ : no_).push_back(k);
    }
  }
  [[nodiscard]] bool usable() const noexcept { return yes_.size() + no_.size() >= 3 && !yes_.empty() && !no_.empty(); }

  CalBatch sample(std::size_t same, std::size_t dissimilar, double t0, TemperaturePool pool, std::mt19937_64& rng) const {
    if (!usable()) fail(Errc::InvalidParams, "CAL needs audio-annotated snippets of both words");
    CalBatch b;
    b.t0 = t0;
    b.pool = pool;
    std::vector<const std::vector<std::size_t>*> groups;
    if (yes_.size() >= 2) groups.push_back(&yes_);
    if (no_.size() >= 2) groups.push_back(&no_);
    std::uniform_int_distribution<std::size_t> pick_group(0, groups.size() - 1);
    for (std::size_t q = 0; q < same; ++q) {
      const auto& g = *groups[pick_group(rng)];
      std::uniform_int_distribution<std::size_t> pick(0, g.size() - 1);
      const std::size_t m = pick(rng);
      std::size_t n = pick(rng);
      while (n == m) n = pick(rng);
      b.same_word.push_back({g[m], g[n]});
    }
    std::uniform_int_distribution<std::size_t> py(0, yes_.size() - 1);
    std::uniform_int_distribution<std::size_t> pn(0, no_.size() - 1);
    for (std::size_t k = 0; k < dissimilar; ++k) b.dissimilar.push_back({yes_[py(rng)], no_[pn(rng)]});
    return b;
  }

 private:
  std::vector<std::size_t> yes_;
  std::vector<std::size_t> no_;
};

class Adam {
 public:
  explicit Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_;
  double b1_;
  double b2_;
  double eps_;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

/// Minibatch training: ranked pairs are shuffled each epoch and every
/// minibatch gets a freshly sampled CAL batch when alpha > 0.
inline TrainResult train(std::span<const TrajectorySnippet> snippets, const TrainConfig& cfg) {
  if (snippets.empty()) fail(Errc::InsufficientData, "empty training set");
  if (cfg.epochs < 1 || cfg.pair_batch == 0 || !(cfg.lr > 0.0)) fail(Errc::InvalidParams, "bad training config");
  const std::size_t dim = snippets.front().states.front().size();
  for (const auto& s : snippets) {
    if (s.states.empty()) fail(Errc::InvalidParams, "empty snippet");
    for (const auto& x : s.states)
      if (x.size() != dim) fail(Errc::ShapeError, "inconsistent state dimensions in dataset");
  }
  std::seed_seq seq{cfg.seed, std::uint64_t{0x7265776172646e65}};
  std::array<std::uint64_t, 4> seeds{};
  seq.generate(seeds.begin(), seeds.end());
  TrainResult out{RewardNet::initialized(dim, seeds[0], cfg.hidden, cfg.hidden), {}};
  std::mt19937_64 pair_rng(seeds[1]);
  std::mt19937_64 shuffle_rng(seeds[2]);
  std::mt19937_64 cal_rng(seeds[3]);
  auto pairs = sample_ranked_pairs(snippets, cfg.num_pairs, pair_rng);
  const bool use_cal = cfg.alpha > 0.0;
  const CalSampler sampler(snippets);
  if (use_cal && !sampler.usable()) fail(Errc::InvalidParams, "CAL requires audio-annotated snippets of both words");
  Adam opt(out.net.size(), cfg.lr);
  std::vector<double> grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), shuffle_rng);
    LossValue sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.pair_batch) {
      const std::size_t end = std::min(pairs.size(), start + cfg.pair_batch);
      std::span<const RankedPair> mb(pairs.data() + start, end - start);
      CalBatch cal;
      if (use_cal) {
        cal = sampler.sample(cfg.cal_same, cfg.cal_dissimilar, cfg.t0, cfg.pool, cal_rng);
        cal.include_numerator = cfg.include_numerator;
      }
      const LossValue l = combined_loss(out.net, {snippets, mb, use_cal ? &cal : nullptr, cfg.alpha}, &grad);
      const bool finite_grad = std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
      if (!std::isfinite(l.total) || !finite_grad) {
        std::ostringstream msg;
        msg << "loss diverged at epoch " << epoch << ", batch " << batches << " (trex=" << l.trex << ", cal=" << l.cal
            << ", total=" << l.total << ")";
        fail(Errc::TrainingDiverged, msg.str());
      }
      opt.step(out.net.params(), grad);
      sum.total += l.total;
      sum.trex += l.trex;
      sum.cal += l.cal;
      ++batches;
    }
    const double n = static_cast<double>(batches);
    out.curve.push_back({sum.total / n, sum.trex / n, sum.cal / n});
  }
  return out;
}

inline std::string loss_curve_csv(std::span<const LossValue> curve) {
  std::string out = "epoch,loss,trex,cal\n";
  char buf[160];
  for (std::size_t e = 0; e < curve.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", e, curve[e].total, curve[e].trex, curve[e].cal);
    out += buf;
  }
  return out;
}

/// Spearman correlation between predicted and ground-truth returns.
inline stats::TestResult evaluate_reward(const RewardNet& net, std::span<const TrajectorySnippet> heldout) {
  if (heldout.size() < 3) fail(Errc::InsufficientData, "need at least 3 held-out snippets");
  std::vector<double> pred;
  std::vector<double> gt;
  for (const auto& s : heldout) {
    pred.push_back(predicted_return(net, s));
    gt.push_back(s.gt_return);
  }
  return stats::spearman(pred, gt);
}

/// Deterministic train/held-out split.
inline std::pair<std::vector<TrajectorySnippet>, std::vector<TrajectorySnippet>> split_dataset(
    std::span<const TrajectorySnippet> all, double heldout_fraction, std::uint64_t seed) {
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) fail(Errc::InvalidParams, "held-out fraction must be in (0,1)");
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_held = static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(all.size())));
  std::pair<std::vector<TrajectorySnippet>, std::vector<TrajectorySnippet>> out;
  for (std::size_t k = 0; k < idx.size(); ++k) (k < n_held ? out.second : out.first).push_back(all[idx[k]]);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files: a header row followed by one snippet per line.

inline constexpr std::string_view kDatasetFormat = "prosody-rl-dataset";

struct DemoDataset {
  std::vector<TrajectorySnippet> snippets;
  nlohmann::json meta = nlohmann::json::object();  // map, profile, feature names, ...
};

inline void write_dataset(std::ostream& os, const DemoDataset& d) {
  nlohmann::json header = format_tag(kDatasetFormat);
  header["kind"] = "header";
  header["meta"] = d.meta;
  os << header.dump() << '\n';
  for (const auto& s : d.snippets) {
    auto row = to_json(s);
    row["kind"] = "snippet";
    os << row.dump() << '\n';
  }
}

inline DemoDataset read_dataset(std::istream& is) {
  DemoDataset d;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::FormatError, "dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!header) {
      check_format(j, kDatasetFormat);
      d.meta = j.value("meta", nlohmann::json::object());
      header = true;
      continue;
    }
    try {
      d.snippets.push_back(snippet_from_json(j));
    } catch (const Error& e) {
      fail(Errc::FormatError, "dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) fail(Errc::FormatError, "dataset has no header row");
  return d;
}

}  // namespace prosody_rl::reward
