#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosody_rl/error.hpp"
#include "prosody_rl/format.hpp"
#include "prosody_rl/gridworld.hpp"
#include "prosody_rl/special.hpp"

namespace prosody_rl::tamer {

struct TimedStep {
  double t = 0.0;
  AgentState state;
  Action action = Action::Up;
};

struct FeedbackEvent {
  double t = 0.0;
  double value = 0.0;
};

enum class Variant { Baseline, Prosody };

inline std::string_view to_string(Variant v) { return v == Variant::Baseline ? "baseline" : "prosody"; }
inline Variant parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "prosody") return Variant::Prosody;
  fail(Errc::InvalidParams, "unknown variant '" + std::string(s) + "'");
}

/// Gaussian bumps on every second interior cell at several bandwidths. The
/// whole block is duplicated and gated by has_nut; the last entry is a bias.
class RbfFeaturizer {
 public:
  RbfFeaturizer() = default;
  RbfFeaturizer(std::vector<Cell> centers, std::vector<double> sigmas)
      : centers_(std::move(centers)), sigmas_(std::move(sigmas)) {
    if (centers_.empty() || sigmas_.empty()) fail(Errc::InvalidParams, "featurizer needs centers and bandwidths");
    for (double s : sigmas_)
      if (!(s > 0.0)) fail(Errc::InvalidParams, "bandwidths must be positive");
  }

  static RbfFeaturizer for_map(const GridMap& map, std::vector<double> sigmas = {0.5, 1.0, 2.0}, int stride = 2) {
    std::vector<Cell> centers;
    for (int r = 1; r < map.rows - 1; r += stride)
      for (int c = 1; c < map.cols - 1; c += stride) centers.push_back({r, c});
    return {std::move(centers), std::move(sigmas)};
  }

  [[nodiscard]] std::size_t block_size() const noexcept { return centers_.size() * sigmas_.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return 2 * block_size() + 1; }
  [[nodiscard]] const std::vector<Cell>& centers() const noexcept { return centers_; }
  [[nodiscard]] const std::vector<double>& sigmas() const noexcept { return sigmas_; }

  [[nodiscard]] std::vector<double> operator()(const AgentState& s) const {
    std::vector<double> phi(dim(), 0.0);
    const std::size_t offset = s.has_nut ? block_size() : 0;
    std::size_t k = offset;
    for (double sigma : sigmas_) {
      const double inv = 1.0 / (2.0 * sigma * sigma);
      for (const Cell& c : centers_) {
        const double dr = s.row - c.row;
        const double dc = s.col - c.col;
        phi[k++] = std::exp(-(dr * dr + dc * dc) * inv);
      }
    }
    phi.back() = 1.0;
    return phi;
  }

  bool operator==(const RbfFeaturizer&) const = default;

 private:
  std::vector<Cell> centers_;
  std::vector<double> sigmas_;
};

struct CreditAssigner {
  double shape = 2.0;
  double scale = 0.28;
  std::size_t window = 3;
  // Length of the interval credited to the oldest step in the window.
  double tail = 1.25;
  // Start the first interval at 0 instead of the most recent step's delay.
  bool anchor_at_zero = false;
  double quadrature_tol = 1e-9;
};

inline double credit_density(const CreditAssigner& a, double x) { return special::gamma_pdf(x, a.shape, a.scale); }

inline double credit_integral(const CreditAssigner& a, double lo, double hi) {
  if (hi <= lo) return 0.0;
  return special::integrate([&](double x) { return credit_density(a, x); }, lo, hi, a.quadrature_tol);
}

/// Weights for the given steps (any order), aligned with the input. Delays
/// d = feedback_t - t are sorted ascending and partition [d_1, d_n + tail].
inline std::vector<double> credit_weights(const CreditAssigner& a, double feedback_t, std::span<const TimedStep> steps) {
  if (steps.empty()) return {};
  if (steps.size() > a.window) fail(Errc::InvalidParams, "more steps than the credit window");
  std::vector<std::size_t> order(steps.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> delay(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    delay[i] = feedback_t - steps[i].t;
    if (delay[i] < 0.0) fail(Errc::InvalidParams, "step timestamp after feedback");
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return delay[x] < delay[y]; });
  std::vector<double> w(steps.size(), 0.0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double d = delay[order[k]];
    double lo;
    double hi;
    if (a.anchor_at_zero) {
      lo = k == 0 ? 0.0 : delay[order[k - 1]];
      hi = d;
    } else {
      lo = d;
      hi = k + 1 < order.size() ? delay[order[k + 1]] : d + a.tail;
    }
    w[order[k]] = credit_integral(a, lo, hi);
  }
  return w;
}

class HModel {
 public:
  HModel() = default;
  explicit HModel(RbfFeaturizer f, double learning_rate = 0.01)
      : featurizer_(std::move(f)), learning_rate_(learning_rate) {
    if (!(learning_rate_ > 0.0)) fail(Errc::InvalidParams, "learning rate must be positive");
    for (auto& w : weights_) w.assign(featurizer_.dim(), 0.0);
  }
  static HModel for_map(const GridMap& map, double learning_rate = 0.01) {
    return HModel(RbfFeaturizer::for_map(map), learning_rate);
  }

  [[nodiscard]] const RbfFeaturizer& featurizer() const noexcept { return featurizer_; }
  [[nodiscard]] double learning_rate() const noexcept { return learning_rate_; }
  [[nodiscard]] const std::vector<double>& weights(Action a) const { return weights_[index_of(a)]; }
  std::vector<double>& mutable_weights(Action a) { return weights_[index_of(a)]; }

  [[nodiscard]] double predict(std::span<const double> phi, Action a) const {
    const auto& w = weights_[index_of(a)];
    if (phi.size() != w.size()) fail(Errc::ShapeError, "feature dimension mismatch");
    return std::inner_product(w.begin(), w.end(), phi.begin(), 0.0);
  }
  [[nodiscard]] double predict(const AgentState& s, Action a) const { return predict(featurizer_(s), a); }
  [[nodiscard]] std::array<double, kNumActions> predict_all(const AgentState& s) const {
    const auto phi = featurizer_(s);
    std::array<double, kNumActions> out{};
    for (Action a : kActions) out[index_of(a)] = predict(phi, a);
    return out;
  }

  /// First action (in the fixed order) with the largest prediction.
  [[nodiscard]] Action greedy(const AgentState& s) const {
    const auto p = predict_all(s);
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i)
      if (p[i] > p[best]) best = i;
    return kActions[best];
  }

  /// One SGD step on (prediction - target)^2 for action a only.
  void update(const AgentState& s, Action a, double target) {
    if (!std::isfinite(target)) fail(Errc::InvalidParams, "non-finite update target");
    const auto phi = featurizer_(s);
    auto& w = weights_[index_of(a)];
    const double g = 2.0 * learning_rate_ * (target - predict(phi, a));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += g * phi[i];
  }

  /// Euclidean distance between the stacked weight vectors.
  [[nodiscard]] double distance(const HModel& other) const {
    double ss = 0.0;
    for (std::size_t a = 0; a < kNumActions; ++a) {
      if (weights_[a].size() != other.weights_[a].size()) fail(Errc::ShapeError, "models have different shapes");
      for (std::size_t i = 0; i < weights_[a].size(); ++i) {
        const double d = weights_[a][i] - other.weights_[a][i];
        ss += d * d;
      }
    }
    return std::sqrt(ss);
  }

  bool operator==(const HModel&) const = default;

 private:
  RbfFeaturizer featurizer_;
  double learning_rate_ = 0.01;
  std::array<std::vector<double>, kNumActions> weights_;
};

inline double variant_value(Variant v, double value) {
  if (v == Variant::Baseline) return value > 0.0 ? 1.0 : (value < 0.0 ? -1.0 : 0.0);
  return value;
}

/// Steps that may receive credit for feedback at time t: at most `window`
/// of the most recent steps strictly before t. `steps` must be time-sorted.
inline std::span<const TimedStep> credited_steps(std::span<const TimedStep> steps, double t, std::size_t window) {
  const auto end = std::lower_bound(steps.begin(), steps.end(), t,
                                    [](const TimedStep& s, double x) { return s.t < x; });
  const auto n = static_cast<std::size_t>(end - steps.begin());
  const std::size_t k = std::min(n, window);
  return steps.subspan(n - k, k);
}

/// Applies one feedback event. Credited steps are updated oldest first.
/// Returns the number of regressor updates performed.
inline std::size_t apply_feedback(HModel& model, const CreditAssigner& assigner, std::span<const TimedStep> steps,
                                  const FeedbackEvent& fb, Variant variant) {
  const double value = variant_value(variant, fb.value);
  if (value == 0.0) return 0;
  const auto recent = credited_steps(steps, fb.t, assigner.window);
  const auto w = credit_weights(assigner, fb.t, recent);
  for (std::size_t i = 0; i < recent.size(); ++i) model.update(recent[i].state, recent[i].action, w[i] * value);
  return recent.size();
}

inline void check_session_order(std::span<const TimedStep> steps, std::span<const FeedbackEvent> feedback) {
  for (std::size_t i = 1; i < steps.size(); ++i)
    if (!(steps[i].t > steps[i - 1].t)) fail(Errc::InvalidSession, "step timestamps are not strictly increasing");
  for (std::size_t i = 1; i < feedback.size(); ++i)
    if (feedback[i].t < feedback[i - 1].t) fail(Errc::InvalidSession, "feedback timestamps are not sorted");
  for (const auto& f : feedback)
    if (!std::isfinite(f.value) || !std::isfinite(f.t)) fail(Errc::InvalidSession, "non-finite feedback");
}

/// Replays a recorded session into `model` in time order.
inline HModel train_offline(HModel model, std::span<const TimedStep> steps, std::span<const FeedbackEvent> feedback,
                            Variant variant, const CreditAssigner& assigner = {}) {
  check_session_order(steps, feedback);
  for (const auto& fb : feedback) apply_feedback(model, assigner, steps, fb, variant);
  return model;
}

/// Number of non-terminal states whose greedy action is optimal.
inline std::size_t evaluate_policy(const HModel& model, const MdpSolution& solution) {
  std::size_t count = 0;
  for (const auto& s : solution.non_terminal_states())
    if (solution.is_optimal(s, model.greedy(s))) ++count;
  return count;
}

inline constexpr std::string_view kCheckpointFormat = "prosody-rl-hmodel";

inline nlohmann::json to_json(const HModel& m) {
  nlohmann::json j = format_tag(kCheckpointFormat);
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& c : m.featurizer().centers()) centers.push_back(cell_json(c));
  j["featurizer"] = {{"kind", "rbf"}, {"centers", centers}, {"sigmas", m.featurizer().sigmas()}, {"gated_by", "has_nut"}};
  j["learning_rate"] = m.learning_rate();
  nlohmann::json w = nlohmann::json::object();
  for (Action a : kActions) w[std::string(to_string(a))] = m.weights(a);
  j["weights"] = w;
  return j;
}

inline HModel hmodel_from_json(const nlohmann::json& j) {
  check_format(j, kCheckpointFormat);
  try {
    std::vector<Cell> centers;
    for (const auto& c : j.at("featurizer").at("centers")) centers.push_back(cell_from_json(c));
    HModel m(RbfFeaturizer(std::move(centers), j.at("featurizer").at("sigmas").get<std::vector<double>>()),
             j.at("learning_rate").get<double>());
    for (Action a : kActions) {
      auto w = j.at("weights").at(std::string(to_string(a))).get<std::vector<double>>();
      if (w.size() != m.featurizer().dim()) fail(Errc::ShapeError, "checkpoint weight length mismatch");
      for (double x : w)
        if (!std::isfinite(x)) fail(Errc::FormatError, "non-finite weight in checkpoint");
      m.mutable_weights(a) = std::move(w);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::FormatError, std::string("bad checkpoint: ") + e.what());
  }
}

}  // namespace prosody_rl::tamer
