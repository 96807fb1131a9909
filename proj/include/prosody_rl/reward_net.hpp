#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosody_rl/error.hpp"
#include "prosody_rl/format.hpp"
#include "prosody_rl/prosody.hpp"

namespace prosody_rl::reward {

struct SnippetAudio {
  Word word = Word::Yes;
  double pitch_mean = 0.0;
  std::optional<ProsodyFeatures> features;
};

struct TrajectorySnippet {
  std::vector<std::vector<double>> states;
  double gt_return = 0.0;
  std::optional<SnippetAudio> audio;
};

/// d -> h1 -> h2 -> 1 perceptron with tanh hidden units. Parameters live in
/// one flat vector: W1, b1, W2, b2, w3, b3 (row-major weights).
class RewardNet {
 public:
  RewardNet() = default;
  RewardNet(std::size_t input_dim, std::size_t hidden1 = 64, std::size_t hidden2 = 64)
      : d_(input_dim), h1_(hidden1), h2_(hidden2), params_(param_count(input_dim, hidden1, hidden2), 0.0) {
    if (d_ == 0 || h1_ == 0 || h2_ == 0) fail(Errc::InvalidParams, "network dimensions must be positive");
  }

  static std::size_t param_count(std::size_t d, std::size_t h1, std::size_t h2) {
    return h1 * d + h1 + h2 * h1 + h2 + h2 + 1;
  }

  /// Glorot-uniform weights, zero biases.
  static RewardNet initialized(std::size_t input_dim, std::uint64_t seed, std::size_t hidden1 = 64,
                               std::size_t hidden2 = 64) {
    RewardNet net(input_dim, hidden1, hidden2);
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t off, std::size_t fan_out, std::size_t fan_in) {
      const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (std::size_t i = 0; i < fan_out * fan_in; ++i) net.params_[off + i] = u(rng);
    };
    fill(net.off_w1(), hidden1, input_dim);
    fill(net.off_w2(), hidden2, hidden1);
    fill(net.off_w3(), 1, hidden2);
    return net;
  }

  [[nodiscard]] std::size_t input_dim() const noexcept { return d_; }
  [[nodiscard]] std::size_t hidden1() const noexcept { return h1_; }
  [[nodiscard]] std::size_t hidden2() const noexcept { return h2_; }
  [[nodiscard]] std::span<const double> params() const noexcept { return params_; }
  [[nodiscard]] std::span<double> params() noexcept { return params_; }
  [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }

  // Offsets into the flat parameter vector.
  [[nodiscard]] std::size_t off_w1() const noexcept { return 0; }
  [[nodiscard]] std::size_t off_b1() const noexcept { return h1_ * d_; }
  [[nodiscard]] std::size_t off_w2() const noexcept { return off_b1() + h1_; }
  [[nodiscard]] std::size_t off_b2() const noexcept { return off_w2() + h2_ * h1_; }
  [[nodiscard]] std::size_t off_w3() const noexcept { return off_b2() + h2_; }
  [[nodiscard]] std::size_t off_b3() const noexcept { return off_w3() + h2_; }

  [[nodiscard]] double forward(std::span<const double> x) const {
    std::vector<double> a1;
    std::vector<double> a2;
    return forward(x, a1, a2);
  }

  /// Adds g * d r(x) / d theta into grad.
  void backward(std::span<const double> x, double g, std::span<double> grad) const {
    if (grad.size() != params_.size()) fail(Errc::ShapeError, "gradient buffer has wrong size");
    std::vector<double> z1;
    std::vector<double> z2;
    forward(x, z1, z2);
    const double* p = params_.data();
    double* gr = grad.data();
    std::vector<double> d2(h2_);
    for (std::size_t k = 0; k < h2_; ++k) {
      gr[off_w3() + k] += g * z2[k];
      d2[k] = g * p[off_w3() + k] * (1.0 - z2[k] * z2[k]);
    }
    gr[off_b3()] += g;
    std::vector<double> d1(h1_, 0.0);
    for (std::size_t k = 0; k < h2_; ++k) {
      const double* w = p + off_w2() + k * h1_;
      double* gw = gr + off_w2() + k * h1_;
      for (std::size_t j = 0; j < h1_; ++j) {
        gw[j] += d2[k] * z1[j];
        d1[j] += d2[k] * w[j];
      }
      gr[off_b2() + k] += d2[k];
    }
    for (std::size_t j = 0; j < h1_; ++j) {
      const double dj = d1[j] * (1.0 - z1[j] * z1[j]);
      double* gw = gr + off_w1() + j * d_;
      for (std::size_t i = 0; i < d_; ++i) gw[i] += dj * x[i];
      gr[off_b1() + j] += dj;
    }
  }

  bool operator==(const RewardNet&) const = default;

 private:
  double forward(std::span<const double> x, std::vector<double>& z1, std::vector<double>& z2) const {
    if (x.size() != d_) fail(Errc::ShapeError, "state has " + std::to_string(x.size()) + " features, net expects " +
                                                   std::to_string(d_));
    const double* p = params_.data();
    z1.assign(h1_, 0.0);
    for (std::size_t j = 0; j < h1_; ++j) {
      const double* w = p + off_w1() + j * d_;
      double s = p[off_b1() + j];
      for (std::size_t i = 0; i < d_; ++i) s += w[i] * x[i];
      z1[j] = std::tanh(s);
    }
    z2.assign(h2_, 0.0);
    double out = p[off_b3()];
    for (std::size_t k = 0; k < h2_; ++k) {
      const double* w = p + off_w2() + k * h1_;
      double s = p[off_b2() + k];
      for (std::size_t j = 0; j < h1_; ++j) s += w[j] * z1[j];
      z2[k] = std::tanh(s);
      out += p[off_w3() + k] * z2[k];
    }
    return out;
  }

  std::size_t d_ = 0;
  std::size_t h1_ = 0;
  std::size_t h2_ = 0;
  std::vector<double> params_;
};

inline double predicted_return(const RewardNet& net, const TrajectorySnippet& s) {
  double total = 0.0;
  for (const auto& x : s.states) total += net.forward(x);
  return total;
}

inline void accumulate_return_gradient(const RewardNet& net, const TrajectorySnippet& s, double g,
                                       std::span<double> grad) {
  if (g == 0.0) return;
  for (const auto& x : s.states) net.backward(x, g, grad);
}

// ---------------------------------------------------------------------------
// Losses

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// 1 / (1 + |Rm - Rn|).
inline double sim(double rm, double rn) { return 1.0 / (1.0 + std::abs(rm - rn)); }

/// d sim / d Rm; the subgradient at Rm == Rn is 0.
inline double sim_grad(double rm, double rn) {
  const double d = rm - rn;
  if (d == 0.0) return 0.0;
  const double s = sim(rm, rn);
  return (d > 0.0 ? -1.0 : 1.0) * s * s;
}

/// Cross-entropy preferring j over i: log(1 + exp(Ri - Rj)).
inline double trex_pair_loss(double ri, double rj) { return softplus(ri - rj); }

struct RankedPair {
  std::size_t i = 0;  // lower ground-truth return
  std::size_t j = 0;  // higher ground-truth return
};

struct CalPair {
  std::size_t m = 0;
  std::size_t n = 0;
};

enum class TemperaturePool { Joint, DenominatorOnly };

struct CalBatch {
  std::vector<CalPair> same_word;
  std::vector<CalPair> dissimilar;
  double t0 = 0.1;
  TemperaturePool pool = TemperaturePool::Joint;
  bool include_numerator = false;
};

struct Temperatures {
  std::vector<double> same_word;
  std::vector<double> dissimilar;
};

/// Softmax-normalized absolute pitch differences plus the offset t0.
inline Temperatures temperatures(std::span<const double> pitch_same_diff, std::span<const double> pitch_dis_diff,
                                 double t0, TemperaturePool pool = TemperaturePool::Joint) {
  if (!(t0 > 0.0)) fail(Errc::InvalidParams, "t0 must be positive");
  double mx = -std::numeric_limits<double>::infinity();
  auto consider = [&](std::span<const double> v) {
    for (double d : v) mx = std::max(mx, std::abs(d));
  };
  if (pool == TemperaturePool::Joint) consider(pitch_same_diff);
  consider(pitch_dis_diff);
  if (!std::isfinite(mx)) mx = 0.0;
  double z = 0.0;
  auto add = [&](std::span<const double> v) {
    for (double d : v) z += std::exp(std::abs(d) - mx);
  };
  if (pool == TemperaturePool::Joint) add(pitch_same_diff);
  add(pitch_dis_diff);
  if (z == 0.0) fail(Errc::InvalidParams, "temperature pool is empty");
  Temperatures out;
  for (double d : pitch_same_diff) out.same_word.push_back(t0 + std::exp(std::abs(d) - mx) / z);
  for (double d : pitch_dis_diff) out.dissimilar.push_back(t0 + std::exp(std::abs(d) - mx) / z);
  return out;
}

template <class Snippets>
Temperatures batch_temperatures(const Snippets& snippets, const CalBatch& batch) {
  auto pitch = [&](std::size_t k) {
    const auto& a = snippets[k].audio;
    if (!a) fail(Errc::InvalidParams, "CAL pair member has no audio");
    return a->pitch_mean;
  };
  std::vector<double> s;
  std::vector<double> d;
  for (const auto& p : batch.same_word) s.push_back(pitch(p.m) - pitch(p.n));
  for (const auto& p : batch.dissimilar) d.push_back(pitch(p.m) - pitch(p.n));
  return temperatures(s, d, batch.t0, batch.pool);
}

/// CAL given per-pair similarities. As printed, the denominator sums over
/// the dissimilar pairs only; with include_numerator each same-word pair
/// also appears in its own denominator (InfoNCE form). Optional outputs
/// receive dL/dsim per pair.
inline double cal_loss_from_sims(std::span<const double> same_sims, std::span<const double> dis_sims,
                                 const Temperatures& t, std::vector<double>* d_same = nullptr,
                                 std::vector<double>* d_dis = nullptr, bool include_numerator = false) {
  if (same_sims.empty() || dis_sims.empty()) fail(Errc::InvalidParams, "CAL batch needs B >= 1 and N >= 1");
  const std::size_t b = same_sims.size();
  const std::size_t n = dis_sims.size();
  const double inv_b = 1.0 / static_cast<double>(b);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, dis_sims[k] / t.dissimilar[k]);
  double z = 0.0;
  for (std::size_t k = 0; k < n; ++k) z += std::exp(dis_sims[k] / t.dissimilar[k] - mx);
  if (d_same) d_same->assign(b, 0.0);
  if (d_dis) d_dis->assign(n, 0.0);
  double loss = 0.0;
  if (!include_numerator) {
    const double lse = mx + std::log(z);
    for (std::size_t q = 0; q < b; ++q) {
      loss += -same_sims[q] / t.same_word[q] + lse;
      if (d_same) (*d_same)[q] = -inv_b / t.same_word[q];
    }
    // The log-sum-exp term is identical for every numerator pair, so its mean is itself.
    if (d_dis)
      for (std::size_t k = 0; k < n; ++k) (*d_dis)[k] = std::exp(dis_sims[k] / t.dissimilar[k] - mx) / z / t.dissimilar[k];
    return loss * inv_b;
  }
  for (std::size_t q = 0; q < b; ++q) {
    const double a = same_sims[q] / t.same_word[q];
    const double m = std::max(mx, a);
    const double zq = z * std::exp(mx - m) + std::exp(a - m);
    loss += -a + m + std::log(zq);
    const double p_num = std::exp(a - m) / zq;
    if (d_same) (*d_same)[q] = inv_b * (p_num - 1.0) / t.same_word[q];
    if (d_dis)
      for (std::size_t k = 0; k < n; ++k)
        (*d_dis)[k] += inv_b * std::exp(dis_sims[k] / t.dissimilar[k] - m) / zq / t.dissimilar[k];
  }
  return loss * inv_b;
}

struct LossValue {
  double total = 0.0;
  double trex = 0.0;
  double cal = 0.0;
};

struct LossInputs {
  std::span<const TrajectorySnippet> snippets;
  std::span<const RankedPair> pairs;
  const CalBatch* cal = nullptr;
  double alpha = 1.0;
};

/// trex + alpha * cal. When grad is non-null it receives the exact gradient
/// (overwritten). Temperatures depend only on pitch and are constants here.
inline LossValue combined_loss(const RewardNet& net, const LossInputs& in, std::vector<double>* grad = nullptr) {
  if (in.alpha < 0.0) fail(Errc::InvalidParams, "alpha must be non-negative");
  if (in.pairs.empty() && in.cal == nullptr) fail(Errc::InvalidParams, "no loss terms");
  std::unordered_map<std::size_t, double> ret;
  auto R = [&](std::size_t k) {
    if (k >= in.snippets.size()) fail(Errc::InvalidParams, "snippet index out of range");
    auto it = ret.find(k);
    if (it != ret.end()) return it->second;
    const double r = predicted_return(net, in.snippets[k]);
    ret.emplace(k, r);
    return r;
  };
  std::unordered_map<std::size_t, double> dret;
  LossValue out;
  for (const auto& p : in.pairs) {
    const double ri = R(p.i);
    const double rj = R(p.j);
    out.trex += trex_pair_loss(ri, rj);
    if (grad) {
      const double s = sigmoid(ri - rj);
      dret[p.i] += s;
      dret[p.j] -= s;
    }
  }
  if (in.cal != nullptr) {
    const CalBatch& b = *in.cal;
    const auto t = batch_temperatures(in.snippets, b);
    std::vector<double> ss;
    std::vector<double> ds;
    for (const auto& p : b.same_word) ss.push_back(sim(R(p.m), R(p.n)));
    for (const auto& p : b.dissimilar) ds.push_back(sim(R(p.m), R(p.n)));
    std::vector<double> g_same;
    std::vector<double> g_dis;
    out.cal = cal_loss_from_sims(ss, ds, t, grad ? &g_same : nullptr, grad ? &g_dis : nullptr, b.include_numerator);
    if (grad && in.alpha > 0.0) {
      auto push = [&](const CalPair& p, double dl_dsim) {
        const double rm = R(p.m);
        const double rn = R(p.n);
        const double gm = in.alpha * dl_dsim * sim_grad(rm, rn);
        dret[p.m] += gm;
        dret[p.n] -= gm;
      };
      for (std::size_t q = 0; q < b.same_word.size(); ++q) push(b.same_word[q], g_same[q]);
      for (std::size_t k = 0; k < b.dissimilar.size(); ++k) push(b.dissimilar[k], g_dis[k]);
    }
  }
  out.total = out.trex + in.alpha * out.cal;
  if (grad) {
    grad->assign(net.size(), 0.0);
    std::vector<std::size_t> keys;
    keys.reserve(dret.size());
    for (const auto& [k, g] : dret) keys.push_back(k);
    std::sort(keys.begin(), keys.end());  // fixed reduction order
    for (std::size_t k : keys) accumulate_return_gradient(net, in.snippets[k], dret[k], *grad);
  }
  return out;
}

inline double trex_loss(const RewardNet& net, std::span<const TrajectorySnippet> snippets,
                        std::span<const RankedPair> pairs) {
  if (pairs.empty()) fail(Errc::InvalidParams, "trex_loss needs at least one pair");
  return combined_loss(net, {snippets, pairs, nullptr, 0.0}).trex;
}

inline double cal_loss(const RewardNet& net, std::span<const TrajectorySnippet> snippets, const CalBatch& batch) {
  return combined_loss(net, {snippets, {}, &batch, 1.0}).cal;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::string_view kRewardNetFormat = "prosody-rl-rewardnet";

inline nlohmann::json to_json(const RewardNet& net) {
  nlohmann::json j = format_tag(kRewardNetFormat);
  j["input_dim"] = net.input_dim();
  j["hidden"] = {net.hidden1(), net.hidden2()};
  j["activation"] = "tanh";
  j["params"] = std::vector<double>(net.params().begin(), net.params().end());
  return j;
}

inline RewardNet reward_net_from_json(const nlohmann::json& j) {
  check_format(j, kRewardNetFormat);
  try {
    RewardNet net(j.at("input_dim").get<std::size_t>(), j.at("hidden").at(0).get<std::size_t>(),
                  j.at("hidden").at(1).get<std::size_t>());
    const auto p = j.at("params").get<std::vector<double>>();
    if (p.size() != net.size()) fail(Errc::ShapeError, "checkpoint parameter count mismatch");
    std::copy(p.begin(), p.end(), net.params().begin());
    return net;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::FormatError, std::string("bad reward checkpoint: ") + e.what());
  }
}

inline nlohmann::json to_json(const TrajectorySnippet& s) {
  nlohmann::json j{{"states", s.states}, {"gt_return", s.gt_return}};
  if (s.audio) {
    nlohmann::json a{{"word", to_string(s.audio->word)}, {"pitch_mean", s.audio->pitch_mean}};
    if (s.audio->features) a["features"] = to_json(*s.audio->features);
    j["audio"] = a;
  }
  return j;
}

inline TrajectorySnippet snippet_from_json(const nlohmann::json& j) {
  try {
    TrajectorySnippet s;
    s.states = j.at("states").get<std::vector<std::vector<double>>>();
    s.gt_return = j.at("gt_return").get<double>();
    if (s.states.empty()) fail(Errc::FormatError, "snippet has no states");
    if (j.contains("audio") && !j.at("audio").is_null()) {
      const auto& a = j.at("audio");
      SnippetAudio audio;
      audio.word = parse_word(a.at("word").get<std::string>());
      audio.pitch_mean = a.at("pitch_mean").get<double>();
      if (a.contains("features")) audio.features = features_from_json(a.at("features"));
      s.audio = audio;
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::FormatError, std::string("bad snippet: ") + e.what());
  }
}

}  // namespace prosody_rl::reward
