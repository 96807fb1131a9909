#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "prosody_rl/audio.hpp"
#include "prosody_rl/error.hpp"
#include "prosody_rl/gridworld.hpp"
#include "prosody_rl/prosody.hpp"
#include "prosody_rl/reward_learning.hpp"
#include "prosody_rl/session_log.hpp"
#include "prosody_rl/stats.hpp"

namespace prosody_rl::teacher {

struct TeacherProfile {
  double pos_feedback_prob = 0.9;  // chance of speaking after a step that deserves YES
  double neg_feedback_prob = 0.9;  // ... and after one that deserves NO
  double pos_bias = 3.0;           // target positive:negative count ratio
  double expressiveness = 0.25;    // target rank correlation between prosody and advantage
  double neg_intensity_boost = 1.5;
  double sign_noise = 0.1;
  std::uint64_t seed = 0;
};

inline void validate(const TeacherProfile& p) {
  auto prob = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!prob(p.pos_feedback_prob) || !prob(p.neg_feedback_prob) || !prob(p.sign_noise))
    fail(Errc::InvalidParams, "teacher probabilities must lie in [0, 1]");
  if (!(p.pos_bias > 0.0)) fail(Errc::InvalidParams, "pos_bias must be positive");
  if (!(p.expressiveness >= -1.0 && p.expressiveness <= 1.0)) fail(Errc::InvalidParams, "expressiveness must lie in [-1, 1]");
  if (!(p.neg_intensity_boost > 0.0)) fail(Errc::InvalidParams, "neg_intensity_boost must be positive");
}

inline nlohmann::json to_json(const TeacherProfile& p) {
  return {{"pos_feedback_prob", p.pos_feedback_prob}, {"neg_feedback_prob", p.neg_feedback_prob},
          {"pos_bias", p.pos_bias},                   {"expressiveness", p.expressiveness},
          {"neg_intensity_boost", p.neg_intensity_boost}, {"sign_noise", p.sign_noise},
          {"seed", p.seed}};
}

inline TeacherProfile profile_from_json(const nlohmann::json& j) {
  TeacherProfile p;
  p.pos_feedback_prob = j.value("pos_feedback_prob", p.pos_feedback_prob);
  p.neg_feedback_prob = j.value("neg_feedback_prob", p.neg_feedback_prob);
  p.pos_bias = j.value("pos_bias", p.pos_bias);
  p.expressiveness = j.value("expressiveness", p.expressiveness);
  p.neg_intensity_boost = j.value("neg_intensity_boost", p.neg_intensity_boost);
  p.sign_noise = j.value("sign_noise", p.sign_noise);
  p.seed = j.value("seed", p.seed);
  validate(p);
  return p;
}

/// Baseline means sit 8 (pitch) and 3 (energy, loudness) standard deviations
/// above zero, so unit-variance z-scores almost never need clamping.
inline SpeakerBaseline default_speaker() { return {200.0, 25.0, 0.01, 0.01 / 3.0, 0.08, 0.08 / 3.0}; }

struct IntrlOptions {
  int steps = 800;  // about 17 minutes of 1.25 s ticks
  double tick_seconds = 1.25;
  double latency = 0.3;
  double agent_epsilon = 0.5;  // chance of a uniformly random action
  double advantage_cap = 5.0;
  std::size_t probe_size = 200;
  std::size_t probe_reps = 8;
  SpeakerBaseline speaker = default_speaker();
  std::string participant = "synthetic";
};

struct Calibration {
  double beta = 0.0;   // deservedness slope in z units
  double sigma = 1.0;  // noise scale in z units
  double probe_correlation = 0.0;
  double clamp_rate = 0.0;
};

inline nlohmann::json to_json(const Calibration& c) {
  return {{"beta", c.beta}, {"sigma", c.sigma}, {"probe_correlation", c.probe_correlation}, {"clamp_rate", c.clamp_rate}};
}

struct IntrlSession {
  session::SessionLog log;
  Calibration calibration;
  std::vector<double> advantages;  // per feedback row
};

namespace detail {

/// 1 when the feedback is fully deserved by the advantage, 0 when not at all.
inline double deservedness(Word w, double adv, double cap) {
  const double m = std::min(std::abs(adv), cap) / cap;
  return w == Word::Yes ? 1.0 - m : m;
}

struct ProbeEvent {
  Word word;
  double adv;
  double delta;
  double noise;
};

inline double probe_statistic(const std::vector<ProbeEvent>& ev, double beta, double sigma) {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<int> g;
  for (const auto& e : ev) {
    const double z = beta * (2.0 * e.delta - 1.0) + sigma * e.noise;
    x.push_back(word_sign(e.word) * z);
    y.push_back(e.adv);
    g.push_back(e.word == Word::Yes ? 1 : 0);
  }
  try {
    return stats::stratified_spearman(x, y, g).statistic;
  } catch (const Error&) {
    return 0.0;
  }
}

/// Bisection on log(sigma): the rank statistic falls as the noise grows.
inline Calibration calibrate(const std::vector<ProbeEvent>& probe, double target) {
  Calibration c;
  if (target == 0.0 || probe.size() < 4) {
    c.beta = 0.0;
    c.sigma = 1.0;
    c.probe_correlation = probe.size() < 4 ? 0.0 : probe_statistic(probe, 0.0, 1.0);
    return c;
  }
  c.beta = target > 0.0 ? 1.0 : -1.0;
  const double goal = std::abs(target);
  double lo = std::log(1e-3);
  double hi = std::log(1e3);
  auto stat = [&](double log_sigma) { return std::abs(probe_statistic(probe, c.beta, std::exp(log_sigma))); };
  if (stat(lo) <= goal) {
    hi = lo;
  } else {
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (stat(mid) > goal ? lo : hi) = mid;
    }
  }
  c.sigma = std::exp(hi);
  // Only beta / sigma matters for the rank statistic; rescale so z has unit variance.
  double m = 0.0;
  double m2 = 0.0;
  for (const auto& e : probe) {
    const double v = 2.0 * e.delta - 1.0;
    m += v;
    m2 += v * v;
  }
  m /= static_cast<double>(probe.size());
  const double var_signal = std::max(0.0, m2 / static_cast<double>(probe.size()) - m * m);
  const double scale = 1.0 / std::sqrt(c.beta * c.beta * var_signal + c.sigma * c.sigma);
  c.beta *= scale;
  c.sigma *= scale;
  c.probe_correlation = probe_statistic(probe, c.beta, c.sigma);
  return c;
}

inline double clamp_nonneg(double v, std::size_t& clamps) {
  if (v < 0.0) {
    ++clamps;
    return 0.0;
  }
  return v;
}

}  // namespace detail

/// Builds an utterance feature vector from per-feature z-scores.
inline ProsodyFeatures features_from_z(double zp, double ze, double zl, double duration, int repetition, Word word,
                                       double boost, const SpeakerBaseline& b, std::mt19937_64& rng,
                                       std::size_t& clamps, std::size_t& values) {
  std::uniform_real_distribution<double> spread(0.1, 0.8);
  const double gain = word == Word::No ? boost : 1.0;
  ProsodyFeatures f;
  f.duration = duration;
  f.repetition = repetition;
  values += 3;
  f.pitch_mean = detail::clamp_nonneg(b.pitch_mean + b.pitch_std * zp, clamps);
  f.energy_mean = gain * detail::clamp_nonneg(b.energy_mean + b.energy_std * ze, clamps);
  f.loudness_mean = gain * detail::clamp_nonneg(b.loudness_mean + b.loudness_std * zl, clamps);
  f.pitch_max = f.pitch_mean * (1.0 + 0.25 * spread(rng));
  f.energy_max = f.energy_mean * (1.0 + spread(rng));
  f.loudness_max = f.loudness_mean * (1.0 + spread(rng));
  const double frames = std::max(1.0, std::floor(duration * kDefaultSampleRate / 512.0));
  f.energy_total = std::max(f.energy_max, f.energy_mean * frames);
  f.voiceless = false;
  return f;
}

/// Interactive-teaching session: an epsilon-greedy agent on the map and a
/// teacher who comments on steps with prosody tied to the advantage.
inline IntrlSession generate_intrl_session(const GridMap& map, const MdpSolution& solution, const TeacherProfile& profile,
                                           const IntrlOptions& opt = {}, const RewardSpec& spec = {}) {
  validate(profile);
  if (opt.steps < 1 || !(opt.tick_seconds > 0.0) || !(opt.latency >= 0.0) || !(opt.advantage_cap > 0.0))
    fail(Errc::InvalidParams, "bad session options");
  std::mt19937_64 rng(profile.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> any_action(0, 3);

  IntrlSession out;
  auto& log = out.log;
  log.header.map = map;
  log.header.reward = spec;
  log.header.tick_seconds = opt.tick_seconds;
  log.header.participant = opt.participant;
  log.header.variant = tamer::Variant::Prosody;
  log.header.baseline = opt.speaker;

  struct Pending {
    double t;
    Word word;
    double adv;
    bool keep = true;
  };
  std::vector<session::StepRecord> steps;
  std::vector<Pending> pending;
  AgentState s{map.start.row, map.start.col, false};
  double score = 0.0;
  for (int k = 0; k < opt.steps; ++k) {
    const Action a = u01(rng) < opt.agent_epsilon ? kActions[static_cast<std::size_t>(any_action(rng))]
                                                  : greedy_action(solution, s);
    const auto res = step(map, spec, s, a);
    score += res.reward;
    session::StepRecord rec;
    rec.t = (k + 1) * opt.tick_seconds;
    rec.tick = k;
    rec.state = s;
    rec.action = a;
    rec.next = res.next;
    rec.reward = res.reward;
    rec.terminal = res.terminal;
    rec.score = score;
    steps.push_back(rec);
    const double adv = advantage(solution, s, a);
    Word w = adv >= 0.0 ? Word::Yes : Word::No;
    const double speak = w == Word::Yes ? profile.pos_feedback_prob : profile.neg_feedback_prob;
    const bool flip = u01(rng) < profile.sign_noise;
    if (flip) w = w == Word::Yes ? Word::No : Word::Yes;
    if (u01(rng) < speak) pending.push_back({rec.t + opt.latency, w, adv});
    s = res.terminal ? AgentState{map.start.row, map.start.col, false} : res.next;
  }

  // Thin the majority sign so positives:negatives matches pos_bias.
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < pending.size(); ++i) (pending[i].word == Word::Yes ? pos : neg).push_back(i);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const double np = static_cast<double>(pos.size());
  const double nn = static_cast<double>(neg.size());
  if (nn > 0.0 && np > profile.pos_bias * nn) {
    const auto keep = static_cast<std::size_t>(std::llround(profile.pos_bias * nn));
    for (std::size_t i = keep; i < pos.size(); ++i) pending[pos[i]].keep = false;
  } else if (nn > 0.0 && np < profile.pos_bias * nn) {
    const auto keep = static_cast<std::size_t>(std::llround(np / profile.pos_bias));
    for (std::size_t i = std::max<std::size_t>(keep, 1); i < neg.size(); ++i) pending[neg[i]].keep = false;
  }
  std::erase_if(pending, [](const Pending& p) { return !p.keep; });

  // Calibrate the noise scale on a probe drawn from this session's events.
  std::vector<detail::ProbeEvent> probe;
  if (!pending.empty()) {
    std::mt19937_64 prng(profile.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<std::size_t> pick(0, pending.size() - 1);
    std::normal_distribution<double> n01;
    for (std::size_t i = 0; i < opt.probe_size * opt.probe_reps; ++i) {
      const auto& p = pending[pick(prng)];
      probe.push_back({p.word, p.adv, detail::deservedness(p.word, p.adv, opt.advantage_cap), n01(prng)});
    }
  }
  out.calibration = detail::calibrate(probe, profile.expressiveness);

  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> dur(0.3, 0.9);
  std::size_t clamps = 0;
  std::size_t values = 0;
  std::vector<session::FeedbackRecord> fb;
  for (const auto& p : pending) {
    const double delta = detail::deservedness(p.word, p.adv, opt.advantage_cap);
    const double base = out.calibration.beta * (2.0 * delta - 1.0);
    const double zp = base + out.calibration.sigma * n01(rng);
    const double ze = base + out.calibration.sigma * n01(rng);
    const double zl = base + out.calibration.sigma * n01(rng);
    const double d = dur(rng);
    session::FeedbackRecord f;
    f.t = p.t;
    f.t_end = p.t + d;
    f.word = p.word;
    f.features = features_from_z(zp, ze, zl, d, 0, p.word, profile.neg_intensity_boost, opt.speaker, rng,
                                 clamps, values);
    f.value = signed_feedback_value(*f.features, p.word, opt.speaker);
    fb.push_back(f);
    out.advantages.push_back(p.adv);
  }
  {
    std::vector<UtteranceRecord> recs;
    for (const auto& f : fb) recs.push_back({f.word, f.t, f.t_end, *f.features});
    recs = detect_repetition(std::move(recs));
    for (std::size_t k = 0; k < fb.size(); ++k) fb[k].features->repetition = recs[k].features.repetition;
  }
  out.calibration.clamp_rate = values ? static_cast<double>(clamps) / static_cast<double>(values) : 0.0;

  // Merge by time; a step and its feedback never share a timestamp because latency > 0.
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < steps.size() || j < fb.size()) {
    if (j >= fb.size() || (i < steps.size() && steps[i].t <= fb[j].t)) {
      log.rows.emplace_back(steps[i++]);
    } else {
      log.rows.emplace_back(fb[j++]);
    }
  }
  log.footer = session::SessionFooter{score, opt.steps, "ended"};
  log.header.extra = {{"generator", "intrl"},
                      {"profile", to_json(profile)},
                      {"calibration", to_json(out.calibration)},
                      {"agent_epsilon", opt.agent_epsilon},
                      {"latency", opt.latency}};
  return out;
}

// ---------------------------------------------------------------------------
// Demonstrations with attached utterances

struct DemoOptions {
  double tick_seconds = 0.1;
  double buffer = 0.5;  // seconds of trajectory kept before and after the utterance
  double min_duration = 0.3;
  double max_duration = 0.8;
  SpeakerBaseline speaker = default_speaker();
  reward::DeskConfig desk;
};

/// Snippets of mixed quality from epsilon-greedy rollouts on the desk reward.
/// Words follow the median return; pitch is drawn through a Gaussian copula
/// on within-word return ranks so the rank correlation is +rho for YES and
/// -rho for NO.
inline reward::DemoDataset generate_demo_dataset(const GridMap& map, const MdpSolution& desk_solution,
                                                 const TeacherProfile& profile, std::size_t num_snippets,
                                                 const DemoOptions& opt = {}, const RewardSpec& spec = {}) {
  validate(profile);
  if (num_snippets < 2) fail(Errc::InvalidParams, "need at least two snippets");
  std::mt19937_64 rng(profile.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> dur(opt.min_duration, opt.max_duration);
  std::uniform_int_distribution<int> any_action(0, 3);
  std::normal_distribution<double> n01;
  const auto starts = desk_solution.non_terminal_states();
  std::uniform_int_distribution<std::size_t> pick_start(0, starts.size() - 1);

  reward::DemoDataset ds;
  std::vector<double> durations;
  for (std::size_t k = 0; k < num_snippets; ++k) {
    const double d = dur(rng);
    const auto len = static_cast<int>(std::lround((d + 2.0 * opt.buffer) / opt.tick_seconds));
    const double quality_eps = u01(rng);
    AgentState s = starts[pick_start(rng)];
    reward::TrajectorySnippet snip;
    for (int t = 0; t < len; ++t) {
      const Action a = u01(rng) < quality_eps ? kActions[static_cast<std::size_t>(any_action(rng))]
                                              : greedy_action(desk_solution, s);
      const auto res = step(map, spec, s, a);
      snip.states.push_back(reward::desk_features(map, res.next));
      snip.gt_return += reward::desk_state_reward(map, spec, opt.desk, res.next);
      s = res.next;
      if (res.terminal) break;
    }
    ds.snippets.push_back(std::move(snip));
    durations.push_back(d);
  }

  std::vector<double> returns;
  for (const auto& s : ds.snippets) returns.push_back(s.gt_return);
  std::vector<double> sorted = returns;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<Word> words;
  for (double r : returns) {
    Word w = r > median ? Word::Yes : Word::No;
    if (u01(rng) < profile.sign_noise) w = w == Word::Yes ? Word::No : Word::Yes;
    words.push_back(w);
  }

  // Gaussian copula: Pearson a on normal scores gives Spearman 6/pi asin(a/2).
  const double rho = profile.expressiveness;
  const double a = 2.0 * std::sin(std::numbers::pi * std::abs(rho) / 6.0) * (rho < 0 ? -1.0 : 1.0);
  const boost::math::normal_distribution<double> normal;
  std::vector<double> pitch_z(n, 0.0);
  for (Word w : {Word::Yes, Word::No}) {
    std::vector<std::size_t> idx;
    std::vector<double> r;
    for (std::size_t k = 0; k < n; ++k)
      if (words[k] == w) {
        idx.push_back(k);
        r.push_back(returns[k]);
      }
    if (idx.empty()) continue;
    const auto rk = stats::ranks(r);
    const double sgn = w == Word::Yes ? 1.0 : -1.0;
    for (std::size_t q = 0; q < idx.size(); ++q) {
      const double score = boost::math::quantile(normal, (rk[q] - 0.5) / static_cast<double>(idx.size()));
      pitch_z[idx[q]] = sgn * a * score + std::sqrt(1.0 - a * a) * n01(rng);
    }
  }

  std::size_t clamps = 0;
  std::size_t values = 0;
  for (std::size_t k = 0; k < n; ++k) {
    reward::SnippetAudio audio;
    audio.word = words[k];
    audio.features = features_from_z(pitch_z[k], n01(rng), n01(rng), durations[k], 0, words[k],
                                     profile.neg_intensity_boost, opt.speaker, rng, clamps, values);
    audio.pitch_mean = audio.features->pitch_mean;
    ds.snippets[k].audio = audio;
  }
  ds.meta = {{"generator", "demo"},
             {"profile", to_json(profile)},
             {"map", to_json(map)},
             {"reward", to_json(spec)},
             {"desk_shaping", opt.desk.shaping},
             {"tick_seconds", opt.tick_seconds},
             {"buffer", opt.buffer},
             {"clamp_rate", values ? static_cast<double>(clamps) / static_cast<double>(values) : 0.0},
             {"features", {"row", "col", "has_nut", "dist_nut", "dist_squirrel", "dist_bomb"}}};
  return ds;
}

// ---------------------------------------------------------------------------
// Audio synthesis

/// Sine tone with 10 ms linear fades.
inline std::vector<double> synthesize_tone(double freq, double amplitude, double duration,
                                           double sample_rate = kDefaultSampleRate) {
  const auto n = static_cast<std::size_t>(std::lround(duration * sample_rate));
  const auto fade = static_cast<std::size_t>(0.01 * sample_rate);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double env = 1.0;
    if (i < fade) env = static_cast<double>(i) / static_cast<double>(fade);
    if (n - i <= fade) env = std::min(env, static_cast<double>(n - i) / static_cast<double>(fade));
    out[i] = amplitude * env * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / sample_rate);
  }
  return out;
}

struct ToneEvent {
  Word word = Word::Yes;
  double t = 0.0;
  double duration = 0.5;
  double pitch = 200.0;
  double amplitude = 0.1;
};

struct LabeledAudio {
  AudioBuffer audio;
  std::vector<WordLabel> labels;
};

/// Places tones on a silent (or lightly noisy) track and returns approximate
/// label times at the tone midpoints.
inline LabeledAudio synthesize_labeled_audio(const std::vector<ToneEvent>& events, double total_duration,
                                             double noise_amplitude = 0.0, std::uint64_t seed = 0,
                                             double sample_rate = kDefaultSampleRate) {
  LabeledAudio out;
  out.audio.sample_rate = sample_rate;
  out.audio.samples.assign(static_cast<std::size_t>(std::lround(total_duration * sample_rate)), 0.0);
  if (noise_amplitude > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    for (double& x : out.audio.samples) x = noise_amplitude * n01(rng);
  }
  for (const auto& e : events) {
    const auto tone = synthesize_tone(e.pitch, e.amplitude, e.duration, sample_rate);
    const std::size_t start = out.audio.index_at(e.t);
    for (std::size_t i = 0; i < tone.size() && start + i < out.audio.samples.size(); ++i)
      out.audio.samples[start + i] += tone[i];
    out.labels.push_back({e.word, e.t + 0.5 * e.duration});
  }
  return out;
}

/// A "read paragraph" of tones whose pitch and amplitude wander around the speaker's baseline.
inline AudioBuffer synthesize_baseline_reading(std::uint64_t seed, double mean_pitch = 200.0, double mean_amp = 0.1,
                                               double sample_rate = kDefaultSampleRate) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pitch(0.85 * mean_pitch, 1.15 * mean_pitch);
  std::uniform_real_distribution<double> amp(0.6 * mean_amp, 1.4 * mean_amp);
  std::vector<ToneEvent> ev;
  double t = 0.3;
  for (int k = 0; k < 12; ++k) {
    ev.push_back({Word::Yes, t, 0.4, pitch(rng), amp(rng)});
    t += 0.7;
  }
  return synthesize_labeled_audio(ev, t + 0.3, 0.0, seed, sample_rate).audio;
}

}  // namespace prosody_rl::teacher
