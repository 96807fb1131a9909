#pragma once

// Transport-free session state machine. Every entry point takes the current
// time on the session clock; the caller owns the clock and serializes calls.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosody_rl/audio.hpp"
#include "prosody_rl/error.hpp"
#include "prosody_rl/gridworld.hpp"
#include "prosody_rl/prosody.hpp"
#include "prosody_rl/session_log.hpp"
#include "prosody_rl/tamer.hpp"

namespace prosody_rl::live {

enum class Phase { Waiting, BaselineRecording, Practice, Game, Done };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Waiting: return "WAITING";
    case Phase::BaselineRecording: return "BASELINE_RECORDING";
    case Phase::Practice: return "PRACTICE";
    case Phase::Game: return "GAME";
    case Phase::Done: return "DONE";
  }
  return "DONE";
}

inline constexpr std::size_t kMaxPcmFrameBytes = 64 * 1024;

struct EngineConfig {
  double tick_seconds = 1.25;
  double epsilon = 0.1;  // exploration once feedback is flowing
  int explore_after_ticks = 1;
  int game_rounds = 3;
  bool practice_round = true;
  double learning_rate = 0.01;
  tamer::CreditAssigner assigner;
  RewardSpec reward;
  double sample_rate = kDefaultSampleRate;
  double repetition_gap = 1.0;
  std::uint64_t seed = 0;
};

using Messages = std::vector<nlohmann::json>;

inline nlohmann::json error_message(std::string_view code, const std::string& message) {
  return {{"type", "error"}, {"code", code}, {"message", message}};
}

class SessionEngine {
 public:
  SessionEngine(std::string id, GridMap map, EngineConfig cfg = {})
      : id_(std::move(id)),
        map_(std::move(map)),
        cfg_(cfg),
        model_(tamer::HModel::for_map(map_, cfg.learning_rate)),
        rng_(cfg.seed) {
    if (!(cfg_.tick_seconds > 0.0)) fail(Errc::InvalidParams, "tick_seconds must be positive");
    log_.header.map = map_;
    log_.header.reward = cfg_.reward;
    log_.header.tick_seconds = cfg_.tick_seconds;
    log_.header.variant = tamer::Variant::Prosody;
    log_.header.extra = {{"generator", "live"}, {"session", id_}, {"epsilon", cfg_.epsilon}, {"seed", cfg_.seed}};
    reset_agent();
  }

  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] Phase phase() const { return phase_; }
  [[nodiscard]] int round() const { return round_; }
  [[nodiscard]] int tick_index() const { return tick_; }
  [[nodiscard]] double score() const { return score_; }
  [[nodiscard]] const AgentState& agent() const { return agent_; }
  [[nodiscard]] const tamer::HModel& model() const { return model_; }
  [[nodiscard]] const session::SessionLog& log() const { return log_; }
  [[nodiscard]] const GridMap& map() const { return map_; }
  [[nodiscard]] const EngineConfig& config() const { return cfg_; }
  [[nodiscard]] bool accepts_ticks() const { return phase_ == Phase::Practice || phase_ == Phase::Game; }
  [[nodiscard]] bool finished() const { return phase_ == Phase::Done; }

  /// Resume from a checkpoint; only before the first tick.
  void load_model(tamer::HModel m) {
    if (tick_ != 0) fail(Errc::InvalidSession, "model can only be replaced before the first tick");
    model_ = std::move(m);
  }

  /// Dispatches one client JSON message.
  Messages handle(const nlohmann::json& msg, double now) {
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
      return {error_message("BAD_MESSAGE", "message needs a string 'type'")};
    const auto type = msg["type"].get<std::string>();
    try {
      if (type == "start") return on_start(msg, now);
      if (type == "baseline_audio") return on_baseline(msg, now);
      if (type == "utterance") return on_utterance(msg, now);
      if (type == "end") return on_end(now);
    } catch (const nlohmann::json::exception& e) {
      pcm_.clear();
      return {error_message("BAD_MESSAGE", e.what())};
    }
    return {error_message("BAD_MESSAGE", "unknown message type '" + type + "'")};
  }

  /// Buffers one binary PCM frame for the next baseline_audio/utterance.
  Messages handle_binary(std::span<const std::uint8_t> bytes) {
    if (bytes.size() > kMaxPcmFrameBytes) return {error_message("FRAME_TOO_LARGE", "PCM frames are limited to 64 KiB")};
    if (phase_ == Phase::Waiting || phase_ == Phase::Done)
      return {error_message("PHASE_VIOLATION", "audio is not accepted in phase " + std::string(to_string(phase_)))};
    pcm_.insert(pcm_.end(), bytes.begin(), bytes.end());
    return {};
  }

  /// One agent step; no-op outside PRACTICE/GAME.
  Messages tick(double now) {
    Messages out;
    if (!accepts_ticks()) return out;
    const double t = std::max(now, last_step_t_ + 1e-6);
    const bool explore = !last_feedback_tick_ || tick_ - *last_feedback_tick_ >= cfg_.explore_after_ticks;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> any(0, static_cast<int>(kNumActions) - 1);
    const bool random = explore || u01(rng_) < cfg_.epsilon;
    const Action a = random ? kActions[static_cast<std::size_t>(any(rng_))] : model_.greedy(agent_);
    const auto res = step(map_, cfg_.reward, agent_, a);
    score_ += res.reward;
    session::StepRecord rec{t, tick_, agent_, a, res.next, res.reward, res.terminal, score_};
    log_.rows.emplace_back(rec);
    steps_.push_back({t, agent_, a});
    last_step_t_ = t;
    agent_ = res.next;
    out.push_back({{"type", "state"},
                   {"tick", tick_},
                   {"action", std::string(prosody_rl::to_string(a))},
                   {"agent", agent_json()},
                   {"score", score_},
                   {"terminal", res.terminal},
                   {"phase", std::string(to_string(phase_))},
                   {"round", round_},
                   {"explore", random}});
    ++tick_;
    if (res.terminal) {
      reset_agent();
      advance_round(now, out);
    }
    return out;
  }

  /// Completed log: footer filled in once the session is done.
  [[nodiscard]] session::SessionLog final_log() const {
    auto log = log_;
    if (!log.footer) log.footer = session::SessionFooter{score_, tick_, "incomplete"};
    return log;
  }

  [[nodiscard]] nlohmann::json snapshot() const {
    return {{"type", "state"},   {"tick", tick_},   {"agent", agent_json()},
            {"score", score_},   {"terminal", false}, {"phase", std::string(to_string(phase_))},
            {"round", round_}};
  }

 private:
  nlohmann::json agent_json() const {
    return {{"row", agent_.row}, {"col", agent_.col}, {"has_nut", agent_.has_nut}};
  }
  nlohmann::json phase_message() const {
    return {{"type", "phase"}, {"phase", std::string(to_string(phase_))}, {"round", round_}};
  }
  Messages violation(std::string_view what) {
    pcm_.clear();
    return {error_message("PHASE_VIOLATION",
                          std::string(what) + " is not allowed in phase " + std::string(to_string(phase_)))};
  }
  void reset_agent() { agent_ = {map_.start.row, map_.start.col, false}; }

  void advance_round(double now, Messages& out) {
    if (phase_ == Phase::Practice) {
      phase_ = Phase::Game;
      round_ = 1;
    } else if (round_ < cfg_.game_rounds) {
      ++round_;
    } else {
      finish(now, "completed");
    }
    out.push_back(phase_message());
  }

  void finish(double /*now*/, const std::string& outcome) {
    phase_ = Phase::Done;
    log_.footer = session::SessionFooter{score_, tick_, outcome};
  }

  Messages on_start(const nlohmann::json& msg, double /*now*/) {
    if (phase_ != Phase::Waiting) return violation("start");
    log_.header.participant = msg.value("participant", std::string("anonymous"));
    phase_ = Phase::BaselineRecording;
    return {phase_message()};
  }

  Messages on_baseline(const nlohmann::json& msg, double now) {
    if (phase_ != Phase::BaselineRecording) return violation("baseline_audio");
    SpeakerBaseline b;
    double duration = 0.0;
    try {
      if (msg.contains("baseline")) {
        b = baseline_from_json(msg.at("baseline"));
        if (!(b.pitch_std > 0.0) || !(b.energy_std > 0.0) || !(b.loudness_std > 0.0))
          fail(Errc::DegenerateBaseline, "baseline stds must be positive");
      } else {
        AudioBuffer audio{decode_pcm16(pcm_), cfg_.sample_rate};
        duration = audio.duration();
        b = compute_baseline(audio);
      }
    } catch (const Error& e) {
      pcm_.clear();
      return {{{"type", "ack"}, {"of", "baseline_audio"}, {"ok", false}, {"error", std::string(to_string(e.code()))},
               {"message", e.what()}}};
    }
    pcm_.clear();
    baseline_ = b;
    log_.header.baseline = b;
    log_.rows.emplace_back(session::UtteranceRow{now, now + duration, "baseline", std::nullopt});
    phase_ = cfg_.practice_round ? Phase::Practice : Phase::Game;
    round_ = cfg_.practice_round ? 0 : 1;
    return {{{"type", "ack"}, {"of", "baseline_audio"}, {"ok", true}, {"baseline", to_json(b)}}, phase_message()};
  }

  Messages reject_utterance(std::string_view code, const std::string& message) {
    pcm_.clear();
    return {{{"type", "ack"}, {"of", "utterance"}, {"ok", false}, {"error", code}, {"message", message}}};
  }

  Messages on_utterance(const nlohmann::json& msg, double now) {
    if (!accepts_ticks()) return violation("utterance");
    Word word;
    try {
      word = parse_word(msg.at("word").get<std::string>());
    } catch (const Error&) {
      return reject_utterance("INVALID_WORD", "word must be 'yes' or 'no'");
    }
    // Client capture time, clamped into [last feedback, now] so updates stay in time order.
    double t_start = msg.value("t_start", now);
    double t_end = msg.value("t_end", t_start);
    t_start = std::clamp(t_start, last_feedback_t_, now);
    t_end = std::max(t_end, t_start);

    std::optional<ProsodyFeatures> features;
    double value = word_sign(word);
    try {
      if (msg.contains("features") && !msg["features"].is_null()) {
        if (!baseline_) fail(Errc::NoBaseline, "features need a speaker baseline");
        features = features_from_json(msg["features"]);
      } else if (!pcm_.empty()) {
        if (!baseline_) fail(Errc::NoBaseline, "audio needs a speaker baseline");
        AudioBuffer audio{decode_pcm16(pcm_), cfg_.sample_rate};
        features = extract_features(audio, 0.0, audio.duration());
      }
      if (features) value = signed_feedback_value(*features, word, *baseline_);
    } catch (const Error& e) {
      return reject_utterance(e.code() == Errc::NoBaseline ? "NO_BASELINE" : "BAD_PCM", e.what());
    }
    pcm_.clear();

    if (features && last_feedback_ && last_feedback_->word == word && t_start - last_feedback_->t_end <= cfg_.repetition_gap) {
      features->repetition = 1;
      if (auto* prev = std::get_if<session::FeedbackRecord>(&log_.rows[last_feedback_->row]); prev && prev->features)
        prev->features->repetition = 1;
    }
    session::FeedbackRecord rec{t_start, t_end, word, value, features};
    // Keep rows time-sorted: a late utterance goes before steps taken after its start.
    auto pos = log_.rows.end();
    while (pos != log_.rows.begin() && session::row_time(*std::prev(pos)) > t_start) --pos;
    const auto row = static_cast<std::size_t>(pos - log_.rows.begin());
    log_.rows.insert(pos, rec);
    if (last_feedback_ && last_feedback_->row >= row) ++last_feedback_->row;

    const tamer::FeedbackEvent fb{t_start, value};
    const auto credited = tamer::credited_steps(steps_, t_start, cfg_.assigner.window);
    tamer::apply_feedback(model_, cfg_.assigner, steps_, fb, tamer::Variant::Prosody);
    last_feedback_t_ = t_start;
    last_feedback_ = LastFeedback{word, t_end, row};
    last_feedback_tick_ = tick_;

    nlohmann::json credited_json = nlohmann::json::array();
    for (const auto& s : credited) credited_json.push_back({{"t", s.t}, {"state", session::state_json(s.state)},
                                                            {"action", std::string(prosody_rl::to_string(s.action))}});
    return {{{"type", "ack"},
             {"of", "utterance"},
             {"ok", true},
             {"word", std::string(prosody_rl::to_string(word))},
             {"value", value},
             {"t_start", t_start},
             {"credited", credited_json}}};
  }

  Messages on_end(double now) {
    if (phase_ == Phase::Waiting || phase_ == Phase::Done) return violation("end");
    finish(now, "ended_by_client");
    return {phase_message()};
  }

  struct LastFeedback {
    Word word;
    double t_end;
    std::size_t row;
  };

  std::string id_;
  GridMap map_;
  EngineConfig cfg_;
  tamer::HModel model_;
  std::mt19937_64 rng_;
  session::SessionLog log_;
  std::vector<tamer::TimedStep> steps_;
  std::vector<std::uint8_t> pcm_;
  std::optional<SpeakerBaseline> baseline_;
  std::optional<LastFeedback> last_feedback_;
  std::optional<int> last_feedback_tick_;
  double last_feedback_t_ = 0.0;
  double last_step_t_ = 0.0;
  Phase phase_ = Phase::Waiting;
  int round_ = 0;
  int tick_ = 0;
  double score_ = 0.0;
  AgentState agent_;
};

}  // namespace prosody_rl::live
