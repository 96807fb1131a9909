#pragma once

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "prosody_rl/error.hpp"
#include "prosody_rl/format.hpp"
#include "prosody_rl/gridworld.hpp"
#include "prosody_rl/prosody.hpp"
#include "prosody_rl/tamer.hpp"

namespace prosody_rl::session {

inline constexpr std::string_view kSessionFormat = "prosody-rl-session";

struct SessionHeader {
  GridMap map;
  RewardSpec reward;
  double tick_seconds = 1.25;
  std::string participant = "anonymous";
  tamer::Variant variant = tamer::Variant::Prosody;
  std::optional<SpeakerBaseline> baseline;
  nlohmann::json extra = nlohmann::json::object();
};

struct StepRecord {
  double t = 0.0;
  int tick = 0;
  AgentState state;  // before the action
  Action action = Action::Up;
  AgentState next;
  double reward = 0.0;
  bool terminal = false;
  double score = 0.0;  // cumulative after this step
};

struct FeedbackRecord {
  double t = 0.0;  // utterance start on the session clock
  double t_end = 0.0;
  Word word = Word::Yes;
  double value = 0.0;  // signed feedback value; its sign always equals the word's
  std::optional<ProsodyFeatures> features;
};

/// Utterance that is logged but not used as feedback (e.g. baseline reading).
struct UtteranceRow {
  double t = 0.0;
  double t_end = 0.0;
  std::string purpose = "baseline";
  std::optional<ProsodyFeatures> features;
};

/// Rows of kinds kept for schema compatibility (e.g. "keystroke") are
/// carried through verbatim.
struct RawRow {
  nlohmann::json row;
};

using Row = std::variant<StepRecord, FeedbackRecord, UtteranceRow, RawRow>;

struct SessionFooter {
  double score = 0.0;
  int steps = 0;
  std::string outcome = "ended";
};

struct SessionLog {
  SessionHeader header;
  std::vector<Row> rows;
  std::optional<SessionFooter> footer;

  [[nodiscard]] std::vector<StepRecord> steps() const {
    std::vector<StepRecord> out;
    for (const auto& r : rows)
      if (const auto* s = std::get_if<StepRecord>(&r)) out.push_back(*s);
    return out;
  }
  [[nodiscard]] std::vector<FeedbackRecord> feedback() const {
    std::vector<FeedbackRecord> out;
    for (const auto& r : rows)
      if (const auto* f = std::get_if<FeedbackRecord>(&r)) out.push_back(*f);
    return out;
  }
};

inline double row_time(const Row& r) {
  return std::visit(
      [](const auto& x) -> double {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, RawRow>) {
          return x.row.value("t", 0.0);
        } else {
          return x.t;
        }
      },
      r);
}

inline nlohmann::json state_json(const AgentState& s) { return nlohmann::json::array({s.row, s.col, s.has_nut ? 1 : 0}); }
inline AgentState state_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) fail(Errc::FormatError, "state must be [row, col, has_nut]");
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>() != 0};
}

inline nlohmann::json header_json(const SessionHeader& h) {
  nlohmann::json j = format_tag(kSessionFormat);
  j["kind"] = "header";
  j["map"] = to_json(h.map);
  j["reward"] = to_json(h.reward);
  j["tick_seconds"] = h.tick_seconds;
  j["participant"] = h.participant;
  j["variant"] = std::string(tamer::to_string(h.variant));
  j["baseline"] = h.baseline ? to_json(*h.baseline) : nlohmann::json(nullptr);
  j["extra"] = h.extra;
  return j;
}

inline nlohmann::json row_json(const Row& row) {
  return std::visit(
      [](const auto& x) -> nlohmann::json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, StepRecord>) {
          return {{"kind", "step"},   {"t", x.t},           {"tick", x.tick},         {"state", state_json(x.state)},
                  {"action", std::string(to_string(x.action))}, {"next", state_json(x.next)}, {"reward", x.reward},
                  {"terminal", x.terminal}, {"score", x.score}};
        } else if constexpr (std::is_same_v<T, FeedbackRecord>) {
          nlohmann::json j{{"kind", "feedback"},
                           {"t", x.t},
                           {"t_end", x.t_end},
                           {"word", std::string(to_string(x.word))},
                           {"value", x.value}};
          j["features"] = x.features ? to_json(*x.features) : nlohmann::json(nullptr);
          return j;
        } else if constexpr (std::is_same_v<T, UtteranceRow>) {
          nlohmann::json j{{"kind", "utterance"}, {"t", x.t}, {"t_end", x.t_end}, {"purpose", x.purpose}};
          j["features"] = x.features ? to_json(*x.features) : nlohmann::json(nullptr);
          return j;
        } else {
          return x.row;
        }
      },
      row);
}

inline nlohmann::json footer_json(const SessionFooter& f) {
  return {{"kind", "footer"}, {"score", f.score}, {"steps", f.steps}, {"outcome", f.outcome}};
}

inline void write_session(std::ostream& os, const SessionLog& log) {
  os << header_json(log.header).dump() << '\n';
  for (const auto& r : log.rows) os << row_json(r).dump() << '\n';
  if (log.footer) os << footer_json(*log.footer).dump() << '\n';
}

inline std::string session_to_string(const SessionLog& log) {
  std::ostringstream os;
  write_session(os, log);
  return os.str();
}

inline SessionHeader header_from_json(const nlohmann::json& j) {
  check_format(j, kSessionFormat);
  if (j.value("kind", "") != "header") fail(Errc::FormatError, "first row must be the session header");
  SessionHeader h;
  h.map = map_from_json(j.at("map"));
  h.reward = reward_spec_from_json(j.at("reward"));
  h.tick_seconds = j.at("tick_seconds").get<double>();
  h.participant = j.value("participant", "anonymous");
  h.variant = tamer::parse_variant(j.value("variant", "prosody"));
  if (j.contains("baseline") && !j.at("baseline").is_null()) h.baseline = baseline_from_json(j.at("baseline"));
  h.extra = j.value("extra", nlohmann::json::object());
  return h;
}

inline Row row_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "step") {
    StepRecord s;
    s.t = j.at("t").get<double>();
    s.tick = j.at("tick").get<int>();
    s.state = state_from_json(j.at("state"));
    s.action = parse_action(j.at("action").get<std::string>());
    s.next = state_from_json(j.at("next"));
    s.reward = j.at("reward").get<double>();
    s.terminal = j.at("terminal").get<bool>();
    s.score = j.at("score").get<double>();
    return s;
  }
  if (kind == "feedback") {
    FeedbackRecord f;
    f.t = j.at("t").get<double>();
    f.t_end = j.at("t_end").get<double>();
    f.word = parse_word(j.at("word").get<std::string>());
    f.value = j.at("value").get<double>();
    if (j.contains("features") && !j.at("features").is_null()) f.features = features_from_json(j.at("features"));
    if (f.value == 0.0 || (f.value > 0.0) != (f.word == Word::Yes))
      fail(Errc::FormatError, "feedback value sign disagrees with its word");
    return f;
  }
  if (kind == "utterance") {
    UtteranceRow u;
    u.t = j.at("t").get<double>();
    u.t_end = j.at("t_end").get<double>();
    u.purpose = j.value("purpose", "baseline");
    if (j.contains("features") && !j.at("features").is_null()) u.features = features_from_json(j.at("features"));
    return u;
  }
  if (kind == "keystroke") return RawRow{j};
  fail(Errc::FormatError, "unknown row kind '" + kind + "'");
}

/// Reads a session. Errors carry the 1-based line number.
inline SessionLog read_session(std::istream& is, Errc code = Errc::FormatError) {
  SessionLog log;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  double last_t = -std::numeric_limits<double>::infinity();
  int last_tick = -1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto where = [&](const std::string& msg) { return "line " + std::to_string(lineno) + ": " + msg; };
    try {
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        log.header = header_from_json(j);
        have_header = true;
        continue;
      }
      if (log.footer) fail(Errc::FormatError, "rows after footer");
      if (j.value("kind", "") == "footer") {
        log.footer = SessionFooter{j.at("score").get<double>(), j.at("steps").get<int>(),
                                   j.value("outcome", "ended")};
        continue;
      }
      Row r = row_from_json(j);
      const double t = row_time(r);
      if (t < last_t) fail(Errc::FormatError, "timestamps are not monotone");
      last_t = t;
      if (const auto* s = std::get_if<StepRecord>(&r)) {
        if (s->tick <= last_tick) fail(Errc::FormatError, "tick indices are not increasing");
        last_tick = s->tick;
      }
      log.rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(code, where(e.what()));
    } catch (const Error& e) {
      fail(code, where(std::string(e.what())));
    }
  }
  if (!have_header) fail(code, "session has no header row");
  return log;
}

inline SessionLog session_from_string(const std::string& s) {
  std::istringstream is(s);
  return read_session(is);
}

// ---------------------------------------------------------------------------
// Conversion to learner streams

inline std::vector<tamer::TimedStep> timed_steps(const SessionLog& log) {
  std::vector<tamer::TimedStep> out;
  for (const auto& s : log.steps()) out.push_back({s.t, s.state, s.action});
  return out;
}

inline std::vector<tamer::FeedbackEvent> feedback_events(const SessionLog& log) {
  std::vector<tamer::FeedbackEvent> out;
  for (const auto& f : log.feedback()) out.push_back({f.t, f.value});
  return out;
}

/// train_offline over a recorded session, starting from a zero model.
inline tamer::HModel train_from_log(const SessionLog& log, tamer::Variant variant,
                                    const tamer::CreditAssigner& assigner = {}, double learning_rate = 0.01) {
  const auto steps = timed_steps(log);
  const auto fb = feedback_events(log);
  return tamer::train_offline(tamer::HModel::for_map(log.header.map, learning_rate), steps, fb, variant, assigner);
}

// ---------------------------------------------------------------------------
// Replay

struct ReplayOptions {
  bool interpolate = false;
  double speed = 0.0;  // 0 = as fast as possible; consumers may pace frames by t / speed
};

struct Frame {
  nlohmann::json body;
};

/// Frames: one header frame, then one per logged step (plus interpolated
/// frames for skipped ticks when requested). Gaps produce warning frames.
inline std::vector<Frame> replay_frames(const SessionLog& log, const ReplayOptions& opt = {}) {
  std::vector<Frame> out;
  nlohmann::json header{{"frame", "header"},
                        {"participant", log.header.participant},
                        {"variant", std::string(tamer::to_string(log.header.variant))},
                        {"map", to_json(log.header.map)},
                        {"tick_seconds", log.header.tick_seconds}};
  out.push_back({header});
  std::vector<nlohmann::json> pending_feedback;
  std::optional<StepRecord> prev;
  for (const auto& row : log.rows) {
    if (const auto* f = std::get_if<FeedbackRecord>(&row)) {
      pending_feedback.push_back({{"t", f->t}, {"word", std::string(to_string(f->word))}, {"value", f->value}});
      continue;
    }
    const auto* s = std::get_if<StepRecord>(&row);
    if (!s) continue;
    if (prev && s->tick > prev->tick + 1) {
      const int missing = s->tick - prev->tick - 1;
      out.push_back({{{"frame", "warning"},
                      {"kind", "gap"},
                      {"after_tick", prev->tick},
                      {"before_tick", s->tick},
                      {"missing", missing}}});
      if (opt.interpolate) {
        const double span = s->tick - prev->tick;
        for (int m = prev->tick + 1; m < s->tick; ++m) {
          const double a = (m - prev->tick) / span;
          const double r = prev->next.row + a * (s->next.row - prev->next.row);
          const double c = prev->next.col + a * (s->next.col - prev->next.col);
          out.push_back({{{"frame", "tick"},
                          {"tick", m},
                          {"t", prev->t + a * (s->t - prev->t)},
                          {"agent", {r, c, prev->next.has_nut ? 1 : 0}},
                          {"score", prev->score},
                          {"interpolated", true},
                          {"feedback", nlohmann::json::array()}}});
        }
      }
    }
    out.push_back({{{"frame", "tick"},
                    {"tick", s->tick},
                    {"t", s->t},
                    {"action", std::string(to_string(s->action))},
                    {"agent", state_json(s->next)},
                    {"score", s->score},
                    {"terminal", s->terminal},
                    {"interpolated", false},
                    {"feedback", pending_feedback}}});
    pending_feedback.clear();
    prev = *s;
  }
  if (log.footer) out.push_back({{{"frame", "footer"}, {"score", log.footer->score}, {"outcome", log.footer->outcome}}});
  return out;
}

/// ASCII rendering of one tick frame.
inline std::string render_text(const GridMap& map, const nlohmann::json& frame) {
  std::ostringstream os;
  if (frame.at("frame") == "warning") {
    os << "! gap: " << frame.at("missing").get<int>() << " tick(s) missing after tick "
       << frame.at("after_tick").get<int>() << '\n';
    return os.str();
  }
  if (frame.at("frame") == "header") {
    os << "session " << frame.at("participant").get<std::string>() << " (" << frame.at("variant").get<std::string>()
       << ")\n";
    return os.str();
  }
  if (frame.at("frame") == "footer") {
    os << "end: " << frame.at("outcome").get<std::string>() << ", score " << frame.at("score").get<double>() << '\n';
    return os.str();
  }
  const auto& agent = frame.at("agent");
  const int ar = static_cast<int>(std::lround(agent.at(0).get<double>()));
  const int ac = static_cast<int>(std::lround(agent.at(1).get<double>()));
  os << "tick " << frame.at("tick").get<int>() << "  score " << frame.at("score").get<double>();
  if (frame.value("interpolated", false)) os << "  (interpolated)";
  for (const auto& f : frame.at("feedback")) os << "  [" << f.at("word").get<std::string>() << "]";
  os << '\n';
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      const Cell cell{r, c};
      char ch = '.';
      if (map.is_wall(cell)) ch = '#';
      if (cell == map.nut) ch = 'N';
      if (cell == map.squirrel) ch = 'S';
      if (map.is_bomb(cell)) ch = 'B';
      if (r == ar && c == ac) ch = agent.at(2).get<int>() ? 'a' : 'A';
      os << ch;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace prosody_rl::session
