#include <chrono>
#include <csignal>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "prosody_rl/prosody_rl.hpp"
#include "prosody_rl/live/server.hpp"

namespace fs = std::filesystem;
using namespace prosody_rl;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::FormatError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::FormatError, path + ": " + e.what());
  }
}

// Writes to `path`, or stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::FormatError, "cannot write " + path);
  out << content;
  spdlog::info("wrote {}", path);
}

session::SessionLog load_session(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::FormatError, "cannot open " + path);
  return session::read_session(in);
}

reward::DemoDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::FormatError, "cannot open " + path);
  return reward::read_dataset(in);
}

struct MapArgs {
  std::string map_path;
  int rows = 10;
  int cols = 10;
};

GridMap resolve_map(const MapArgs& m, std::uint64_t seed) {
  if (!m.map_path.empty()) return map_from_json(read_json(m.map_path));
  return generate_map(m.rows, m.cols, seed);
}

void add_map_options(CLI::App* cmd, MapArgs& m) {
  cmd->add_option("--map", m.map_path, "Map JSON file (otherwise a map is generated from --seed)");
  cmd->add_option("--rows", m.rows, "Interior rows for a generated map")->check(CLI::Range(3, 200));
  cmd->add_option("--cols", m.cols, "Interior columns for a generated map")->check(CLI::Range(3, 200));
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("prosody_rl");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("PROSODY_RL_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(env));
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Prosody-weighted interactive reward learning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random choice");
  app.set_config("--config", "", "TOML-style config file; flags given on the command line take precedence");

  // extract
  auto* extract = app.add_subcommand("extract", "WAV + word labels -> utterance JSONL");
  std::string wav_path;
  std::string labels_path;
  std::string baseline_wav;
  std::string extract_out;
  extract->add_option("--wav", wav_path, "Input WAV (PCM16 or float32)")->required();
  extract->add_option("--labels", labels_path, "JSON list of {word, t}")->required();
  extract->add_option("--baseline-wav", baseline_wav, "Baseline reading; adds a signed value column");
  extract->add_option("--out", extract_out, "Output JSONL (default stdout)");
  FramingConfig framing;
  extract->add_option("--f-min", framing.f_min, "Lower edge of the pitch search band (Hz)");
  extract->add_option("--f-max", framing.f_max, "Upper edge of the pitch search band (Hz)");

  // solve
  auto* solve = app.add_subcommand("solve", "Map -> Q / advantage CSV");
  MapArgs solve_map;
  add_map_options(solve, solve_map);
  std::string solve_out;
  std::string solve_map_out;
  solve->add_option("--out", solve_out, "CSV output (default stdout)");
  solve->add_option("--map-out", solve_map_out, "Also write the map JSON here");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Synthetic maps, sessions, datasets and audio");
  std::string sim_kind = "session";
  MapArgs sim_map;
  std::string sim_out;
  teacher::TeacherProfile profile;
  teacher::IntrlOptions intrl;
  std::size_t snippets = 500;
  double audio_pitch = 440.0;
  double audio_duration = 1.0;
  simulate->add_option("--kind", sim_kind, "map | session | dataset | audio")
      ->check(CLI::IsMember({"map", "session", "dataset", "audio"}));
  add_map_options(simulate, sim_map);
  simulate->add_option("--out", sim_out, "Output file (default stdout; required for audio)");
  simulate->add_option("--rho", profile.expressiveness, "Expressiveness: target prosody/advantage rank correlation");
  simulate->add_option("--boost", profile.neg_intensity_boost, "Energy/loudness multiplier on NO");
  simulate->add_option("--sign-noise", profile.sign_noise, "Probability the word contradicts the advantage sign");
  simulate->add_option("--pos-bias", profile.pos_bias, "Target YES:NO ratio");
  simulate->add_option("--steps", intrl.steps, "Session length in ticks");
  simulate->add_option("--agent-epsilon", intrl.agent_epsilon, "Random-action rate of the simulated agent");
  simulate->add_option("--snippets", snippets, "Dataset size");
  simulate->add_option("--pitch", audio_pitch, "Tone frequency for --kind audio");
  simulate->add_option("--duration", audio_duration, "Tone duration in seconds for --kind audio");

  // train-tamer
  auto* train_tamer = app.add_subcommand("train-tamer", "Session -> H checkpoint; prints optimal-action count");
  std::string tt_session;
  std::string tt_variant = "prosody";
  std::string tt_out;
  double tt_lr = 0.01;
  train_tamer->add_option("--session", tt_session, "Session JSONL")->required();
  train_tamer->add_option("--variant", tt_variant, "baseline | prosody")->check(CLI::IsMember({"baseline", "prosody"}));
  train_tamer->add_option("--out", tt_out, "Checkpoint JSON");
  train_tamer->add_option("--lr", tt_lr, "SGD learning rate");

  // train-trex
  auto* train_trex = app.add_subcommand("train-trex", "Dataset -> reward-net checkpoint + evaluation");
  std::string tr_dataset;
  std::string tr_out;
  std::string tr_curve;
  double tr_heldout = 0.3;
  reward::TrainConfig tcfg;
  train_trex->add_option("--dataset", tr_dataset, "Dataset JSONL")->required();
  train_trex->add_option("--alpha", tcfg.alpha, "CAL weight (0 = plain ranking loss)");
  train_trex->add_option("--t0", tcfg.t0, "Temperature offset");
  train_trex->add_option("--epochs", tcfg.epochs, "Training epochs");
  train_trex->add_option("--pairs", tcfg.num_pairs, "Ranked pairs drawn from the training split");
  train_trex->add_option("--lr", tcfg.lr, "Adam learning rate");
  train_trex->add_option("--heldout", tr_heldout, "Held-out fraction")->check(CLI::Range(0.01, 0.99));
  train_trex->add_option("--out", tr_out, "Checkpoint JSON");
  train_trex->add_option("--curve", tr_curve, "Loss curve CSV");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Session or dataset -> statistics report");
  std::string an_session;
  std::string an_dataset;
  std::string an_format = "text";
  std::string an_out;
  std::string an_csv;
  auto* an_s = analyze->add_option("--session", an_session, "Session JSONL");
  auto* an_d = analyze->add_option("--dataset", an_dataset, "Dataset JSONL");
  an_s->excludes(an_d);
  analyze->add_option("--format", an_format, "text | json")->check(CLI::IsMember({"text", "json"}));
  analyze->add_option("--out", an_out, "Report output (default stdout)");
  analyze->add_option("--csv", an_csv, "Per-event rows as CSV");

  // replay
  auto* replay = app.add_subcommand("replay", "Session -> frame stream");
  std::string rp_session;
  std::string rp_format = "text";
  bool rp_interpolate = false;
  double rp_speed = 0.0;
  replay->add_option("--session", rp_session, "Session JSONL")->required();
  replay->add_option("--format", rp_format, "text | json")->check(CLI::IsMember({"text", "json"}));
  replay->add_flag("--interpolate", rp_interpolate, "Fill skipped ticks with interpolated positions");
  replay->add_option("--speed", rp_speed, "Playback speed multiplier (0 = no pacing)");

  // serve
  auto* serve = app.add_subcommand("serve", "Live teaching server (WebSocket + /health)");
  live::ServerConfig scfg;
  std::string serve_map;
  serve->add_option("--address", scfg.address, "Bind address");
  serve->add_option("--port", scfg.port, "Port (0 = any free port)");
  serve->add_option("--out-dir", scfg.out_dir, "Directory for session logs and checkpoints");
  serve->add_option("--tick", scfg.engine.tick_seconds, "Tick period in seconds");
  serve->add_option("--epsilon", scfg.engine.epsilon, "Exploration rate while feedback flows");
  serve->add_option("--rounds", scfg.engine.game_rounds, "Game rounds after the practice round");
  serve->add_option("--map", serve_map, "Fixed map JSON (otherwise one generated per session)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*extract) {
      const AudioBuffer audio = read_wav(wav_path);
      const auto labels_json = read_json(labels_path);
      std::vector<WordLabel> labels;
      for (const auto& l : labels_json) labels.push_back(label_from_json(l));
      auto records = detect_repetition(segment_utterances(audio, labels, framing));
      std::optional<SpeakerBaseline> base;
      if (!baseline_wav.empty()) base = compute_baseline(read_wav(baseline_wav), framing);
      std::string out;
      for (const auto& r : records) {
        std::string row = utterance_jsonl_row(r);
        if (base) {
          row.pop_back();
          char buf[64];
          std::snprintf(buf, sizeof buf, ",\"value\":%.6f}", signed_feedback_value(r.features, r.word, *base));
          row += buf;
        }
        out += row + '\n';
      }
      emit(extract_out, out);
      spdlog::info("{} utterance(s)", records.size());
    } else if (*solve) {
      const GridMap map = resolve_map(solve_map, seed);
      const MdpSolution sol = value_iteration(map);
      if (!solve_map_out.empty()) emit(solve_map_out, to_json(map).dump(2) + '\n');
      emit(solve_out, solution_csv(sol));
    } else if (*simulate) {
      profile.seed = seed;
      if (sim_kind == "map") {
        emit(sim_out, to_json(resolve_map(sim_map, seed)).dump(2) + '\n');
      } else if (sim_kind == "session") {
        const GridMap map = resolve_map(sim_map, seed);
        const auto s = teacher::generate_intrl_session(map, value_iteration(map), profile, intrl);
        emit(sim_out, session::session_to_string(s.log));
        spdlog::info("calibration: {}", to_json(s.calibration).dump());
      } else if (sim_kind == "dataset") {
        const GridMap map = resolve_map(sim_map, seed);
        const auto ds = teacher::generate_demo_dataset(map, reward::solve_desk(map), profile, snippets);
        std::ostringstream os;
        reward::write_dataset(os, ds);
        emit(sim_out, os.str());
      } else {
        if (sim_out.empty() || sim_out == "-") fail(Errc::InvalidParams, "--kind audio needs --out <file.wav>");
        AudioBuffer audio{teacher::synthesize_tone(audio_pitch, 0.5, audio_duration), kDefaultSampleRate};
        write_wav(sim_out, audio);
      }
    } else if (*train_tamer) {
      const auto log = load_session(tt_session);
      const auto variant = tamer::parse_variant(tt_variant);
      const auto model = session::train_from_log(log, variant, {}, tt_lr);
      const auto sol = value_iteration(log.header.map, log.header.reward);
      if (!tt_out.empty()) emit(tt_out, tamer::to_json(model).dump(2) + '\n');
      std::cout << tamer::evaluate_policy(model, sol) << '\n';
    } else if (*train_trex) {
      const auto ds = load_dataset(tr_dataset);
      tcfg.seed = seed;
      auto [train_set, heldout] = reward::split_dataset(ds.snippets, tr_heldout, seed);
      const auto res = reward::train(train_set, tcfg);
      nlohmann::json report{{"config", to_json(tcfg)},
                            {"train", train_set.size()},
                            {"heldout", heldout.size()},
                            {"heldout_spearman", reward::evaluate_reward(res.net, heldout).statistic}};
      if (ds.meta.contains("map")) {
        const GridMap map = map_from_json(ds.meta["map"]);
        reward::DeskConfig desk;
        desk.shaping = ds.meta.value("desk_shaping", desk.shaping);
        const RewardSpec spec = ds.meta.contains("reward") ? reward_spec_from_json(ds.meta["reward"]) : RewardSpec{};
        const auto pol = reward::policy_from_reward(res.net, map, spec, desk, 30, seed);
        report["policy_mean_score"] = pol.mean_score;
        report["policy_agreement"] = pol.agreement;
      }
      if (!tr_out.empty()) emit(tr_out, reward::to_json(res.net).dump() + '\n');
      if (!tr_curve.empty()) emit(tr_curve, reward::loss_curve_csv(res.curve));
      std::cout << report.dump(2) << '\n';
    } else if (*analyze) {
      if (an_session.empty() == an_dataset.empty()) {
        std::cerr << "analyze needs exactly one of --session or --dataset\n" << analyze->help();
        return kExitUsage;
      }
      if (!an_session.empty()) {
        const auto log = load_session(an_session);
        const auto rep = analysis::analyze_intrl_session(log, value_iteration(log.header.map, log.header.reward));
        emit(an_out, an_format == "json" ? analysis::to_json(rep).dump(2) + '\n' : analysis::to_text(rep));
        if (!an_csv.empty()) emit(an_csv, analysis::to_csv(rep));
      } else {
        const auto ds = load_dataset(an_dataset);
        const auto rep = analysis::analyze_demo_dataset(ds);
        emit(an_out, an_format == "json" ? analysis::to_json(rep).dump(2) + '\n' : analysis::to_text(rep));
        if (!an_csv.empty()) emit(an_csv, analysis::to_csv(ds));
      }
    } else if (*replay) {
      const auto log = load_session(rp_session);
      const auto frames = session::replay_frames(log, {rp_interpolate, rp_speed});
      double last_t = 0.0;
      for (const auto& f : frames) {
        if (rp_speed > 0.0 && f.body.contains("t")) {
          const double t = f.body["t"].get<double>();
          std::this_thread::sleep_for(std::chrono::duration<double>((t - last_t) / rp_speed));
          last_t = t;
        }
        if (rp_format == "json") {
          std::cout << f.body.dump() << '\n';
        } else {
          std::cout << session::render_text(log.header.map, f.body);
        }
        std::cout.flush();
      }
    } else if (*serve) {
      scfg.seed = seed;
      if (!serve_map.empty()) scfg.map = map_from_json(read_json(serve_map));
      boost::asio::io_context ioc;
      live::Server server(ioc, scfg);
      server.start();
      spdlog::set_level(std::min(spdlog::get_level(), spdlog::level::info));
      spdlog::info("listening on {}:{}", scfg.address, server.port());
      boost::asio::signal_set signals(ioc, SIGINT, SIGTERM);
      signals.async_wait([&](const boost::system::error_code&, int) {
        server.stop();
        ioc.stop();
      });
      ioc.run();
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("malformed JSON: {}", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
  return 0;
}
