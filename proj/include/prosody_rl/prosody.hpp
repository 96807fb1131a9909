#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include "prosody_rl/audio.hpp"
#include "prosody_rl/error.hpp"

namespace prosody_rl {

enum class Word { Yes, No };

constexpr std::string_view to_string(Word w) noexcept { return w == Word::Yes ? "yes" : "no"; }

inline Word parse_word(std::string_view s) {
  if (s == "yes" || s == "YES") return Word::Yes;
  if (s == "no" || s == "NO") return Word::No;
  fail(Errc::InvalidParams, "word must be yes or no, got '" + std::string(s) + "'");
}

constexpr double word_sign(Word w) noexcept { return w == Word::Yes ? 1.0 : -1.0; }

struct ProsodyFeatures {
  double duration = 0.0;
  int repetition = 0;
  double pitch_mean = 0.0;
  double pitch_max = 0.0;
  double energy_mean = 0.0;
  double energy_max = 0.0;
  double energy_total = 0.0;
  double loudness_mean = 0.0;
  double loudness_max = 0.0;
  // Set when no analysis frame carried a pitch estimate; pitch fields are 0.
  bool voiceless = false;
};

struct UtteranceRecord {
  Word word = Word::Yes;
  double t_start = 0.0;
  double t_end = 0.0;
  ProsodyFeatures features;

  [[nodiscard]] double duration() const noexcept { return t_end - t_start; }
};

struct WordLabel {
  Word word = Word::Yes;
  double t = 0.0;
};

struct FramingConfig {
  std::size_t frame_length = 2048;
  std::size_t hop = 512;
  double f_min = 80.0;
  double f_max = 400.0;
  double yin_threshold = 0.1;
};

struct VadConfig {
  double energy_floor = 1e-4;
  double relative_threshold = 0.05;
  double percentile = 0.95;
  double hangover = 0.150;     // seconds; gaps up to this are bridged
  double match_window = 1.0;   // seconds between a label and its region
};

// ---------------------------------------------------------------------------
// Frame measures

inline double energy(std::span<const double> frame) {
  if (frame.empty()) fail(Errc::EmptyInput, "energy of an empty frame");
  double acc = 0.0;
  for (double x : frame) acc += x * x;
  return acc / static_cast<double>(frame.size());
}

inline double loudness(std::span<const double> frame) {
  if (frame.empty()) fail(Errc::EmptyInput, "loudness of an empty frame");
  double acc = 0.0;
  for (double x : frame) acc += std::abs(x);
  return acc / static_cast<double>(frame.size());
}

inline std::size_t yin_min_frame_length(double sample_rate, double f_min) {
  return static_cast<std::size_t>(std::ceil(2.0 * sample_rate / f_min));
}

/// Yin fundamental-frequency estimate. Returns nullopt (unvoiced) when the
/// cumulative-mean-normalized difference never dips below `threshold`
/// inside the lag range implied by [f_min, f_max].
inline std::optional<double> yin_pitch(std::span<const double> frame, double sample_rate, double f_min,
                                       double f_max, double threshold = 0.1) {
  if (!(f_min > 0.0) || !(f_min < f_max) || !(sample_rate > 0.0)) {
    fail(Errc::InvalidParams, "yin_pitch requires 0 < f_min < f_max and sample_rate > 0");
  }
  if (frame.size() < yin_min_frame_length(sample_rate, f_min)) {
    fail(Errc::InvalidParams, "frame shorter than 2 * sample_rate / f_min");
  }
  const auto tau_max = static_cast<std::size_t>(std::ceil(sample_rate / f_min));
  const auto tau_min = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(sample_rate / f_max)));
  const std::size_t window = frame.size() - tau_max;

  std::vector<double> diff(tau_max + 1, 0.0);
  for (std::size_t tau = 1; tau <= tau_max; ++tau) {
    double acc = 0.0;
    for (std::size_t j = 0; j < window; ++j) {
      const double d = frame[j] - frame[j + tau];
      acc += d * d;
    }
    diff[tau] = acc;
  }

  std::vector<double> cmnd(tau_max + 1, 1.0);
  double running = 0.0;
  for (std::size_t tau = 1; tau <= tau_max; ++tau) {
    running += diff[tau];
    cmnd[tau] = running > 0.0 ? diff[tau] * static_cast<double>(tau) / running : 1.0;
  }

  std::size_t best = 0;
  for (std::size_t tau = tau_min; tau < tau_max; ++tau) {
    if (cmnd[tau] < threshold) {
      while (tau + 1 < tau_max && cmnd[tau + 1] < cmnd[tau]) ++tau;
      best = tau;
      break;
    }
  }
  if (best == 0) return std::nullopt;

  double refined = static_cast<double>(best);
  const double s0 = cmnd[best - 1];
  const double s1 = cmnd[best];
  const double s2 = cmnd[best + 1];
  const double denom = s0 - 2.0 * s1 + s2;
  if (std::abs(denom) > 1e-12) {
    const double shift = 0.5 * (s0 - s2) / denom;
    if (std::abs(shift) < 1.0) refined += shift;
  }
  return sample_rate / refined;
}

// ---------------------------------------------------------------------------
// Utterance-level features

/// Frames [t_start, t_end) at frame_length/hop and aggregates the per-frame
/// measures. Frame k starts at k*hop and is clipped at the utterance end;
/// there are max(1, N / hop) frames for N samples.
inline ProsodyFeatures extract_features(const AudioBuffer& audio, double t_start, double t_end,
                                        const FramingConfig& cfg = {}) {
  if (!(audio.sample_rate > 0.0)) fail(Errc::InvalidParams, "sample_rate must be positive");
  if (!(t_end > t_start) || t_start < 0.0 || t_end > audio.duration() + 1e-9) {
    fail(Errc::InvalidParams, "utterance boundaries outside audio");
  }
  const std::size_t begin = audio.index_at(t_start);
  const std::size_t end = audio.index_at(t_end);
  if (end <= begin) fail(Errc::EmptyInput, "utterance spans no samples");

  const std::span<const double> all(audio.samples);
  const std::size_t n = end - begin;
  const std::size_t count = std::max<std::size_t>(1, n / cfg.hop);
  const std::size_t pitch_min_len = yin_min_frame_length(audio.sample_rate, cfg.f_min);

  ProsodyFeatures out;
  out.duration = t_end - t_start;
  double pitch_sum = 0.0;
  std::size_t voiced = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t a = begin + k * cfg.hop;
    const std::size_t b = std::min(end, a + cfg.frame_length);
    const auto frame = all.subspan(a, b - a);
    const double e = energy(frame);
    const double l = loudness(frame);
    out.energy_total += e;
    out.energy_max = std::max(out.energy_max, e);
    out.loudness_mean += l;
    out.loudness_max = std::max(out.loudness_max, l);
    if (frame.size() >= pitch_min_len) {
      if (auto f0 = yin_pitch(frame, audio.sample_rate, cfg.f_min, cfg.f_max, cfg.yin_threshold)) {
        pitch_sum += *f0;
        out.pitch_max = std::max(out.pitch_max, *f0);
        ++voiced;
      }
    }
  }
  out.energy_mean = out.energy_total / static_cast<double>(count);
  out.loudness_mean /= static_cast<double>(count);
  if (voiced > 0) {
    out.pitch_mean = pitch_sum / static_cast<double>(voiced);
  } else {
    out.pitch_max = 0.0;
    out.voiceless = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation

struct VoicedRegion {
  double t_start = 0.0;
  double t_end = 0.0;
};

/// Energy VAD over non-overlapping hop-length frames. A frame is voiced when
/// its energy exceeds max(floor, relative * P95 of all frame energies);
/// regions separated by no more than the hangover are merged.
inline std::vector<VoicedRegion> voiced_regions(const AudioBuffer& audio, const VadConfig& vad = {},
                                                std::size_t hop = 512) {
  if (audio.samples.empty()) return {};
  const std::span<const double> all(audio.samples);
  const std::size_t count = (audio.samples.size() + hop - 1) / hop;
  std::vector<double> energies(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t a = k * hop;
    const std::size_t b = std::min(audio.samples.size(), a + hop);
    energies[k] = energy(all.subspan(a, b - a));
  }
  std::vector<double> sorted = energies;
  std::sort(sorted.begin(), sorted.end());
  const auto pidx = static_cast<std::size_t>(std::floor(vad.percentile * static_cast<double>(count - 1)));
  const double threshold = std::max(vad.energy_floor, vad.relative_threshold * sorted[pidx]);

  std::vector<VoicedRegion> regions;
  for (std::size_t k = 0; k < count; ++k) {
    if (energies[k] <= threshold) continue;
    const double a = static_cast<double>(k * hop) / audio.sample_rate;
    const double b = static_cast<double>(std::min(audio.samples.size(), (k + 1) * hop)) / audio.sample_rate;
    if (!regions.empty() && a - regions.back().t_end <= vad.hangover + 1e-12) {
      regions.back().t_end = b;
    } else {
      regions.push_back({a, b});
    }
  }
  return regions;
}

/// Matches each label to the nearest unused voiced region and extracts the
/// region's features. Output is time-ordered and non-overlapping.
inline std::vector<UtteranceRecord> segment_utterances(const AudioBuffer& audio, std::span<const WordLabel> labels,
                                                       const FramingConfig& framing = {}, const VadConfig& vad = {}) {
  const double total = audio.duration();
  for (const auto& l : labels) {
    if (l.t < 0.0 || l.t > total) fail(Errc::InvalidParams, "label time outside audio duration");
  }
  const auto regions = voiced_regions(audio, vad, framing.hop);
  std::vector<WordLabel> ordered(labels.begin(), labels.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.t < b.t; });

  std::vector<bool> used(regions.size(), false);
  std::vector<UtteranceRecord> out;
  for (const auto& label : ordered) {
    std::optional<std::size_t> best;
    double best_dist = 0.0;
    for (std::size_t i = 0; i < regions.size(); ++i) {
      if (used[i]) continue;
      const auto& r = regions[i];
      const double dist = label.t < r.t_start ? r.t_start - label.t : (label.t > r.t_end ? label.t - r.t_end : 0.0);
      if (!best || dist < best_dist) {
        best = i;
        best_dist = dist;
      }
    }
    if (!best || best_dist > vad.match_window) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "no voiced region within %.2f s of label (%s, %.3f)", vad.match_window,
                    std::string(to_string(label.word)).c_str(), label.t);
      fail(Errc::UnmatchedLabel, buf);
    }
    used[*best] = true;
    const auto& r = regions[*best];
    out.push_back({label.word, r.t_start, r.t_end, extract_features(audio, r.t_start, r.t_end, framing)});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.t_start < b.t_start; });
  return out;
}

/// Consecutive records with the same word and a gap of at most gap_max
/// seconds form a repetition chunk; every member is flagged.
inline std::vector<UtteranceRecord> detect_repetition(std::vector<UtteranceRecord> records, double gap_max = 1.0) {
  for (auto& r : records) r.features.repetition = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& prev = records[i - 1];
    auto& cur = records[i];
    if (cur.word == prev.word && cur.t_start - prev.t_end <= gap_max) {
      records[i - 1].features.repetition = 1;
      cur.features.repetition = 1;
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Speaker baseline and signed feedback

struct SpeakerBaseline {
  double pitch_mean = 0.0;
  double pitch_std = 0.0;
  double energy_mean = 0.0;
  double energy_std = 0.0;
  double loudness_mean = 0.0;
  double loudness_std = 0.0;
};

namespace detail {
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.size() < 2) return {v.empty() ? 0.0 : v.front(), 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}
}  // namespace detail

/// Per-frame statistics of a baseline reading, restricted to frames the
/// energy VAD marks as speech.
inline SpeakerBaseline compute_baseline(const AudioBuffer& audio, const FramingConfig& framing = {},
                                        const VadConfig& vad = {}) {
  std::vector<double> pitches;
  std::vector<double> energies;
  std::vector<double> louds;
  const std::span<const double> all(audio.samples);
  const std::size_t pitch_min_len = yin_min_frame_length(audio.sample_rate, framing.f_min);
  for (const auto& region : voiced_regions(audio, vad, framing.hop)) {
    const std::size_t begin = audio.index_at(region.t_start);
    const std::size_t end = audio.index_at(region.t_end);
    for (std::size_t a = begin; a < end; a += framing.hop) {
      const std::size_t b = std::min(end, a + framing.frame_length);
      const auto frame = all.subspan(a, b - a);
      energies.push_back(energy(frame));
      louds.push_back(loudness(frame));
      if (frame.size() >= pitch_min_len) {
        if (auto f0 = yin_pitch(frame, audio.sample_rate, framing.f_min, framing.f_max, framing.yin_threshold)) {
          pitches.push_back(*f0);
        }
      }
    }
  }
  SpeakerBaseline b;
  std::tie(b.pitch_mean, b.pitch_std) = detail::mean_std(pitches);
  std::tie(b.energy_mean, b.energy_std) = detail::mean_std(energies);
  std::tie(b.loudness_mean, b.loudness_std) = detail::mean_std(louds);
  if (!(b.pitch_std > 0.0) || !(b.energy_std > 0.0) || !(b.loudness_std > 0.0)) {
    fail(Errc::DegenerateBaseline, "baseline recording yields zero variance in pitch, energy or loudness");
  }
  return b;
}

inline constexpr double kFeedbackShift = 3.0;
inline constexpr double kFeedbackFloor = 0.1;

/// Mean z-score of pitch/energy/loudness against the speaker baseline.
inline double combined_prosody_z(const ProsodyFeatures& f, const SpeakerBaseline& b) {
  if (!(b.pitch_std > 0.0) || !(b.energy_std > 0.0) || !(b.loudness_std > 0.0)) {
    fail(Errc::DegenerateBaseline, "baseline standard deviation must be positive");
  }
  const double zp = (f.pitch_mean - b.pitch_mean) / b.pitch_std;
  const double ze = (f.energy_mean - b.energy_mean) / b.energy_std;
  const double zl = (f.loudness_mean - b.loudness_mean) / b.loudness_std;
  return (zp + ze + zl) / 3.0;
}

/// Magnitude max(0.1, z + 3) carrying the word's sign.
inline double signed_feedback_value(const ProsodyFeatures& f, Word word, const SpeakerBaseline& b) {
  const double magnitude = std::max(kFeedbackFloor, combined_prosody_z(f, b) + kFeedbackShift);
  return word_sign(word) * magnitude;
}

// ---------------------------------------------------------------------------
// JSON / JSONL

inline nlohmann::json to_json(const SpeakerBaseline& b) {
  return {{"pitch_mean", b.pitch_mean},       {"pitch_std", b.pitch_std},
          {"energy_mean", b.energy_mean},     {"energy_std", b.energy_std},
          {"loudness_mean", b.loudness_mean}, {"loudness_std", b.loudness_std}};
}

inline SpeakerBaseline baseline_from_json(const nlohmann::json& j) {
  SpeakerBaseline b;
  b.pitch_mean = j.at("pitch_mean").get<double>();
  b.pitch_std = j.at("pitch_std").get<double>();
  b.energy_mean = j.at("energy_mean").get<double>();
  b.energy_std = j.at("energy_std").get<double>();
  b.loudness_mean = j.at("loudness_mean").get<double>();
  b.loudness_std = j.at("loudness_std").get<double>();
  return b;
}

inline nlohmann::json to_json(const ProsodyFeatures& f) {
  return {{"duration", f.duration},       {"repetition", f.repetition},       {"pitch_mean", f.pitch_mean},
          {"pitch_max", f.pitch_max},     {"energy_mean", f.energy_mean},     {"energy_max", f.energy_max},
          {"energy_total", f.energy_total}, {"loudness_mean", f.loudness_mean}, {"loudness_max", f.loudness_max},
          {"voiceless", f.voiceless}};
}

inline ProsodyFeatures features_from_json(const nlohmann::json& j) {
  ProsodyFeatures f;
  f.duration = j.value("duration", 0.0);
  f.repetition = j.value("repetition", 0);
  f.pitch_mean = j.at("pitch_mean").get<double>();
  f.pitch_max = j.value("pitch_max", f.pitch_mean);
  f.energy_mean = j.at("energy_mean").get<double>();
  f.energy_max = j.value("energy_max", f.energy_mean);
  f.energy_total = j.value("energy_total", f.energy_mean);
  f.loudness_mean = j.at("loudness_mean").get<double>();
  f.loudness_max = j.value("loudness_max", f.loudness_mean);
  f.voiceless = j.value("voiceless", false);
  return f;
}

/// One utterance as a JSONL row with every numeric field at 6 decimals.
inline std::string utterance_jsonl_row(const UtteranceRecord& r) {
  const auto& f = r.features;
  char buf[640];
  std::snprintf(buf, sizeof buf,
                "{\"word\":\"%s\",\"t_start\":%.6f,\"t_end\":%.6f,\"duration\":%.6f,\"repetition\":%d,"
                "\"pitch_mean\":%.6f,\"pitch_max\":%.6f,\"energy_mean\":%.6f,\"energy_max\":%.6f,"
                "\"energy_total\":%.6f,\"loudness_mean\":%.6f,\"loudness_max\":%.6f,\"voiceless\":%s}",
                std::string(to_string(r.word)).c_str(), r.t_start, r.t_end, f.duration, f.repetition, f.pitch_mean,
                f.pitch_max, f.energy_mean, f.energy_max, f.energy_total, f.loudness_mean, f.loudness_max,
                f.voiceless ? "true" : "false");
  return buf;
}

inline UtteranceRecord utterance_from_json(const nlohmann::json& j) {
  UtteranceRecord r;
  r.word = parse_word(j.at("word").get<std::string>());
  r.t_start = j.at("t_start").get<double>();
  r.t_end = j.at("t_end").get<double>();
  r.features = features_from_json(j);
  return r;
}

inline WordLabel label_from_json(const nlohmann::json& j) {
  return {parse_word(j.at("word").get<std::string>()), j.at("t").get<double>()};
}

}  // namespace prosody_rl
